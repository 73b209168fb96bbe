"""Greedy policy evaluation through the wire protocol.

The simulator side aggregates the episodes it hosted and writes the report
JSON at session end (`serve --report`), so the numbers come from the same
code path as every other evaluation.
"""
from __future__ import annotations

import json
import shlex
import tempfile
from pathlib import Path

import torch

from .config import TrainerConfig
from .models import squash_to_disc
from .ppo import grids_to_tensor, load_policy
from .simclient import DEFAULT_SERVE_CMD, FrameHistory, SimulatorClient


@torch.no_grad()
def run_greedy_episodes(
    student,
    policy,
    spec,
    cfg: TrainerConfig,
    episodes: int,
    base_seed: int,
    sim_cmd: str,
    config_path: str | None = None,
) -> None:
    """Drive `episodes` mean-action episodes over one protocol session."""
    student.eval()
    policy.eval()
    with SimulatorClient(sim_cmd, config_path) as client:
        for i in range(episodes):
            state = client.reset(base_seed + i, "train" if spec.needs_gt else "eval")
            frame = state.gt if spec.source == "gt" else state.obs
            history = FrameHistory(frame)
            hidden = policy.initial_hidden(1)
            while not state.done:
                frames = history.stacked()[None] if spec.sequence else frame[None, None]
                grids = grids_to_tensor(frames)
                mu, _ = student(grids)  # deterministic latent: the mean
                robot = torch.from_numpy(state.robot_state[None])
                mean, _, _, hidden = policy(mu, robot, hidden)
                command = squash_to_disc(mean, cfg.max_speed)[0].numpy()
                state = client.step(command)
                if not state.done:
                    frame = state.gt if spec.source == "gt" else state.obs
                    history.push(frame)


def evaluate_policy(
    checkpoint: str | Path,
    episodes: int,
    base_seed: int = 0,
    sim: str | None = None,
    config_path: str | None = None,
    report_path: str | Path | None = None,
) -> dict:
    """Evaluate a checkpoint; returns the simulator-written report."""
    student, policy, spec, cfg = load_policy(checkpoint)
    own_report = report_path is None
    if own_report:
        report_path = Path(tempfile.mkstemp(suffix=".json")[1])
    report_path = Path(report_path)

    base_cmd = sim or DEFAULT_SERVE_CMD
    if base_cmd.startswith("tcp:"):
        raise ValueError("evaluation needs a stdio serve command to collect the report")
    sim_cmd = " ".join(shlex.split(base_cmd) + ["--report", str(report_path)])
    run_greedy_episodes(student, policy, spec, cfg, episodes, base_seed, sim_cmd, config_path)
    report = json.loads(report_path.read_text())
    if own_report:
        report_path.unlink()
    return report
