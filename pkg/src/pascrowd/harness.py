"""Episode loop, outcome classification, and metric aggregation.

An EpisodeEngine owns one episode's state and applies externally chosen
commands; run_episode drives it with an in-process policy. Both the wire
protocol server and the CLI go through the same engine, so a wire-driven
episode and an in-process one produce identical records.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

from . import ogm, orca
from .config import SimConfig, config_hash
from .reward import RewardInputs, compute_reward
from .world import (
    VelocityCommand,
    WorldState,
    goal_distance,
    min_separation,
    sample_scenario,
    step_world,
)

SUCCESS = "success"
COLLISION = "collision"
TIMEOUT = "timeout"

EVENT_NONE = "none"
EVENT_DISCOMFORT = "discomfort"

POLICY_NAMES = ("gt-orca", "obs-orca")


class EpisodeFinished(RuntimeError):
    """A command arrived after the episode reached a terminal state."""


@dataclass(frozen=True)
class StepRecord:
    step_index: int
    robot_position: tuple[float, float]
    robot_velocity: tuple[float, float]
    human_positions: tuple[tuple[float, float], ...]
    command: tuple[float, float]
    reward: float
    d_min: float
    d_goal: float
    event: str


@dataclass(frozen=True)
class EpisodeRecord:
    seed: int
    config_hash: str
    outcome: str
    steps: tuple[StepRecord, ...]
    nav_time: float
    path_length: float


@dataclass(frozen=True)
class EvalReport:
    success_rate: float | None
    collision_rate: float | None
    discomfort_rate: float | None
    mean_nav_time: float | None
    mean_path_length: float | None
    timeout_count: int
    episode_count: int


@dataclass(frozen=True)
class StepResult:
    reward: float
    done: bool
    event: str


def grid_at_robot(world: WorldState, cfg: SimConfig) -> ogm.GridSpec:
    return dataclasses.replace(cfg.grid, center=world.robot.position)


class EpisodeEngine:
    """Single-episode state machine: observe, apply a command, classify.

    frame_sink, when set, receives one call per applied step with the
    pre-step observation grids; the protocol layer uses it to stream
    rollout lines without the engine knowing about encodings.
    """

    def __init__(self, cfg: SimConfig, seed: int, train_mode: bool = False, frame_sink=None):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        self.train_mode = train_mode
        self.frame_sink = frame_sink
        self.config_hash = config_hash(cfg)
        self.world = sample_scenario(cfg.scenario, seed)
        self.steps: list[StepRecord] = []
        self.path_length = 0.0
        self._prev_d_goal = goal_distance(self.world)
        self._obs_cache: tuple[int, ogm.OccupancyGrid, ogm.OccupancyGrid | None] | None = None
        # Spawning on the goal ends the episode before any step runs.
        self.outcome: str | None = (
            SUCCESS if self._prev_d_goal < self.world.robot.radius else None
        )

    @property
    def done(self) -> bool:
        return self.outcome is not None

    def observation(self) -> tuple[ogm.OccupancyGrid, ogm.OccupancyGrid | None]:
        """Observation grid for the current state (plus the omniscient grid in
        train mode); cached until the next step."""
        cache = self._obs_cache
        if cache is not None and cache[0] == self.world.step_index:
            return cache[1], cache[2]
        spec = grid_at_robot(self.world, self.cfg)
        obs = ogm.build_observation(self.world, spec, self.cfg.scenario.fov_radius)
        gt = ogm.rasterize_ground_truth(self.world, spec) if self.train_mode else None
        self._obs_cache = (self.world.step_index, obs, gt)
        return obs, gt

    def apply(self, cmd: VelocityCommand) -> StepResult:
        if self.done:
            raise EpisodeFinished(f"episode already ended with outcome {self.outcome!r}")

        pre_step = self.world.step_index
        pre_robot = self.world.robot
        if self.frame_sink is not None:
            pre_obs, pre_gt = self.observation()

        scenario = self.cfg.scenario
        self.world = step_world(self.world, cmd, scenario.dt, self.cfg.orca)
        d_goal = goal_distance(self.world)
        d_min = min_separation(self.world)
        reward = compute_reward(
            RewardInputs(
                d_goal_prev=self._prev_d_goal,
                d_goal=d_goal,
                d_min=d_min,
                robot_radius=self.world.robot.radius,
            ),
            discomfort_distance=scenario.discomfort_distance,
        )

        if d_goal < self.world.robot.radius:
            self.outcome = SUCCESS
            event = SUCCESS
        elif d_min < 0.0:
            self.outcome = COLLISION
            event = COLLISION
        elif self.world.step_index >= scenario.max_steps:
            self.outcome = TIMEOUT
            event = TIMEOUT
        elif 0.0 <= d_min < scenario.discomfort_distance:
            event = EVENT_DISCOMFORT
        else:
            event = EVENT_NONE

        px, py = pre_robot.position
        nx, ny = self.world.robot.position
        self.path_length += math.hypot(nx - px, ny - py)
        self._prev_d_goal = d_goal

        self.steps.append(
            StepRecord(
                step_index=pre_step,
                robot_position=self.world.robot.position,
                robot_velocity=self.world.robot.velocity,
                human_positions=tuple(h.position for h in self.world.humans),
                command=cmd.desired_velocity,
                reward=reward,
                d_min=d_min,
                d_goal=d_goal,
                event=event,
            )
        )
        if self.frame_sink is not None:
            self.frame_sink(
                step=pre_step,
                robot=(px, py, pre_robot.velocity[0], pre_robot.velocity[1]),
                action=cmd.desired_velocity,
                reward=reward,
                done=self.done,
                event=event,
                obs_grid=pre_obs,
                gt_grid=pre_gt,
            )
        return StepResult(reward=reward, done=self.done, event=event)

    def record(self) -> EpisodeRecord:
        if not self.done:
            raise EpisodeFinished("episode still running; no record yet")
        return EpisodeRecord(
            seed=self.seed,
            config_hash=self.config_hash,
            outcome=self.outcome,
            steps=tuple(self.steps),
            nav_time=self.world.time,
            path_length=self.path_length,
        )


# ---------- built-in policies ----------


def gt_orca_policy(world: WorldState, cfg: SimConfig) -> VelocityCommand:
    """Omniscient avoidance baseline: every human is a neighbor."""
    return orca.orca_robot_policy(world, world.humans, cfg.orca)


def obs_orca_policy(world: WorldState, cfg: SimConfig) -> VelocityCommand:
    """Limited-view avoidance baseline: only currently detected humans count."""
    spec = grid_at_robot(world, cfg)
    detected = ogm.detected_agents(world, spec, cfg.scenario.fov_radius)
    neighbors = [world.humans[i] for i in detected]
    return orca.orca_robot_policy(world, neighbors, cfg.orca)


def make_policy(name: str):
    if name == "gt-orca":
        return gt_orca_policy
    if name == "obs-orca":
        return obs_orca_policy
    raise ValueError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")


def run_episode(
    policy,
    cfg: SimConfig,
    seed: int,
    train_mode: bool = False,
    frame_sink=None,
) -> EpisodeRecord:
    """Run one full episode with an in-process policy (name or callable)."""
    if isinstance(policy, str):
        policy = make_policy(policy)
    engine = EpisodeEngine(cfg, seed, train_mode=train_mode, frame_sink=frame_sink)
    while not engine.done:
        engine.apply(policy(engine.world, cfg))
    return engine.record()


# ---------- aggregation ----------


def aggregate(records, cfg: SimConfig) -> EvalReport:
    """Fold episode records into the summary table row.

    Success/collision rates exclude timeouts from the denominator; the
    discomfort rate is the per-step frequency of the near-miss band across
    every simulated step; time and path means cover successes only.
    """
    records = list(records)
    if not records:
        raise ValueError("aggregate needs at least one episode record")

    non_timeout = [r for r in records if r.outcome != TIMEOUT]
    successes = [r for r in records if r.outcome == SUCCESS]
    timeout_count = len(records) - len(non_timeout)

    if non_timeout:
        success_rate = len(successes) / len(non_timeout)
        collision_rate = sum(r.outcome == COLLISION for r in non_timeout) / len(non_timeout)
    else:
        success_rate = None
        collision_rate = None

    total_steps = sum(len(r.steps) for r in records)
    if total_steps:
        near = sum(
            1
            for r in records
            for s in r.steps
            if 0.0 <= s.d_min < cfg.scenario.discomfort_distance
        )
        discomfort_rate = near / total_steps
    else:
        discomfort_rate = None

    if successes:
        mean_nav_time = sum(r.nav_time for r in successes) / len(successes)
        mean_path_length = sum(r.path_length for r in successes) / len(successes)
    else:
        mean_nav_time = None
        mean_path_length = None

    return EvalReport(
        success_rate=success_rate,
        collision_rate=collision_rate,
        discomfort_rate=discomfort_rate,
        mean_nav_time=mean_nav_time,
        mean_path_length=mean_path_length,
        timeout_count=timeout_count,
        episode_count=len(records),
    )


def evaluate(policy, cfg: SimConfig, n_episodes: int, base_seed: int) -> EvalReport:
    """Episodes at seeds base_seed .. base_seed+n-1, folded into one report."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    records = [run_episode(policy, cfg, base_seed + i) for i in range(n_episodes)]
    return aggregate(records, cfg)


# ---------- serialization ----------


def _fmt_report_value(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, int):
        return str(value)
    return f"{value:.6f}"


_REPORT_FIELDS = (
    "success_rate",
    "collision_rate",
    "discomfort_rate",
    "mean_nav_time",
    "mean_path_length",
    "timeout_count",
    "episode_count",
)


def report_to_json(report: EvalReport) -> str:
    """Flat JSON object, floats with exactly six decimal digits."""
    parts = [
        f'"{name}": {_fmt_report_value(getattr(report, name))}' for name in _REPORT_FIELDS
    ]
    return "{" + ", ".join(parts) + "}"


def episode_to_json(record: EpisodeRecord) -> str:
    """Canonical episode serialization (used for determinism checks)."""
    payload = {
        "seed": record.seed,
        "config_hash": record.config_hash,
        "outcome": record.outcome,
        "nav_time": record.nav_time,
        "path_length": record.path_length,
        "steps": [dataclasses.asdict(s) for s in record.steps],
    }
    return json.dumps(payload, separators=(",", ":"))
