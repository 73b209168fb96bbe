"""Recurrent proximal-policy training against simulator protocol streams.

Six episode streams run as independent protocol clients; every update
consumes one 30-step segment from each (180 frames), computes generalized
advantage estimates, and takes one clipped-surrogate step jointly through
the policy and the grid encoder. The sampled grid latent is reparameterized
with stored noise during the update so importance ratios start at exactly 1.
"""
from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .baselines import BaselineSpec, build_baseline
from .config import GRID_H, GRID_W, TrainerConfig
from .losses import (
    LossTerms,
    estimation_loss,
    kl_loss,
    matching_loss,
    ppo_policy_loss,
    value_loss,
)
from .models import (
    ConvEncoder,
    GridVae,
    RecurrentActorCritic,
    freeze,
    gaussian_entropy,
    gaussian_log_prob,
    pin_batchnorm_eval,
    squash_to_disc,
)
from .simclient import FrameHistory, SimState, SimulatorClient

_CELL_TO_FLOAT = torch.tensor([0.0, 1.0, 0.5])


def grids_to_tensor(grids_u8: np.ndarray) -> torch.Tensor:
    """Byte-class grids to numeric maps (free 0, occupied 1, unknown 0.5)."""
    return _CELL_TO_FLOAT[torch.from_numpy(np.ascontiguousarray(grids_u8)).long()]


@dataclass
class RolloutBuffer:
    obs: np.ndarray  # (T, N, C, H, W) uint8 student input frames
    gt: np.ndarray | None  # (T, N, H, W) uint8 omniscient frames
    robot: np.ndarray  # (T, N, 4) float32
    actions: torch.Tensor  # (T, N, 2) pre-squash samples
    log_probs: torch.Tensor  # (T, N)
    values: torch.Tensor  # (T, N)
    rewards: torch.Tensor  # (T, N)
    dones: torch.Tensor  # (T, N) 1.0 where the episode ended at this step
    noise: torch.Tensor  # (T, N, latent) latent reparameterization noise
    hidden_start: torch.Tensor  # (N, rnn_hidden)
    bootstrap: torch.Tensor  # (N,) value of the state after the segment

    advantages: torch.Tensor | None = None
    returns: torch.Tensor | None = None

    def compute_gae(self, gamma: float, lam: float) -> None:
        T, N = self.rewards.shape
        adv = torch.zeros(T, N)
        gae = torch.zeros(N)
        next_value = self.bootstrap
        for t in range(T - 1, -1, -1):
            not_done = 1.0 - self.dones[t]
            delta = self.rewards[t] + gamma * next_value * not_done - self.values[t]
            gae = delta + gamma * lam * not_done * gae
            adv[t] = gae
            next_value = self.values[t]
        self.returns = adv + self.values
        self.advantages = (adv - adv.mean()) / (adv.std() + 1e-8)


class _Stream:
    """One protocol session plus the recurrent and frame-history state."""

    def __init__(self, spec: BaselineSpec, cfg: TrainerConfig, sim: str | None, config_path, seed: int):
        self.spec = spec
        self.cfg = cfg
        self.client = SimulatorClient(sim, config_path)
        self.mode = "train" if spec.needs_gt else "eval"
        self.state: SimState = self.client.reset(seed, self.mode)
        self.history = FrameHistory(self._source_frame(self.state))
        self.hidden = torch.zeros(cfg.rnn_hidden)
        self.episode_return = 0.0
        self.episode_steps = 0

    def _source_frame(self, state: SimState) -> np.ndarray:
        return state.gt if self.spec.source == "gt" else state.obs

    def student_frames(self) -> np.ndarray:
        """(C, H, W) byte input for the student encoder."""
        if self.spec.sequence:
            return self.history.stacked()
        return self._source_frame(self.state)[None]

    def advance(self, command, on_episode_end, seed_source) -> tuple[float, float]:
        """Apply one command; returns the transition's (reward, done flag).

        Terminal transitions report their reward, then the stream resets to
        a fresh seed with cleared history and hidden state.
        """
        state = self.client.step(command)
        reward = state.reward
        self.episode_return += reward
        self.episode_steps += 1
        if state.done:
            on_episode_end(self.episode_return, self.episode_steps)
            state = self.client.reset(seed_source(), self.mode)
            self.history = FrameHistory(self._source_frame(state))
            self.hidden = torch.zeros(self.cfg.rnn_hidden)
            self.episode_return = 0.0
            self.episode_steps = 0
            done = 1.0
        else:
            self.history.push(self._source_frame(state))
            done = 0.0
        self.state = state
        return reward, done

    def close(self):
        self.client.close()


class Trainer:
    def __init__(
        self,
        variant: str,
        cfg: TrainerConfig,
        sim: str | None = None,
        config_path: str | None = None,
        supervisor: GridVae | None = None,
        seed: int = 0,
        base_episode_seed: int = 0,
    ):
        cfg.validate()
        self.cfg = cfg
        self.spec = build_baseline(variant)
        if self.spec.use_latent_losses and supervisor is None:
            raise ValueError(f"variant {variant!r} needs a pretrained supervisor")
        torch.manual_seed(seed)
        self.student = ConvEncoder(self.spec.input_channels, cfg.latent_dim, cfg.encoder_channels)
        pin_batchnorm_eval(self.student)
        self.policy = RecurrentActorCritic(cfg)
        self.supervisor = freeze(supervisor) if supervisor is not None else None
        trainable = list(self.policy.parameters()) + list(self.student.parameters())
        self.optimizer = torch.optim.Adam(trainable, lr=cfg.learning_rate)
        self._sim = sim
        self._config_path = config_path
        self._next_seed = base_episode_seed
        self._streams: list[_Stream] | None = None
        self.env_steps = 0
        self.completed_episodes: list[tuple[int, float]] = []  # (env_step, return)

    # -- environment plumbing --

    def _seed_source(self) -> int:
        seed = self._next_seed
        self._next_seed += 1
        return seed

    def _ensure_streams(self) -> list[_Stream]:
        if self._streams is None:
            self._streams = [
                _Stream(self.spec, self.cfg, self._sim, self._config_path, self._seed_source())
                for _ in range(self.cfg.num_envs)
            ]
        return self._streams

    def close(self) -> None:
        if self._streams:
            for stream in self._streams:
                stream.close()
            self._streams = None

    # -- rollout collection --

    @torch.no_grad()
    def _policy_step(self, frames_u8: np.ndarray, robot: np.ndarray, hidden: torch.Tensor):
        grids = grids_to_tensor(frames_u8)
        mu, logvar = self.student(grids)
        noise = torch.randn_like(mu)
        z = mu + torch.exp(0.5 * logvar) * noise
        mean, log_std, value, hidden = self.policy(z, torch.from_numpy(robot), hidden)
        action = mean + torch.exp(log_std) * torch.randn_like(mean)
        log_prob = gaussian_log_prob(mean, log_std, action)
        return action, log_prob, value, hidden, noise

    def collect_segment(self) -> RolloutBuffer:
        cfg = self.cfg
        streams = self._ensure_streams()
        T, N = cfg.segment_len, cfg.num_envs
        obs = np.zeros((T, N, self.spec.input_channels, GRID_H, GRID_W), dtype=np.uint8)
        gt = (
            np.zeros((T, N, GRID_H, GRID_W), dtype=np.uint8)
            if self.spec.use_latent_losses
            else None
        )
        robot = np.zeros((T, N, 4), dtype=np.float32)
        actions = torch.zeros(T, N, 2)
        log_probs = torch.zeros(T, N)
        values = torch.zeros(T, N)
        rewards = torch.zeros(T, N)
        dones = torch.zeros(T, N)
        noise = torch.zeros(T, N, cfg.latent_dim)
        hidden_start = torch.stack([s.hidden for s in streams])

        for t in range(T):
            frames = np.stack([s.student_frames() for s in streams])
            states = np.stack([s.state.robot_state for s in streams])
            hidden = torch.stack([s.hidden for s in streams])
            act, logp, val, hidden_next, eps = self._policy_step(frames, states, hidden)
            obs[t] = frames
            if gt is not None:
                gt[t] = np.stack([s.state.gt for s in streams])
            robot[t] = states
            actions[t] = act
            log_probs[t] = logp
            values[t] = val
            noise[t] = eps

            commands = squash_to_disc(act, cfg.max_speed).numpy()
            for i, stream in enumerate(streams):
                stream.hidden = hidden_next[i]
                step_at = self.env_steps + t * N + i

                def record(ep_return, ep_steps, _step=step_at):
                    self.completed_episodes.append((_step, ep_return))

                reward, done = stream.advance(commands[i], record, self._seed_source)
                rewards[t, i] = reward
                dones[t, i] = done

        self.env_steps += T * N

        frames = np.stack([s.student_frames() for s in streams])
        states = np.stack([s.state.robot_state for s in streams])
        hidden = torch.stack([s.hidden for s in streams])
        _, _, bootstrap, _, _ = self._policy_step(frames, states, hidden)

        buffer = RolloutBuffer(
            obs=obs,
            gt=gt,
            robot=robot,
            actions=actions,
            log_probs=log_probs,
            values=values,
            rewards=rewards,
            dones=dones,
            noise=noise,
            hidden_start=hidden_start,
            bootstrap=bootstrap,
        )
        buffer.compute_gae(cfg.gamma, cfg.gae_lambda)
        return buffer

    # -- optimization --

    def _group_losses(self, buffer: RolloutBuffer, idx: list[int]):
        cfg = self.cfg
        T, n = cfg.segment_len, len(idx)
        shape = buffer.obs.shape[2:]
        grids = grids_to_tensor(buffer.obs[:, idx].reshape(T * n, *shape))
        mu, logvar = self.student(grids)
        eps = buffer.noise[:, idx].reshape(T * n, cfg.latent_dim)
        z = mu + torch.exp(0.5 * logvar) * eps
        z_seq = z.view(T, n, cfg.latent_dim)

        robot = torch.from_numpy(buffer.robot[:, idx])
        dones = buffer.dones[:, idx]
        hidden = buffer.hidden_start[idx]
        means = []
        values = []
        for t in range(T):
            if t > 0:
                hidden = hidden * (1.0 - dones[t - 1]).unsqueeze(1)
            mean, log_std, value, hidden = self.policy(z_seq[t], robot[t], hidden)
            means.append(mean)
            values.append(value)
        mean = torch.stack(means)
        value = torch.stack(values)

        new_logp = gaussian_log_prob(mean, self.policy.log_std, buffer.actions[:, idx])
        policy_term = ppo_policy_loss(
            new_logp.flatten(),
            buffer.log_probs[:, idx].flatten(),
            buffer.advantages[:, idx].flatten(),
            cfg.ppo_clip,
        )
        value_term = value_loss(value.flatten(), buffer.returns[:, idx].flatten())
        entropy = gaussian_entropy(self.policy.log_std)

        total = policy_term + cfg.value_coef * value_term - cfg.entropy_coef * entropy
        terms = LossTerms(
            ppo_policy=float(policy_term.detach()), ppo_value=float(value_term.detach())
        )

        if self.spec.use_latent_losses:
            kl_term = kl_loss(mu, logvar)
            gt = grids_to_tensor(buffer.gt[:, idx].reshape(T * n, GRID_H, GRID_W))
            with torch.no_grad():
                mu_sup, _ = self.supervisor.encode(gt.unsqueeze(1))
            match_term = matching_loss(mu_sup, z)
            total = total + cfg.kl_coefficient * kl_term + cfg.match_coef * match_term
            terms.kl = float(kl_term.detach())
            terms.pas_match = float(match_term.detach())
            if cfg.use_estimation_loss:
                est_term = estimation_loss(gt, self.supervisor.decoder(z))
                total = total + est_term
                terms.est = float(est_term.detach())
        return total, terms

    def update(self, buffer: RolloutBuffer) -> LossTerms:
        cfg = self.cfg
        accumulated = LossTerms()
        passes = 0
        for _ in range(cfg.ppo_epochs):
            perm = torch.randperm(cfg.num_envs)
            for group in perm.chunk(cfg.minibatches):
                total, terms = self._group_losses(buffer, group.tolist())
                self.optimizer.zero_grad()
                total.backward()
                nn.utils.clip_grad_norm_(
                    [p for g in self.optimizer.param_groups for p in g["params"]],
                    cfg.grad_norm_clip,
                )
                self.optimizer.step()
                for name in ("recon", "kl", "pas_match", "est", "ppo_policy", "ppo_value"):
                    setattr(accumulated, name, getattr(accumulated, name) + getattr(terms, name))
                passes += 1
        for name in ("recon", "kl", "pas_match", "est", "ppo_policy", "ppo_value"):
            setattr(accumulated, name, getattr(accumulated, name) / passes)
        return accumulated

    def train_step(self) -> LossTerms:
        return self.update(self.collect_segment())

    # -- persistence --

    def save(self, path: str | Path) -> None:
        torch.save(
            {
                "variant": self.spec.name,
                "config": dataclasses.asdict(self.cfg),
                "student": self.student.state_dict(),
                "policy": self.policy.state_dict(),
            },
            path,
        )


def load_policy(path: str | Path) -> tuple[ConvEncoder, RecurrentActorCritic, BaselineSpec, TrainerConfig]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    cfg_data = payload["config"]
    cfg_data["encoder_channels"] = tuple(cfg_data["encoder_channels"])
    cfg = TrainerConfig(**cfg_data)
    spec = build_baseline(payload["variant"])
    student = ConvEncoder(spec.input_channels, cfg.latent_dim, cfg.encoder_channels)
    student.load_state_dict(payload["student"])
    policy = RecurrentActorCritic(cfg)
    policy.load_state_dict(payload["policy"])
    freeze(student)
    freeze(policy)
    return student, policy, spec, cfg


def train(
    variant: str,
    cfg: TrainerConfig,
    total_steps: int,
    sim: str | None = None,
    config_path: str | None = None,
    supervisor: GridVae | None = None,
    seed: int = 0,
    log_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    progress: bool = False,
) -> Trainer:
    """Run updates until total_steps environment frames have been consumed;
    appends one CSV row per update when log_path is given."""
    trainer = Trainer(
        variant, cfg, sim=sim, config_path=config_path, supervisor=supervisor, seed=seed
    )
    writer = None
    handle = None
    if log_path is not None:
        log_path = Path(log_path)
        fresh = not log_path.exists()
        handle = log_path.open("a", newline="")
        writer = csv.writer(handle)
        if fresh:
            writer.writerow(
                ["step", "return", "policy_loss", "value_loss", "kl", "match", "est"]
            )
    started = time.time()
    base_lr = cfg.learning_rate
    try:
        while trainer.env_steps < total_steps:
            if cfg.lr_anneal:
                fraction = 1.0 - trainer.env_steps / total_steps
                for group in trainer.optimizer.param_groups:
                    group["lr"] = base_lr * fraction
            terms = trainer.train_step()
            recent = [r for s, r in trainer.completed_episodes[-20:]]
            mean_return = sum(recent) / len(recent) if recent else float("nan")
            if writer is not None:
                writer.writerow(
                    [
                        trainer.env_steps,
                        f"{mean_return:.4f}",
                        f"{terms.ppo_policy:.6f}",
                        f"{terms.ppo_value:.6f}",
                        f"{terms.kl:.6f}",
                        f"{terms.pas_match:.6f}",
                        f"{terms.est:.6f}",
                    ]
                )
                handle.flush()
            if progress:
                rate = trainer.env_steps / max(time.time() - started, 1e-9)
                print(
                    f"steps={trainer.env_steps} return={mean_return:.2f} "
                    f"policy={terms.ppo_policy:.4f} value={terms.ppo_value:.4f} "
                    f"({rate:.0f} steps/s)",
                    flush=True,
                )
        if checkpoint_path is not None:
            trainer.save(checkpoint_path)
    finally:
        trainer.close()
        if handle is not None:
            handle.close()
    return trainer


def smoke_result(trainer: Trainer, window: int = 5000) -> tuple[float, float]:
    """Mean episodic return over the first and last `window` env steps."""
    first = [r for s, r in trainer.completed_episodes if s < window]
    horizon = trainer.env_steps - window
    last = [r for s, r in trainer.completed_episodes if s >= horizon]
    if not first or not last:
        raise RuntimeError("not enough completed episodes to compare")
    return sum(first) / len(first), sum(last) / len(last)
