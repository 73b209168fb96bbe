"""Training hyperparameters and grid constants."""
from __future__ import annotations

from dataclasses import dataclass

GRID_H = 100
GRID_W = 100
ROBOT_STATE_DIM = 4  # (x - gx, y - gy, vx, vy)
HISTORY_LEN = 4

# numeric cell values on the wire: byte 0 -> free, 1 -> occupied, 2 -> unknown
CELL_VALUE = (0.0, 1.0, 0.5)


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 1e-5
    grad_norm_clip: float = 0.5
    kl_coefficient: float = 0.00025
    rollout_frames: int = 180
    num_envs: int = 6
    total_steps: int = 15_000_000
    frame_rate: float = 4.0
    gamma: float = 0.99  # not sourced from the simulator side; conventional default
    use_estimation_loss: bool = False

    latent_dim: int = 128
    rnn_hidden: int = 128
    robot_embed_dim: int = 64
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128, 128)
    max_speed: float = 2.0

    ppo_clip: float = 0.2
    gae_lambda: float = 0.95
    ppo_epochs: int = 4
    minibatches: int = 2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    match_coef: float = 1.0
    # linearly anneal the step size to zero over the run (stabilizes the
    # tail of short schedules; the long-run default keeps a flat rate)
    lr_anneal: bool = False

    @property
    def segment_len(self) -> int:
        assert self.rollout_frames % self.num_envs == 0
        return self.rollout_frames // self.num_envs

    def validate(self) -> None:
        positive = (
            "learning_rate",
            "grad_norm_clip",
            "kl_coefficient",
            "rollout_frames",
            "num_envs",
            "total_steps",
            "frame_rate",
            "gamma",
            "latent_dim",
            "rnn_hidden",
            "robot_embed_dim",
            "max_speed",
            "ppo_clip",
            "gae_lambda",
            "ppo_epochs",
            "minibatches",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"TrainerConfig.{name} must be positive")
        if self.rollout_frames % self.num_envs:
            raise ValueError("rollout_frames must split evenly across num_envs")
