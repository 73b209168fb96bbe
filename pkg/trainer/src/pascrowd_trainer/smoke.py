"""Short end-to-end training run that must move the return upward.

Uses the single-frame observation variant with a slimmer encoder and a
larger step size than the long-run defaults: fifty thousand frames is far
too few for the canonical 1e-5 schedule to leave noise territory, and the
point here is to prove the collect/update loop learns, not to reproduce the
long-run numbers.
"""
from __future__ import annotations

import dataclasses

from .config import TrainerConfig
from .ppo import smoke_result, train

SMOKE_STEPS = 50_000
SMOKE_WINDOW = 5_000


def smoke_config() -> TrainerConfig:
    return dataclasses.replace(
        TrainerConfig(),
        learning_rate=3e-4,
        encoder_channels=(8, 16, 32, 64, 64),
        lr_anneal=True,
    )


def run_smoke(
    total_steps: int = SMOKE_STEPS,
    seed: int = 0,
    sim: str | None = None,
    progress: bool = False,
) -> tuple[float, float]:
    """Returns (mean return over the first window, over the last window)."""
    trainer = train(
        "obs-fe",
        smoke_config(),
        total_steps=total_steps,
        sim=sim,
        seed=seed,
        progress=progress,
    )
    return smoke_result(trainer, window=SMOKE_WINDOW)
