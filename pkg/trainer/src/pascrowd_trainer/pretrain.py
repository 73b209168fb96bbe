"""Supervisor autoencoder pretraining on omniscient grids.

Trained once on rollout data from the omniscient baseline, then frozen;
later stages only read its encoder (latent targets) and decoder (map
estimates).
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .config import TrainerConfig
from .data import grids_to_float
from .losses import supervisor_vae_loss
from .models import GridVae, freeze


def pretrain_supervisor(
    grids_u8: np.ndarray,
    cfg: TrainerConfig,
    epochs: int = 20,
    batch_size: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
) -> tuple[GridVae, list[float]]:
    """Optimize the evidence bound; returns the frozen model and the
    end-of-epoch reconstruction loss curve over the whole training set."""
    if len(grids_u8) == 0:
        raise ValueError("empty pretraining dataset")
    torch.manual_seed(seed)
    vae = GridVae(in_channels=1, cfg=cfg)
    optimizer = torch.optim.Adam(vae.parameters(), lr=lr)
    data = torch.from_numpy(grids_to_float(grids_u8)).unsqueeze(1)
    generator = torch.Generator().manual_seed(seed)

    curve: list[float] = []
    for _ in range(epochs):
        vae.train()
        for batch_idx in torch.randperm(len(data), generator=generator).split(batch_size):
            batch = data[batch_idx]
            recon, mu, logvar = vae(batch)
            total, _, _ = supervisor_vae_loss(
                batch.squeeze(1), recon, mu, logvar, cfg.kl_coefficient
            )
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
        curve.append(dataset_recon_loss(vae, data))
    freeze(vae)
    return vae, curve


@torch.no_grad()
def dataset_recon_loss(vae: GridVae, data: torch.Tensor, chunk: int = 256) -> float:
    vae.eval()
    total = 0.0
    for start in range(0, len(data), chunk):
        batch = data[start : start + chunk]
        recon, _, _ = vae(batch)
        total += float(((batch.squeeze(1) - recon) ** 2).mean()) * len(batch)
    return total / len(data)


def save_supervisor(vae: GridVae, cfg: TrainerConfig, path: str | Path) -> None:
    import dataclasses

    torch.save({"config": dataclasses.asdict(cfg), "state": vae.state_dict()}, path)


def load_supervisor(path: str | Path) -> tuple[GridVae, TrainerConfig]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    cfg_data = payload["config"]
    cfg_data["encoder_channels"] = tuple(cfg_data["encoder_channels"])
    cfg = TrainerConfig(**cfg_data)
    vae = GridVae(in_channels=1, cfg=cfg)
    vae.load_state_dict(payload["state"])
    freeze(vae)
    return vae, cfg
