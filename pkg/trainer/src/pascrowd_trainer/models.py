"""Grid autoencoders and the recurrent actor-critic.

The encoder is five 4x4 stride-2 conv blocks (conv, batch norm, ReLU) with
two affine heads for the latent mean and log variance; the decoder mirrors
it back to one 100x100 sigmoid map. The policy embeds the robot state,
concatenates it with the grid latent, runs a GRU, and feeds twin four-layer
perceptrons for the action Gaussian and the value.

Batch-norm layers are kept in eval mode inside the policy path (affine
still trainable) so rollout-time and update-time outputs match exactly and
importance ratios start at 1.
"""
from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .config import GRID_H, GRID_W, ROBOT_STATE_DIM, TrainerConfig

# spatial sizes under 4x4/stride-2/pad-1: 100 -> 50 -> 25 -> 12 -> 6 -> 3
_DECODER_OUTPUT_PADDING = (0, 0, 1, 0, 0)  # mirrors 3 -> 6 -> 12 -> 25 -> 50 -> 100
_FEATURE_SIDE = 3


class ConvEncoder(nn.Module):
    def __init__(self, in_channels: int, latent_dim: int, channels: tuple[int, ...]):
        super().__init__()
        blocks = []
        prev = in_channels
        for width in channels:
            blocks += [
                nn.Conv2d(prev, width, kernel_size=4, stride=2, padding=1),
                nn.BatchNorm2d(width),
                nn.ReLU(inplace=True),
            ]
            prev = width
        self.blocks = nn.Sequential(*blocks)
        feature_dim = channels[-1] * _FEATURE_SIDE * _FEATURE_SIDE
        self.fc_mu = nn.Linear(feature_dim, latent_dim)
        self.fc_logvar = nn.Linear(feature_dim, latent_dim)

    def forward(self, grids: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.blocks(grids).flatten(1)
        return self.fc_mu(h), self.fc_logvar(h)


class ConvDecoder(nn.Module):
    def __init__(self, latent_dim: int, channels: tuple[int, ...]):
        super().__init__()
        self.base_channels = channels[-1]
        self.fc = nn.Linear(latent_dim, self.base_channels * _FEATURE_SIDE * _FEATURE_SIDE)
        widths = list(channels[::-1][1:]) + [1]
        blocks = []
        prev = self.base_channels
        for width, out_pad in zip(widths, _DECODER_OUTPUT_PADDING):
            blocks.append(
                nn.ConvTranspose2d(
                    prev, width, kernel_size=4, stride=2, padding=1, output_padding=out_pad
                )
            )
            if width != 1:
                blocks += [nn.BatchNorm2d(width), nn.ReLU(inplace=True)]
            prev = width
        self.blocks = nn.Sequential(*blocks)

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        h = self.fc(latent).view(-1, self.base_channels, _FEATURE_SIDE, _FEATURE_SIDE)
        return torch.sigmoid(self.blocks(h)).squeeze(1)


class GridVae(nn.Module):
    """Encoder/decoder pair over occupancy maps with a Gaussian latent."""

    def __init__(self, in_channels: int, cfg: TrainerConfig):
        super().__init__()
        self.encoder = ConvEncoder(in_channels, cfg.latent_dim, cfg.encoder_channels)
        self.decoder = ConvDecoder(cfg.latent_dim, cfg.encoder_channels)

    def encode(self, grids: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.encoder(grids)

    @staticmethod
    def sample(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
        return mu + torch.exp(0.5 * logvar) * torch.randn_like(mu)

    def forward(self, grids: torch.Tensor):
        mu, logvar = self.encode(grids)
        z = self.sample(mu, logvar) if self.training else mu
        return self.decoder(z), mu, logvar


def _mlp(in_dim: int, hidden: int, out_dim: int) -> nn.Sequential:
    # four affine layers, matching the twin-head depth
    return nn.Sequential(
        nn.Linear(in_dim, hidden),
        nn.ReLU(inplace=True),
        nn.Linear(hidden, hidden),
        nn.ReLU(inplace=True),
        nn.Linear(hidden, hidden),
        nn.ReLU(inplace=True),
        nn.Linear(hidden, out_dim),
    )


class RecurrentActorCritic(nn.Module):
    """GRU core over [grid latent, robot embedding]; Gaussian actor + critic."""

    def __init__(self, cfg: TrainerConfig):
        super().__init__()
        self.cfg = cfg
        self.robot_embed = nn.Sequential(
            nn.Linear(ROBOT_STATE_DIM, cfg.robot_embed_dim), nn.ReLU(inplace=True)
        )
        self.core = nn.GRUCell(cfg.latent_dim + cfg.robot_embed_dim, cfg.rnn_hidden)
        self.actor = _mlp(cfg.rnn_hidden, cfg.rnn_hidden, 2)
        self.critic = _mlp(cfg.rnn_hidden, cfg.rnn_hidden, 1)
        self.log_std = nn.Parameter(torch.full((2,), -0.5))

    def initial_hidden(self, batch: int) -> torch.Tensor:
        return torch.zeros(batch, self.cfg.rnn_hidden)

    def forward(self, latent: torch.Tensor, robot_state: torch.Tensor, hidden: torch.Tensor):
        features = torch.cat([latent, self.robot_embed(robot_state)], dim=1)
        hidden = self.core(features, hidden)
        mean = self.actor(hidden)
        value = self.critic(hidden).squeeze(-1)
        return mean, self.log_std.expand_as(mean), value, hidden


def freeze(module: nn.Module) -> nn.Module:
    """Mark a module immutable: no gradients, eval-mode statistics."""
    for param in module.parameters():
        param.requires_grad_(False)
    module.eval()
    return module


def pin_batchnorm_eval(module: nn.Module) -> nn.Module:
    """Put every batch-norm layer in eval mode (affine params stay trainable)."""
    for layer in module.modules():
        if isinstance(layer, (nn.BatchNorm1d, nn.BatchNorm2d)):
            layer.eval()
    return module


def gaussian_log_prob(mean: torch.Tensor, log_std: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
    var = torch.exp(2.0 * log_std)
    return (
        -0.5 * ((action - mean) ** 2 / var + 2.0 * log_std + math.log(2.0 * math.pi))
    ).sum(dim=-1)


def gaussian_entropy(log_std: torch.Tensor) -> torch.Tensor:
    return (0.5 + 0.5 * math.log(2.0 * math.pi) + log_std).sum(dim=-1)


def squash_to_disc(action: torch.Tensor, max_speed: float) -> torch.Tensor:
    """Map an unbounded action onto the speed disc, keeping its direction."""
    norm = torch.linalg.vector_norm(action, dim=-1, keepdim=True).clamp_min(1e-8)
    return action / norm * (max_speed * torch.tanh(norm))


def estimate_to_text(estimate: np.ndarray) -> str:
    """Discretize a [0, 1] map to the simulator's grid text format.

    Below 0.25 counts as free, above 0.75 as occupied, the rest unknown.
    """
    if estimate.shape != (GRID_H, GRID_W):
        raise ValueError(f"expected ({GRID_H}, {GRID_W}) estimate, got {estimate.shape}")
    chars = np.full(estimate.shape, "?", dtype="<U1")
    chars[estimate < 0.25] = "."
    chars[estimate > 0.75] = "#"
    lines = [f"OGM {GRID_H} {GRID_W}"]
    lines += ["".join(row) for row in chars]
    return "\n".join(lines) + "\n"
