"""Loss terms as pure tensor functions so finite-difference checks apply."""
from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass
class LossTerms:
    recon: float = 0.0
    kl: float = 0.0
    pas_match: float = 0.0
    est: float = 0.0
    ppo_policy: float = 0.0
    ppo_value: float = 0.0


def reconstruction_loss(target: torch.Tensor, recon: torch.Tensor) -> torch.Tensor:
    """Mean squared error over cells (and batch)."""
    if target.shape != recon.shape:
        raise ValueError(f"shape mismatch {target.shape} vs {recon.shape}")
    return ((target - recon) ** 2).mean()


def kl_loss(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, sigma^2) || N(0, I)), summed over the latent, batch-averaged."""
    if mu.shape != logvar.shape:
        raise ValueError("mu and logvar must share shape")
    per_sample = 0.5 * (mu**2 + torch.exp(logvar) - 1.0 - logvar).sum(dim=-1)
    return per_sample.mean()


def supervisor_vae_loss(
    target: torch.Tensor,
    recon: torch.Tensor,
    mu: torch.Tensor,
    logvar: torch.Tensor,
    kl_coefficient: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Evidence-bound objective: reconstruction plus weighted KL."""
    rec = reconstruction_loss(target, recon)
    kl = kl_loss(mu, logvar)
    return rec + kl_coefficient * kl, rec, kl


def matching_loss(z_supervisor: torch.Tensor, z_student: torch.Tensor) -> torch.Tensor:
    """Squared distance between the two latents; no gradient reaches the
    supervisor side."""
    if z_supervisor.shape != z_student.shape:
        raise ValueError("latent dimensions differ")
    diff = z_student - z_supervisor.detach()
    per_sample = (diff**2).sum(dim=-1)
    return per_sample.mean()


def estimation_loss(target: torch.Tensor, estimate: torch.Tensor) -> torch.Tensor:
    """Cell-mean squared error between the omniscient map and the decoded
    estimate (off by default: trades navigation quality for map fidelity)."""
    if target.shape != estimate.shape:
        raise ValueError(f"shape mismatch {target.shape} vs {estimate.shape}")
    return ((target - estimate) ** 2).mean()


def ppo_policy_loss(
    new_log_probs: torch.Tensor,
    old_log_probs: torch.Tensor,
    advantages: torch.Tensor,
    clip: float,
) -> torch.Tensor:
    """Clipped importance-ratio surrogate (to be minimized)."""
    ratio = torch.exp(new_log_probs - old_log_probs)
    unclipped = ratio * advantages
    clipped = torch.clamp(ratio, 1.0 - clip, 1.0 + clip) * advantages
    return -torch.minimum(unclipped, clipped).mean()


def value_loss(values: torch.Tensor, returns: torch.Tensor) -> torch.Tensor:
    return ((values - returns) ** 2).mean()
