"""The training-variant matrix.

Feature-extractor (FE) variants train the encoder end-to-end with the
policy and zero out the latent-matching and KL terms; VAE variants add
both, supervised by the frozen single-frame omniscient autoencoder.
Sequence variants stack the last four frames as input channels; the rest
see only the current frame. Sources pick which grid feeds the student:
the sensor observation or the omniscient map (the oracle setting).
"""
from __future__ import annotations

from dataclasses import dataclass

from .config import HISTORY_LEN


@dataclass(frozen=True)
class BaselineSpec:
    name: str
    source: str  # "obs" or "gt"
    sequence: bool
    use_latent_losses: bool

    @property
    def input_channels(self) -> int:
        return HISTORY_LEN if self.sequence else 1

    @property
    def needs_gt(self) -> bool:
        """Train-mode sessions are required when the student consumes the
        omniscient map or the supervisor must encode it per frame."""
        return self.source == "gt" or self.use_latent_losses


_VARIANTS = {
    "gt-fe": BaselineSpec("gt-fe", source="gt", sequence=False, use_latent_losses=False),
    "obs-fe": BaselineSpec("obs-fe", source="obs", sequence=False, use_latent_losses=False),
    "seq-gt-fe": BaselineSpec("seq-gt-fe", source="gt", sequence=True, use_latent_losses=False),
    "seq-obs-fe": BaselineSpec("seq-obs-fe", source="obs", sequence=True, use_latent_losses=False),
    "pas-vae": BaselineSpec("pas-vae", source="obs", sequence=True, use_latent_losses=True),
    "seq-gt-vae": BaselineSpec("seq-gt-vae", source="gt", sequence=True, use_latent_losses=True),
}


def build_baseline(variant: str) -> BaselineSpec:
    key = variant.lower().replace("_", "-")
    if key not in _VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(_VARIANTS)}")
    return _VARIANTS[key]


def variant_names() -> tuple[str, ...]:
    return tuple(sorted(_VARIANTS))
