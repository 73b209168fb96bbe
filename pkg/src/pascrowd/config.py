"""One JSON document configures the whole simulator.

Sections: "scenario", "orca", "grid"; every field optional, defaults are the
canonical values. The resolved document hashes to a short id that binds
rollout files and episode records to the configuration that produced them.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .ogm import GridSpec
from .orca import OrcaParams
from .world import ScenarioConfig

ENV_CONFIG_VAR = "PASCROWD_CONFIG"


@dataclass(frozen=True)
class SimConfig:
    scenario: ScenarioConfig
    orca: OrcaParams
    grid: GridSpec

    def validate(self) -> None:
        self.scenario.validate()
        self.orca.validate()
        self.grid.validate()
        if self.orca.dt != self.scenario.dt:
            raise ValueError(
                f"orca dt {self.orca.dt} must match scenario dt {self.scenario.dt}"
            )


def default_config() -> SimConfig:
    return SimConfig(scenario=ScenarioConfig(), orca=OrcaParams(), grid=GridSpec())


def _build_section(cls, data: dict, section: str, **extra):
    allowed = {f.name for f in dataclasses.fields(cls)} - set(extra)
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
    return cls(**data, **extra)


def config_from_dict(doc: dict) -> SimConfig:
    unknown = set(doc) - {"scenario", "orca", "grid"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    scenario = _build_section(ScenarioConfig, doc.get("scenario", {}), "scenario")
    orca_data = dict(doc.get("orca", {}))
    orca_data.setdefault("dt", scenario.dt)
    orca = _build_section(OrcaParams, orca_data, "orca")
    grid = _build_section(GridSpec, doc.get("grid", {}), "grid", center=(0.0, 0.0))
    cfg = SimConfig(scenario=scenario, orca=orca, grid=grid)
    cfg.validate()
    return cfg


def load_config(path: str | Path | None = None) -> SimConfig:
    """Load the JSON config; falls back to $PASCROWD_CONFIG, then defaults."""
    if path is None:
        path = os.environ.get(ENV_CONFIG_VAR)
    if path is None:
        return default_config()
    with open(path, "r", encoding="utf-8") as handle:
        return config_from_dict(json.load(handle))


def config_to_dict(cfg: SimConfig) -> dict:
    return {
        "scenario": dataclasses.asdict(cfg.scenario),
        "orca": dataclasses.asdict(cfg.orca),
        "grid": {
            "height_cells": cfg.grid.height_cells,
            "width_cells": cfg.grid.width_cells,
            "resolution": cfg.grid.resolution,
        },
    }


def config_hash(cfg: SimConfig) -> str:
    """Short stable digest of the resolved configuration."""
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]
