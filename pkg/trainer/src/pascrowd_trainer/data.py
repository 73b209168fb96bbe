"""Rollout-file parsing and ground-truth dataset collection.

Rollout files come from the simulator CLI; the format is one header line
`PASROLL 1 <H> <W> <dt> <config-hash>` followed by JSON step lines whose
`obs`/`gt` fields hold base64 row-major byte grids.
"""
from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from .simclient import decode_grid

SIMULATE_CMD = [sys.executable, "-m", "pascrowd.cli", "simulate"]


class RolloutParseError(RuntimeError):
    pass


def read_rollout_grids(path: str | Path, field: str = "gt") -> list[np.ndarray]:
    """All grids of one field ('obs' or 'gt') from a rollout file."""
    path = Path(path)
    grids = []
    with path.open("r", encoding="utf-8") as handle:
        header = handle.readline().split()
        if len(header) != 6 or header[0] != "PASROLL" or header[1] != "1":
            raise RolloutParseError(f"bad rollout header in {path}")
        for line_no, line in enumerate(handle, start=2):
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RolloutParseError(f"{path}:{line_no}: {exc}") from exc
            if field in record:
                grids.append(decode_grid(record[field]))
    return grids


def collect_gt_dataset(
    out_dir: str | Path,
    episodes: int,
    base_seed: int = 0,
    config_path: str | None = None,
    max_frames: int | None = None,
) -> np.ndarray:
    """Run omniscient-baseline episodes in train mode and stack their
    ground-truth grids into one (N, H, W) byte array."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grids: list[np.ndarray] = []
    for i in range(episodes):
        seed = base_seed + i
        rollout = out_dir / f"gt_{seed}.ndjson"
        if not rollout.exists():
            cmd = SIMULATE_CMD + [
                "--seed",
                str(seed),
                "--policy",
                "gt-orca",
                "--rollout",
                str(rollout),
                "--train",
            ]
            if config_path:
                cmd += ["--config", config_path]
            subprocess.run(cmd, check=True, capture_output=True)
        grids.extend(read_rollout_grids(rollout, "gt"))
        if max_frames is not None and len(grids) >= max_frames:
            grids = grids[:max_frames]
            break
    if not grids:
        raise RolloutParseError("no ground-truth grids collected")
    return np.stack(grids, axis=0)


def grids_to_float(grids: np.ndarray) -> np.ndarray:
    """Byte classes to numeric maps: free 0.0, occupied 1.0, unknown 0.5."""
    out = np.empty(grids.shape, dtype=np.float32)
    out[grids == 0] = 0.0
    out[grids == 1] = 1.0
    out[grids == 2] = 0.5
    return out
