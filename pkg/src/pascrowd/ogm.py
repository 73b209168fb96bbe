"""Local occupancy grids around the robot.

Two grids per step: the omniscient grid marks every human disc, the
observation grid keeps only what a ray-based sensor with a circular field
of view would deliver — visible space is free, occlusion shadows and
everything beyond the field of view are unknown, and any agent with at
least one visible cell gets its whole in-view disc completed as occupied.

Visibility is exact segment-versus-disc geometry against cell centers, so
the scalar classifier below is both the implementation and the oracle the
vectorized builder is tested against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache

import numpy as np

from .world import Vector2D, WorldState

DEFAULT_HEIGHT_CELLS = 100
DEFAULT_WIDTH_CELLS = 100
DEFAULT_RESOLUTION = 0.1


class CellClass(IntEnum):
    FREE = 0
    OCCUPIED = 1
    UNKNOWN = 2


class VisibilityClass(IntEnum):
    VISIBLE = 0
    OCCLUDED = 1
    OUT_OF_FOV = 2


_NUMERIC = {CellClass.FREE: 0.0, CellClass.OCCUPIED: 1.0, CellClass.UNKNOWN: 0.5}
_CHAR = {CellClass.FREE: ".", CellClass.OCCUPIED: "#", CellClass.UNKNOWN: "?"}
_CHAR_INV = {v: k for k, v in _CHAR.items()}


@dataclass(frozen=True)
class GridSpec:
    """Robot-centered, world-axis-aligned grid.

    Columns grow with world +x, rows grow with world -y (row 0 is the top).
    """

    height_cells: int = DEFAULT_HEIGHT_CELLS
    width_cells: int = DEFAULT_WIDTH_CELLS
    resolution: float = DEFAULT_RESOLUTION
    center: Vector2D = (0.0, 0.0)

    def validate(self) -> None:
        if self.height_cells <= 0 or self.width_cells <= 0 or self.resolution <= 0:
            raise ValueError("grid dimensions and resolution must be positive")
        if not math.isclose(self.height_cells * self.resolution, 10.0) or not math.isclose(
            self.width_cells * self.resolution, 10.0
        ):
            raise ValueError("the local grid must span 10 m x 10 m")

    @classmethod
    def centered_on(cls, world: WorldState, **overrides) -> "GridSpec":
        return cls(center=world.robot.position, **overrides)

    def cell_center(self, row: int, col: int) -> Vector2D:
        cx, cy = self.center
        x = cx + (col - (self.width_cells - 1) / 2.0) * self.resolution
        y = cy + ((self.height_cells - 1) / 2.0 - row) * self.resolution
        return (x, y)

    def center_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(H, W) arrays of cell-center world coordinates."""
        x_off, y_off = _axis_offsets(self.height_cells, self.width_cells, self.resolution)
        cx, cy = self.center
        shape = (self.height_cells, self.width_cells)
        xs = np.broadcast_to(cx + x_off[None, :], shape)
        ys = np.broadcast_to(cy + y_off[:, None], shape)
        return xs, ys


@lru_cache(maxsize=8)
def _axis_offsets(height: int, width: int, resolution: float) -> tuple[np.ndarray, np.ndarray]:
    cols = np.arange(width, dtype=np.float64)
    rows = np.arange(height, dtype=np.float64)
    x_off = (cols - (width - 1) / 2.0) * resolution
    y_off = ((height - 1) / 2.0 - rows) * resolution
    x_off.setflags(write=False)
    y_off.setflags(write=False)
    return x_off, y_off


@dataclass(frozen=True)
class OccupancyGrid:
    spec: GridSpec
    cells: np.ndarray  # (H, W) uint8 of CellClass values

    def __post_init__(self):
        expected = (self.spec.height_cells, self.spec.width_cells)
        if self.cells.shape != expected:
            raise ValueError(f"cells shape {self.cells.shape} != spec shape {expected}")

    def numeric(self) -> np.ndarray:
        """Float view: free 0.0, occupied 1.0, unknown 0.5."""
        out = np.full(self.cells.shape, 0.5, dtype=np.float64)
        out[self.cells == CellClass.FREE] = 0.0
        out[self.cells == CellClass.OCCUPIED] = 1.0
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.cells, other.cells)


@dataclass(frozen=True)
class ObservationSequence:
    """The last four observation grids, oldest first."""

    frames: tuple[OccupancyGrid, ...]

    LENGTH = 4

    def __post_init__(self):
        if len(self.frames) != self.LENGTH:
            raise ValueError(f"sequence must hold exactly {self.LENGTH} frames")
        first = self.frames[0].cells.shape
        for frame in self.frames[1:]:
            if frame.cells.shape != first:
                raise ValueError("all frames must share grid dimensions")


def init_history(frame: OccupancyGrid) -> ObservationSequence:
    """Episode-start history: the first frame repeated."""
    return ObservationSequence(frames=(frame,) * ObservationSequence.LENGTH)


def push_history(seq: ObservationSequence, frame: OccupancyGrid) -> ObservationSequence:
    if frame.cells.shape != seq.frames[0].cells.shape:
        raise ValueError("frame dimensions do not match the sequence")
    return ObservationSequence(frames=seq.frames[1:] + (frame,))


def rasterize_ground_truth(world: WorldState, spec: GridSpec) -> OccupancyGrid:
    """Omniscient grid: a cell is occupied iff its center lies strictly inside
    some human disc. The robot's own body is never marked."""
    xs, ys = spec.center_arrays()
    occupied = np.zeros((spec.height_cells, spec.width_cells), dtype=bool)
    for human in world.humans:
        hx, hy = human.position
        occupied |= (xs - hx) ** 2 + (ys - hy) ** 2 < human.radius * human.radius
    cells = np.where(occupied, np.uint8(CellClass.OCCUPIED), np.uint8(CellClass.FREE))
    return OccupancyGrid(spec=spec, cells=cells)


def classify_visibility(
    world: WorldState, spec: GridSpec, cell: tuple[int, int], fov_radius: float
) -> VisibilityClass:
    """Exact per-cell rule: outside the sensing disc is out of view; a cell is
    occluded iff the sight line from the robot to its center passes through a
    human disc other than one containing the cell center itself."""
    row, col = cell
    if not (0 <= row < spec.height_cells and 0 <= col < spec.width_cells):
        raise ValueError(f"cell {cell} out of bounds")
    cx, cy = spec.cell_center(row, col)
    rx, ry = world.robot.position
    dx, dy = cx - rx, cy - ry
    if dx * dx + dy * dy > fov_radius * fov_radius:
        return VisibilityClass.OUT_OF_FOV
    dd = dx * dx + dy * dy
    for human in world.humans:
        hx, hy = human.position
        r_sq = human.radius * human.radius
        if (cx - hx) ** 2 + (cy - hy) ** 2 < r_sq:
            continue  # the cell sits inside this disc; it cannot self-occlude
        mx, my = rx - hx, ry - hy
        if dd == 0.0:
            t = 0.0
        else:
            t = -(mx * dx + my * dy) / dd
            t = min(max(t, 0.0), 1.0)
        ex, ey = mx + t * dx, my + t * dy
        if ex * ex + ey * ey < r_sq:
            return VisibilityClass.OCCLUDED
    return VisibilityClass.VISIBLE


def _visibility_field(world: WorldState, spec: GridSpec, fov_radius: float) -> np.ndarray:
    """(H, W) VisibilityClass array; vectorized form of classify_visibility."""
    xs, ys = spec.center_arrays()
    rx, ry = world.robot.position
    dx = xs - rx
    dy = ys - ry
    dd = dx * dx + dy * dy
    out_of_fov = dd > fov_radius * fov_radius

    occluded = np.zeros_like(out_of_fov)
    for human in world.humans:
        hx, hy = human.position
        r_sq = human.radius * human.radius
        inside = (xs - hx) ** 2 + (ys - hy) ** 2 < r_sq
        mx, my = rx - hx, ry - hy
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(dd == 0.0, 0.0, -(mx * dx + my * dy) / dd)
        t = np.clip(t, 0.0, 1.0)
        ex = mx + t * dx
        ey = my + t * dy
        occluded |= (ex * ex + ey * ey < r_sq) & ~inside

    field = np.full(dd.shape, np.uint8(VisibilityClass.VISIBLE))
    field[occluded] = np.uint8(VisibilityClass.OCCLUDED)
    field[out_of_fov] = np.uint8(VisibilityClass.OUT_OF_FOV)
    return field


def _disc_masks(world: WorldState, spec: GridSpec) -> list[np.ndarray]:
    xs, ys = spec.center_arrays()
    masks = []
    for human in world.humans:
        hx, hy = human.position
        masks.append((xs - hx) ** 2 + (ys - hy) ** 2 < human.radius * human.radius)
    return masks


def detected_agents(world: WorldState, spec: GridSpec, fov_radius: float) -> list[int]:
    """Indices of humans with at least one visible in-bounds cell in their disc."""
    if not world.humans:
        return []
    field = _visibility_field(world, spec, fov_radius)
    visible = field == VisibilityClass.VISIBLE
    detected = []
    for index, mask in enumerate(_disc_masks(world, spec)):
        if np.any(mask & visible):
            detected.append(index)
    return detected


def build_observation(world: WorldState, spec: GridSpec, fov_radius: float) -> OccupancyGrid:
    """Sensor-view grid: unknown outside the field of view and in occlusion
    shadows, free where visible, and every detected agent's in-view disc
    completed as occupied (partial detection implies the full disc)."""
    field = _visibility_field(world, spec, fov_radius)
    cells = np.full(field.shape, np.uint8(CellClass.UNKNOWN))
    cells[field == VisibilityClass.VISIBLE] = np.uint8(CellClass.FREE)

    if world.humans:
        xs, ys = spec.center_arrays()
        rx, ry = world.robot.position
        in_fov = (xs - rx) ** 2 + (ys - ry) ** 2 <= fov_radius * fov_radius
        masks = _disc_masks(world, spec)
        visible = field == VisibilityClass.VISIBLE
        for mask in masks:
            if np.any(mask & visible):
                cells[mask & in_fov] = np.uint8(CellClass.OCCUPIED)
    return OccupancyGrid(spec=spec, cells=cells)


# ---------- map similarity ----------


def _manhattan_field(mask: np.ndarray) -> np.ndarray:
    """Exact L1 distance transform to the True cells (two separable passes)."""
    height, width = mask.shape
    big = (height + width) * 4
    x = np.where(mask, 0, big).astype(np.int64)

    rows = np.arange(height, dtype=np.int64)[:, None]
    down = np.minimum.accumulate(x - rows, axis=0) + rows
    up = np.minimum.accumulate((x + rows)[::-1], axis=0)[::-1] - rows
    vertical = np.minimum(down, up)

    cols = np.arange(width, dtype=np.int64)[None, :]
    left = np.minimum.accumulate(vertical - cols, axis=1) + cols
    right = np.minimum.accumulate((vertical + cols)[:, ::-1], axis=1)[:, ::-1] - cols
    return np.minimum(left, right)


def image_similarity(a: OccupancyGrid, b: OccupancyGrid) -> dict[str, float]:
    """Symmetric per-class mean nearest-cell Manhattan distance, lower is better.

    A class present in only one map scores the H+W fallback; absent in both
    scores zero. Keys: occupied, free, occluded, total.
    """
    if a.cells.shape != b.cells.shape:
        raise ValueError("grids must share dimensions")
    height, width = a.cells.shape
    fallback = float(height + width)

    scores: dict[str, float] = {}
    classes = [
        ("occupied", CellClass.OCCUPIED),
        ("free", CellClass.FREE),
        ("occluded", CellClass.UNKNOWN),
    ]
    for name, value in classes:
        mask_a = a.cells == value
        mask_b = b.cells == value
        has_a = bool(mask_a.any())
        has_b = bool(mask_b.any())
        if has_a and has_b:
            psi_ab = float(_manhattan_field(mask_b)[mask_a].mean())
            psi_ba = float(_manhattan_field(mask_a)[mask_b].mean())
            scores[name] = (psi_ab + psi_ba) / 2.0
        elif has_a or has_b:
            scores[name] = fallback
        else:
            scores[name] = 0.0
    scores["total"] = scores["occupied"] + scores["free"] + scores["occluded"]
    return scores


# ---------- text dump ----------


def render_text(grid: OccupancyGrid) -> str:
    """`OGM <H> <W>` header plus one character row per grid row."""
    height, width = grid.cells.shape
    lines = [f"OGM {height} {width}"]
    lookup = np.array([_CHAR[CellClass.FREE], _CHAR[CellClass.OCCUPIED], _CHAR[CellClass.UNKNOWN]])
    for row in lookup[grid.cells]:
        lines.append("".join(row))
    return "\n".join(lines) + "\n"


def parse_text(text: str, spec: GridSpec | None = None) -> OccupancyGrid:
    lines = text.strip("\n").split("\n")
    header = lines[0].split()
    if len(header) != 3 or header[0] != "OGM":
        raise ValueError(f"bad grid header: {lines[0]!r}")
    height, width = int(header[1]), int(header[2])
    if len(lines) != height + 1:
        raise ValueError(f"expected {height} rows, got {len(lines) - 1}")
    cells = np.zeros((height, width), dtype=np.uint8)
    for r, row in enumerate(lines[1:]):
        if len(row) != width:
            raise ValueError(f"row {r} has length {len(row)}, expected {width}")
        cells[r] = [int(_CHAR_INV[ch]) for ch in row]
    if spec is None:
        spec = GridSpec(height_cells=height, width_cells=width)
    return OccupancyGrid(spec=spec, cells=cells)
