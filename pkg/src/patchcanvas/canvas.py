"""Large-canvas state, per-pixel time bookkeeping, and the coverage planner.

A canvas step is advanced by a sequence of overlapping rectangular patch
projections. Each pixel keeps a time index; a projection may only write
pixels that have not yet been advanced within the current step, so the first
projection containing a pixel wins. The planner picks projections biased
toward still-uncovered regions and never reads canvas values, which keeps
the projection choice independent of the state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LatentCanvas:
    """State tensor of shape (channels, height, width)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError(f"canvas must be (channels, height, width), got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("canvas contains non-finite values")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class PatchProjection:
    """Axis-aligned rectangular crop: top-left origin plus extent."""

    row0: int
    col0: int
    patch_h: int
    patch_w: int

    def __post_init__(self):
        if self.row0 < 0 or self.col0 < 0 or self.patch_h <= 0 or self.patch_w <= 0:
            raise ValueError(f"invalid projection {self}")

    @property
    def rows(self) -> slice:
        return slice(self.row0, self.row0 + self.patch_h)

    @property
    def cols(self) -> slice:
        return slice(self.col0, self.col0 + self.patch_w)

    def in_bounds(self, height: int, width: int) -> bool:
        return self.row0 + self.patch_h <= height and self.col0 + self.patch_w <= width

    def contains(self, row: int, col: int) -> bool:
        return self.row0 <= row < self.row0 + self.patch_h and self.col0 <= col < self.col0 + self.patch_w


@dataclass
class TimeStateGrid:
    """Per-pixel time index; entries hold at most two consecutive values."""

    states: np.ndarray

    @classmethod
    def at_time(cls, height: int, width: int, t: int) -> "TimeStateGrid":
        return cls(np.full((height, width), t, dtype=np.int64))


@dataclass
class CoveragePlan:
    """Ordered projections covering the canvas; ordinal order is write priority."""

    projections: list[PatchProjection] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.projections)

    def __iter__(self):
        return iter(self.projections)


def plan_coverage(height: int, width: int, patch_h: int, patch_w: int,
                  rng: np.random.Generator) -> CoveragePlan:
    """Randomized cover of the canvas by fixed-size patch projections.

    Repeats until every pixel is covered: pick a uniformly random uncovered
    pixel, then pick uniformly among all in-bounds origins whose rectangle
    contains it. Every appended projection therefore covers at least one new
    pixel, and sparsely covered regions are more likely to be hit. The draw
    never consults canvas values.
    """
    if patch_h > height or patch_w > width:
        raise ValueError(f"patch {patch_h}x{patch_w} larger than canvas {height}x{width}")
    covered = np.zeros((height, width), dtype=bool)
    plan = CoveragePlan()
    while True:
        uncovered = np.flatnonzero(~covered)
        if uncovered.size == 0:
            return plan
        pick = int(uncovered[rng.integers(uncovered.size)])
        r, c = divmod(pick, width)
        r_lo, r_hi = max(0, r - patch_h + 1), min(r, height - patch_h)
        c_lo, c_hi = max(0, c - patch_w + 1), min(c, width - patch_w)
        row0 = int(rng.integers(r_lo, r_hi + 1))
        col0 = int(rng.integers(c_lo, c_hi + 1))
        proj = PatchProjection(row0, col0, patch_h, patch_w)
        covered[proj.rows, proj.cols] = True
        plan.projections.append(proj)


def crop(canvas: LatentCanvas, p: PatchProjection) -> np.ndarray:
    """Copy of the (channels, patch_h, patch_w) sub-tensor; pure read."""
    if not p.in_bounds(canvas.height, canvas.width):
        raise ValueError(f"projection {p} out of bounds for {canvas.height}x{canvas.width} canvas")
    return canvas.values[:, p.rows, p.cols].copy()


def write_first_wins(dst: LatentCanvas, L: TimeStateGrid, p: PatchProjection,
                     values: np.ndarray, t: int) -> int:
    """Write patch values into pixels still at time t+1, advancing them to t.

    Pixels already at t were claimed by an earlier projection this step and
    are left untouched. Returns the number of pixels written.
    """
    if not p.in_bounds(dst.height, dst.width):
        raise ValueError(f"projection {p} out of bounds")
    values = np.asarray(values, dtype=float)
    if values.shape != (dst.channels, p.patch_h, p.patch_w):
        raise ValueError(f"value shape {values.shape} does not match projection "
                         f"({dst.channels}, {p.patch_h}, {p.patch_w})")
    region = L.states[p.rows, p.cols]
    bad = (region != t) & (region != t + 1)
    if np.any(bad):
        raise RuntimeError(f"time-state invariant breach: entries outside {{{t}, {t + 1}}} inside {p}")
    fresh = region == t + 1
    dst.values[:, p.rows, p.cols][:, fresh] = values[:, fresh]
    region[fresh] = t
    return int(fresh.sum())
