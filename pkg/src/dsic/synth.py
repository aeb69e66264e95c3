"""Synthetic multi-scale heatmap data.

Each image holds a few Gaussian blobs. A blob belongs to exactly one pyramid
level according to its radius (octave bins starting at 2 px), and its target
is a Gaussian bump on that level's heatmap peaking at 1.0 in the cell that
contains the blob center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

LEVELS = (2, 3, 4, 5)
RADIUS_BINS = {2: (2.0, 4.0), 3: (4.0, 8.0), 4: (8.0, 16.0), 5: (16.0, 32.0)}
MAX_OVERLAP = 0.5
PLACEMENT_RETRIES = 50


@dataclass(frozen=True)
class Blob:
    cx: int
    cy: int
    radius: float

    @property
    def level(self) -> int:
        return level_for_radius(self.radius)

    def cell(self) -> tuple[int, int]:
        """(column, row) of the center cell on the assigned level."""
        stride = 2**self.level
        return self.cx // stride, self.cy // stride


@dataclass
class SynthSample:
    image: Tensor  # (1, 1, S, S)
    targets: list[Tensor]  # per level, (1, 1, S / 2^k, S / 2^k)
    blobs: list[Blob]
    seed: int | None = None


def level_for_radius(r: float) -> int:
    for lvl, (lo, hi) in RADIUS_BINS.items():
        if lo <= r < hi:
            return lvl
    raise ValueError(f"blob radius {r} outside [2, 32)")


def disc_overlap_fraction(r1: float, r2: float, dist: float) -> float:
    """Intersection area of two discs divided by the smaller disc's area."""
    small = math.pi * min(r1, r2) ** 2
    if dist >= r1 + r2:
        return 0.0
    if dist <= abs(r1 - r2):
        return 1.0
    a1 = r1 * r1 * math.acos((dist * dist + r1 * r1 - r2 * r2) / (2 * dist * r1))
    a2 = r2 * r2 * math.acos((dist * dist + r2 * r2 - r1 * r1) / (2 * dist * r2))
    a3 = 0.5 * math.sqrt((-dist + r1 + r2) * (dist + r1 - r2) * (dist - r1 + r2) * (dist + r1 + r2))
    return (a1 + a2 - a3) / small


def render_sample(blobs: list[Blob], size: int = 64, seed: int | None = None) -> SynthSample:
    coords = np.arange(size, dtype=np.float64)
    image = np.zeros((size, size))
    for b in blobs:
        sig = b.radius / 2.0
        gx = np.exp(-((coords - b.cx) ** 2) / (2 * sig * sig))
        gy = np.exp(-((coords - b.cy) ** 2) / (2 * sig * sig))
        image = np.maximum(image, np.outer(gy, gx))

    targets = []
    for lvl in LEVELS:
        stride = 2**lvl
        cells = size // stride
        heat = np.zeros((cells, cells))
        idx = np.arange(cells, dtype=np.float64)
        for b in blobs:
            if b.level != lvl:
                continue
            jx, jy = b.cell()
            sig = b.radius / stride
            gx = np.exp(-((idx - jx) ** 2) / (2 * sig * sig))
            gy = np.exp(-((idx - jy) ** 2) / (2 * sig * sig))
            heat = np.maximum(heat, np.outer(gy, gx))
        targets.append(Tensor(heat[None, None]))
    return SynthSample(Tensor(image[None, None]), targets, list(blobs), seed)


def _compatible(b: Blob, placed: list[Blob]) -> bool:
    for p in placed:
        dist = math.hypot(b.cx - p.cx, b.cy - p.cy)
        if disc_overlap_fraction(b.radius, p.radius, dist) > MAX_OVERLAP:
            return False
        if b.level == p.level and b.cell() == p.cell():
            return False
    return True


def generate_sample(
    seed: int,
    blob_count: tuple[int, int] = (1, 4),
    radius_range: tuple[float, float] = (2.0, 32.0),
    size: int = 64,
) -> SynthSample:
    """Deterministic sample for ``seed``; radii log-uniform over ``radius_range``.

    Placements that overlap an earlier blob by more than half the smaller
    disc, or share its center cell on the same level, are redrawn; after
    ``PLACEMENT_RETRIES`` failures the sample keeps the blobs it has.
    """
    rng = np.random.default_rng(seed)
    lo, hi = blob_count
    target = int(rng.integers(lo, hi + 1))
    log_lo, log_hi = math.log(radius_range[0]), math.log(radius_range[1])
    blobs: list[Blob] = []
    for _ in range(target):
        for _attempt in range(PLACEMENT_RETRIES):
            r = math.exp(rng.uniform(log_lo, log_hi))
            r = min(max(r, radius_range[0]), math.nextafter(radius_range[1], 0.0))
            cand = Blob(int(rng.integers(0, size)), int(rng.integers(0, size)), r)
            if _compatible(cand, blobs):
                blobs.append(cand)
                break
        else:
            break
    return render_sample(blobs, size, seed)
