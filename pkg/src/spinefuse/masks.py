"""Binary raster masks and the geometric primitives built on them.

Masks are stored as read-only boolean arrays of shape ``(height, width)``.
Pixel coordinates are ``(x, y)`` with the origin at the top-left corner and
``y`` growing downward, so ``array[y, x]`` is pixel ``(x, y)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import (
    EmptyMask,
    GridMismatch,
    NoSeeds,
    RleLengthMismatch,
    RleMalformed,
    SeedOutsideRegion,
)

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Grid:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.width}x{self.height}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.width * self.height


class Mask:
    """Immutable binary mask on a fixed grid."""

    __slots__ = ("grid", "array")

    def __init__(self, grid: Grid, array: np.ndarray):
        arr = np.asarray(array)
        if arr.shape != grid.shape:
            raise GridMismatch(f"array shape {arr.shape} does not match grid {grid.shape}")
        arr = np.array(arr, dtype=bool, copy=True)
        arr.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "array", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Mask is immutable")

    @classmethod
    def empty(cls, grid: Grid) -> "Mask":
        return cls(grid, np.zeros(grid.shape, dtype=bool))

    @classmethod
    def from_pixels(cls, grid: Grid, pixels: Iterable[tuple[int, int]]) -> "Mask":
        arr = np.zeros(grid.shape, dtype=bool)
        for x, y in pixels:
            if not (0 <= x < grid.width and 0 <= y < grid.height):
                raise ValueError(f"pixel ({x}, {y}) outside {grid.width}x{grid.height} grid")
            arr[y, x] = True
        return cls(grid, arr)

    def pixels(self) -> set[tuple[int, int]]:
        ys, xs = np.nonzero(self.array)
        return {(int(x), int(y)) for x, y in zip(xs, ys)}

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.array))

    def is_empty(self) -> bool:
        return not self.array.any()

    def bbox(self) -> tuple[int, int, int, int] | None:
        """``(x0, y0, x1, y1)`` with exclusive upper bounds, or None if empty."""
        ys, xs = np.nonzero(self.array)
        if ys.size == 0:
            return None
        return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1

    def _check(self, other: "Mask") -> None:
        if self.grid != other.grid:
            raise GridMismatch(f"grids differ: {self.grid} vs {other.grid}")

    def __and__(self, other: "Mask") -> "Mask":
        self._check(other)
        return Mask(self.grid, self.array & other.array)

    def __or__(self, other: "Mask") -> "Mask":
        self._check(other)
        return Mask(self.grid, self.array | other.array)

    def __sub__(self, other: "Mask") -> "Mask":
        self._check(other)
        return Mask(self.grid, self.array & ~other.array)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mask):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.array, other.array)

    __hash__ = None

    def __repr__(self) -> str:
        return f"Mask({self.grid.width}x{self.grid.height}, area={self.area})"


@dataclass(frozen=True)
class RleMask:
    grid: Grid
    runs: tuple[int, ...]


@dataclass(frozen=True)
class Centroid:
    x: float
    y: float


def _check_grids(a: Mask, b: Mask) -> None:
    if a.grid != b.grid:
        raise GridMismatch(f"grids differ: {a.grid} vs {b.grid}")


# --- run-length encoding --------------------------------------------------

def rle_encode(mask: Mask) -> RleMask:
    """Row-major alternating runs, starting with background."""
    flat = mask.array.ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return RleMask(mask.grid, tuple(int(r) for r in runs))


def rle_decode(rle: RleMask) -> Mask:
    grid = rle.grid
    runs = list(rle.runs)
    if any(int(r) != r or r < 0 for r in runs):
        raise RleMalformed("runs must be non-negative integers")
    if any(r == 0 for r in runs[1:]):
        raise RleMalformed("runs contain a zero-length run after the first position")
    total = sum(runs)
    if total != grid.size:
        raise RleLengthMismatch(
            f"runs sum to {total} but grid {grid.width}x{grid.height} has {grid.size} pixels"
        )
    values = np.arange(len(runs)) % 2 == 1
    flat = np.repeat(values, np.asarray(runs, dtype=np.int64))
    return Mask(grid, flat.reshape(grid.shape))


# --- components and overlap -----------------------------------------------

def label_components(array: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected labeling; labels numbered by first pixel in row-major order."""
    labels, count = ndimage.label(array, structure=_EIGHT_CONNECTED)
    if count == 0:
        return labels, 0
    flat = labels.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids != 0
    ids, first = ids[keep], first[keep]
    order = ids[np.argsort(first, kind="stable")]
    remap = np.zeros(count + 1, dtype=labels.dtype)
    remap[order] = np.arange(1, count + 1, dtype=labels.dtype)
    return remap[labels], count


def connected_components(mask: Mask) -> list[Mask]:
    labels, count = label_components(mask.array)
    return [Mask(mask.grid, labels == k) for k in range(1, count + 1)]


def dice(a: Mask, b: Mask) -> float:
    _check_grids(a, b)
    total = int(np.count_nonzero(a.array)) + int(np.count_nonzero(b.array))
    if total == 0:
        return 1.0
    inter = int(np.count_nonzero(a.array & b.array))
    return 2.0 * inter / total


def iou(a: Mask, b: Mask) -> float:
    _check_grids(a, b)
    union = int(np.count_nonzero(a.array | b.array))
    if union == 0:
        return 1.0
    inter = int(np.count_nonzero(a.array & b.array))
    return inter / union


def centroid(mask: Mask) -> Centroid:
    ys, xs = np.nonzero(mask.array)
    if ys.size == 0:
        raise EmptyMask("centroid of an empty mask is undefined")
    # integer sums keep the mean exact up to the final division
    return Centroid(int(xs.sum()) / xs.size, int(ys.sum()) / ys.size)


# --- distances ------------------------------------------------------------

def squared_distance_to(features: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance from every pixel to the nearest True pixel.

    Integer-valued (int64) so ties compare exactly. Pixels get ``-1`` when
    ``features`` has no True pixel at all.
    """
    if not features.any():
        return np.full(features.shape, -1, dtype=np.int64)
    _, (iy, ix) = ndimage.distance_transform_edt(~features, return_indices=True)
    yy, xx = np.indices(features.shape)
    dy = (yy - iy).astype(np.int64)
    dx = (xx - ix).astype(np.int64)
    return dy * dy + dx * dx


def nearest_seed_partition(region: Mask, seeds: Sequence[Mask]) -> list[Mask]:
    """Split ``region`` among ``seeds`` by nearest seed pixel.

    Seeds are clipped to the region first. Each region pixel goes to the seed
    at minimal Euclidean distance; ties go to the lowest seed index. The
    outputs are disjoint and their union is exactly ``region``.
    """
    if not seeds:
        raise NoSeeds("nearest_seed_partition needs at least one seed")
    for i, seed in enumerate(seeds):
        _check_grids(region, seed)
        if not (seed.array & region.array).any():
            raise SeedOutsideRegion(f"seed {i} does not intersect the region")

    box = region.bbox()
    x0, y0, x1, y1 = box
    reg = region.array[y0:y1, x0:x1]
    best = None
    owner = np.zeros(reg.shape, dtype=np.int64)
    for i, seed in enumerate(seeds):
        d2 = squared_distance_to(seed.array[y0:y1, x0:x1] & reg)
        if best is None:
            best = d2
            continue
        closer = d2 < best  # strict: earlier seeds keep ties
        owner[closer] = i
        best = np.where(closer, d2, best)

    out = []
    for i in range(len(seeds)):
        arr = np.zeros(region.grid.shape, dtype=bool)
        arr[y0:y1, x0:x1] = reg & (owner == i)
        out.append(Mask(region.grid, arr))
    return out
