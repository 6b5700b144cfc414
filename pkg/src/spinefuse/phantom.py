"""Seeded synthetic spines with corrupted detector outputs.

Each phantom is a vertical column of rounded rectangles following a gentle
sinusoidal curve, with a distinctively shaped reference vertebra: a tapered
cone for C2 at the top of cervical phantoms, a downward-pointing triangle for
S1 at the bottom of lumbar phantoms. Two corruptions emulate the typical
failures of the two segmentation models:

* ``merge_pairs`` bridges neighbouring vertebrae in the semantic mask;
* ``dropout`` deletes non-reference vertebrae from the instance list.

``boundary_noise`` additionally dilates or erodes each instance mask by a
random radius.

Randomness comes from numpy's PCG64 bit generator. The root
``SeedSequence(seed)`` is spawned into four independent child streams, used
in this order: detection scores, merge-pair selection, dropout selection,
boundary noise. Outputs are a pure function of the config.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .ensemble import Instance, SemanticMask
from .errors import ConfigInvalid
from .evaluation import GroundTruthSet
from .labeling import LabeledVertebra, SpineRegion, VertebraLabel
from .masks import Grid, Mask

DEFAULT_COUNTS = {SpineRegion.CERVICAL: 7, SpineRegion.LUMBAR: 8}
SCORE_RANGE = (0.7, 1.0)


@dataclass(frozen=True)
class PhantomConfig:
    seed: int = 0
    region: SpineRegion = SpineRegion.LUMBAR
    n_vertebrae: int | None = None
    width: int = 512
    height: int = 1024
    vertebra_width: int = 90
    vertebra_height: int = 60
    gap: int = 12
    curve_amplitude: float = 30.0
    merge_pairs: int = 0
    dropout: int = 0
    boundary_noise: int = 0

    @property
    def n(self) -> int:
        return self.n_vertebrae if self.n_vertebrae is not None else DEFAULT_COUNTS.get(self.region, 0)

    @property
    def grid(self) -> Grid:
        return Grid(self.width, self.height)

    def validate(self) -> None:
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2**64:
            raise ConfigInvalid(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.region not in DEFAULT_COUNTS:
            raise ConfigInvalid(f"phantom region must be cervical or lumbar, got {self.region}")
        n = self.n
        if n < 1:
            raise ConfigInvalid(f"n_vertebrae must be >= 1, got {n}")
        room = VertebraLabel.S1 - VertebraLabel.C2 + 1 if self.region is SpineRegion.CERVICAL else len(VertebraLabel)
        if n > room:
            raise ConfigInvalid(f"{n} vertebrae do not fit the anatomical sequence ({room} max)")
        if self.width < 1 or self.height < 1:
            raise ConfigInvalid("grid must be at least 1x1")
        if self.vertebra_width < 4 or self.vertebra_height < 4:
            raise ConfigInvalid("vertebra size must be at least 4x4 pixels")
        # a one-pixel gap still keeps neighbours in separate 8-connected components
        if self.gap < 1:
            raise ConfigInvalid(f"gap must be >= 1 pixel, got {self.gap}")
        if self.curve_amplitude < 0:
            raise ConfigInvalid("curve_amplitude must be non-negative")
        for name in ("merge_pairs", "dropout", "boundary_noise"):
            if getattr(self, name) < 0:
                raise ConfigInvalid(f"{name} must be non-negative")
        if self.merge_pairs > n - 1:
            raise ConfigInvalid(f"merge_pairs={self.merge_pairs} exceeds the {n - 1} adjacent pairs")
        if self.merge_pairs + self.dropout >= n:
            raise ConfigInvalid(
                f"merge_pairs + dropout must be < n_vertebrae ({self.merge_pairs} + {self.dropout} >= {n})"
            )
        if self.boundary_noise > min(self.vertebra_width, self.vertebra_height) // 4:
            raise ConfigInvalid("boundary_noise too large for the vertebra size")

        r = self.boundary_noise
        span = n * self.vertebra_height + (n - 1) * self.gap
        if span + 2 * r > self.height:
            raise ConfigInvalid(f"{n} vertebrae need {span + 2 * r} rows, grid has {self.height}")
        half = self.vertebra_width / 2 + self.curve_amplitude + r
        if 2 * math.ceil(half) + 1 > self.width:
            raise ConfigInvalid(f"spine needs {2 * math.ceil(half) + 1} columns, grid has {self.width}")


@dataclass(frozen=True)
class PhantomTruth:
    ground_truth: GroundTruthSet
    semantic: SemanticMask
    instances: list[Instance]
    manifest: dict = field(default_factory=dict)


# --- shapes ---------------------------------------------------------------

def _rounded_rect(w: int, h: int) -> np.ndarray:
    rc = min(w, h) / 5
    py, px = np.mgrid[0:h, 0:w] + 0.5
    dx = np.maximum(np.maximum(rc - px, px - (w - rc)), 0)
    dy = np.maximum(np.maximum(rc - py, py - (h - rc)), 0)
    return dx * dx + dy * dy <= rc * rc


def _taper(w: int, h: int, top_frac: float, bottom_frac: float) -> np.ndarray:
    """Symmetric shape whose width changes linearly from top to bottom row."""
    py, px = np.mgrid[0:h, 0:w] + 0.5
    t = py / h
    half = (w / 2) * (top_frac + (bottom_frac - top_frac) * t)
    return np.abs(px - w / 2) <= np.maximum(half, 0.5)


def vertebra_shape(w: int, h: int, label: VertebraLabel, reference: bool) -> np.ndarray:
    if reference and label is VertebraLabel.S1:
        return _taper(w, h, 1.0, 0.0)  # triangle, apex down
    if reference and label is VertebraLabel.C2:
        return _taper(w, h, 0.3, 1.0)  # cone, narrow end up
    return _rounded_rect(w, h)


def _disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return xx * xx + yy * yy <= radius * radius


def _perturb(arr: np.ndarray, radius: int, dilate: bool) -> np.ndarray:
    if radius == 0:
        return arr
    ys, xs = np.nonzero(arr)
    y0, y1 = max(ys.min() - radius, 0), min(ys.max() + radius + 1, arr.shape[0])
    x0, x1 = max(xs.min() - radius, 0), min(xs.max() + radius + 1, arr.shape[1])
    crop = arr[y0:y1, x0:x1]
    op = ndimage.binary_dilation if dilate else ndimage.binary_erosion
    out = np.zeros_like(arr)
    # the crop is padded by the radius, so only the image edge acts as border
    out[y0:y1, x0:x1] = op(crop, structure=_disk(radius), border_value=0)
    return out


# --- corruption selection -------------------------------------------------

def _choose_corruptions(rng_merge, rng_drop, n: int, ref: int, m: int, d: int):
    """Pick ``m`` adjacent pairs and ``d`` dropouts disjoint from them and the reference."""

    def free_vertebrae(pairs):
        used = {k for j in pairs for k in (j, j + 1)}
        return [k for k in range(n) if k not in used and k != ref]

    pairs = None
    for _ in range(64):
        cand = sorted(int(j) for j in rng_merge.choice(n - 1, size=m, replace=False)) if m else []
        if len(free_vertebrae(cand)) >= d:
            pairs = cand
            break
    if pairs is None:
        # a chain through the reference always leaves n - m - 1 free vertebrae
        start = 0 if ref == 0 else n - 1 - m
        pairs = list(range(start, start + m))
    free = free_vertebrae(pairs)
    dropped = sorted(int(k) for k in rng_drop.choice(free, size=d, replace=False)) if d else []
    return pairs, dropped


# --- generation -----------------------------------------------------------

def generate(config: PhantomConfig) -> PhantomTruth:
    config.validate()
    n = config.n
    grid = config.grid
    w, h = config.vertebra_width, config.vertebra_height
    rng_score, rng_merge, rng_drop, rng_noise = (
        np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(int(config.seed)).spawn(4)
    )

    if config.region is SpineRegion.CERVICAL:
        ref = 0
        labels = [VertebraLabel(VertebraLabel.C2 + k) for k in range(n)]
    else:
        ref = n - 1
        labels = [VertebraLabel(VertebraLabel.S1 - (n - 1) + k) for k in range(n)]

    span = n * h + (n - 1) * config.gap
    top = (config.height - span) // 2
    masks, boxes = [], []
    for k in range(n):
        y0 = top + k * (h + config.gap)
        cx = config.width / 2 + config.curve_amplitude * math.sin(k * math.pi / n)
        x0 = math.floor(cx - w / 2 + 0.5)
        arr = np.zeros(grid.shape, dtype=bool)
        arr[y0:y0 + h, x0:x0 + w] = vertebra_shape(w, h, labels[k], k == ref)
        masks.append(arr)
        ys, xs = np.nonzero(arr)
        boxes.append((int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1))

    scores = [round(float(s), 6) for s in rng_score.uniform(*SCORE_RANGE, size=n)]
    pairs, dropped = _choose_corruptions(rng_merge, rng_drop, n, ref, config.merge_pairs, config.dropout)

    semantic = np.logical_or.reduce(masks)
    for j in pairs:
        (ax0, _, ax1, ay1), (bx0, by0, bx1, _) = boxes[j], boxes[j + 1]
        lo, hi = max(ax0, bx0), min(ax1, bx1)
        if lo >= hi:
            lo, hi = min(ax0, bx0), max(ax1, bx1)
        semantic[ay1:by0, lo:hi] = True

    noise = []
    instances = []
    for k in range(n):
        radius = int(rng_noise.integers(0, config.boundary_noise + 1))
        dilate = bool(rng_noise.random() < 0.5)
        noise.append(radius if dilate else -radius)
        if k in dropped:
            continue
        arr = _perturb(masks[k], radius, dilate)
        instances.append(Instance(Mask(grid, arr), scores[k], k == ref))

    image_id = f"phantom-{config.region.value}-{config.seed}"
    gt = GroundTruthSet(
        image_id,
        grid,
        tuple(LabeledVertebra(labels[k], Mask(grid, masks[k])) for k in range(n)),
    )
    manifest = {
        "image_id": image_id,
        "seed": int(config.seed),
        "region": config.region.value,
        "n_vertebrae": n,
        "labels": [lab.name for lab in labels],
        "reference": labels[ref].name,
        "merged_pairs": [[labels[j].name, labels[j + 1].name] for j in pairs],
        "dropped": [labels[k].name for k in dropped],
        "boundary_noise": config.boundary_noise,
        # signed radius per vertebra: positive dilates, negative erodes
        "noise_radii": {labels[k].name: noise[k] for k in range(n)},
    }
    return PhantomTruth(gt, SemanticMask(Mask(grid, semantic)), instances, manifest)


def generate_suite(
    base_seed: int,
    count: int,
    merge_pairs=(0,),
    dropout=(0,),
    boundary_noise=(0,),
    base: PhantomConfig | None = None,
) -> list[PhantomTruth]:
    """Phantoms seeded ``base_seed + i``, cycling through every corruption combination."""
    if count < 1:
        raise ConfigInvalid(f"count must be >= 1, got {count}")
    levels = list(itertools.product(merge_pairs, dropout, boundary_noise))
    if not levels:
        raise ConfigInvalid("corruption grid is empty")
    if count < len(levels):
        raise ConfigInvalid(f"count={count} cannot cover {len(levels)} corruption combinations")
    base = base or PhantomConfig()
    suite = []
    for i in range(count):
        m, d, r = levels[i % len(levels)]
        cfg = replace(base, seed=base_seed + i, merge_pairs=m, dropout=d, boundary_noise=r)
        suite.append(generate(cfg))
    return suite
