"""Rule-based fusion of a semantic foreground mask with scored instance masks.

The semantic source (U-Net style) tends to fuse neighbouring vertebrae into a
single blob; the instance source (Mask R-CNN style) tends to drop vertebrae
outright. ``fuse`` combines the two so each failure is repaired by the other
source:

1. split the semantic mask into 8-connected components;
2. greedily match instances to components by IoU;
3. a component with one match becomes ``component | instance``;
4. a component with several matches is partitioned among them by nearest seed;
5. unmatched components and confident unmatched instances are kept as orphans;
6. pixels claimed twice are handed to the closest claimant;
7. the reference flag is carried over from the contributing instance.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigInvalid, GridMismatch
from .masks import (
    Grid,
    Mask,
    centroid,
    label_components,
    nearest_seed_partition,
    squared_distance_to,
)


class Provenance(enum.Enum):
    MATCHED = "Matched"
    SPLIT_FROM_MERGE = "SplitFromMerge"
    SEMANTIC_ONLY = "SemanticOnly"
    INSTANCE_ONLY = "InstanceOnly"


@dataclass(frozen=True)
class Instance:
    mask: Mask
    score: float
    is_reference: bool = False

    def __post_init__(self):
        if self.mask.is_empty():
            raise ValueError("instance mask must be non-empty")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"instance score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class SemanticMask:
    mask: Mask


@dataclass(frozen=True)
class EnsembleConfig:
    match_iou_threshold: float = 0.10
    min_component_area: int = 100
    min_orphan_score: float = 0.50
    # reject semantic-only components larger than this multiple of the
    # median matched-instance area
    max_fill_ratio: float = 3.0

    def validate(self) -> None:
        if not (0.0 < self.match_iou_threshold <= 1.0):
            raise ConfigInvalid(f"match_iou_threshold must be in (0, 1], got {self.match_iou_threshold}")
        if int(self.min_component_area) != self.min_component_area or self.min_component_area < 1:
            raise ConfigInvalid(f"min_component_area must be a positive integer, got {self.min_component_area}")
        if not (0.0 <= self.min_orphan_score <= 1.0):
            raise ConfigInvalid(f"min_orphan_score must be in [0, 1], got {self.min_orphan_score}")
        if not (math.isfinite(self.max_fill_ratio) and self.max_fill_ratio > 0):
            raise ConfigInvalid(f"max_fill_ratio must be positive, got {self.max_fill_ratio}")


@dataclass(frozen=True)
class FusedInstance:
    mask: Mask
    is_reference: bool
    provenance: Provenance
    # score of the contributing detection; 0.0 for semantic-only instances
    score: float = 0.0

    def __post_init__(self):
        if self.mask.is_empty():
            raise ValueError("fused instance mask must be non-empty")


@dataclass
class _Draft:
    mask: np.ndarray
    provenance: Provenance
    contributors: list[int] = field(default_factory=list)


def _overlap_table(labels: np.ndarray, n_components: int, instances: Sequence[Instance]):
    """Intersection counts, shape (n_instances, n_components)."""
    inter = np.zeros((len(instances), n_components), dtype=np.int64)
    for i, inst in enumerate(instances):
        counts = np.bincount(labels[inst.mask.array], minlength=n_components + 1)
        inter[i] = counts[1:]
    return inter


def _greedy_match(inter: np.ndarray, inst_areas, comp_areas, threshold: float) -> dict[int, int]:
    candidates = []
    for i, j in zip(*np.nonzero(inter)):
        union = inst_areas[i] + comp_areas[j] - inter[i, j]
        score = inter[i, j] / union
        if score >= threshold:
            candidates.append((-score, int(i), int(j)))
    candidates.sort()
    assignment: dict[int, int] = {}
    for _, i, j in candidates:
        if i not in assignment:
            assignment[i] = j
    return assignment


def match_instances(
    components: Sequence[Mask], instances: Sequence[Instance], threshold: float
) -> dict[int, int]:
    """Map instance index -> component index.

    Pairs are taken in descending IoU order (ties by instance index, then
    component index); each instance is used at most once, components may
    receive several instances. Pairs with IoU below ``threshold`` stay
    unmatched.
    """
    grids = {m.grid for m in components} | {inst.mask.grid for inst in instances}
    if len(grids) > 1:
        raise GridMismatch("components and instances are not on one grid")
    if not components or not instances:
        return {}
    inter = np.zeros((len(instances), len(components)), dtype=np.int64)
    for i, inst in enumerate(instances):
        for j, comp in enumerate(components):
            inter[i, j] = np.count_nonzero(inst.mask.array & comp.array)
    inst_areas = [inst.mask.area for inst in instances]
    comp_areas = [comp.area for comp in components]
    return _greedy_match(inter, inst_areas, comp_areas, threshold)


def _resolve_reference(instances: Sequence[Instance], contributors: Sequence[int]) -> tuple[bool, float]:
    if not contributors:
        return False, 0.0
    # highest score decides; lowest input index breaks score ties
    best = min(contributors, key=lambda i: (-instances[i].score, i))
    return instances[best].is_reference, instances[best].score


def _resolve_conflicts(drafts: list[_Draft]) -> list[_Draft]:
    """Give every multiply-claimed pixel to a single draft."""
    if len(drafts) < 2:
        return drafts
    stack = np.stack([d.mask for d in drafts])
    claims = stack.sum(axis=0)
    contested = claims >= 2
    if not contested.any():
        return drafts

    cents = []
    for d in drafts:
        ys, xs = np.nonzero(d.mask)
        cents.append((int(ys.sum()) / ys.size, int(xs.sum()) / xs.size))

    cy, cx = np.nonzero(contested)
    n = len(drafts)
    # distance of each contested pixel to each draft's uncontested pixels
    big = np.iinfo(np.int64).max
    dist = np.full((n, cy.size), big, dtype=np.int64)
    for k, d in enumerate(drafts):
        claimed = d.mask[cy, cx]
        if not claimed.any():
            continue
        exclusive = d.mask & ~contested
        ys, xs = np.nonzero(d.mask)
        y0, y1, x0, x1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
        d2 = squared_distance_to(exclusive[y0:y1, x0:x1])
        sel = np.flatnonzero(claimed)
        vals = d2[cy[sel] - y0, cx[sel] - x0]
        vals = np.where(vals < 0, big - 1, vals)  # no exclusive pixels left
        dist[k, sel] = vals

    rank = sorted(range(n), key=lambda k: (cents[k][0], cents[k][1], k))
    tiebreak = np.empty(n, dtype=np.int64)
    tiebreak[rank] = np.arange(n)
    # lexicographic argmin over (distance, centroid rank)
    order = np.lexsort((np.broadcast_to(tiebreak[:, None], dist.shape), dist), axis=0)
    winner = order[0]

    for k, d in enumerate(drafts):
        lose = np.zeros(cy.size, dtype=bool)
        lose[d.mask[cy, cx]] = True
        lose &= winner != k
        d.mask[cy[lose], cx[lose]] = False
    return [d for d in drafts if d.mask.any()]


def fuse(
    semantic: SemanticMask,
    instances: Sequence[Instance],
    config: EnsembleConfig | None = None,
) -> list[FusedInstance]:
    config = config or EnsembleConfig()
    config.validate()
    grid: Grid = semantic.mask.grid
    for i, inst in enumerate(instances):
        if inst.mask.grid != grid:
            raise GridMismatch(f"instance {i} grid {inst.mask.grid} differs from semantic grid {grid}")

    labels, n_comp = label_components(semantic.mask.array)
    comp_areas = np.bincount(labels.ravel(), minlength=n_comp + 1)[1:]
    inst_areas = [inst.mask.area for inst in instances]
    inter = _overlap_table(labels, n_comp, instances)
    assignment = _greedy_match(inter, inst_areas, comp_areas, config.match_iou_threshold)

    by_component: dict[int, list[int]] = {}
    for i, j in sorted(assignment.items()):
        by_component.setdefault(j, []).append(i)

    drafts: list[_Draft] = []
    for j in range(n_comp):
        matched = by_component.get(j)
        if not matched:
            continue
        comp = labels == (j + 1)
        if len(matched) == 1:
            i = matched[0]
            drafts.append(_Draft(comp | instances[i].mask.array, Provenance.MATCHED, [i]))
        else:
            region = Mask(grid, comp)
            seeds = [Mask(grid, instances[i].mask.array & comp) for i in matched]
            for i, part in zip(matched, nearest_seed_partition(region, seeds)):
                if part.is_empty():
                    continue
                drafts.append(_Draft(np.array(part.array), Provenance.SPLIT_FROM_MERGE, [i]))

    matched_areas = [inst_areas[i] for i in assignment]
    fill_limit = config.max_fill_ratio * float(np.median(matched_areas)) if matched_areas else math.inf
    for j in range(n_comp):
        if j in by_component:
            continue
        area = int(comp_areas[j])
        if area >= config.min_component_area and area <= fill_limit:
            drafts.append(_Draft(labels == (j + 1), Provenance.SEMANTIC_ONLY))
    for i, inst in enumerate(instances):
        if i not in assignment and inst.score >= config.min_orphan_score:
            drafts.append(_Draft(np.array(inst.mask.array), Provenance.INSTANCE_ONLY, [i]))

    drafts = _resolve_conflicts(drafts)

    fused = []
    for d in drafts:
        is_ref, score = _resolve_reference(instances, d.contributors)
        fused.append(FusedInstance(Mask(grid, d.mask), is_ref, d.provenance, score))
    keyed = [(centroid(f.mask), k) for k, f in enumerate(fused)]
    keyed.sort(key=lambda t: (t[0].y, t[0].x, t[1]))
    return [fused[k] for _, k in keyed]
