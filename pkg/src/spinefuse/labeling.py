"""Spine ordering and anatomical label propagation from a reference vertebra.

C2 anchors cervical images (labels walk down: C3 ... C7, T1, ...), S1 anchors
lumbar images (labels walk up: L5 ... L1, T12, T11, ...).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ensemble import EnsembleConfig, FusedInstance, Instance, SemanticMask, fuse
from .errors import (
    AmbiguousRegion,
    EmptyInput,
    InvalidReferenceIndex,
    NoReferenceFound,
    SequenceOverflow,
)
from .masks import Mask, centroid


class VertebraLabel(enum.IntEnum):
    """Anatomical vertebra; the ordinal grows from head (C1 = 0) to feet (S1 = 24)."""

    C1 = 0
    C2 = 1
    C3 = 2
    C4 = 3
    C5 = 4
    C6 = 5
    C7 = 6
    T1 = 7
    T2 = 8
    T3 = 9
    T4 = 10
    T5 = 11
    T6 = 12
    T7 = 13
    T8 = 14
    T9 = 15
    T10 = 16
    T11 = 17
    T12 = 18
    L1 = 19
    L2 = 20
    L3 = 21
    L4 = 22
    L5 = 23
    S1 = 24

    def __str__(self):
        return self.name


class SpineRegion(enum.Enum):
    CERVICAL = "cervical"
    LUMBAR = "lumbar"
    AUTO = "auto"


# labels named explicitly by the propagation rules; anything else is extrapolated
CERVICAL_RANGE = (VertebraLabel.C2, VertebraLabel.T1)
LUMBAR_RANGE = (VertebraLabel.T11, VertebraLabel.S1)


@dataclass(frozen=True)
class LabeledVertebra:
    label: VertebraLabel
    mask: Mask
    extrapolated: bool = False

    def __post_init__(self):
        if self.mask.is_empty():
            raise ValueError("labeled vertebra mask must be non-empty")


def order_along_spine(instances: Sequence[FusedInstance]) -> list[FusedInstance]:
    """Sort instances head-to-feet along the principal axis of their centroids."""
    if not instances:
        raise EmptyInput("order_along_spine needs at least one instance")
    cents = [centroid(inst.mask) for inst in instances]
    fallback = sorted(range(len(instances)), key=lambda k: (cents[k].y, cents[k].x, k))
    if len(instances) < 3:
        return [instances[k] for k in fallback]

    # canonical row order makes the axis independent of input permutation
    pts = np.array([(cents[k].x, cents[k].y) for k in fallback])
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] <= 0 or np.isclose(evals[0], evals[1], rtol=1e-12, atol=1e-12):
        return [instances[k] for k in fallback]
    axis = evecs[:, 1]
    if axis[1] < 0 or (axis[1] == 0 and axis[0] < 0):
        axis = -axis
    proj = {k: float(np.dot((cents[k].x, cents[k].y), axis)) for k in range(len(instances))}
    order = sorted(range(len(instances)), key=lambda k: (proj[k], cents[k].x, k))
    return [instances[k] for k in order]


def select_reference(instances: Sequence[FusedInstance]) -> int:
    """Index of the reference vertebra; several flags resolve to the largest mask."""
    if not instances:
        raise EmptyInput("select_reference needs at least one instance")
    flagged = [k for k, inst in enumerate(instances) if inst.is_reference]
    if not flagged:
        raise NoReferenceFound("no instance is flagged as the reference vertebra")
    return max(flagged, key=lambda k: (instances[k].mask.area, -k))


def resolve_region(
    instances: Sequence[FusedInstance], region: SpineRegion, reference_index: int | None = None
) -> SpineRegion:
    if region is not SpineRegion.AUTO:
        return region
    if reference_index is None:
        reference_index = select_reference(instances)
    n = len(instances)
    if not 0 <= reference_index < n:
        raise InvalidReferenceIndex(f"reference index {reference_index} out of range for {n} instances")
    if n == 1:
        raise AmbiguousRegion("a lone reference vertebra is both first and last; give the region explicitly")
    if reference_index == 0:
        return SpineRegion.CERVICAL
    if reference_index == n - 1:
        return SpineRegion.LUMBAR
    raise AmbiguousRegion(
        f"reference is vertebra {reference_index + 1} of {n}; expected it at the top (C2) or bottom (S1)"
    )


def assign_labels(
    instances: Sequence[FusedInstance], reference_index: int, region: SpineRegion
) -> list[LabeledVertebra]:
    n = len(instances)
    if not 0 <= reference_index < n:
        raise InvalidReferenceIndex(f"reference index {reference_index} out of range for {n} instances")
    if region is SpineRegion.CERVICAL:
        anchor, (lo, hi) = VertebraLabel.C2, CERVICAL_RANGE
    elif region is SpineRegion.LUMBAR:
        anchor, (lo, hi) = VertebraLabel.S1, LUMBAR_RANGE
    else:
        raise ValueError("region must be resolved to cervical or lumbar before labeling")

    first = anchor - reference_index
    last = first + n - 1
    if first < 0:
        raise SequenceOverflow(f"{-first} vertebra(e) above C1 with {anchor.name} as reference")
    if last > VertebraLabel.S1:
        raise SequenceOverflow(f"{last - VertebraLabel.S1} vertebra(e) below S1")

    out = []
    for k, inst in enumerate(instances):
        label = VertebraLabel(first + k)
        out.append(LabeledVertebra(label, inst.mask, not (lo <= label <= hi)))
    return out


def label_instances(
    fused: Sequence[FusedInstance], region: SpineRegion = SpineRegion.AUTO
) -> tuple[SpineRegion, list[LabeledVertebra]]:
    """Order, anchor and label already-fused instances; returns the resolved region too."""
    ordered = order_along_spine(fused)
    ref = select_reference(ordered)
    resolved = resolve_region(ordered, region, ref)
    return resolved, assign_labels(ordered, ref, resolved)


def label_pipeline(
    semantic: SemanticMask,
    instances: Sequence[Instance],
    config: EnsembleConfig | None = None,
    region: SpineRegion = SpineRegion.AUTO,
) -> list[LabeledVertebra]:
    fused = fuse(semantic, instances, config)
    if not fused:
        raise EmptyInput("fusion produced no vertebrae")
    return label_instances(fused, region)[1]
