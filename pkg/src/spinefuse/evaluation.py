"""Per-vertebra Dice scoring and report tables.

Predictions and ground truth are paired by anatomical label, not by overlap.
A ground-truth vertebra without a prediction scores 0.0; predictions whose
label is absent from the ground truth are counted as spurious and left out of
the means.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

from .errors import DuplicateLabel, EmptyInput, GridMismatch
from .labeling import LabeledVertebra, SpineRegion, VertebraLabel
from .masks import Grid, dice

L = VertebraLabel

# column order of the published per-vertebra tables
CERVICAL_COLUMNS = (L.C2, L.C3, L.C4, L.C5, L.C6, L.C7, L.T1)
LUMBAR_COLUMNS = (L.T11, L.T12, L.L1, L.L2, L.L3, L.L4, L.L5, L.S1)


@dataclass(frozen=True)
class GroundTruthSet:
    image_id: str
    grid: Grid
    vertebrae: tuple[LabeledVertebra, ...]

    def __post_init__(self):
        object.__setattr__(self, "vertebrae", tuple(self.vertebrae))
        _check_unique(self.vertebrae, "ground truth")
        for v in self.vertebrae:
            if v.mask.grid != self.grid:
                raise GridMismatch(f"ground-truth {v.label.name} is not on grid {self.grid}")


@dataclass(frozen=True)
class ImageScore:
    dice: dict[VertebraLabel, float]
    missing: frozenset[VertebraLabel] = frozenset()
    spurious: frozenset[VertebraLabel] = frozenset()


@dataclass(frozen=True)
class LabelStats:
    mean_dice: float | None
    n: int
    n_missing_pred: int = 0
    n_spurious_pred: int = 0


@dataclass(frozen=True)
class EvalReport:
    per_label: dict[VertebraLabel, LabelStats] = field(default_factory=dict)
    overall_mean: float | None = None
    n_images: int = 0


def _check_unique(vertebrae: Sequence[LabeledVertebra], side: str) -> None:
    counts = Counter(v.label for v in vertebrae)
    dupes = sorted(label for label, c in counts.items() if c > 1)
    if dupes:
        names = ", ".join(label.name for label in dupes)
        raise DuplicateLabel(f"duplicate label(s) in {side}: {names}")


def score_image(pred: Sequence[LabeledVertebra], gt: GroundTruthSet) -> ImageScore:
    _check_unique(pred, "prediction")
    for v in pred:
        if v.mask.grid != gt.grid:
            raise GridMismatch(f"prediction {v.label.name} grid {v.mask.grid} differs from ground truth {gt.grid}")
    by_label = {v.label: v for v in pred}
    gt_labels = {v.label for v in gt.vertebrae}
    scores = {}
    missing = set()
    for v in sorted(gt.vertebrae, key=lambda v: v.label):
        p = by_label.get(v.label)
        if p is None:
            scores[v.label] = 0.0
            missing.add(v.label)
        else:
            scores[v.label] = dice(p.mask, v.mask)
    spurious = frozenset(label for label in by_label if label not in gt_labels)
    return ImageScore(scores, frozenset(missing), spurious)


def aggregate(scores: Sequence[ImageScore]) -> EvalReport:
    if not scores:
        raise EmptyInput("aggregate needs at least one image score")
    values: dict[VertebraLabel, list[float]] = {}
    missing: Counter = Counter()
    spurious: Counter = Counter()
    for s in scores:
        for label, d in s.dice.items():
            values.setdefault(label, []).append(d)
        missing.update(s.missing)
        spurious.update(s.spurious)

    per_label = {}
    for label in sorted(set(values) | set(spurious)):
        vals = values.get(label, [])
        mean = math.fsum(vals) / len(vals) if vals else None
        per_label[label] = LabelStats(mean, len(vals), missing[label], spurious[label])
    means = [st.mean_dice for st in per_label.values() if st.n >= 1]
    # fsum is exactly rounded, so means do not depend on image order
    overall = math.fsum(means) / len(means) if means else None
    return EvalReport(per_label, overall, len(scores))


def format_score(value: float | None) -> str:
    """Three decimals, rounding halves up (0.9045 -> "0.905")."""
    if value is None:
        return ""
    return str(Decimal(repr(float(value))).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))


def infer_region(labels) -> SpineRegion:
    """Pick the table layout whose columns best cover ``labels``; cervical on ties."""
    labels = set(labels)
    lumbar = len(labels & set(LUMBAR_COLUMNS))
    cervical = len(labels & set(CERVICAL_COLUMNS))
    return SpineRegion.LUMBAR if lumbar > cervical else SpineRegion.CERVICAL


def table_columns(region: SpineRegion, report: EvalReport | None = None) -> tuple[VertebraLabel, ...]:
    if region is SpineRegion.AUTO:
        region = infer_region(report.per_label if report else ())
    return LUMBAR_COLUMNS if region is SpineRegion.LUMBAR else CERVICAL_COLUMNS


def render_table(report: EvalReport, region: SpineRegion, fmt: str = "csv") -> str:
    """One header row of vertebra names and one row of mean Dice values."""
    columns = table_columns(region, report)
    cells = []
    for label in columns:
        st = report.per_label.get(label)
        cells.append(format_score(st.mean_dice if st else None))
    header = [label.name for label in columns]
    if fmt == "csv":
        return ",".join(header) + "\n" + ",".join(cells) + "\n"
    if fmt == "text":
        cells = [c or "-" for c in cells]
        widths = [max(len(h), len(c)) for h, c in zip(header, cells)]
        rows = [header, cells]
        return "".join("  ".join(v.rjust(w) for v, w in zip(row, widths)) + "\n" for row in rows)
    raise ValueError(f"unknown table format {fmt!r}")


def report_to_dict(report: EvalReport, precision: int = 6) -> dict:
    def r(v):
        return None if v is None else round(v, precision)

    return {
        "n_images": report.n_images,
        "overall_mean": r(report.overall_mean),
        "per_label": {
            label.name: {
                "mean_dice": r(st.mean_dice),
                "n": st.n,
                "n_missing_pred": st.n_missing_pred,
                "n_spurious_pred": st.n_spurious_pred,
            }
            for label, st in sorted(report.per_label.items())
        },
    }

