"""JSON and PNG readers/writers for masks, instance sets and labeled outputs.

Documents:

* RLE fragment ``{"width", "height", "runs"}``: row-major alternating runs
  starting with background.
* Instance set ``{"image_id", "width", "height", "instances": [{"rle",
  "score", "is_reference"[, "provenance"]}]}``.
* Labeled output / ground truth ``{"image_id", "region", "width", "height",
  "vertebrae": [{"label", "rle", "extrapolated"}]}`` in spine order.
* Semantic mask: 8-bit grayscale PNG (nonzero = foreground) or an RLE
  fragment, optionally wrapped as ``{"image_id", "rle"}``.

Parse failures raise ``SchemaError`` naming the offending field.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .ensemble import FusedInstance, Instance, Provenance, SemanticMask
from .errors import GridMismatch, RleLengthMismatch, RleMalformed, SchemaError
from .labeling import LabeledVertebra, SpineRegion, VertebraLabel
from .masks import Grid, Mask, RleMask, rle_decode, rle_encode

FLOAT_PRECISION = 6


def dumps(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


def write_json(path, doc) -> None:
    Path(path).write_text(dumps(doc))


def read_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SchemaError(str(path), f"cannot read file ({exc.strerror})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(str(path), f"invalid JSON: {exc}") from exc


def _require(obj, key: str, kind, where: str):
    if not isinstance(obj, dict):
        raise SchemaError(where or "<root>", "expected an object")
    field = f"{where}.{key}" if where else key
    if key not in obj:
        raise SchemaError(field, "missing")
    value = obj[key]
    if kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise SchemaError(field, f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def _grid_of(obj, where: str) -> Grid:
    width = _require(obj, "width", int, where)
    height = _require(obj, "height", int, where)
    if width < 1 or height < 1:
        raise SchemaError(f"{where}.width" if where else "width", f"grid must be at least 1x1, got {width}x{height}")
    return Grid(width, height)


# --- masks ----------------------------------------------------------------

def mask_to_rle(mask: Mask) -> dict:
    rle = rle_encode(mask)
    return {"width": rle.grid.width, "height": rle.grid.height, "runs": list(rle.runs)}


def mask_from_rle(obj, where: str = "rle") -> Mask:
    grid = _grid_of(obj, where)
    runs = _require(obj, "runs", list, where)
    field = f"{where}.runs" if where else "runs"
    if not all(isinstance(r, int) and not isinstance(r, bool) and r >= 0 for r in runs):
        raise SchemaError(field, "runs must be non-negative integers")
    try:
        return rle_decode(RleMask(grid, tuple(runs)))
    except (RleLengthMismatch, RleMalformed) as exc:
        raise SchemaError(field, str(exc)) from exc


def read_semantic(path) -> tuple[str | None, SemanticMask]:
    """Load a semantic mask from PNG or RLE JSON; returns ``(image_id, mask)``."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        try:
            with Image.open(path) as img:
                arr = np.asarray(img)
        except OSError as exc:
            raise SchemaError(str(path), f"cannot read PNG ({exc})") from exc
        if arr.ndim == 3:
            arr = arr.any(axis=2)
        arr = arr != 0
        return None, SemanticMask(Mask(Grid(arr.shape[1], arr.shape[0]), arr))
    doc = read_json(path)
    if isinstance(doc, dict) and "rle" in doc:
        image_id = doc.get("image_id")
        return image_id, SemanticMask(mask_from_rle(doc["rle"], "rle"))
    return None, SemanticMask(mask_from_rle(doc, ""))


def write_semantic_png(path, semantic: SemanticMask) -> None:
    img = Image.fromarray(semantic.mask.array.astype(np.uint8) * 255, mode="L")
    img.save(path, format="PNG", optimize=False)


def semantic_to_doc(image_id: str, semantic: SemanticMask) -> dict:
    return {"image_id": image_id, "rle": mask_to_rle(semantic.mask)}


# --- instance sets --------------------------------------------------------

@dataclass(frozen=True)
class InstanceRecord:
    mask: Mask
    score: float
    is_reference: bool
    provenance: Provenance | None = None


@dataclass(frozen=True)
class InstanceSet:
    image_id: str
    grid: Grid
    records: tuple[InstanceRecord, ...]

    def instances(self) -> list[Instance]:
        return [Instance(r.mask, r.score, r.is_reference) for r in self.records]

    def fused(self) -> list[FusedInstance]:
        # raw detections read as fused instances count as instance-only
        return [
            FusedInstance(r.mask, r.is_reference, r.provenance or Provenance.INSTANCE_ONLY, r.score)
            for r in self.records
        ]


def parse_instance_set(doc) -> InstanceSet:
    image_id = _require(doc, "image_id", str, "")
    grid = _grid_of(doc, "")
    items = _require(doc, "instances", list, "")
    records = []
    for k, item in enumerate(items):
        where = f"instances[{k}]"
        mask = mask_from_rle(_require(item, "rle", dict, where), f"{where}.rle")
        if mask.grid != grid:
            raise GridMismatch(
                f"{where}.rle is {mask.grid.width}x{mask.grid.height}, image is {grid.width}x{grid.height}"
            )
        if mask.is_empty():
            raise SchemaError(f"{where}.rle", "instance mask is empty")
        score = float(_require(item, "score", float, where))
        if not 0.0 <= score <= 1.0:
            raise SchemaError(f"{where}.score", f"score {score} outside [0, 1]")
        is_ref = _require(item, "is_reference", bool, where)
        prov = item.get("provenance")
        if prov is not None:
            try:
                prov = Provenance(prov)
            except ValueError:
                raise SchemaError(f"{where}.provenance", f"unknown provenance {prov!r}") from None
        records.append(InstanceRecord(mask, score, is_ref, prov))
    return InstanceSet(image_id, grid, tuple(records))


def read_instance_set(path) -> InstanceSet:
    return parse_instance_set(read_json(path))


def instances_to_doc(image_id: str, grid: Grid, instances) -> dict:
    """Serialize ``Instance`` or ``FusedInstance`` objects; the latter add provenance."""
    items = []
    for inst in instances:
        item = {
            "rle": mask_to_rle(inst.mask),
            "score": round(float(inst.score), FLOAT_PRECISION),
            "is_reference": bool(inst.is_reference),
        }
        if isinstance(inst, FusedInstance):
            item["provenance"] = inst.provenance.value
        items.append(item)
    return {"image_id": image_id, "width": grid.width, "height": grid.height, "instances": items}


# --- labeled outputs ------------------------------------------------------

@dataclass(frozen=True)
class LabeledSet:
    image_id: str
    region: SpineRegion
    grid: Grid
    vertebrae: tuple[LabeledVertebra, ...]


def labeled_to_doc(image_id: str, region: SpineRegion, grid: Grid, vertebrae) -> dict:
    return {
        "image_id": image_id,
        "region": region.value,
        "width": grid.width,
        "height": grid.height,
        "vertebrae": [
            {"label": v.label.name, "rle": mask_to_rle(v.mask), "extrapolated": bool(v.extrapolated)}
            for v in vertebrae
        ],
    }


def parse_labeled(doc) -> LabeledSet:
    image_id = _require(doc, "image_id", str, "")
    region_name = _require(doc, "region", str, "")
    try:
        region = SpineRegion(region_name)
    except ValueError:
        raise SchemaError("region", f"unknown region {region_name!r}") from None
    if region is SpineRegion.AUTO:
        raise SchemaError("region", "labeled documents must name cervical or lumbar")
    items = _require(doc, "vertebrae", list, "")
    grid = _grid_of(doc, "") if "width" in doc or "height" in doc else None
    out = []
    for k, item in enumerate(items):
        where = f"vertebrae[{k}]"
        name = _require(item, "label", str, where)
        try:
            label = VertebraLabel[name]
        except KeyError:
            raise SchemaError(f"{where}.label", f"unknown vertebra label {name!r}") from None
        mask = mask_from_rle(_require(item, "rle", dict, where), f"{where}.rle")
        if grid is None:
            grid = mask.grid
        elif mask.grid != grid:
            raise GridMismatch(f"{where}.rle grid {mask.grid} differs from document grid {grid}")
        if mask.is_empty():
            raise SchemaError(f"{where}.rle", "vertebra mask is empty")
        extrapolated = item.get("extrapolated", False)
        if not isinstance(extrapolated, bool):
            raise SchemaError(f"{where}.extrapolated", "expected bool")
        out.append(LabeledVertebra(label, mask, extrapolated))
    if grid is None:
        raise SchemaError("width", "grid size missing and no vertebrae to infer it from")
    return LabeledSet(image_id, region, grid, tuple(out))


def read_labeled(path) -> LabeledSet:
    return parse_labeled(read_json(path))
