"""Fusion, anatomical labeling and Dice scoring of vertebra instance masks."""
from .ensemble import EnsembleConfig, FusedInstance, Instance, Provenance, SemanticMask, fuse, match_instances
from .evaluation import EvalReport, GroundTruthSet, aggregate, render_table, score_image
from .labeling import (
    LabeledVertebra,
    SpineRegion,
    VertebraLabel,
    assign_labels,
    label_instances,
    label_pipeline,
    order_along_spine,
    resolve_region,
    select_reference,
)
from .masks import (
    Centroid,
    Grid,
    Mask,
    RleMask,
    centroid,
    connected_components,
    dice,
    iou,
    nearest_seed_partition,
    rle_decode,
    rle_encode,
)
from .phantom import PhantomConfig, PhantomTruth, generate, generate_suite

__version__ = "0.1.0"
