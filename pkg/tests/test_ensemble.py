import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from spinefuse.ensemble import (
    EnsembleConfig,
    FusedInstance,
    Instance,
    Provenance,
    SemanticMask,
    fuse,
    match_instances,
)
from spinefuse.errors import ConfigInvalid, GridMismatch
from spinefuse.masks import Grid, Mask


def rect(grid, x0, y0, w, h):
    arr = np.zeros(grid.shape, dtype=bool)
    arr[y0:y0 + h, x0:x0 + w] = True
    return Mask(grid, arr)


def union(*ms):
    out = ms[0]
    for m in ms[1:]:
        out = out | m
    return out


def assert_disjoint(fused):
    for a, b in itertools.combinations(fused, 2):
        assert not (a.mask.array & b.mask.array).any()


# --- fuse examples -------------------------------------------------------

def test_agreement_passes_through():
    g = Grid(20, 20)
    m = rect(g, 2, 3, 10, 12)
    out = fuse(SemanticMask(m), [Instance(m, 0.9, True)])
    assert len(out) == 1
    assert out[0].mask == m
    assert out[0].provenance is Provenance.MATCHED
    assert out[0].is_reference


def test_merged_bar_is_split_evenly():
    g = Grid(8, 2)
    bar = rect(g, 0, 0, 8, 2)
    seeds = [rect(g, 0, 0, 3, 2), rect(g, 5, 0, 3, 2)]
    out = fuse(SemanticMask(bar), [Instance(s, 0.9) for s in seeds])
    expected = oracles.nearest_seed(bar.pixels(), [s.pixels() for s in seeds])
    assert [f.mask.pixels() for f in sorted(out, key=lambda f: min(f.mask.pixels()))] == expected
    assert [len(e) for e in expected] == [8, 8]  # 4 columns x 2 rows each
    assert all(f.provenance is Provenance.SPLIT_FROM_MERGE for f in out)
    assert union(*(f.mask for f in out)) == bar


def test_missed_vertebra_recovered_from_semantic():
    g = Grid(40, 40)
    first, second = rect(g, 5, 2, 12, 12), rect(g, 5, 20, 12, 12)
    out = fuse(SemanticMask(first | second), [Instance(first, 0.8)])
    assert [f.provenance for f in out] == [Provenance.MATCHED, Provenance.SEMANTIC_ONLY]
    assert out[1].mask == second
    assert not out[1].is_reference


def test_orphan_filters():
    g = Grid(60, 60)
    vert = rect(g, 5, 2, 12, 12)
    speck = rect(g, 40, 40, 5, 5)  # 25 px, below min_component_area
    huge = rect(g, 30, 2, 25, 25)  # 625 px > 3 x 144
    out = fuse(SemanticMask(vert | speck | huge), [Instance(vert, 0.8)])
    assert [f.provenance for f in out] == [Provenance.MATCHED]

    lonely = rect(g, 40, 40, 10, 10)
    kept = fuse(SemanticMask(vert), [Instance(vert, 0.8), Instance(lonely, 0.6)])
    assert [f.provenance for f in kept] == [Provenance.MATCHED, Provenance.INSTANCE_ONLY]
    dropped = fuse(SemanticMask(vert), [Instance(vert, 0.8), Instance(lonely, 0.4)])
    assert len(dropped) == 1


def test_semantic_only_without_any_match_ignores_fill_ratio():
    g = Grid(60, 60)
    big = rect(g, 0, 0, 40, 40)
    out = fuse(SemanticMask(big), [])
    assert [f.provenance for f in out] == [Provenance.SEMANTIC_ONLY]


def test_matched_takes_union_and_conflicts_are_resolved():
    g = Grid(30, 30)
    top, bottom = rect(g, 5, 0, 10, 10), rect(g, 5, 12, 10, 10)
    # detection of the top vertebra spills two rows into the bottom one
    spill = rect(g, 5, 0, 10, 14)
    out = fuse(SemanticMask(top | bottom), [Instance(spill, 0.9), Instance(bottom, 0.9)])
    assert_disjoint(out)
    # contested rows 12 and 13 each go to the nearer uncontested pixels
    assert out[0].mask == rect(g, 5, 0, 10, 13)
    assert out[1].mask == rect(g, 5, 13, 10, 9)


def test_conflict_tie_goes_to_upper_centroid():
    g = Grid(10, 10)
    # two instance-only orphans overlapping in a middle row, equidistant from both
    a, b = rect(g, 0, 0, 4, 3), rect(g, 0, 2, 4, 3)
    out = fuse(SemanticMask(Mask.empty(g)), [Instance(a, 0.9), Instance(b, 0.9)])
    assert out[0].mask == a
    assert out[1].mask == rect(g, 0, 3, 4, 2)


def test_instance_swallowed_by_conflict_is_dropped():
    g = Grid(10, 10)
    big, inner = rect(g, 0, 0, 6, 6), rect(g, 1, 1, 2, 2)
    out = fuse(SemanticMask(Mask.empty(g)), [Instance(big, 0.9), Instance(inner, 0.9)])
    assert len(out) == 1 and out[0].mask == big


def test_reference_flag_follows_split_seed():
    g = Grid(8, 2)
    bar = rect(g, 0, 0, 8, 2)
    out = fuse(SemanticMask(bar), [Instance(rect(g, 0, 0, 3, 2), 0.9), Instance(rect(g, 5, 0, 3, 2), 0.7, True)])
    left, right = sorted(out, key=lambda f: min(f.mask.pixels()))
    assert not left.is_reference and right.is_reference
    assert right.score == 0.7


def test_output_sorted_by_centroid_y():
    g = Grid(30, 60)
    ms = [rect(g, 2, y, 10, 8) for y in (40, 2, 20)]
    out = fuse(SemanticMask(union(*ms)), [Instance(m, 0.9) for m in ms])
    assert [f.mask for f in out] == [ms[1], ms[2], ms[0]]


def test_fuse_errors():
    g = Grid(10, 10)
    m = rect(g, 0, 0, 3, 3)
    with pytest.raises(GridMismatch):
        fuse(SemanticMask(m), [Instance(rect(Grid(10, 11), 0, 0, 3, 3), 0.9)])
    with pytest.raises(ConfigInvalid):
        fuse(SemanticMask(m), [], EnsembleConfig(match_iou_threshold=0.0))
    with pytest.raises(ConfigInvalid):
        fuse(SemanticMask(m), [], EnsembleConfig(min_component_area=0))
    with pytest.raises(ConfigInvalid):
        fuse(SemanticMask(m), [], EnsembleConfig(max_fill_ratio=-1))


def test_instance_and_fused_validation():
    g = Grid(4, 4)
    with pytest.raises(ValueError):
        Instance(Mask.empty(g), 0.5)
    with pytest.raises(ValueError):
        Instance(rect(g, 0, 0, 1, 1), 1.5)
    with pytest.raises(ValueError):
        FusedInstance(Mask.empty(g), False, Provenance.MATCHED)


# --- match_instances ------------------------------------------------------

def test_match_identical():
    g = Grid(10, 10)
    m = rect(g, 1, 1, 3, 3)
    assert match_instances([m], [Instance(m, 0.9)], 0.1) == {0: 0}


def test_match_disjoint():
    g = Grid(10, 10)
    assert match_instances([rect(g, 0, 0, 2, 2)], [Instance(rect(g, 5, 5, 2, 2), 0.9)], 0.1) == {}


def test_match_prefers_higher_iou():
    g = Grid(20, 1)
    inst = Instance(rect(g, 0, 0, 10, 1), 0.9)
    comp_a = rect(g, 2, 0, 18, 1)  # 8 shared of 20 in union
    comp_b = rect(g, 0, 0, 2, 1)  # 2 shared of 10 in union
    assert oracles.iou_count(inst.mask.pixels(), comp_a.pixels()) == pytest.approx(0.4)
    assert oracles.iou_count(inst.mask.pixels(), comp_b.pixels()) == pytest.approx(0.2)
    assert match_instances([comp_b, comp_a], [inst], 0.1) == {0: 1}


def test_match_threshold_and_ties():
    g = Grid(10, 1)
    inst = Instance(rect(g, 0, 0, 4, 1), 0.9)
    left, right = rect(g, 0, 0, 2, 1), rect(g, 2, 0, 2, 1)
    # equal IoU (0.5) -> lower component index wins
    assert match_instances([left, right], [inst], 0.1) == {0: 0}
    assert match_instances([left, right], [inst], 0.6) == {}


def test_match_grid_mismatch():
    with pytest.raises(GridMismatch):
        match_instances([rect(Grid(4, 4), 0, 0, 1, 1)], [Instance(rect(Grid(5, 4), 0, 0, 1, 1), 0.5)], 0.1)


# --- properties -----------------------------------------------------------

@st.composite
def stacked_scenes(draw):
    """Disjoint rectangles stacked vertically, like a toy spine."""
    n = draw(st.integers(1, 5))
    g = Grid(40, 14 * n + 2)
    rects = []
    for k in range(n):
        x0 = draw(st.integers(0, 8))
        w = draw(st.integers(12, 30))
        h = draw(st.integers(9, 12))
        rects.append(rect(g, x0, 1 + 14 * k, w, h))
    return g, rects


@settings(max_examples=60, deadline=None)
@given(stacked_scenes())
def test_agreement_is_idempotent(scene):
    g, rects = scene
    out = fuse(SemanticMask(union(*rects)), [Instance(r, 0.9) for r in rects])
    assert [f.mask for f in out] == rects
    assert all(f.provenance is Provenance.MATCHED for f in out)


@settings(max_examples=60, deadline=None)
@given(stacked_scenes(), st.data())
def test_dropping_one_instance_costs_at_most_one_output(scene, data):
    g, rects = scene
    insts = [Instance(r, 0.9) for r in rects]
    full = fuse(SemanticMask(union(*rects)), insts)
    k = data.draw(st.integers(0, len(insts) - 1))
    fewer = fuse(SemanticMask(union(*rects)), insts[:k] + insts[k + 1:])
    assert len(fewer) >= len(full) - 1


@st.composite
def messy_scenes(draw):
    g = Grid(24, 24)
    bits = draw(st.lists(st.booleans(), min_size=g.size, max_size=g.size))
    semantic = Mask(g, np.array(bits).reshape(g.shape))
    insts = []
    for _ in range(draw(st.integers(0, 4))):
        x0, y0 = draw(st.integers(0, 20)), draw(st.integers(0, 20))
        w, h = draw(st.integers(1, 10)), draw(st.integers(1, 10))
        insts.append(Instance(rect(g, x0, y0, w, h), draw(st.floats(0, 1)), draw(st.booleans())))
    return semantic, insts


@settings(max_examples=150, deadline=None)
@given(messy_scenes())
def test_outputs_always_disjoint(scene):
    semantic, insts = scene
    cfg = EnsembleConfig(min_component_area=1)
    out = fuse(SemanticMask(semantic), insts, cfg)
    assert_disjoint(out)
    assert all(not f.mask.is_empty() for f in out)


@settings(max_examples=60, deadline=None)
@given(stacked_scenes(), st.data())
def test_split_conserves_component_pixels(scene, data):
    g, rects = scene
    if len(rects) < 2:
        return
    # bridge every neighbour so the semantic mask is one blob
    sem = union(*rects)
    arr = np.array(sem.array)
    arr[:, 10:12] = arr[:, 10:12] | (np.arange(g.height) < 14 * len(rects))[:, None]
    blob = Mask(g, arr)
    out = fuse(SemanticMask(blob), [Instance(r, 0.9) for r in rects])
    assert all(f.provenance is Provenance.SPLIT_FROM_MERGE for f in out)
    assert union(*(f.mask for f in out)) == blob
    assert_disjoint(out)


@settings(max_examples=40, deadline=None)
@given(stacked_scenes(), st.randoms(use_true_random=False))
def test_permuting_instances_keeps_output(scene, rnd):
    g, rects = scene
    insts = [Instance(r, 0.5 + 0.1 * k, k == 0) for k, r in enumerate(rects)]
    shuffled = list(insts)
    rnd.shuffle(shuffled)
    a = fuse(SemanticMask(union(*rects)), insts)
    b = fuse(SemanticMask(union(*rects)), shuffled)
    assert [(f.mask, f.is_reference, f.provenance) for f in a] == [(f.mask, f.is_reference, f.provenance) for f in b]


@st.composite
def overlapping_orphans(draw):
    g = Grid(16, 16)
    insts = []
    for _ in range(draw(st.integers(1, 4))):
        x0, y0 = draw(st.integers(0, 12)), draw(st.integers(0, 12))
        w, h = draw(st.integers(1, 8)), draw(st.integers(1, 8))
        insts.append(Instance(rect(g, x0, y0, w, h), 0.9))
    return g, insts


@settings(max_examples=150, deadline=None)
@given(overlapping_orphans())
def test_conflict_resolution_matches_brute_force(case):
    g, insts = case
    out = fuse(SemanticMask(Mask.empty(g)), insts)
    expected = oracles.resolve_conflicts([i.mask.pixels() for i in insts])
    got = [f.mask.pixels() for f in out]
    assert sorted(map(sorted, got)) == sorted(map(sorted, expected))
