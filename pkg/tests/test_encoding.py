import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_matmul
from solo.encoding import (
    PAD,
    VISION_BEGIN,
    VISION_END,
    VROW_SEP,
    Patch,
    ProjectorWeights,
    Special,
    SpecialKind,
    Text,
    VisionSpanEncoder,
    Vocabulary,
    embed_sequence,
    layout_vision_span,
    normalize_patch,
    project_patches,
    span_geometry,
    vision_spans,
)
from solo.errors import DimensionError, InvalidInputError, VocabularyError
from solo.preprocess import PatchGrid


def make_grid(rows, cols, p=2, seed=0):
    rng = np.random.default_rng(seed)
    return PatchGrid(rows, cols, rng.integers(0, 256, (rows * cols, p, p, 3), dtype=np.uint8))


def test_vocabulary_ids():
    v = Vocabulary(100)
    ids = [v.special_id(k) for k in SpecialKind]
    assert ids == [100, 101, 102]
    assert v.size == 103
    assert v.patch_id not in ids and v.patch_id >= 100
    with pytest.raises(VocabularyError):
        v.id_of(Text(100))


def test_layout_single_patch():
    span = layout_vision_span(make_grid(1, 1))
    assert len(span) == 3
    assert span[0] == VISION_BEGIN and span[2] == VISION_END
    assert isinstance(span[1], Patch)


def test_layout_two_by_two():
    grid = make_grid(2, 2)
    span = layout_vision_span(grid)
    expected = [VISION_BEGIN, Patch.from_array(grid.patch(0, 0)), Patch.from_array(grid.patch(0, 1)),
                VROW_SEP, Patch.from_array(grid.patch(1, 0)), Patch.from_array(grid.patch(1, 1)),
                VISION_END]
    assert span == expected


def test_layout_length_for_672x512():
    assert len(layout_vision_span(make_grid(16, 21))) == 353


@given(st.integers(1, 32), st.integers(1, 32))
@settings(max_examples=80, deadline=None)
def test_layout_length_law(rows, cols):
    span = layout_vision_span(make_grid(rows, cols, p=1))
    assert len(span) == rows * cols + rows + 1
    assert span.count(VISION_BEGIN) == 1 and span.count(VISION_END) == 1
    assert span.count(VROW_SEP) == rows - 1
    assert vision_spans(span) == [(0, len(span) - 1)]
    assert span_geometry(span, 0, len(span) - 1) == (rows, cols)


def test_vision_spans_rejects_malformed():
    p = Patch(bytes(3), 1)
    for bad in ([p], [VROW_SEP], [VISION_BEGIN, p], [VISION_END], [VISION_BEGIN, VISION_BEGIN]):
        with pytest.raises(InvalidInputError):
            vision_spans(bad)


def test_normalize_patch_endpoints():
    assert np.all(normalize_patch(np.zeros((2, 2, 3), np.uint8)) == -1.0)
    assert np.all(normalize_patch(np.full((2, 2, 3), 255, np.uint8)) == 1.0)
    v = normalize_patch(np.full((1, 1, 3), 128, np.uint8))
    assert v[0] == pytest.approx(0.00392156862745098, abs=1e-12)


def test_normalize_patch_order():
    block = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
    assert np.allclose((normalize_patch(block) + 1) / 2 * 255, np.arange(12))


def test_project_zero_weights():
    out = project_patches(make_grid(2, 3), ProjectorWeights.zeros(2, 5))
    assert out.shape == (6, 5) and np.all(out == 0)


def test_project_identity():
    grid = make_grid(1, 2)
    w = ProjectorWeights(np.eye(12), np.zeros(12))
    out = project_patches(grid, w)
    for i in range(2):
        assert np.array_equal(out[i], normalize_patch(grid.patches[i]))


def test_project_matches_naive_oracle():
    grid = make_grid(1, 2, p=2, seed=3)
    w = ProjectorWeights.random(2, 7, random_state=4)
    w = ProjectorWeights(w.matrix, np.random.default_rng(5).normal(size=7))
    out = project_patches(grid, w)
    # oracle: per-pixel affine map then naive triple-loop product
    rows = [[v / 255.0 * 2.0 - 1.0 for v in patch.reshape(-1).tolist()] for patch in grid.patches]
    expected = naive_matmul(rows, w.matrix.tolist())
    for i in range(2):
        for j in range(7):
            expected[i][j] += w.bias[j]
    assert np.allclose(out, expected, rtol=1e-6, atol=0)


def test_project_shape_mismatch():
    with pytest.raises(DimensionError):
        project_patches(make_grid(1, 1, p=2), ProjectorWeights.zeros(3, 4))


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=40, deadline=None)
def test_projection_is_linear_in_weights(seed, a, b):
    rng = np.random.default_rng(seed)
    grid = make_grid(2, 2, seed=seed)
    w1 = ProjectorWeights(rng.normal(size=(12, 4)), np.zeros(4))
    w2 = ProjectorWeights(rng.normal(size=(12, 4)), np.zeros(4))
    mixed = ProjectorWeights(a * w1.matrix + b * w2.matrix, np.zeros(4))
    lhs = project_patches(grid, mixed)
    rhs = a * project_patches(grid, w1) + b * project_patches(grid, w2)
    scale = max(np.abs(lhs).max(), np.abs(rhs).max(), 1e-12)
    assert np.abs(lhs - rhs).max() <= 1e-6 * scale


def test_embed_all_text_is_lookup():
    table = np.random.default_rng(0).normal(size=(13, 4))
    els = [Text(3), Text(0), Text(9)]
    out = embed_sequence(els, table, ProjectorWeights.zeros(1, 4))
    assert np.array_equal(out, table[[3, 0, 9]])


def test_embed_zero_projector_span():
    table = np.random.default_rng(0).normal(size=(13, 4))
    span = layout_vision_span(make_grid(2, 2, p=1))
    out = embed_sequence(span, table, ProjectorWeights.zeros(1, 4))
    v = Vocabulary(10)
    for t, el in enumerate(span):
        if isinstance(el, Patch):
            assert np.all(out[t] == 0)
        else:
            assert np.array_equal(out[t], table[v.special_id(el.kind)])


def test_embed_mixed_matches_elementwise_oracle():
    rng = np.random.default_rng(7)
    table = rng.normal(size=(23, 5))
    w = ProjectorWeights(rng.normal(size=(12, 5)), rng.normal(size=5))
    els = [Text(4)] + layout_vision_span(make_grid(2, 3, seed=8)) + [Text(19), Text(0), PAD]
    out = embed_sequence(els, table, w)
    assert out.shape == (len(els), 5)
    for t, el in enumerate(els):
        if isinstance(el, Text):
            ref = table[el.id]
        elif isinstance(el, Special):
            ref = table[20 + int(el.kind)]
        elif isinstance(el, Patch):
            x = [v / 255.0 * 2.0 - 1.0 for v in el.data]
            ref = [sum(x[k] * w.matrix[k, j] for k in range(12)) + w.bias[j] for j in range(5)]
        else:
            ref = np.zeros(5)
        assert np.allclose(out[t], ref, rtol=1e-12, atol=1e-12)


def test_embed_out_of_range():
    with pytest.raises(VocabularyError):
        embed_sequence([Text(50)], np.zeros((13, 2)), ProjectorWeights.zeros(1, 2))


def test_patch_payload_size_checked():
    with pytest.raises(DimensionError):
        Patch(bytes(5), 1)


def test_span_encoder_estimator():
    grids = [make_grid(2, 3), make_grid(1, 1)]
    enc = VisionSpanEncoder(patch_size=2, d_model=6, random_state=0).fit(grids)
    spans = enc.transform(grids)
    assert [len(s) for s in spans] == [9, 3]
    emb = enc.embed(grids)
    assert emb[0].shape == (6, 6)
    again = VisionSpanEncoder(patch_size=2, d_model=6, random_state=0).fit(grids).embed(grids)
    assert np.array_equal(emb[0], again[0])
