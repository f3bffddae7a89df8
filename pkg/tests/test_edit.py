import math

import numpy as np
import pytest

from edit_kernels import oracle
from edit_kernels import tensor_kernels as tk
from edit_kernels.attention import QKV, SimilarityFn, generalized_attention, linear_attention
from edit_kernels.edit import (
    ConvFusionWeights,
    EditWeights,
    SpatialCompressorWeights,
    conv_fusion,
    edit_attention,
    edit_keys_values,
    edit_qkv,
    gn_groups,
    spatial_compressor,
)
from edit_kernels.errors import ConfigError, ShapeError
from edit_kernels.tokens import ImageTokenGrid
from edit_kernels.weights import WeightStore

from conftest import edit_store, make_grid, uniform


def test_grid_roundtrip(rng):
    g = make_grid(rng, 3, 4, 5)
    img = g.to_image()
    assert img.shape == (5, 3, 4)
    np.testing.assert_array_equal(img[:, 1, 2], g.tokens[1 * 4 + 2])
    np.testing.assert_array_equal(ImageTokenGrid.from_image(img).tokens, g.tokens)
    with pytest.raises(ShapeError):
        ImageTokenGrid(np.zeros((5, 2)), 2, 3)


def _zero_cf(d):
    mid = (d + 1) // 2
    z = np.zeros
    return ConvFusionWeights(
        tk.Conv2DParams(z((mid, d, 3, 3)), z(mid), padding=1),
        tk.Conv2DParams(z((d, mid, 1, 1)), z(d)),
        tk.NormParams(np.ones(mid), z(mid), groups=gn_groups(mid)),
    )


def test_convfusion_zero_weights_is_relu(rng):
    g = make_grid(rng, 3, 4, 6)
    np.testing.assert_array_equal(conv_fusion(g, _zero_cf(6)), np.maximum(g.tokens, 0))


@pytest.mark.parametrize("h", range(1, 6))
@pytest.mark.parametrize("w", range(1, 6))
def test_convfusion_preserves_shape(rng, h, w):
    ew = EditWeights.from_store(edit_store(4))
    g = make_grid(rng, h, w, 4)
    assert conv_fusion(g, ew.cf).shape == (h * w, 4)


def test_convfusion_matches_oracle_composition(rng):
    store = edit_store(4, seed=7)
    g = make_grid(rng, 2, 3, 4)
    ew = EditWeights.from_store(store)
    ref = oracle.oracle_conv_fusion(g.tokens, 2, 3, store, gn_groups(2))
    np.testing.assert_allclose(conv_fusion(g, ew.cf), ref, atol=1e-5, rtol=0)


def test_spatial_compressor_two_by_two_gives_one_token(rng):
    sc = EditWeights.from_store(edit_store(4)).sc
    assert spatial_compressor(make_grid(rng, 2, 2, 4), sc).shape == (1, 4)


def test_spatial_compressor_selector_kernel_subsamples(rng):
    d = 3
    k = np.zeros((d, 1, 3, 3), np.float32)
    k[:, 0, 1, 1] = 1  # with top/left pad 1 the centre tap reads the block's top-left token
    sc = SpatialCompressorWeights(np.eye(d), np.zeros(d),
                                  tk.Conv2DParams(k, np.zeros(d), stride=2, padding=1,
                                                  depthwise=True))
    g = make_grid(rng, 6, 4, d)
    want = g.to_image()[:, ::2, ::2]
    np.testing.assert_array_equal(spatial_compressor(g, sc), ImageTokenGrid.from_image(want).tokens)


def test_spatial_compressor_three_by_three_gives_four(rng):
    store = edit_store(4, seed=2)
    g = make_grid(rng, 3, 3, 4)
    got = spatial_compressor(g, EditWeights.from_store(store).sc)
    ref = oracle.oracle_spatial_compressor(g.tokens, 3, 3, store)
    assert got.shape == (4, 4)
    np.testing.assert_allclose(got, ref, atol=1e-5)


def test_spatial_compressor_requires_stride_two():
    with pytest.raises(ConfigError):
        SpatialCompressorWeights(np.eye(2), np.zeros(2),
                                 tk.Conv2DParams(np.zeros((2, 1, 3, 3)), np.zeros(2), padding=1,
                                                 depthwise=True))


def test_keys_are_relu_of_values(rng):
    sc = EditWeights.from_store(edit_store(6, seed=3)).sc
    k, v = edit_keys_values(make_grid(rng, 5, 4, 6), sc)
    np.testing.assert_array_equal(k, np.maximum(v, 0))
    assert k.shape[0] == v.shape[0] == 3 * 2


def test_nonnegative_compressor_output_means_k_equals_v(rng):
    d = 3
    sc = SpatialCompressorWeights(np.eye(d), np.zeros(d),
                                  tk.Conv2DParams(np.full((d, 1, 3, 3), 0.1), np.zeros(d),
                                                  stride=2, padding=1, depthwise=True))
    k, v = edit_keys_values(make_grid(rng, 4, 4, d, 0.0, 2.0), sc)
    np.testing.assert_array_equal(k, v)


@pytest.mark.parametrize("h", [1, 2, 3, 5, 8, 9])
@pytest.mark.parametrize("w", [1, 4, 7, 9])
def test_token_count_law(rng, h, w):
    ew = EditWeights.from_store(edit_store(4))
    q, k, v = edit_qkv(make_grid(rng, h, w, 4), ew)
    assert q.shape[0] == h * w
    assert k.shape[0] == v.shape[0] == math.ceil(h / 2) * math.ceil(w / 2)


@pytest.mark.parametrize("hw", [(1, 1), (2, 3), (4, 4), (7, 5)])
def test_edit_attention_shape(rng, hw):
    h, w = hw
    out = edit_attention(make_grid(rng, h, w, 8), EditWeights.from_store(edit_store(8)), heads=2)
    assert out.shape == (h * w, 8)


def test_single_head_equals_headless_composition(rng):
    ew = EditWeights.from_store(edit_store(8, seed=4))
    g = make_grid(rng, 4, 4, 8)
    q, k, v = edit_qkv(g, ew)
    want = tk.linear(linear_attention(QKV(q, k, v)), ew.out_weight, ew.out_bias)
    np.testing.assert_array_equal(edit_attention(g, ew, heads=1), want)


def test_edit_linear_block_matches_dot_oracle(rng):
    ew = EditWeights.from_store(edit_store(8, seed=5))
    q, k, v = edit_qkv(make_grid(rng, 4, 4, 8), ew)
    keep = q @ k.sum(axis=0) >= 1e-3
    got = linear_attention(QKV(q[keep], k, v), strict=True)
    ref = generalized_attention(QKV(q[keep], k, v), SimilarityFn.DOT)
    np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-6)


def test_edit_outputs_in_value_envelope(rng):
    ew = EditWeights.from_store(edit_store(8, seed=6))
    g = make_grid(rng, 6, 5, 8)
    q, k, v = edit_qkv(g, ew)
    y = linear_attention(QKV(q, k, v))
    assert np.all(y >= v.min(axis=0) - 1e-5) and np.all(y <= v.max(axis=0) + 1e-5)


def test_raster_transpose_changes_output(rng):
    ew = EditWeights.from_store(edit_store(8, seed=8))
    g = make_grid(rng, 4, 6, 8)
    base = edit_attention(g, ew, heads=2)
    # transpose the raster but keep the (H, W) metadata
    transposed = g.tokens.reshape(4, 6, 8).transpose(1, 0, 2).reshape(24, 8)
    moved = edit_attention(ImageTokenGrid(transposed, 4, 6), ew, heads=2)
    back = moved.reshape(6, 4, 8).transpose(1, 0, 2).reshape(24, 8)
    assert np.max(np.abs(back - base)) > 1e-3


def test_indivisible_heads(rng):
    with pytest.raises(ConfigError):
        edit_attention(make_grid(rng, 2, 2, 6), EditWeights.from_store(edit_store(6)), heads=4)


def test_width_mismatch(rng):
    with pytest.raises(ShapeError):
        edit_attention(make_grid(rng, 2, 2, 6), EditWeights.from_store(edit_store(8)))


def test_heads_parallel_match_sequential(rng):
    from concurrent.futures import ThreadPoolExecutor

    ew = EditWeights.from_store(edit_store(8, seed=9))
    grids = [make_grid(rng, 5, 5, 8) for _ in range(4)]
    seq = [edit_attention(g, ew, heads=4) for g in grids]
    with ThreadPoolExecutor(4) as ex:
        par = list(ex.map(lambda g: edit_attention(g, ew, heads=4), grids))
    for a, b in zip(seq, par):
        np.testing.assert_allclose(a, b, atol=1e-6)
