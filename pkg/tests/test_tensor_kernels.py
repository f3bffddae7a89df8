import math

import numpy as np
import pytest

from edit_kernels import oracle
from edit_kernels import tensor_kernels as tk
from edit_kernels.errors import ConfigError, ShapeError

from conftest import uniform


def test_matmul_identity():
    eye = np.eye(2, dtype=np.float32)
    np.testing.assert_array_equal(tk.matmul(eye, eye), eye)
    a = np.array([[1, 2], [3, 4]], np.float32)
    np.testing.assert_array_equal(tk.matmul(a, eye), a)


def test_matmul_matches_triple_loop(rng):
    a, b = uniform(rng, (5, 7), -1, 1), uniform(rng, (7, 3), -1, 1)
    np.testing.assert_allclose(tk.matmul(a, b), oracle.oracle_matmul(a, b), atol=1e-6, rtol=0)


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        tk.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_pointwise_conv_is_channel_mixing(rng):
    x = uniform(rng, (3, 4, 5))
    k = uniform(rng, (6, 3, 1, 1))
    b = uniform(rng, (6,))
    got = tk.conv2d(x, tk.Conv2DParams(k, b))
    want = (k[:, :, 0, 0] @ x.reshape(3, -1)).reshape(6, 4, 5) + b[:, None, None]
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_depthwise_center_kernel_is_identity(rng):
    x = uniform(rng, (4, 5, 3))
    k = np.zeros((4, 1, 3, 3), np.float32)
    k[:, 0, 1, 1] = 1
    got = tk.conv2d(x, tk.Conv2DParams(k, np.zeros(4), padding=1, depthwise=True))
    np.testing.assert_array_equal(got, x)


def test_conv_matches_quadruple_loop(rng):
    x = uniform(rng, (3, 5, 5))
    p = tk.Conv2DParams(uniform(rng, (4, 3, 3, 3)), uniform(rng, (4,)), padding=1)
    ref = oracle.oracle_conv2d(x, p.kernel, p.bias, 1, 1)
    np.testing.assert_allclose(tk.conv2d(x, p), ref, atol=1e-5, rtol=0)


@pytest.mark.parametrize("h", range(1, 8))
@pytest.mark.parametrize("w", [1, 2, 5, 8])
def test_same_padding_keeps_extent_and_stride2_halves(rng, h, w):
    x = uniform(rng, (2, h, w))
    p1 = tk.Conv2DParams(uniform(rng, (3, 2, 3, 3)), np.zeros(3), padding=1)
    assert tk.conv2d(x, p1).shape == (3, h, w)
    p2 = tk.Conv2DParams(uniform(rng, (2, 1, 3, 3)), np.zeros(2), stride=2, padding=1,
                         depthwise=True)
    assert tk.conv2d(x, p2).shape == (2, math.ceil(h / 2), math.ceil(w / 2))


def test_conv_channel_mismatch():
    p = tk.Conv2DParams(np.zeros((2, 3, 1, 1)), np.zeros(2))
    with pytest.raises(ShapeError):
        tk.conv2d(np.zeros((4, 2, 2)), p)


def test_depthwise_kernel_shape_validated():
    with pytest.raises(ShapeError):
        tk.Conv2DParams(np.zeros((3, 3, 3, 3)), np.zeros(3), depthwise=True)


def test_softmax_examples():
    np.testing.assert_allclose(tk.softmax_rows(np.full((1, 4), 2.5)), [[0.25] * 4], atol=1e-7)
    np.testing.assert_allclose(tk.softmax_rows([[0.0, math.log(3)]]), [[0.25, 0.75]], atol=1e-7)
    row = np.zeros((1, 6), np.float32)
    row[0, 2] = 50
    assert tk.softmax_rows(row)[0, 2] >= 1 - 1e-6


def test_softmax_large_magnitudes(rng):
    x = rng.uniform(-1e4, 1e4, size=(20, 33)).astype(np.float32)
    s = tk.softmax_rows(x)
    assert np.all(s >= 0) and np.all(np.isfinite(s))
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)


def test_group_norm_constant_input_is_zero():
    p = tk.NormParams(np.ones(4), np.zeros(4), groups=2)
    np.testing.assert_array_equal(tk.group_norm(np.full((4, 3, 3), 7.0), p), 0.0)


def test_group_norm_groups_equal_channels_is_instance_norm(rng):
    x = uniform(rng, (3, 4, 4))
    y = tk.group_norm(x, tk.NormParams(np.ones(3), np.zeros(3), groups=3))
    flat = y.reshape(3, -1)
    np.testing.assert_allclose(flat.mean(axis=1), 0, atol=1e-6)
    np.testing.assert_allclose(flat.var(axis=1), 1, atol=1e-4)


def test_group_norm_matches_two_pass(rng):
    x = uniform(rng, (6, 5, 4))
    scale, shift = uniform(rng, (6,)), uniform(rng, (6,))
    got = tk.group_norm(x, tk.NormParams(scale, shift, groups=3))
    np.testing.assert_allclose(got, oracle.oracle_groupnorm(x, scale, shift, 3), atol=1e-5)


def test_group_norm_indivisible():
    with pytest.raises(ConfigError):
        tk.NormParams(np.ones(5), np.zeros(5), groups=2)


def test_layer_norm_matches_reference(rng):
    x = uniform(rng, (7, 6))
    scale, shift = uniform(rng, (6,)), uniform(rng, (6,))
    got = tk.layer_norm(x, tk.NormParams(scale, shift))
    np.testing.assert_allclose(got, oracle.oracle_layernorm(x, scale, shift), atol=1e-5)


def test_activations():
    np.testing.assert_array_equal(tk.relu([-1.0, 2.0]), [0.0, 2.0])
    assert tk.elu_plus_one([0.0])[0] == 1.0
    np.testing.assert_allclose(tk.leaky_relu([-2.0], 0.01), [-0.02], rtol=1e-6)
    assert np.all(tk.elu_plus_one(np.linspace(-30, 30, 101)) > 0)


def test_kernels_deterministic(rng):
    x = uniform(rng, (4, 9, 7))
    p = tk.Conv2DParams(uniform(rng, (5, 4, 3, 3)), uniform(rng, (5,)), padding=1)
    a, b = tk.conv2d(x, p), tk.conv2d(x.copy(), p)
    assert a.tobytes() == b.tobytes()
