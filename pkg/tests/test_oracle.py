import math

import numpy as np
import pytest

from edit_kernels import oracle

from conftest import uniform


def test_attention_permutation_invariant(rng):
    q, k, v = uniform(rng, (3, 4)), uniform(rng, (6, 4)), uniform(rng, (6, 4))
    perm = rng.permutation(6)
    a = np.array(oracle.oracle_attention(q, k, v))
    b = np.array(oracle.oracle_attention(q, k[perm], v[perm]))
    np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


def test_attention_one_by_one():
    assert oracle.oracle_attention([[0.3]], [[-1.2]], [[4.0]]) == [[4.0]]


def test_attention_zero_denominator():
    with pytest.raises(oracle.OracleError):
        oracle.oracle_attention([[0.0, 0.0]], [[1.0, 1.0]], [[1.0, 1.0]], "dot")


def test_joint_equals_attention_on_concatenation(rng):
    parts = [uniform(rng, (3, 4)) for _ in range(3)] + [uniform(rng, (2, 4)) for _ in range(3)]
    img, prm = oracle.oracle_joint(*parts)
    cat = oracle.oracle_attention(np.vstack([parts[0], parts[3]]), np.vstack([parts[1], parts[4]]),
                                  np.vstack([parts[2], parts[5]]))
    np.testing.assert_allclose(np.array(img + prm), np.array(cat), atol=1e-12)


def test_joint_hand_case():
    s = 1 / math.sqrt(2)
    img, prm = oracle.oracle_joint([[1.0, 0.0]], [[1.0, 0.0]], [[1.0, 2.0]],
                                   [[0.0, 1.0]], [[0.0, 2.0]], [[3.0, -1.0]])
    w = math.exp(s) / (math.exp(s) + 1)
    wp = 1 / (1 + math.exp(2 * s))
    np.testing.assert_allclose(img, [[w + 3 * (1 - w), 2 * w - (1 - w)]], atol=1e-12)
    np.testing.assert_allclose(prm, [[wp + 3 * (1 - wp), 2 * wp - (1 - wp)]], atol=1e-12)


def test_joint_softmax_rows_sum_to_one(rng):
    parts = [uniform(rng, (4, 3)) for _ in range(3)] + [uniform(rng, (3, 3)) for _ in range(3)]
    *_, weights = oracle.oracle_joint(*parts, return_weights=True)
    for row in weights:
        assert abs(sum(row) - 1.0) < 1e-12


def test_conv_identity_and_bias_only():
    x = np.arange(12, dtype=np.float32).reshape(1, 3, 4)
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1
    np.testing.assert_array_equal(oracle.oracle_conv2d(x, k, [0.0], 1, 1), x)
    out = oracle.oracle_conv2d(np.zeros((2, 3, 3)), np.ones((3, 2, 3, 3)), [1.0, 2.0, 3.0], 1, 1)
    np.testing.assert_array_equal(np.array(out)[:, 0, 0], [1.0, 2.0, 3.0])


def test_groupnorm_identity_on_standardized():
    x = np.array([[[-1.0, 1.0]]])
    out = oracle.oracle_groupnorm(x, [1.0], [0.0], 1, eps=0.0)
    np.testing.assert_allclose(out, x)


def test_multiply_counter():
    c = oracle.MulCounter()
    oracle.oracle_attention(np.ones((3, 4)), np.ones((5, 4)), np.ones((5, 4)), counter=c)
    assert c.qk == 3 * 5 * 4
