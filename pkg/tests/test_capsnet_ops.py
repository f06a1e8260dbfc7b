"""Unit tests for the capsule-network building blocks."""

import math

import numpy as np
import pytest

from eegcaps.capsnet import (
    ModelConfig,
    conv2d_forward,
    dynamic_routing,
    forward,
    init_params,
    margin_loss,
    predict_vectors,
    primary_caps_forward,
    routing_softmax,
    squash,
)
from eegcaps.capsnet.ops import routing_forward_batch
from eegcaps.errors import ShapeMismatch


# ---------------------------------------------------------------------------
# convolution


def test_conv_identity_kernel():
    x = np.arange(9.0).reshape(1, 3, 3)
    k = np.ones((1, 1, 1, 1))
    out = conv2d_forward(x, k, np.zeros(1))
    assert np.array_equal(out, x)


def test_conv_sum_kernel_stride2():
    x = np.ones((1, 4, 4))
    k = np.ones((1, 1, 2, 2))
    out = conv2d_forward(x, k, np.zeros(1), stride=2)
    assert out.shape == (1, 2, 2)
    assert np.allclose(out, 4.0)


def test_conv_output_shape_full_config():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(8, 32, 32))
    k = rng.normal(size=(256, 8, 9, 9)) * 0.01
    out = conv2d_forward(x, k, np.zeros(256), stride=1, relu=True)
    assert out.shape == (256, 24, 24)
    assert out.min() >= 0.0


def test_conv_relu_and_bias():
    x = np.zeros((1, 3, 3))
    k = np.zeros((2, 1, 3, 3))
    out = conv2d_forward(x, k, np.array([1.5, -2.0]), relu=True)
    assert np.allclose(out[0], 1.5)
    assert np.allclose(out[1], 0.0)


def test_conv_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        conv2d_forward(np.zeros((2, 5, 5)), np.zeros((1, 3, 3, 3)), np.zeros(1))
    with pytest.raises(ShapeMismatch):
        conv2d_forward(np.zeros((1, 2, 2)), np.zeros((1, 1, 3, 3)), np.zeros(1))


def test_conv_matches_naive_loops():
    rng = np.random.default_rng(42)
    x = rng.normal(size=(3, 7, 8))
    k = rng.normal(size=(4, 3, 3, 3))
    bias = rng.normal(size=4)
    stride = 2
    out = conv2d_forward(x, k, bias, stride=stride)
    ho = (7 - 3) // stride + 1
    wo = (8 - 3) // stride + 1
    ref = np.zeros((4, ho, wo))
    for f in range(4):
        for i in range(ho):
            for j in range(wo):
                patch = x[:, i * stride:i * stride + 3, j * stride:j * stride + 3]
                ref[f, i, j] = np.sum(patch * k[f]) + bias[f]
    assert np.allclose(out, ref, atol=1e-12)


# ---------------------------------------------------------------------------
# squash


def test_squash_zero():
    assert np.array_equal(squash(np.zeros(8)), np.zeros(8))


def test_squash_unit_norm():
    s = np.zeros(4)
    s[0] = 1.0
    v = squash(s)
    assert math.isclose(np.linalg.norm(v), 0.5, rel_tol=1e-12)


def test_squash_large_norm():
    s = np.zeros(4)
    s[2] = 1000.0
    n = np.linalg.norm(squash(s))
    assert 0.999 < n < 1.0


def test_squash_norm_monotone_and_direction():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(10_000, 6))
    b = rng.normal(size=(10_000, 6))
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    qa = np.linalg.norm(squash(a), axis=1)
    qb = np.linalg.norm(squash(b), axis=1)
    swap = na < nb
    assert np.all(qa[swap] < qb[swap]) and np.all(qb[~swap] <= qa[~swap])
    dots = np.sum(squash(a) * a, axis=1)
    assert np.all(dots > 0)


# ---------------------------------------------------------------------------
# routing softmax


def test_routing_softmax_uniform_and_shift():
    assert np.allclose(routing_softmax(np.zeros((1, 2))), 0.5)
    assert np.allclose(routing_softmax(np.full((3, 2), 7.25)), 0.5)


def test_routing_softmax_ln3():
    c = routing_softmax(np.array([[math.log(3.0), 0.0]]))
    assert np.allclose(c, [[0.75, 0.25]], atol=1e-12)


# ---------------------------------------------------------------------------
# dynamic routing


def scalar_routing(u_hat, iterations):
    """Brute-force scalar re-execution of the routing recurrence."""
    n, j, k = u_hat.shape
    b = [[0.0] * j for _ in range(n)]
    c = None
    v = None
    for it in range(iterations):
        c = []
        for i in range(n):
            mx = max(b[i])
            exps = [math.exp(b[i][jj] - mx) for jj in range(j)]
            tot = sum(exps)
            c.append([e / tot for e in exps])
        v = []
        for jj in range(j):
            s = [0.0] * k
            for i in range(n):
                for kk in range(k):
                    s[kk] += c[i][jj] * u_hat[i, jj, kk]
            norm2 = sum(x * x for x in s)
            norm = math.sqrt(norm2)
            scale = norm / (1.0 + norm2) if norm > 0 else 0.0
            v.append([scale * x for x in s])
        if it < iterations - 1:
            for i in range(n):
                for jj in range(j):
                    b[i][jj] += sum(u_hat[i, jj, kk] * v[jj][kk] for kk in range(k))
    return np.array(v), np.array(b), np.array(c)


def test_routing_zero_predictions():
    u_hat = np.zeros((16, 2, 4))
    v, state = dynamic_routing(u_hat, iterations=3)
    assert np.array_equal(v, np.zeros((2, 4)))
    assert np.allclose(state.c, 0.5)
    assert np.array_equal(state.b, np.zeros((16, 2)))


def test_routing_single_iteration_closed_form():
    rng = np.random.default_rng(2)
    u_hat = rng.normal(size=(32, 2, 4)) * 0.05
    v, _ = dynamic_routing(u_hat, iterations=1)
    expected = squash(0.5 * u_hat.sum(axis=0))
    assert np.allclose(v, expected, atol=1e-12)


@pytest.mark.parametrize("iterations", [1, 2, 3, 5])
def test_routing_matches_scalar_oracle(iterations):
    rng = np.random.default_rng(iterations)
    u_hat = rng.normal(size=(12, 2, 5)) * 0.3
    v, state = dynamic_routing(u_hat, iterations=iterations)
    v_ref, b_ref, c_ref = scalar_routing(u_hat, iterations)
    assert np.allclose(v, v_ref, atol=1e-12)
    assert np.allclose(state.b, b_ref, atol=1e-12)
    assert np.allclose(state.c, c_ref, atol=1e-12)


def test_routing_invariants_random_draws():
    rng = np.random.default_rng(99)
    for _ in range(50):
        u_hat = rng.normal(size=(1, 20, 2, 4)) * rng.uniform(0.01, 2.0)
        _, trace = routing_forward_batch(u_hat, 3)
        for c in trace.cs:
            assert np.allclose(c.sum(axis=-1), 1.0, atol=1e-6)
            assert c.min() >= 0.0 and c.max() <= 1.0
        for v in trace.vs:
            assert np.all(np.linalg.norm(v, axis=-1) < 1.0)


def test_routing_priors_nondecreasing_for_agreeing_predictions():
    # identical predictions for every capsule keep all dot products >= 0,
    # so priors can only grow across iterations
    base = np.array([0.4, -0.2, 0.1, 0.3])
    u_hat = np.tile(base, (1, 30, 2, 1))
    _, trace = routing_forward_batch(u_hat, 4)
    assert np.all(trace.b >= -1e-15)


# ---------------------------------------------------------------------------
# prediction vectors


def test_predict_vectors_zero_and_linearity():
    rng = np.random.default_rng(4)
    w = rng.normal(size=(10, 2, 6, 4))
    u = rng.normal(size=(10, 4))
    assert np.array_equal(predict_vectors(np.zeros((10, 4)), w), np.zeros((10, 2, 6)))
    assert np.allclose(predict_vectors(2.0 * u, w), 2.0 * predict_vectors(u, w))


def test_predict_vectors_identity_embedding():
    n, d = 6, 4
    w = np.zeros((n, 2, 2 * d, d))
    for i in range(n):
        for j in range(2):
            w[i, j, :d, :] = np.eye(d)
    u = np.random.default_rng(5).normal(size=(n, d))
    u_hat = predict_vectors(u, w)
    for j in range(2):
        assert np.allclose(u_hat[:, j, :d], u)
        assert np.array_equal(u_hat[:, j, d:], np.zeros((n, d)))


def test_predict_vectors_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        predict_vectors(np.zeros((4, 3)), np.zeros((4, 2, 6, 5)))


# ---------------------------------------------------------------------------
# primary capsules and full forward shapes


def test_primary_caps_count_and_norms():
    rng = np.random.default_rng(6)
    features = rng.normal(size=(16, 10, 10))
    kernels = rng.normal(size=(8, 16, 3, 3)) * 0.1
    u = primary_caps_forward(features, kernels, np.zeros(8), capsule_dim=4, stride=2)
    assert u.shape == (4 * 4 * 2, 4)
    assert np.all(np.linalg.norm(u, axis=1) < 1.0)


def test_primary_caps_zero_features():
    u = primary_caps_forward(
        np.zeros((16, 10, 10)), np.zeros((8, 16, 3, 3)), np.zeros(8), capsule_dim=4
    )
    assert np.array_equal(u, np.zeros((32, 4)))


def test_forward_shape_chain_default_config():
    config = ModelConfig()
    assert config.conv1_out == 24
    assert config.pc_grid == 8
    assert config.num_primary_caps == 2048
    params = init_params(config, seed=0, dtype=np.float32)
    image = np.random.default_rng(7).normal(size=(8, 32, 32)).astype(np.float32)
    lengths, cache = forward(image, params, config)
    assert cache.conv1.relu_mask.shape == (1, 24, 24, 256)  # channels-last inside
    assert cache.u.shape == (1, 2048, 8)
    assert cache.u_hat.shape == (1, 2048, 2, 16)
    assert cache.v.shape == (1, 2, 16)
    assert lengths.shape == (2,)
    assert np.all(lengths >= 0) and np.all(lengths < 1)


def test_forward_zero_everything():
    config = ModelConfig(
        in_channels=2, grid=12, conv1_filters=4, conv1_kernel=5,
        pc_capsule_dim=4, pc_filters_per_dim=2, pc_kernel=3,
    )
    params = init_params(config, seed=0)
    for name in ("conv1_kernels", "conv1_bias", "pc_kernels", "pc_bias", "W"):
        getattr(params, name)[:] = 0.0
    lengths, _ = forward(np.zeros((2, 12, 12)), params, config)
    assert np.array_equal(lengths, np.zeros(2))


def test_forward_deterministic():
    config = ModelConfig(
        in_channels=2, grid=12, conv1_filters=4, conv1_kernel=5,
        pc_capsule_dim=4, pc_filters_per_dim=2, pc_kernel=3,
    )
    params = init_params(config, seed=21)
    image = np.random.default_rng(21).normal(size=(2, 12, 12))
    a, _ = forward(image, params, config)
    b, _ = forward(image, params, config)
    assert np.array_equal(a, b)


def test_forward_rejects_wrong_shape():
    config = ModelConfig()
    params = init_params(config, seed=0, dtype=np.float32)
    with pytest.raises(ShapeMismatch):
        forward(np.zeros((4, 32, 32), dtype=np.float32), params, config)


# ---------------------------------------------------------------------------
# margin loss values


def test_margin_loss_examples():
    assert margin_loss(np.array([0.9, 0.1]), 0) == 0.0
    assert math.isclose(margin_loss(np.array([0.0, 0.0]), 0), 0.81, rel_tol=1e-12)
    assert math.isclose(margin_loss(np.array([1.0, 1.0]), 0), 0.405, rel_tol=1e-12)
