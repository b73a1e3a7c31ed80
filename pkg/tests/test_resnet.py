import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact.hermite import KernelQuery, kernel_analytic, make_activation
from artifact.hierarchy import make_proximity, proximity_concat
from artifact.resnet import (features, forward, gamma_step, init_network, random_orthogonal,
                             xavier_pair)


def randomize_second_layers(p, rng, upto=None, scale=0.3):
    upto = p.D - 1 if upto is None else upto
    for k in range(1, upto + 1):
        p.W2[k - 1] = rng.standard_normal(p.W2[k - 1].shape) * scale / np.sqrt(p.q_width)
    return p


def boolean_inputs(rng, m, T, d):
    return rng.choice([-1.0, 1.0], size=(m, T, d))


# ---------------------------------------------------------------- init

def test_untrained_output_is_zero(rng):
    p = init_network(5, 4, 32, 4, seed=1)
    X = boolean_inputs(rng, 10, 1, 5)
    for k in range(1, 4):
        g, f = forward(p, X, upto=k)
        assert not np.any(g) and not np.any(f)
    assert all(not np.any(W) for W in p.W2)


def test_init_shapes_with_proximity():
    prox = make_proximity("window1d", 4, 1)
    p = init_network(6, 5, 16, 4, prox, seed=0)
    assert p.W1[0].shape == (16, 18)
    assert p.W1[1].shape == (16, 15)
    assert p.W2[2].shape == (5, 16)
    assert p.WD.shape == (5, 5)


def test_init_deterministic_and_identity_mode():
    a = init_network(4, 3, 8, 3, seed=11)
    b = init_network(4, 3, 8, 3, seed=11)
    for x, y in zip(a.W1 + a.b + [a.WD], b.W1 + b.b + [b.WD]):
        np.testing.assert_array_equal(x, y)
    c = init_network(4, 3, 8, 3, orthogonal_mode="identity", seed=11)
    assert np.array_equal(c.WD, np.eye(3))


def test_init_errors():
    with pytest.raises(ValueError):
        init_network(4, 3, 8, 1)
    with pytest.raises(ValueError):
        init_network(4, 3, 0, 3)
    with pytest.raises(ValueError):
        init_network(4, 3, 8, 3, orthogonal_mode="householder")
    with pytest.raises(ValueError):
        init_network(4, 3, 8, 3, beta=1.5)


@pytest.mark.parametrize("beta", [0.0, 0.5, 0.9])
def test_xavier_moments(beta):
    q, fan = 400, 50
    pair = xavier_pair(np.random.default_rng(3), q, fan, beta)
    var = (1 - beta ** 2) / fan
    assert abs(pair.W.var() - var) <= 5 * np.sqrt(2 / (q * fan)) * var
    # per-coordinate column variances, then the biases
    col = pair.W.var(axis=0)
    assert np.all(np.abs(col - var) <= 5 * np.sqrt(2 / q) * var)
    assert abs(pair.b.var() - beta ** 2) <= 5 * np.sqrt(2 / q) * max(beta ** 2, 1e-12)
    assert abs(pair.W.mean()) <= 5 * np.sqrt(var / (q * fan))


@given(st.integers(1, 30), st.integers(0, 10 ** 6))
def test_random_orthogonal(n, seed):
    Q = random_orthogonal(np.random.default_rng(seed), n)
    assert np.max(np.abs(Q @ Q.T - np.eye(n))) <= 1e-12


def test_check_rejects_bad_output_matrix():
    p = init_network(3, 3, 4, 2, seed=0)
    p.WD = p.WD * 1.001
    with pytest.raises(ValueError):
        p.check()


# ---------------------------------------------------------------- proximity inputs

def test_concat_singleton_is_identity(rng):
    X = rng.standard_normal((3, 1, 4))
    np.testing.assert_array_equal(proximity_concat(make_proximity("singleton"), X), X)


def test_concat_window_example():
    p = make_proximity("window1d", 3, 1)
    X = np.array([[[1.0], [2.0], [3.0]]])
    E = proximity_concat(p, X)
    # 1-based g=2 is index 1 here
    np.testing.assert_array_equal(E[0, 1], [2.0, 1.0, 3.0])
    np.testing.assert_array_equal(E[0, 0], [1.0, 1.0, 2.0])


# ---------------------------------------------------------------- forward

def test_forward_upto_zero_is_identity(rng):
    p = init_network(3, 3, 8, 3, seed=0)
    X = rng.standard_normal((4, 1, 3))
    g, f = forward(p, X, upto=0)
    assert g is f or np.array_equal(g, f)
    np.testing.assert_array_equal(g, X)


def test_hand_built_neuron():
    p = init_network(2, 2, 1, 2, orthogonal_mode="identity", seed=0)
    c, b0 = 0.37, 0.8
    p.W1[0][:] = 0.0
    p.b[0][:] = b0
    p.W2[0][:] = 0.0
    p.W2[0][1, 0] = c / np.tanh(b0)
    _, f = forward(p, np.array([[[1.0, -1.0]], [[-1.0, 1.0]]]))
    np.testing.assert_allclose(f[..., 1], c, rtol=1e-14)
    np.testing.assert_array_equal(f[..., 0], 0.0)


def test_forward_matches_manual_recursion(rng):
    prox = make_proximity("window1d", 3, 1)
    p = randomize_second_layers(init_network(4, 3, 16, 4, prox, seed=2), rng)
    X = boolean_inputs(rng, 5, 3, 4)
    s = p.activation.evaluate
    g = s(proximity_concat(prox, X) @ p.W1[0].T + p.b[0]) @ p.W2[0].T
    for k in (2, 3):
        g = g + s(proximity_concat(prox, g) @ p.W1[k - 1].T + p.b[k - 1]) @ p.W2[k - 1].T
    G, F = forward(p, X)
    np.testing.assert_allclose(G, g, rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(F, G @ p.WD.T, rtol=1e-12, atol=1e-12)


def test_gamma_step_consistent_with_forward(rng):
    p = randomize_second_layers(init_network(4, 3, 16, 4, seed=5), rng)
    X = boolean_inputs(rng, 6, 1, 4)
    g = None
    for k in range(1, 4):
        g = gamma_step(p, k, g, X)
        np.testing.assert_allclose(g, forward(p, X, upto=k)[0], rtol=1e-13, atol=1e-14)


def test_residual_block_switch_off(rng):
    p = randomize_second_layers(init_network(4, 3, 16, 5, seed=7), rng)
    X = boolean_inputs(rng, 6, 1, 4)
    masked = forward(p, X, trained_mask=[True, True, False, True])[1]
    saved = p.W2[2].copy()
    p.W2[2][:] = 0.0
    np.testing.assert_array_equal(forward(p, X)[1], masked)
    p.W2[2] = saved
    # first block off gives zero input to the residual stack
    g = forward(p, X, trained_mask=[False, False, False, False])[0]
    assert not np.any(g)


def test_forward_errors():
    p = init_network(4, 3, 8, 3, seed=0)
    with pytest.raises(ValueError):
        forward(p, np.ones((2, 1, 5)))
    with pytest.raises(ValueError):
        forward(p, np.ones((2, 1, 4)), upto=3)
    with pytest.raises(ValueError):
        features(p, 3, np.ones((2, 1, 3)))


@settings(max_examples=25)
@given(st.integers(0, 10 ** 6))
def test_output_is_orthogonal_image(seed):
    rng = np.random.default_rng(seed)
    p = randomize_second_layers(init_network(5, 4, 12, 4, seed=seed), rng)
    X = boolean_inputs(rng, 7, 1, 5)
    for k in range(4):
        G, F = forward(p, X, upto=k)
        if k:
            np.testing.assert_allclose(F, G @ p.WD.T, rtol=1e-12, atol=1e-12)
    assert p.orthogonality_error() <= 1e-8


@settings(max_examples=25)
@given(st.integers(0, 10 ** 6), st.integers(1, 3))
def test_output_affine_in_one_block(seed, k):
    rng = np.random.default_rng(seed)
    p = randomize_second_layers(init_network(4, 3, 10, 4, seed=seed), rng, upto=k - 1)
    X = boolean_inputs(rng, 5, 1, 4)
    A, Bm = rng.standard_normal((2, 3, 10))
    outs = []
    for t in (0.0, 1.0, 2.5):
        p.W2[k - 1] = A + t * Bm
        outs.append(forward(p, X, upto=k)[1])
    # collinear in t
    np.testing.assert_allclose(outs[2] - outs[0], 2.5 * (outs[1] - outs[0]), rtol=1e-10, atol=1e-10)


# ---------------------------------------------------------------- features

def test_features_bounded_and_deterministic(rng):
    p = init_network(6, 3, 64, 3, beta=0.3, seed=0)
    X = boolean_inputs(rng, 20, 1, 6) * 5
    phi = features(p, 1, X)
    assert phi.shape == (20, 1, 64)
    assert np.all(np.abs(phi) < 1)
    np.testing.assert_array_equal(phi, features(p, 1, X))


def test_feature_second_moment_matches_kernel(rng):
    d, q, beta = 8, 20000, 0.6
    spec = make_activation("tanh")
    p = init_network(d, 2, q, 2, beta=beta, seed=3, activation=spec)
    X = boolean_inputs(rng, 4, 1, d)
    phi = features(p, 1, X)[:, 0, :]
    for x, f in zip(X[:, 0], phi):
        val, tail = kernel_analytic(KernelQuery(x, x, beta), spec)
        se = (f ** 2).std(ddof=1) / np.sqrt(q)
        assert abs((f ** 2).mean() - val) <= 4 * se + tail
