import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from artifact.ptf import (PtfClaim, SparsePoly, TruncatedBall, coeff_norm, compose_linear,
                          composition_norm_bound, cube_points, junta_claim, junta_lipschitz,
                          lip_sup_bounds, multilinear_extension, poly_eval, poly_grad, ptf_check,
                          refine_ptf, sign, table_index)


def naive_eval(p, x):
    total = 0.0
    for alpha, c in p.terms.items():
        m = c
        for xi, e in zip(x, alpha):
            m *= xi ** e
        total += m
    return total


def random_poly(r, dim, max_deg, n_terms):
    terms = {}
    for _ in range(n_terms):
        alpha = [0] * dim
        for _ in range(r.integers(0, max_deg + 1)):
            alpha[r.integers(dim)] += 1
        terms[tuple(alpha)] = terms.get(tuple(alpha), 0.0) + r.standard_normal()
    return SparsePoly(dim, terms)


def random_table(r, K):
    while True:
        t = r.choice([-1.0, 1.0], size=2 ** K)
        if abs(t.sum()) < 2 ** K:
            return t


# ---------------------------------------------------------------- SparsePoly basics

def test_eval_examples():
    assert poly_eval(SparsePoly(2, {(1, 1): 1.0}), [1, -1]) == -1
    assert poly_eval(SparsePoly(2, {(1, 0): 3.0, (0, 1): 4.0}), [1, 1]) == 7


def test_eval_dimension_mismatch():
    with pytest.raises(ValueError):
        poly_eval(SparsePoly(2, {(1, 0): 1.0}), [1, 2, 3])


def test_zero_terms_dropped_and_degree():
    p = SparsePoly(3, {(1, 0, 0): 0.0, (0, 2, 1): 2.0, (0, 0, 0): 1.0})
    assert (1, 0, 0) not in p.terms
    assert p.degree == 3
    assert not p.is_multilinear()
    assert p.variables() == [1, 2]


def test_bad_multi_index():
    with pytest.raises(ValueError):
        SparsePoly(2, {(1,): 1.0})
    with pytest.raises(ValueError):
        SparsePoly(2, {(1, -1): 1.0})


def test_immutable_terms():
    p = SparsePoly(1, {(1,): 1.0})
    with pytest.raises(TypeError):
        p.terms[(2,)] = 1.0


@given(st.integers(0, 10 ** 6))
def test_eval_matches_naive_oracle(seed):
    r = np.random.default_rng(seed)
    dim = int(r.integers(1, 6))
    p = random_poly(r, dim, 4, 6)
    x = r.uniform(-2, 2, dim)
    assert poly_eval(p, x) == pytest.approx(naive_eval(p, x), rel=1e-12, abs=1e-12)
    X = r.uniform(-2, 2, (5, dim))
    np.testing.assert_allclose(poly_eval(p, X), [naive_eval(p, row) for row in X], rtol=1e-12, atol=1e-12)


@given(st.integers(0, 10 ** 6))
def test_json_roundtrip(seed):
    r = np.random.default_rng(seed)
    p = random_poly(r, 4, 3, 5)
    obj = p.to_json()
    alphas = [t["alpha"] for t in obj["terms"]]
    assert alphas == sorted(alphas)
    assert SparsePoly.from_json(obj) == p


@given(st.integers(0, 10 ** 6))
def test_gradient_matches_finite_differences(seed):
    r = np.random.default_rng(seed)
    p = random_poly(r, 3, 3, 5)
    x = r.uniform(-1, 1, 3)
    h = 1e-6
    fd = [(poly_eval(p, x + h * e) - poly_eval(p, x - h * e)) / (2 * h) for e in np.eye(3)]
    np.testing.assert_allclose(poly_grad(p, x), fd, rtol=1e-6, atol=1e-6)


def test_coeff_norm_examples():
    assert coeff_norm(SparsePoly(2, {(1, 1): 1.0})) == 1.0
    assert coeff_norm(SparsePoly(2, {(1, 0): 3.0, (0, 1): 4.0})) == 5.0


def test_sign_convention():
    np.testing.assert_array_equal(sign([-2.0, 0.0, 3.0]), [-1.0, 1.0, 1.0])


def test_cube_points_and_index_are_inverse():
    for K in range(1, 6):
        Z = cube_points(K)
        np.testing.assert_array_equal(table_index(Z), np.arange(2 ** K))


# ---------------------------------------------------------------- multilinear extension

def test_xor_extension():
    # bit t of the index is input t being +1: table over (z1, z2) in index order
    Z = cube_points(2)
    xor = Z[:, 0] * Z[:, 1]
    assert multilinear_extension(xor, 2, [0, 1]) == SparsePoly(2, {(1, 1): 1.0})


def test_and_extension():
    Z = cube_points(2)
    and_ = np.where((Z[:, 0] > 0) & (Z[:, 1] > 0), 1.0, -1.0)
    p = multilinear_extension(and_, 2, [0, 1])
    assert p == SparsePoly(2, {(0, 0): -0.5, (1, 0): 0.5, (0, 1): 0.5, (1, 1): 0.5})


def test_dictator_extension():
    Z = cube_points(3)
    assert multilinear_extension(Z[:, 0], 5, [2, 0, 4]) == SparsePoly(5, {(0, 0, 1, 0, 0): 1.0})


def test_extension_errors():
    with pytest.raises(ValueError):
        multilinear_extension([1, -1, 1], 2, [0, 1])
    with pytest.raises(ValueError):
        multilinear_extension([1, 0, 1, -1], 2, [0, 1])
    with pytest.raises(ValueError):
        multilinear_extension([1, -1, 1, -1], 2, [0, 0])
    with pytest.raises(ValueError):
        multilinear_extension([1, -1, 1, -1], 2, [0, 2])


@given(st.integers(1, 6), st.integers(0, 10 ** 6))
def test_extension_roundtrip_and_unit_norm(K, seed):
    r = np.random.default_rng(seed)
    table = r.choice([-1.0, 1.0], size=2 ** K)
    dim = K + int(r.integers(0, 4))
    cmap = list(r.permutation(dim)[:K])
    p = multilinear_extension(table, dim, cmap)
    X = np.zeros((2 ** K, dim))
    X[:, cmap] = cube_points(K)
    np.testing.assert_allclose(poly_eval(p, X), table, atol=1e-12)
    assert coeff_norm(p) == pytest.approx(1.0, abs=1e-12)
    assert p.degree <= K and p.is_multilinear()


# ---------------------------------------------------------------- Lipschitz and sup bounds

def test_lip_sup_examples():
    L, Bsup = lip_sup_bounds(SparsePoly(1, {(1,): 1.0}))
    assert L == 2.0
    assert Bsup == pytest.approx(math.sqrt(2))
    L, _ = lip_sup_bounds(SparsePoly(3, {(0, 0, 0): 0.7}))
    assert L == 0.0


@given(st.integers(0, 10 ** 6))
def test_lip_sup_bounds_hold_on_samples(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 7))
    p = random_poly(r, n, 3, int(r.integers(1, 6)))
    L, Bsup = lip_sup_bounds(p)
    X = r.uniform(-1, 1, (200, n))
    assert np.max(np.abs(poly_eval(p, X))) <= Bsup + 1e-12
    Y = np.clip(X + r.uniform(-1e-3, 1e-3, X.shape), -1, 1)
    d = np.max(np.abs(X - Y), axis=1)
    ok = d > 0
    slope = np.abs(poly_eval(p, X) - poly_eval(p, Y))[ok] / d[ok]
    assert np.all(slope <= L + 1e-9)


@given(st.integers(1, 5), st.integers(0, 10 ** 6))
def test_junta_extension_lipschitz(K, seed):
    r = np.random.default_rng(seed)
    p = multilinear_extension(r.choice([-1.0, 1.0], size=2 ** K), K, list(range(K)))
    for x in r.uniform(-1, 1, (50, K)):
        # l_inf -> absolute value Lipschitz constant is the l1 norm of the gradient
        assert np.sum(np.abs(poly_grad(p, x))) <= junta_lipschitz(K) + 1e-12


# ---------------------------------------------------------------- composition with linear maps

def test_compose_examples():
    q = compose_linear(SparsePoly(1, {(1,): 1.0}), [[2.0, 0.0]])
    assert q == SparsePoly(2, {(1, 0): 2.0})
    assert coeff_norm(q) == 2.0 <= 1 * 2 * math.sqrt(2)
    p = SparsePoly(2, {(1, 1): 1.0})
    assert compose_linear(p, np.eye(2)) == p


def test_compose_shape_and_cap():
    p = SparsePoly(2, {(2, 2): 1.0})
    with pytest.raises(ValueError):
        compose_linear(p, np.ones((3, 2)))
    with pytest.raises(ValueError):
        compose_linear(p, np.ones((2, 50)), term_cap=100)


def test_plain_bound_can_fail_for_short_rows():
    # constant term survives composition while R^K shrinks it away
    p = SparsePoly(1, {(0,): 1.0, (1,): 1.0})
    A = [[0.1]]
    q = compose_linear(p, A)
    assert coeff_norm(q) > composition_norm_bound(p, A, corrected=False)
    assert coeff_norm(q) <= composition_norm_bound(p, A, corrected=True)


@given(st.integers(0, 10 ** 6))
def test_compose_random_triples(seed):
    r = np.random.default_rng(seed)
    p = random_poly(r, 3, 2, 4)
    A = r.standard_normal((3, 3))
    q = compose_linear(p, A)
    for y in r.uniform(-1, 1, (5, 3)):
        ref = poly_eval(p, A @ y)
        assert poly_eval(q, y) == pytest.approx(ref, rel=1e-10, abs=1e-10)
    assert coeff_norm(q) <= composition_norm_bound(p, A) + 1e-12


# ---------------------------------------------------------------- PTF claims

def test_claim_validation():
    p = SparsePoly(1, {(2,): 1.0})
    with pytest.raises(ValueError):
        PtfClaim(1, 1.0, 1.0, 0.5, p)          # degree
    with pytest.raises(ValueError):
        PtfClaim(2, 0.5, 1.0, 0.5, p)          # coefficient norm
    with pytest.raises(ValueError):
        PtfClaim(2, 1.0, 0.5, 0.5, p)          # B
    with pytest.raises(ValueError):
        PtfClaim(2, 1.0, 1.0, 0.0, p)          # xi


def test_truncated_ball():
    b = TruncatedBall(np.array([1.0, -0.5]), 0.5)
    assert b.contains([0.6, -0.9])
    assert not b.contains([1.2, -0.5])
    assert not b.contains([0.4, -0.5])
    lo, hi = b.box()
    np.testing.assert_array_equal(lo, [0.5, -1.0])
    np.testing.assert_array_equal(hi, [1.0, 0.0])
    S = b.sample(np.random.default_rng(0), 100)
    assert all(b.contains(s) for s in S)


def test_ptf_check_sign_examples():
    X = np.array([[1.0], [-1.0]])
    f = np.array([1.0, -1.0])
    rep = ptf_check(X, f, PtfClaim(1, 1.0, 1.0, 0.5, SparsePoly(1, {(1,): 1.0})))
    assert not rep.holds and rep.exact
    assert rep.worst_margin_low == pytest.approx(0.5)
    rep = ptf_check(X, f, PtfClaim(1, 2.0, 2.0, 0.5, SparsePoly(1, {(1,): 2.0})))
    assert rep.holds
    assert (rep.worst_margin_low, rep.worst_margin_high) == (1.0, 2.0)


def test_ptf_check_exact_margin_small_xi():
    X = np.array([[1.0], [-1.0]])
    rep = ptf_check(X, [1.0, -1.0], PtfClaim(1, 1.0, 1.0, 1e-12, SparsePoly(1, {(1,): 1.0})))
    assert rep.holds


def test_ptf_check_nonmultilinear_is_flagged_sampling():
    X = np.array([[1.0], [-1.0]])
    rep = ptf_check(X, [1.0, 1.0], PtfClaim(2, 2.0, 3.0, 0.2, SparsePoly(1, {(2,): 2.0})))
    assert not rep.exact and rep.holds


def test_ptf_check_empty():
    rep = ptf_check(np.zeros((0, 1)), [], PtfClaim(1, 1.0, 1.0, 0.5, SparsePoly(1, {(1,): 1.0})))
    assert rep.holds and rep.n_points == 0


def test_ptf_check_dimension_mismatch():
    with pytest.raises(ValueError):
        ptf_check(np.ones((2, 3)), [1, 1], PtfClaim(1, 1.0, 1.0, 0.5, SparsePoly(1, {(1,): 1.0})))


def test_refine_examples():
    base = PtfClaim(1, 1.0, 1.0, 1.0, SparsePoly(1, {(1,): 1.0}))
    out = refine_ptf(base, 1.0, 2.0)
    assert out.params() == (1, 2.0, 3.0, 0.25)
    assert out.witness == SparsePoly(1, {(1,): 2.0})
    assert ptf_check([[1.0], [-1.0]], [1.0, -1.0], out).holds


@pytest.mark.parametrize("K", [1, 2, 3, 4])
def test_junta_claim_parameters(K):
    r = np.random.default_rng(K)
    c = junta_claim(random_table(r, K), K + 2, list(range(1, K + 1)))
    assert c.params() == (K, 2.0, 3.0, pytest.approx(1 / (K * 2 ** ((K + 2) / 2))))


def test_generic_refinement_formula():
    # a (K, M)-PTF with the polynomial-derived Lipschitz and sup bounds
    p = SparsePoly(3, {(1, 1, 0): 0.8, (0, 0, 1): 0.6})
    K, M, n = 2, 1.0, 3
    L, Bsup = lip_sup_bounds(p)
    out = refine_ptf(PtfClaim(K, M, 1.0, 1.0, p), Bsup, L)
    assert out.params() == (K, 2 * M, pytest.approx(2 * (n + 1) ** (K / 2) * M + 1),
                            pytest.approx(1 / (2 * (n + 1) ** ((K + 1) / 2) * K * M)))


@given(st.integers(1, 4), st.integers(0, 10 ** 6))
def test_refined_junta_claims_pass_on_cube(K, seed):
    r = np.random.default_rng(seed)
    table = random_table(r, K)
    c = junta_claim(table, K, list(range(K)))
    X = cube_points(K)
    assert ptf_check(X, table, c).holds


@given(st.integers(0, 10 ** 6))
def test_refine_passes_when_plain_margin_holds(seed):
    # plain margin-1 multilinear witness on random sign data -> refined claim passes
    r = np.random.default_rng(seed)
    n = 3
    table = random_table(r, n)
    p = multilinear_extension(table, n, list(range(n)))
    X = cube_points(n)
    L, Bsup = lip_sup_bounds(p)
    out = refine_ptf(PtfClaim(p.degree, 1.0, 1.0, 1.0, p), Bsup, L)
    assert ptf_check(X, table, out).holds
