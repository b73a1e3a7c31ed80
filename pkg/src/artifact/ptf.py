"""Sparse polynomials, Fourier extensions of juntas and PTF claims.

A polynomial is a map from exponent multi-indices to coefficients. Truth
tables of K-juntas are indexed by the bit pattern of their inputs: bit t of
the table index is 1 when input t is +1 (bit 0 is the first input).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, factorial, sqrt
from types import MappingProxyType

import numpy as np


class SparsePoly:
    """Immutable sparse polynomial in `dim` variables."""

    __slots__ = ("dim", "_terms")

    def __init__(self, dim: int, terms=None, tol: float = 0.0):
        self.dim = int(dim)
        acc: dict[tuple, float] = {}
        for alpha, c in (terms.items() if isinstance(terms, dict) else (terms or [])):
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.dim or min(alpha, default=0) < 0:
                raise ValueError(f"bad multi-index {alpha} for dim {self.dim}")
            acc[alpha] = acc.get(alpha, 0.0) + float(c)
        clean = {a: c for a, c in sorted(acc.items()) if abs(c) > tol and c != 0.0}
        self._terms = MappingProxyType(clean)

    @property
    def terms(self):
        return self._terms

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self._terms), default=0)

    def is_multilinear(self) -> bool:
        return all(max(a, default=0) <= 1 for a in self._terms)

    def variables(self) -> list[int]:
        used = set()
        for a in self._terms:
            used.update(i for i, e in enumerate(a) if e)
        return sorted(used)

    def scale(self, c: float) -> "SparsePoly":
        return SparsePoly(self.dim, {a: c * v for a, v in self._terms.items()})

    def __call__(self, x):
        return poly_eval(self, x)

    def __eq__(self, other):
        return isinstance(other, SparsePoly) and self.dim == other.dim and dict(self._terms) == dict(other._terms)

    def __repr__(self):
        return f"SparsePoly(dim={self.dim}, terms={dict(self._terms)})"

    def to_json(self) -> dict:
        return {"dim": self.dim,
                "terms": [{"alpha": list(a), "coeff": c} for a, c in self._terms.items()]}

    @classmethod
    def from_json(cls, obj: dict) -> "SparsePoly":
        return cls(obj["dim"], [(t["alpha"], t["coeff"]) for t in obj["terms"]])


def poly_eval(p: SparsePoly, x) -> float | np.ndarray:
    """Evaluate p at a point (1-d) or at each row of a 2-d array."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.dim:
        raise ValueError(f"dimension mismatch: got {x.shape[-1]}, expected {p.dim}")
    out = np.zeros(x.shape[:-1])
    for alpha, c in p.terms.items():
        mono = np.ones(x.shape[:-1])
        for i, e in enumerate(alpha):
            if e:
                mono = mono * x[..., i] ** e
        out = out + c * mono
    return float(out) if out.ndim == 0 else out


def poly_grad(p: SparsePoly, x) -> np.ndarray:
    """Gradient of p at a single point."""
    x = np.asarray(x, dtype=float)
    g = np.zeros(p.dim)
    for alpha, c in p.terms.items():
        for i, e in enumerate(alpha):
            if e == 0:
                continue
            val = c * e
            for k, ek in enumerate(alpha):
                if ek:
                    val *= x[k] ** (ek - 1 if k == i else ek)
            g[i] += val
    return g


def coeff_norm(p: SparsePoly) -> float:
    return sqrt(sum(c * c for c in p.terms.values()))


def sign(v):
    """Sign with sign(0) = +1."""
    return np.where(np.asarray(v) >= 0, 1.0, -1.0)


def cube_points(K: int) -> np.ndarray:
    """All of {-1,1}^K ordered by table index (bit t set means coordinate t is +1)."""
    idx = np.arange(2 ** K)
    bits = (idx[:, None] >> np.arange(K)[None, :]) & 1
    return np.where(bits == 1, 1.0, -1.0)


def table_index(z) -> np.ndarray:
    """Truth-table index for sign vectors z (rows), inverse of cube_points."""
    z = np.atleast_2d(np.asarray(z))
    bits = (z > 0).astype(np.int64)
    return bits @ (1 << np.arange(z.shape[1], dtype=np.int64))


def multilinear_extension(truth_table, embed_dim: int, coord_map) -> SparsePoly:
    """Fourier expansion of a {+-1}-valued K-junta placed on coordinates coord_map."""
    f = np.asarray(truth_table, dtype=float)
    K = len(coord_map)
    if f.size != 2 ** K:
        raise ValueError("truth table must have 2^K entries")
    if not np.all(np.abs(f) == 1.0):
        raise ValueError("truth table entries must be +-1")
    if len(set(coord_map)) != K or min(coord_map, default=0) < 0 or max(coord_map, default=-1) >= embed_dim:
        raise ValueError("coord_map must be injective into range(embed_dim)")
    Z = cube_points(K)
    terms = {}
    for mask in range(2 ** K):
        sub = [t for t in range(K) if mask >> t & 1]
        chi = np.prod(Z[:, sub], axis=1) if sub else np.ones(len(Z))
        fhat = float(f @ chi) / 2 ** K
        if fhat != 0.0:
            alpha = [0] * embed_dim
            for t in sub:
                alpha[coord_map[t]] = 1
            terms[tuple(alpha)] = fhat
    return SparsePoly(embed_dim, terms)


def lip_sup_bounds(p: SparsePoly):
    """(L, Bsup) bounds on [-1,1]^n from the degree and coefficient norm."""
    K, n, c = p.degree, p.dim, coeff_norm(p)
    L = (n + 1) ** ((K + 1) / 2) * K * c
    Bsup = (n + 1) ** (K / 2) * c
    return L, Bsup


def _poly_mul(a: dict, b: dict) -> dict:
    out: dict = {}
    for ea, ca in a.items():
        for eb, cb in b.items():
            e = tuple(x + y for x, y in zip(ea, eb))
            out[e] = out.get(e, 0.0) + ca * cb
    return out


def composition_norm_bound(p: SparsePoly, A, corrected: bool = True) -> float:
    """Bound on ||p(A .)||_co.

    The plain form ||p|| R^K (n+1)^{K/2} (R the largest row norm of A, n = p.dim)
    can fail when R < 1 and p has low-degree terms, or when mixed monomials
    collect several tensor entries. The corrected form replaces R^K by
    max(1, R)^K and adds a sqrt(K!) factor.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    R = float(np.max(np.linalg.norm(A, axis=1))) if A.size else 0.0
    K = p.degree
    base = coeff_norm(p) * (p.dim + 1) ** (K / 2)
    if not corrected:
        return base * R ** K
    return base * max(1.0, R) ** K * sqrt(factorial(K))


def compose_linear(p: SparsePoly, A, term_cap: int = 10 ** 6) -> SparsePoly:
    """Expanded polynomial q(y) = p(A y).

    A has p.dim rows; its column count is the new dimension. Raises when the
    expansion could exceed term_cap terms. The result is checked against
    composition_norm_bound (corrected form).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != p.dim:
        raise ValueError("A must have p.dim rows")
    t = A.shape[1]
    est = sum(comb(t + sum(a) - 1, sum(a)) if sum(a) else 1 for a in p.terms)
    if est > term_cap:
        raise ValueError(f"expansion may produce {est} terms (cap {term_cap})")
    zero = (0,) * t
    lin = []
    for i in range(p.dim):
        lin.append({tuple(int(k == j) for k in range(t)): A[i, j] for j in range(t) if A[i, j] != 0.0})
    out: dict = {}
    for alpha, c in p.terms.items():
        acc = {zero: c}
        for i, e in enumerate(alpha):
            for _ in range(e):
                acc = _poly_mul(acc, lin[i])
        for k, v in acc.items():
            out[k] = out.get(k, 0.0) + v
    q = SparsePoly(t, out)
    if coeff_norm(q) > composition_norm_bound(p, A) * (1 + 1e-9) + 1e-12:
        raise RuntimeError("coefficient norm bound violated")
    return q


@dataclass(frozen=True)
class TruncatedBall:
    center: np.ndarray
    radius: float

    def contains(self, xt, tol: float = 1e-12) -> bool:
        xt = np.asarray(xt, dtype=float)
        return bool(np.all(np.abs(xt) <= 1 + tol) and np.max(np.abs(xt - self.center)) <= self.radius + tol)

    def box(self):
        c = np.asarray(self.center, dtype=float)
        return np.maximum(-1.0, c - self.radius), np.minimum(1.0, c + self.radius)

    def sample(self, rng, count: int) -> np.ndarray:
        lo, hi = self.box()
        return lo + (hi - lo) * rng.random((count, lo.size))


@dataclass(frozen=True)
class PtfClaim:
    """f is a (K, M, B, xi)-PTF witnessed by `witness`."""
    K: int
    M: float
    B: float
    xi: float
    witness: SparsePoly = field(compare=False)

    def __post_init__(self):
        if self.witness.degree > self.K:
            raise ValueError("witness degree exceeds K")
        if coeff_norm(self.witness) > self.M * (1 + 1e-12):
            raise ValueError("witness coefficient norm exceeds M")
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if not (0 < self.xi <= 1):
            raise ValueError("xi must lie in (0, 1]")

    def params(self):
        return (self.K, self.M, self.B, self.xi)


@dataclass
class PtfReport:
    holds: bool
    worst_margin_low: float
    worst_margin_high: float
    exact: bool           # corner enumeration was exhaustive
    n_points: int
    failing: list = field(default_factory=list)


def ptf_check(X, labels, claim: PtfClaim, perturbations: int = 64, seed=0,
              max_corner_vars: int = 16) -> PtfReport:
    """Test 1 <= p(x~) f(x) <= B over x and points of the xi-ball around x.

    Multilinear witnesses are checked on every corner of the ball in the
    variables they use (exact); otherwise random points are used and the
    report is marked non-exact. Repeated (x, f(x)) rows are checked once.
    """
    y = np.asarray(labels, dtype=float).reshape(-1)
    p = claim.witness
    if y.size == 0:
        return PtfReport(True, float("inf"), float("-inf"), True, 0)
    X = np.asarray(X, dtype=float).reshape(y.size, -1)
    if X.shape[1] != p.dim:
        raise ValueError("witness dimension does not match the points")
    rows, inv = np.unique(np.column_stack([X, y]), axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    U, yu = rows[:, :-1], rows[:, -1]
    rng = np.random.default_rng(seed)
    vars_ = p.variables()
    exact = p.is_multilinear() and len(vars_) <= max_corner_vars
    lo_u = poly_eval(p, U) * yu
    hi_u = lo_u.copy()
    lo = np.maximum(-1.0, U - claim.xi)
    hi = np.minimum(1.0, U + claim.xi)
    if exact and vars_:
        for c in cube_points(len(vars_)):
            P = U.copy()
            P[:, vars_] = np.where(c > 0, hi[:, vars_], lo[:, vars_])
            m = poly_eval(p, P) * yu
            lo_u, hi_u = np.minimum(lo_u, m), np.maximum(hi_u, m)
    elif not exact:
        for _ in range(perturbations):
            P = lo + (hi - lo) * rng.random(U.shape)
            m = poly_eval(p, P) * yu
            lo_u, hi_u = np.minimum(lo_u, m), np.maximum(hi_u, m)
    bad_u = (lo_u < 1 - 1e-12) | (hi_u > claim.B + 1e-12)
    failing = np.flatnonzero(bad_u[inv]).tolist()
    return PtfReport(not failing, float(lo_u.min()), float(hi_u.max()), exact, X.shape[0], failing)


def refine_ptf(claim: PtfClaim, Bsup: float, L: float) -> PtfClaim:
    """From a plain margin-1 witness p with |p| <= Bsup and Lipschitz constant L,
    the doubled witness 2p gives a (K, 2M, 2Bsup+1, 1/(2L)) claim."""
    # xi is capped at 1 (radius domain of the claim)
    xi = 1.0 if L <= 0.5 else 1.0 / (2.0 * L)
    return PtfClaim(claim.K, 2 * claim.M, 2 * Bsup + 1, xi, claim.witness.scale(2.0))


def junta_lipschitz(K: int) -> float:
    """Lipschitz constant (l_inf to absolute value) of a K-junta's extension."""
    return K * 2 ** (K / 2)


def junta_claim(truth_table, embed_dim: int, coord_map) -> PtfClaim:
    """Certified (K, 2, 3, 1/(K 2^{(K+2)/2})) claim for a junta."""
    K = len(coord_map)
    p = multilinear_extension(truth_table, embed_dim, coord_map)
    base = PtfClaim(K, 1.0, 1.0, 1.0, p)
    return refine_ptf(base, 1.0, junta_lipschitz(K))
