"""Hermite analytics for activations.

Normalized probabilists' Hermite polynomials h_s (orthonormal under N(0,1)),
coefficient extraction by Gauss-Hermite quadrature, the analytic random
neuron kernel and its Monte Carlo counterpart, and the beta / delta bound
formulas used to size random-feature layers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import lgamma, log, sqrt, exp
from typing import Callable

import numpy as np
from scipy.special import roots_hermitenorm, erf

# The forward recurrence stays accurate on the quadrature grid up to this
# index; beyond it the values at the outermost nodes overflow.
HERMITE_CAP = 256
DEFAULT_TABLE = 256


class QuadratureError(RuntimeError):
    pass


def hermite_eval(s: int, x):
    """h_s(x) by the three-term recurrence.

    h_0 = 1, h_1 = x, h_{n+1} = (x h_n - sqrt(n) h_{n-1}) / sqrt(n+1).
    Works elementwise on arrays; returns a float for scalar input.
    """
    if s < 0:
        raise ValueError("s must be nonnegative")
    if s > HERMITE_CAP:
        raise ValueError(f"s={s} exceeds recurrence cap {HERMITE_CAP}")
    x = np.asarray(x, dtype=float)
    h_prev = np.ones_like(x)
    if s == 0:
        out = h_prev
    else:
        h = x.copy()
        for n in range(1, s):
            h, h_prev = (x * h - sqrt(n) * h_prev) / sqrt(n + 1), h
        out = h
    return float(out) if out.ndim == 0 else out


def hermite_table(S: int, x) -> np.ndarray:
    """Rows h_0..h_S evaluated at the points x, shape (S+1, len(x))."""
    if S > HERMITE_CAP:
        raise ValueError(f"S={S} exceeds recurrence cap {HERMITE_CAP}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    H = np.empty((S + 1, x.size))
    H[0] = 1.0
    if S >= 1:
        H[1] = x
    for n in range(1, S):
        H[n + 1] = (x * H[n] - sqrt(n) * H[n - 1]) / sqrt(n + 1)
    return H


@lru_cache(maxsize=32)
def _quad_rule(nodes: int):
    x, w = roots_hermitenorm(nodes)
    w = w / sqrt(2.0 * np.pi)  # weight e^{-x^2/2} -> standard normal density
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_expectation(f: Callable, nodes: int = 400) -> float:
    """E f(X) for X ~ N(0,1) by Gauss-Hermite quadrature."""
    x, w = _quad_rule(nodes)
    return float(w @ np.asarray(f(x), dtype=float))


def hermite_coeffs(sigma: Callable, S_max: int = 32, quad_nodes: int | None = None,
                   check_tol: float = 1e-8) -> np.ndarray:
    """Coefficients a_s = E[sigma(X) h_s(X)] for s = 0..S_max.

    sigma must accept numpy arrays. The same nodes are used to check
    E[h_i h_j] = delta_ij for i, j <= S_max; a QuadratureError is raised
    when the check is worse than check_tol.
    """
    if quad_nodes is None:
        # twice the minimum: smooth non-polynomial sigma then reach ~1e-13
        quad_nodes = 4 * S_max + 64
    if quad_nodes < 2 * S_max + 32:
        raise ValueError("quad_nodes must be at least 2*S_max + 32")
    x, w = _quad_rule(quad_nodes)
    H = hermite_table(S_max, x)
    gram = (H * w) @ H.T
    err = np.abs(gram - np.eye(S_max + 1)).max()
    if not np.isfinite(err) or err > check_tol:
        raise QuadratureError(f"orthonormality self-check failed: {err:.3e}")
    return H @ (w * np.asarray(sigma(x), dtype=float))


def select_kprime(coeffs, K: int, coeff_tol: float = 1e-10) -> int:
    """Minimal K' >= K with |a_K'| > coeff_tol."""
    a = np.asarray(coeffs, dtype=float)
    for s in range(K, a.size):
        if abs(a[s]) > coeff_tol:
            return s
    raise ValueError("no nonzero coefficient at or above K")


@dataclass(frozen=True)
class ActivationSpec:
    """Activation with its Hermite data.

    hermite_coeffs holds a_0..a_{S_max}; l2_norm is the N(0,1) L2 norm and
    sup_norm the uniform bound. K is the degree the spec was built for and
    kprime the first index >= K carrying a nonzero coefficient.
    """
    name: str
    evaluate: Callable = field(repr=False, compare=False)
    hermite_coeffs: np.ndarray = field(repr=False, compare=False)
    l2_norm: float
    sup_norm: float
    kprime: int
    coeff_tol: float = 1e-10
    K: int = 1
    exact_table: bool = False       # sigma is exactly the finite Hermite sum

    @property
    def S_max(self) -> int:
        return len(self.hermite_coeffs) - 1

    def parseval_remainder(self) -> np.ndarray:
        """R[i] = sqrt(||sigma||^2 - sum_{t<i} a_t^2), floored by quadrature noise.

        For exact tables this is the norm of the remaining coefficients, which
        is zero past the last one."""
        if self.exact_table:
            tail = np.cumsum((self.hermite_coeffs ** 2)[::-1])[::-1]
            return np.sqrt(np.concatenate([tail, [0.0]]))
        a2 = np.concatenate([[0.0], np.cumsum(self.hermite_coeffs ** 2)])
        rem = np.maximum(self.l2_norm ** 2 - a2, 0.0) + 1e-14
        return np.sqrt(rem)


_BUILTIN = {
    "tanh": (np.tanh, 1.0),
    "erf": (erf, 1.0),
}


def make_activation(name: str = "tanh", K: int = 1, S_max: int = DEFAULT_TABLE,
                    coeff_tol: float = 1e-10, evaluate: Callable | None = None,
                    sup_norm: float | None = None, quad_nodes: int | None = None) -> ActivationSpec:
    """Build an ActivationSpec for a named or custom activation.

    Custom activations pass `evaluate` (vectorized) and `sup_norm`.
    """
    if evaluate is None:
        if name not in _BUILTIN:
            raise ValueError(f"unknown activation {name!r}")
        evaluate, sup = _BUILTIN[name]
        sup_norm = sup if sup_norm is None else sup_norm
    elif sup_norm is None:
        raise ValueError("custom activations need sup_norm")
    nodes = quad_nodes or 2 * S_max + 32
    a = hermite_coeffs(evaluate, S_max, nodes)
    l2 = sqrt(gauss_expectation(lambda t: evaluate(t) ** 2, nodes))
    if np.sum(a ** 2) > l2 ** 2 + 1e-6:
        raise QuadratureError("Parseval partial sum exceeds the squared norm")
    kp = select_kprime(a, K, coeff_tol)
    return ActivationSpec(name, evaluate, a, l2, float(sup_norm), kp, coeff_tol, K)


def activation_from_table(coeffs, K: int = 1, sup_norm: float = 1.0, name: str = "table",
                          coeff_tol: float = 1e-10) -> ActivationSpec:
    """Activation defined by a finite Hermite table sigma = sum a_s h_s."""
    a = np.asarray(coeffs, dtype=float).copy()
    S = len(a) - 1

    def ev(x):
        return a @ hermite_table(S, x) if np.ndim(x) else float(a @ hermite_table(S, x)[:, 0])

    return ActivationSpec(name, ev, a, float(np.sqrt(np.sum(a ** 2))), float(sup_norm),
                          select_kprime(a, K, coeff_tol), coeff_tol, K, exact_table=True)


def _log_weight(s: int, j: int) -> float:
    # log of sqrt((s+2j)!/s!) / (j! 2^j)
    return 0.5 * (lgamma(s + 2 * j + 1) - lgamma(s + 1)) - lgamma(j + 1) - j * log(2.0)


def a_shifted_tail_bound(s: int, J: int, eps: float, spec: ActivationSpec) -> float:
    """Upper bound on |sum_{j>=J} a_{s+2j} c_j| where c_j is the series weight.

    Cauchy-Schwarz with the Parseval remainder of the coefficients and a
    geometric bound on the weights (their ratio decreases towards eps^2).
    """
    if eps == 0.0:
        return 0.0
    R = spec.parseval_remainder()
    idx = s + 2 * J
    rem = R[min(idx, len(R) - 1)]
    ratio = eps ** 2 * (s + 2 * J + 1) * (s + 2 * J + 2) / (4.0 * (J + 1) ** 2)
    ratio = max(ratio, eps ** 2)
    if ratio >= 1.0:
        return float("inf")
    c_J = exp(_log_weight(s, J) + J * log(eps))
    return float(rem * c_J / sqrt(1.0 - ratio))


def a_shifted(s: int, r: float, spec: ActivationSpec, tail_tol: float = 1e-12) -> float:
    """a_s(r) = sum_j a_{s+2j} sqrt((s+2j)!/s!) (r^2-1)^j / (j! 2^j).

    Defined for |1 - r^2| < 1/2. Terms are added until the bound on the
    remaining tail drops below tail_tol.
    """
    d = r * r - 1.0
    if not abs(d) < 0.5:
        raise ValueError("a_shifted needs |1 - r^2| < 1/2")
    a = spec.hermite_coeffs
    if s >= len(a):
        raise ValueError("s beyond coefficient table")
    total = float(a[s])
    if d == 0.0:
        return total
    eps = abs(d)
    j = 1
    while True:
        if a_shifted_tail_bound(s, j, eps, spec) < tail_tol:
            return total
        if spec.exact_table and s + 2 * j >= len(a):
            return total
        if s + 2 * j >= len(a):
            raise ValueError("coefficient table exhausted before tail_tol was met")
        total += float(a[s + 2 * j]) * np.sign(d) ** j * exp(_log_weight(s, j) + j * log(eps))
        j += 1


def a_shifted_lemma_bound(s: int, r: float, spec: ActivationSpec) -> float:
    """The stated envelope ||sigma|| 2^{(s+2)/2} |1-r^2| / sqrt(1-2(1-r^2)^2)."""
    e = abs(1.0 - r * r)
    return spec.l2_norm * 2 ** ((s + 2) / 2) * e / sqrt(1.0 - 2 * e * e)


@dataclass
class KernelQuery:
    x: np.ndarray
    y: np.ndarray
    beta: float
    series_terms: int = 32

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise ValueError("x and y must be vectors of equal length")
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError("beta must lie in [0, 1]")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("x, y must be finite")

    @property
    def n(self) -> int:
        return self.x.size

    def radii(self):
        b2 = self.beta ** 2
        n = self.n
        rx = sqrt((1 - b2) * float(self.x @ self.x) / n + b2)
        ry = sqrt((1 - b2) * float(self.y @ self.y) / n + b2)
        rho = (1 - b2) * float(self.x @ self.y) / n + b2
        return rx, ry, rho


def _scaled_energy(r: float, spec: ActivationSpec, nodes: int = 400) -> float:
    # E sigma(r X)^2 = sum_s a_s(r)^2 r^{2s}
    return gauss_expectation(lambda t: spec.evaluate(r * t) ** 2, nodes)


def kernel_analytic(q: KernelQuery, spec: ActivationSpec, tail_tol: float = 1e-12):
    """Series value of k(x, y) = E sigma(w.x + b) sigma(w.y + b).

    Returns (value, tail) where tail bounds the truncated part of the series
    by Cauchy-Schwarz on the per-point Hermite energies.
    """
    S = q.series_terms
    if S > spec.S_max:
        raise ValueError("series_terms exceeds the coefficient table")
    rx, ry, rho = q.radii()
    if abs(rho) > rx * ry * (1 + 1e-12) + 1e-12:
        raise ValueError("correlation argument exceeds 1 in magnitude")
    ax = np.array([a_shifted(s, rx, spec, tail_tol) for s in range(S + 1)])
    ay = ax if (q.x is q.y or rx == ry) else np.array([a_shifted(s, ry, spec, tail_tol) for s in range(S + 1)])
    powers = rho ** np.arange(S + 1)
    value = float(np.sum(ax * ay * powers))
    ex = np.sum((ax * rx ** np.arange(S + 1)) ** 2)
    ey = np.sum((ay * ry ** np.arange(S + 1)) ** 2)
    tx = max(_scaled_energy(rx, spec) - ex, 0.0)
    ty = max(_scaled_energy(ry, spec) - ey, 0.0)
    tail = sqrt(tx * ty) + (S + 1) * tail_tol * 4
    return value, tail


def kernel_mc(q: KernelQuery, spec: ActivationSpec, samples: int, seed=0, chunk: int = 50_000):
    """Monte Carlo estimate of the kernel with its standard error."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    n = q.n
    sw = sqrt((1 - q.beta ** 2) / n)
    vals = np.empty(samples)
    done = 0
    while done < samples:
        c = min(chunk, samples - done)
        W = rng.standard_normal((c, n)) * sw
        b = rng.standard_normal(c) * q.beta
        vals[done:done + c] = spec.evaluate(W @ q.x + b) * spec.evaluate(W @ q.y + b)
        done += c
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / sqrt(samples)) if samples > 1 else float("inf")
    return est, se


def beta_condition(beta: float, spec: ActivationSpec) -> float:
    """(||sigma||/a_K') 2^{(K'+2)/2} (1-beta^2) / sqrt(1 - 2(1-beta^2)^2)."""
    e = 1.0 - beta * beta
    aK = abs(spec.hermite_coeffs[spec.kprime])
    return spec.l2_norm / aK * 2 ** ((spec.kprime + 2) / 2) * e / sqrt(1.0 - 2 * e * e)


def beta_threshold(spec: ActivationSpec, eps: float, tol: float = 1e-10) -> float:
    """Smallest beta in [3/4, 1) whose condition value is <= eps/2 (bisection)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    target = eps / 2
    lo = 0.75
    if beta_condition(lo, spec) <= target:
        return lo
    hi = 1.0 - 1e-15
    if beta_condition(hi, spec) > target:
        raise ValueError("no beta < 1 satisfies the threshold condition")
    # condition is increasing in 1 - beta^2, hence decreasing in beta
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if beta_condition(mid, spec) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def delta_bound(eps: float, beta: float, q: int, M: float, n: int, spec: ActivationSpec,
                K: int | None = None, const: float = 512.0) -> float:
    """Failure probability of the random-features approximation.

    1 when the weight-norm condition exceeds one, otherwise
    2 exp(-q a^4 beta^{4K'-4K} (1-beta^2)^{2K} eps^4 / (const n^{2K} M^4 ||sigma||_inf^4)),
    capped at 1 since it bounds a probability.
    """
    K = spec.K if K is None else K
    Kp = spec.kprime
    aK = spec.hermite_coeffs[Kp]
    e = 1.0 - beta * beta
    norm_cond = (4 * spec.sup_norm / (eps * sqrt(q))) / (aK ** 2 * beta ** (2 * Kp - 2 * K)) \
        * (n / e) ** K * M ** 2
    if norm_cond > 1:
        return 1.0
    expo = q * aK ** 4 * beta ** (4 * Kp - 4 * K) * e ** (2 * K) * eps ** 4 \
        / (const * n ** (2 * K) * M ** 4 * spec.sup_norm ** 4)
    return min(1.0, 2.0 * exp(-expo))
