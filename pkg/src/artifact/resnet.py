"""Residual architecture with random first-layer weights per block.

Layer 1:  Gamma^1 = W^1_2 sigma(W^1_1 E(x) + b^1)
Layer k:  Gamma^k = Gamma^{k-1} + W^k_2 sigma(W^k_1 E(Gamma^{k-1}) + b^k)
Output:   f_hat^k = W^D Gamma^k, applied per location.

Arrays carry a location axis: inputs (m, T, d), hidden states (m, T, n).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hermite import ActivationSpec, make_activation
from .hierarchy import ProximityMap, make_proximity, proximity_concat


@dataclass
class XavierPair:
    W: np.ndarray
    b: np.ndarray
    beta: float


def xavier_pair(rng, q: int, fan_in: int, beta: float) -> XavierPair:
    """W_ij ~ N(0, (1-beta^2)/fan_in), b_i ~ N(0, beta^2), drawn in that order."""
    if not (0.0 <= beta <= 1.0):
        raise ValueError("beta must lie in [0, 1]")
    W = rng.standard_normal((q, fan_in)) * np.sqrt((1.0 - beta ** 2) / fan_in)
    b = rng.standard_normal(q) * beta
    return XavierPair(W, b, beta)


def random_orthogonal(rng, n: int) -> np.ndarray:
    """QR of a Gaussian matrix with the positive-diagonal sign convention."""
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


@dataclass
class ResNetParams:
    d: int
    n: int
    q_width: int
    D: int
    proximity: ProximityMap
    beta: float
    W1: list            # W^k_1 for k = 1..D-1 (index k-1)
    b: list
    W2: list            # W^k_2, (n, q)
    WD: np.ndarray
    activation: ActivationSpec = field(repr=False)
    seed: int | None = None

    @property
    def w(self) -> int:
        return self.proximity.w

    def orthogonality_error(self) -> float:
        return float(np.max(np.abs(self.WD @ self.WD.T - np.eye(self.n))))

    def check(self, tol: float = 1e-8):
        if self.orthogonality_error() > tol:
            raise ValueError("W^D is not orthogonal")
        for k in range(1, self.D):
            fan = self.w * (self.d if k == 1 else self.n)
            if self.W1[k - 1].shape != (self.q_width, fan) or self.b[k - 1].shape != (self.q_width,) \
                    or self.W2[k - 1].shape != (self.n, self.q_width):
                raise ValueError(f"layer {k} has inconsistent shapes")


def init_network(d: int, n: int, q_width: int, D: int, proximity: ProximityMap | None = None,
                 beta: float = 0.5, orthogonal_mode: str = "random", seed=0,
                 activation: ActivationSpec | None = None) -> ResNetParams:
    """Random first-layer pairs, zero second layers, orthogonal output matrix."""
    if D < 2 or q_width < 1 or d < 1 or n < 1:
        raise ValueError("invalid network dimensions")
    proximity = proximity or make_proximity("singleton")
    activation = activation or make_activation("tanh")
    rng = np.random.default_rng(seed)
    W1, b, W2 = [], [], []
    for k in range(1, D):
        fan = proximity.w * (d if k == 1 else n)
        pair = xavier_pair(rng, q_width, fan, beta)
        W1.append(pair.W)
        b.append(pair.b)
        W2.append(np.zeros((n, q_width)))
    if orthogonal_mode == "random":
        WD = random_orthogonal(rng, n)
    elif orthogonal_mode == "identity":
        WD = np.eye(n)
    else:
        raise ValueError(f"unknown orthogonal_mode {orthogonal_mode!r}")
    p = ResNetParams(d, n, q_width, D, proximity, beta, W1, b, W2, WD, activation, seed)
    p.check()
    return p


def features(params: ResNetParams, k: int, gamma_prev) -> np.ndarray:
    """Phi^{k-1} = sigma(W^k_1 E(Gamma^{k-1}) + b^k), shape (..., T, q)."""
    if not (1 <= k <= params.D - 1):
        raise ValueError("k must lie in 1..D-1")
    E = proximity_concat(params.proximity, gamma_prev)
    return params.activation.evaluate(E @ params.W1[k - 1].T + params.b[k - 1])


def forward(params: ResNetParams, X, upto: int | None = None, trained_mask=None):
    """(Gamma^k, f_hat^k) for k = upto (default D-1).

    upto = 0 returns the input itself for both. trained_mask (length D-1)
    switches individual blocks off; a switched-off residual block is the
    identity and a switched-off first block outputs zero.
    """
    k = params.D - 1 if upto is None else upto
    if not (0 <= k <= params.D - 1):
        raise ValueError("upto must lie in 0..D-1")
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != params.d:
        raise ValueError("input dimension mismatch")
    if k == 0:
        return X, X
    mask = [True] * (params.D - 1) if trained_mask is None else list(trained_mask)
    gamma = None
    for j in range(1, k + 1):
        if j == 1:
            if mask[0]:
                gamma = features(params, 1, X) @ params.W2[0].T
            else:
                gamma = np.zeros(X.shape[:-1] + (params.n,))
        elif mask[j - 1]:
            gamma = gamma + features(params, j, gamma) @ params.W2[j - 1].T
    return gamma, gamma @ params.WD.T


def gamma_step(params: ResNetParams, k: int, gamma_prev, X=None):
    """Gamma^k from Gamma^{k-1} (X is the raw input, used for k = 1)."""
    if k == 1:
        return features(params, 1, X) @ params.W2[0].T
    return gamma_prev + features(params, k, gamma_prev) @ params.W2[k - 1].T
