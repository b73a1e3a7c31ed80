"""Layerwise training.

Each block is trained with the earlier blocks frozen and the deeper blocks at
zero. After the change of variables W = W^D W^k_2 the problem splits into one
strongly convex problem per label j,

    min_w  (1/N) sum_i l(y_i (r_i + <w, phi_i>)) + (eps_opt/2) |w|^2,

with r the current prediction and phi the block's random features. The loss
l is piecewise linear on [0, 1] and +inf outside.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from math import exp

import numpy as np
from threadpoolctl import threadpool_limits

from .hierarchy import Dataset, proximity_concat
from .resnet import ResNetParams, features, gamma_step


# ---------------------------------------------------------------- losses

@dataclass(frozen=True)
class LossParams:
    B: float
    xi: float
    m: int
    G_size: int = 1
    barrier: float | None = None

    def __post_init__(self):
        if self.B < 1 or not (0 < self.xi <= 1):
            raise ValueError("need B >= 1 and 0 < xi <= 1")
        if not (self.eta1 < self.eta2 < 1):
            raise ValueError("need 1/(2B) < 1 - xi/2")
        if self.barrier is None:
            object.__setattr__(self, "barrier", self.min_barrier)
        if self.barrier < self.min_barrier:
            raise ValueError(f"barrier slope must be >= {self.min_barrier}")

    @property
    def min_barrier(self) -> float:
        return 1e4 * max(2 * self.B, 1 / self.xi)

    @property
    def eta1(self) -> float:
        return 1.0 / (2 * self.B)

    @property
    def eta2(self) -> float:
        return 1.0 - self.xi / 2

    @property
    def mix(self) -> float:
        return 1.0 / (4 * self.m * self.G_size)

    @property
    def gamma(self) -> float:
        return min(1.0 / self.B, self.xi) / 32.0

    def eps_opt_condition(self) -> float:
        """Largest eps_opt allowed by the theory: (1 - e^-gamma) xi / (16 m^2 |G|^2)."""
        return (1 - exp(-self.gamma)) * self.xi / (16.0 * self.m ** 2 * self.G_size ** 2)


def base_loss(z, eta: float, barrier: float = np.inf):
    """l_eta(z) = max(0, 1 - z/eta) on [0, 1].

    Outside [0, 1] the value is boundary value + barrier * distance; with the
    default barrier = inf this is the extended value +inf.
    """
    z = np.asarray(z, dtype=float)
    zc = np.clip(z, 0.0, 1.0)
    val = np.maximum(0.0, 1.0 - zc / eta)
    dist = np.abs(z - zc)
    out = np.where(dist > 0, val + (barrier * dist if np.isfinite(barrier) else np.inf), val)
    return float(out) if out.ndim == 0 else out


def infeasible(z, tol: float = 0.0):
    z = np.asarray(z, dtype=float)
    return (z < -tol) | (z > 1 + tol)


def margin_loss(z, lp: LossParams, barrier: float | None = np.inf):
    """l(z) = l_{eta1}(z) + l_{eta2}(z) / (4 m |G|).

    barrier=None uses the optimizer surrogate lp.barrier, inf the true value.
    The barrier term is added once, to the sum, as in PiecewiseLoss.surrogate.
    """
    lam = lp.barrier if barrier is None else barrier
    z = np.asarray(z, dtype=float)
    zc = np.clip(z, 0.0, 1.0)
    inside = base_loss(zc, lp.eta1) + lp.mix * base_loss(zc, lp.eta2)
    dist = np.abs(z - zc)
    out = np.where(dist > 0, inside + (lam * dist if np.isfinite(lam) else np.inf), inside)
    return float(out) if out.ndim == 0 else out


def robust_loss(z, eps: float, lp: LossParams, barrier: float | None = np.inf):
    """max(l(z), l(z - eps))."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    return np.maximum(margin_loss(z, lp, barrier), margin_loss(np.asarray(z) - eps, lp, barrier))


class PiecewiseLoss:
    """The loss on [0, 1] as breakpoints, values and segment slopes."""

    def __init__(self, lp: LossParams):
        self.bp = np.array([0.0, lp.eta1, lp.eta2, 1.0])
        self.val = np.asarray(margin_loss(self.bp, lp), dtype=float)
        self.slopes = np.diff(self.val) / np.diff(self.bp)
        self.barrier = lp.barrier

    def value(self, z, feas_tol: float = 0.0):
        z = np.asarray(z, dtype=float)
        v = np.interp(np.clip(z, 0.0, 1.0), self.bp, self.val)
        return np.where(infeasible(z, feas_tol), np.inf, v)

    def surrogate(self, z):
        z = np.asarray(z, dtype=float)
        zc = np.clip(z, 0.0, 1.0)
        return np.interp(zc, self.bp, self.val) + self.barrier * np.abs(z - zc)

    def surrogate_slope(self, z):
        """A subgradient of the surrogate (right derivative inside [0, 1))."""
        z = np.asarray(z, dtype=float)
        seg = np.clip(np.searchsorted(self.bp, z, side="right") - 1, 0, 2)
        g = self.slopes[seg]
        g = np.where(z < 0, -self.barrier, g)
        return np.where(z >= 1, self.barrier, g)

    def conj(self, u):
        """l*(u) = max_{z in [0,1]} (u z - l(z)), attained at a breakpoint."""
        u = np.asarray(u, dtype=float)
        return np.max(u[..., None] * self.bp - self.val, axis=-1)

    def prox(self, p, rho):
        """argmin_z l(z) + rho/2 (z - p)^2 over [0, 1]."""
        z = np.maximum(p - self.slopes[0] / rho, 0.0)
        for k in (1, 2):
            z = np.where(z > self.bp[k], np.maximum(self.bp[k], p - self.slopes[k] / rho), z)
        return np.minimum(z, 1.0)


def layer_objective(w, residual, phi, labels, lp: LossParams, eps_opt: float, weights=None):
    """Surrogate objective of one label and a subgradient.

    residual (N,), phi (N, q), labels (N,) are flattened over samples and
    locations; weights default to 1/N.
    """
    pl = PiecewiseLoss(lp)
    y = np.asarray(labels, dtype=float)
    om = np.full(y.size, 1.0 / y.size) if weights is None else np.asarray(weights, dtype=float)
    z = y * (residual + phi @ w)
    val = float(om @ pl.surrogate(z)) + 0.5 * eps_opt * float(w @ w)
    g = phi.T @ (om * y * pl.surrogate_slope(z)) + eps_opt * w
    return val, g


# ---------------------------------------------------------------- config / trace

@dataclass
class TrainConfig:
    eps_opt: float = 1e-4
    max_iters: int = 5000
    method: str = "admm"            # admm | subgradient | exact
    rho: float | None = None        # ADMM penalty, default 30 * eps_opt
    relax: float = 1.6
    check_every: int = 25
    box_shrink: float = 1e-6
    step_c: float = 1.0             # subgradient step c / (eps_opt t)
    feas_tol: float = 1e-9
    parallel: bool = False
    workers: int = 1                # label solves run concurrently when parallel

    def __post_init__(self):
        if self.eps_opt <= 0:
            raise ValueError("eps_opt must be positive")
        if self.method not in ("admm", "subgradient", "exact"):
            raise ValueError(f"unknown method {self.method!r}")


TRACE_COLUMNS = ("layer", "label", "loss", "worst_margin", "feasible", "cert", "iters", "status")


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)     # one dict per (layer, label)
    layers: list = field(default_factory=list)      # one dict per layer
    meta: dict = field(default_factory=dict)

    def loss_matrix(self) -> np.ndarray:
        """(layers, labels) array of training losses."""
        L = max(r["layer"] for r in self.records)
        n = max(r["label"] for r in self.records) + 1
        M = np.full((L, n), np.nan)
        for r in self.records:
            M[r["layer"] - 1, r["label"]] = r["loss"]
        return M

    def margin_matrix(self) -> np.ndarray:
        L = max(r["layer"] for r in self.records)
        n = max(r["label"] for r in self.records) + 1
        M = np.full((L, n), np.nan)
        for r in self.records:
            M[r["layer"] - 1, r["label"]] = r["worst_margin"]
        return M


@dataclass
class LabelResult:
    w: np.ndarray
    objective: float
    gap: float
    iters: int
    status: str


# ---------------------------------------------------------------- solvers

@dataclass
class LayerProblem:
    """Shared data of one layer's per-label problems (rows deduplicated)."""
    Psi: np.ndarray        # (Nu, r) features in the right singular basis
    V: np.ndarray          # (q, r) basis, w = V @ w_tilde
    s2: np.ndarray         # (r,) eigenvalues of Psi^T diag(om) Psi
    om: np.ndarray         # (Nu,) row weights summing to one
    C: np.ndarray          # (Nu, n) y * residual
    Y: np.ndarray          # (Nu, n)
    group: np.ndarray      # (Nu,) rows with equal (phi, residual) share an id


def pinned_rows(prob: LayerProblem, j: int) -> np.ndarray:
    """Rows whose margin is forced to 0: an identical input carries the other
    label, so z and -z must both lie in [0, 1]. Only rows with zero residual
    margin are pinned; otherwise the current prediction is already infeasible."""
    y = prob.Y[:, j]
    ng = int(prob.group.max()) + 1 if prob.group.size else 0
    both = (np.bincount(prob.group, weights=y > 0, minlength=ng) > 0) \
        & (np.bincount(prob.group, weights=y < 0, minlength=ng) > 0)
    return both[prob.group] & (prob.C[:, j] == 0.0)


def build_problem(phi, residual, Y) -> LayerProblem:
    """Merge identical (phi, residual, y) rows and diagonalize the weighted Gram."""
    N = phi.shape[0]
    key = np.column_stack([phi, residual, Y])
    _, first, inv, cnt = np.unique(key, axis=0, return_index=True, return_inverse=True,
                                   return_counts=True)
    order = np.argsort(first)               # keep first-appearance order
    first, cnt = first[order], cnt[order]
    om = cnt / N
    P = phi[first]
    _, sv, Vt = np.linalg.svd(np.sqrt(om)[:, None] * P, full_matrices=False)
    V = Vt.T
    _, group = np.unique(np.column_stack([P, residual[first]]), axis=0, return_inverse=True)
    return LayerProblem(P @ V, V, sv ** 2, om, Y[first] * residual[first], Y[first],
                        group.reshape(-1))


def _repair(c, aw):
    """Largest t in [0, 1] with c + t aw inside [0, 1] (c assumed feasible)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t_up = np.where(aw > 0, (1.0 - c) / aw, np.inf)
        t_lo = np.where(aw < 0, -c / aw, np.inf)
    return float(min(1.0, np.min(t_up), np.min(t_lo)))


def _primal(pl, om, c, aw, wt, lam, feas_tol):
    return float(om @ pl.value(c + aw, feas_tol)) + 0.5 * lam * float(wt @ wt)


def _dual(pl, om, c, y, u, Psi, lam, pinned=None):
    atu = Psi.T @ (om * y * u)
    conj = pl.conj(u)
    if pinned is not None:
        conj = np.where(pinned, -pl.val[0], conj)      # loss restricted to z = 0
    return -float(om @ (conj - u * c)) - float(atu @ atu) / (2 * lam)


def _null_projector(rows):
    """w -> projection of w onto {w : rows @ w = 0}."""
    if rows.shape[0] == 0:
        return lambda w: w
    _, s, Vt = np.linalg.svd(rows)
    rank = int(np.sum(s > 1e-12 * max(s[0], 1e-300)))
    N = Vt[rank:].T
    return lambda w: N @ (N.T @ w)


def solve_label_admm(prob: LayerProblem, j: int, pl: PiecewiseLoss, cfg: TrainConfig) -> LabelResult:
    """ADMM on z = c + A w with the [0, 1] box handled exactly in the z-step.

    The certificate is the duality gap between the feasibility-repaired
    iterate and the dual point given by the scaled multipliers. Pinned rows
    (see pinned_rows) get the box [0, 0].
    """
    lam = cfg.eps_opt
    tol = cfg.eps_opt / 2
    rho = cfg.rho if cfg.rho is not None else 30.0 * lam
    Psi, om, s2 = prob.Psi, prob.om, prob.s2
    c, y = prob.C[:, j], prob.Y[:, j]
    scale = rho / (lam + rho * s2)
    tau = cfg.box_shrink
    F = pinned_rows(prob, j)
    proj = _null_projector(Psi[F])
    z = np.where(F, 0.0, np.clip(c, tau, 1 - tau))
    v = np.zeros_like(c)
    wt = np.zeros(Psi.shape[1])
    zero_obj = _primal(pl, om, c, np.zeros_like(c), wt, lam, cfg.feas_tol)
    best = (zero_obj, wt.copy(), np.inf)
    gap = np.inf
    it = 0
    for it in range(1, cfg.max_iters + 1):
        wt = scale * (Psi.T @ (om * y * (z - c + v)))
        aw = y * (Psi @ wt)
        awr = cfg.relax * aw + (1 - cfg.relax) * (z - c)
        z = np.where(F, 0.0, np.clip(pl.prox(awr + c - v, rho), tau, 1 - tau))
        v = v + z - awr - c
        if it % cfg.check_every == 0 or it == cfg.max_iters:
            wp = proj(wt)
            aw = np.where(F, 0.0, y * (Psi @ wp))
            t = _repair(c, aw)
            P = _primal(pl, om, c, t * aw, t * wp, lam, cfg.feas_tol)
            Dv = _dual(pl, om, c, y, -rho * v, Psi, lam, F)
            gap = P - Dv
            if P < best[0] or (P == best[0] and gap < best[2]):
                best = (P, t * wp, gap)
            if gap <= tol:
                break
    P, wt_best, _ = best
    status = "converged" if gap <= tol else "non-converged"
    if P > zero_obj:
        wt_best, P = np.zeros_like(wt_best), zero_obj
    return LabelResult(prob.V @ wt_best, P, float(gap), it, status)


def solve_label_subgradient(prob: LayerProblem, j: int, pl: PiecewiseLoss,
                            cfg: TrainConfig) -> LabelResult:
    """Subgradient descent with step c / (eps_opt t) on the barrier surrogate.

    Stops on a subgradient norm <= eps_opt or a duality gap <= eps_opt / 2
    (the dual point is the loss subgradient at the best feasible iterate).
    """
    lam = cfg.eps_opt
    Psi, om = prob.Psi, prob.om
    c, y = prob.C[:, j], prob.Y[:, j]
    wt = np.zeros(Psi.shape[1])
    zero_obj = _primal(pl, om, c, np.zeros_like(c), wt, lam, cfg.feas_tol)
    best_obj, best_w, gap = zero_obj, wt.copy(), np.inf
    it = 0
    for it in range(1, cfg.max_iters + 1):
        aw = y * (Psi @ wt)
        z = c + aw
        slope = pl.surrogate_slope(z)
        g = Psi.T @ (om * y * slope) + lam * wt
        P = _primal(pl, om, c, aw, wt, lam, cfg.feas_tol)
        if P < best_obj:
            best_obj, best_w = P, wt.copy()
        if np.isfinite(P) and (it % cfg.check_every == 0 or it == 1):
            u = np.clip(slope, pl.slopes[0], 0.0)
            gap = P - _dual(pl, om, c, y, u, Psi, lam)
            if gap <= lam / 2:
                break
        if np.linalg.norm(g) <= lam and np.isfinite(P):
            gap = min(gap, float(np.dot(g, g)) / (2 * lam))
            break
        wt = wt - cfg.step_c / (lam * it) * g
    status = "converged" if gap <= lam / 2 else "non-converged"
    return LabelResult(prob.V @ best_w, best_obj, float(gap), it, status)


def solve_label_exact(prob: LayerProblem, j: int, pl: PiecewiseLoss, cfg: TrainConfig) -> LabelResult:
    """Interior-point solution through cvxpy (small instances)."""
    import cvxpy as cp
    lam = cfg.eps_opt
    Psi, om = prob.Psi, prob.om
    c, y = prob.C[:, j], prob.Y[:, j]
    w = cp.Variable(Psi.shape[1])
    z = c + cp.multiply(y, Psi @ w)
    # the loss is the max of its affine pieces on [0, 1]
    pieces = [pl.val[k] + pl.slopes[k] * (z - pl.bp[k]) for k in range(3)]
    loss = cp.maximum(*pieces)
    obj = om @ loss + lam / 2 * cp.sum_squares(w)
    prob_cp = cp.Problem(cp.Minimize(obj), [z >= 0, z <= 1])
    prob_cp.solve(solver=cp.CLARABEL)
    wt = np.asarray(w.value, dtype=float)
    aw = y * (Psi @ wt)
    t = _repair(c, aw)
    P = _primal(pl, om, c, t * aw, t * wt, lam, cfg.feas_tol)
    return LabelResult(prob.V @ (t * wt), P, float("nan"), 0, "exact")


_SOLVERS = {"admm": solve_label_admm, "subgradient": solve_label_subgradient,
            "exact": solve_label_exact}


# ---------------------------------------------------------------- layers

def layer_inputs(params: ResNetParams, k: int, X, gamma_prev):
    """Flattened (phi, residual) for block k; the first block has no residual."""
    src = X if k == 1 else gamma_prev
    phi = features(params, k, src)
    q = params.q_width
    if k == 1:
        res = np.zeros(phi.shape[:-1] + (params.n,))
    else:
        res = gamma_prev @ params.WD.T
    return phi.reshape(-1, q), res.reshape(-1, params.n)


def train_layer(params: ResNetParams, k: int, dataset: Dataset, lp: LossParams, cfg: TrainConfig,
                gamma_prev=None, labels=None):
    """Fit block k for every label; updates params.W2[k-1] in place.

    Returns (params, results) with one LabelResult per label. Each label is
    solved on its own, in label order, so the stacked result equals the
    per-label solves exactly.
    """
    if k > 1 and gamma_prev is None:
        from .resnet import forward
        gamma_prev, _ = forward(params, dataset.X, upto=k - 1)
    for j in range(k, params.D - 1):
        if np.any(params.W2[j]):
            raise ValueError("deeper blocks must be zero before training block k")
    phi, res = layer_inputs(params, k, dataset.X, gamma_prev)
    Y = dataset.Y.reshape(-1, params.n)
    prob = build_problem(phi, res, Y)
    pl = PiecewiseLoss(lp)
    solver = _SOLVERS[cfg.method]
    todo = range(params.n) if labels is None else labels
    # single-threaded BLAS inside the solves fixes every reduction order
    with threadpool_limits(1):
        if cfg.parallel:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as ex:
                results = list(ex.map(lambda j: solver(prob, j, pl, cfg), todo))
        else:
            results = [solver(prob, j, pl, cfg) for j in todo]
    Wstack = np.zeros((params.n, params.q_width))
    for j, r in zip(todo, results):
        Wstack[j] = r.w
    params.W2[k - 1] = params.WD.T @ Wstack
    return params, results


def empirical_loss(fhat, Y, lp: LossParams, feas_tol: float = 1e-9):
    """Per-label l_{S,j}: mean over samples and locations, +inf when infeasible."""
    pl = PiecewiseLoss(lp)
    Z = (np.asarray(fhat) * np.asarray(Y)).reshape(-1, np.shape(Y)[-1])
    return pl.value(Z, feas_tol).mean(axis=0)


def margin_error(predictions, labels, gamma: float) -> float:
    """Fraction of samples with some (label, location) margin below gamma."""
    P = np.asarray(predictions, dtype=float)
    Yl = np.asarray(labels, dtype=float)
    if P.shape != Yl.shape:
        raise ValueError("shape mismatch")
    m = P.shape[0]
    if m == 0:
        return 0.0
    bad = (P * Yl < gamma).reshape(m, -1).any(axis=1)
    return float(bad.mean())


def train_all(params: ResNetParams, dataset: Dataset, lp: LossParams, cfg: TrainConfig) -> TrainTrace:
    """Train blocks 1..D-1 in order and record per-layer, per-label metrics.

    BLAS runs single-threaded so the trace does not depend on the machine's
    thread count; concurrency comes from cfg.parallel / cfg.workers instead.
    """
    with threadpool_limits(1):
        return _train_all(params, dataset, lp, cfg)


def _train_all(params, dataset, lp, cfg):
    trace = TrainTrace(meta={"eps_opt": cfg.eps_opt, "method": cfg.method,
                             "gamma": lp.gamma, "eps_opt_condition": lp.eps_opt_condition()})
    X, Y = dataset.X, dataset.Y
    gamma = None
    for k in range(1, params.D):
        params, results = train_layer(params, k, dataset, lp, cfg, gamma_prev=gamma)
        gamma = gamma_step(params, k, gamma, X)
        fhat = gamma @ params.WD.T
        Z = (fhat * Y).reshape(-1, params.n)
        losses = empirical_loss(fhat, Y, lp, cfg.feas_tol)
        for j, r in enumerate(results):
            zj = Z[:, j]
            trace.records.append({
                "layer": k, "label": j, "loss": float(losses[j]),
                "worst_margin": float(zj.min()),
                "feasible": bool(not infeasible(zj, cfg.feas_tol).any()),
                "cert": r.gap, "iters": r.iters, "status": r.status,
            })
        trace.layers.append({"layer": k,
                             "err0": margin_error(fhat, Y, 0.0),
                             "err_eta1": margin_error(fhat, Y, lp.eta1)})
    return trace
