"""Metrics and checks that tie training runs back to the theory.

Most functions here are pure functions of arrays or of a TrainTrace. The
``*_suite`` helpers bundle the scalar property checks used by the CLI and by
the acceptance tests; each returns a list of Check records.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from math import exp, sqrt

import numpy as np

from .hermite import (ActivationSpec, KernelQuery, beta_threshold, delta_bound, gauss_expectation,
                      hermite_eval, hermite_table, kernel_analytic, kernel_mc, make_activation)
from .hierarchy import (Hierarchy, alpha_dk, central_binom_ratio, chernoff_deviation_freq,
                        extended_chernoff_bound, gen_braindump, proximity_concat,
                        reconstruction_error)
from .ptf import poly_eval
from .resnet import xavier_pair
from .train import (LossParams, PiecewiseLoss, TrainTrace, base_loss, empirical_loss, margin_error,
                    robust_loss)

__all__ = ["margin_error", "MetricsReport", "metrics_report", "decay_report", "DecayRow",
           "nonincreasing_violations", "fact_loss_violations", "RfFitReport", "rf_fit",
           "rf_experiment", "robust_loss_audit", "pol_imp_audit", "cubic_push_grid",
           "Check", "hermite_suite", "kernel_suite", "braindump_suite", "loss_suite", "rf_suite"]


@dataclass
class Check:
    name: str
    passed: bool
    value: object = None
    detail: str = ""


# ---------------------------------------------------------------- trace metrics

@dataclass
class DecayRow:
    label: int
    status: str                 # below-threshold never | at-floor | pass | fail
    max_ratio: float
    pairs: int


def _floor(lp: LossParams, eps_opt: float) -> float:
    return eps_opt / (1.0 - exp(-lp.gamma))


def decay_report(trace: TrainTrace, lp: LossParams, eps_opt: float | None = None) -> list:
    """Per-label decay ratios (l^{k+1} - floor) / l^k over layers with l^k <= 1/(2m|G|).

    floor = eps_opt / (1 - e^-gamma) is the stationary level of the recursion.
    Pairs with l^k at or below the floor carry no information and are
    reported as at-floor. The flags are descriptive only.
    """
    eps_opt = trace.meta.get("eps_opt") if eps_opt is None else eps_opt
    Lm = trace.loss_matrix()
    thr = 1.0 / (2 * lp.m * lp.G_size)
    fl = _floor(lp, eps_opt)
    target = exp(-lp.gamma)
    rows = []
    for j in range(Lm.shape[1]):
        ratios, below, floor_hits = [], False, 0
        for k in range(Lm.shape[0] - 1):
            lk, lk1 = Lm[k, j], Lm[k + 1, j]
            if not (lk <= thr):
                continue
            below = True
            if lk <= fl:
                floor_hits += 1
                continue
            ratios.append((lk1 - fl) / lk)
        if not below:
            rows.append(DecayRow(j, "never-below-threshold", float("nan"), 0))
        elif not ratios:
            rows.append(DecayRow(j, "at-floor", float("nan"), floor_hits))
        else:
            mr = float(max(ratios))
            rows.append(DecayRow(j, "pass" if mr <= target else "fail", mr, len(ratios)))
    return rows


def nonincreasing_violations(trace: TrainTrace, lp: LossParams, eps_opt: float | None = None) -> list:
    """(layer, label) pairs where a label already below 1/(2m|G|) later
    increases its loss by more than eps_opt from one layer to the next."""
    eps_opt = trace.meta.get("eps_opt") if eps_opt is None else eps_opt
    Lm = trace.loss_matrix()
    thr = 1.0 / (2 * lp.m * lp.G_size)
    out = []
    for j in range(Lm.shape[1]):
        hit = False
        for k in range(Lm.shape[0] - 1):
            hit = hit or Lm[k, j] <= thr
            if hit and not (Lm[k + 1, j] <= Lm[k, j] + eps_opt):
                out.append((k + 2, j))
    return out


def degradation_violations(trace: TrainTrace, eps_opt: float | None = None, initial=None) -> list:
    """(layer, label) pairs with l^k > l^{k-1} + eps_opt. initial holds the
    layer-0 losses (the untrained network), compared against layer 1."""
    eps_opt = trace.meta.get("eps_opt") if eps_opt is None else eps_opt
    Lm = trace.loss_matrix()
    if initial is not None:
        Lm = np.vstack([np.asarray(initial, dtype=float)[None, :], Lm])
        off = 0
    else:
        off = 1
    bad = np.argwhere(~(Lm[1:] <= Lm[:-1] + eps_opt))
    return [(int(k) + 1 + off, int(j)) for k, j in bad]


def fact_loss_violations(trace: TrainTrace, lp: LossParams, tol: float = 1e-12) -> list:
    """Records whose worst margin is below (1 - loss m |G|) / (2B).

    A loss of eps/(m|G|) forces every margin above (1 - eps)/(2B) because a
    single sample contributes at least l_{eta1}(z)/(m|G|).
    """
    out = []
    for r in trace.records:
        if not r["feasible"] or not np.isfinite(r["loss"]):
            continue
        eps = r["loss"] * lp.m * lp.G_size
        if eps >= 1:
            continue
        lower = (1.0 - eps) * lp.eta1
        if r["worst_margin"] < lower - tol or r["worst_margin"] > 1 + tol:
            out.append((r["layer"], r["label"], r["worst_margin"], lower))
    return out


@dataclass
class MetricsReport:
    loss: np.ndarray                     # (layers, labels)
    err: list                            # per layer {"layer", "err0", "err_eta1"}
    acquisition: list                    # per level: first layer with all margins > 0, or None
    decay: list                          # DecayRow per label
    monotone_violations: list = field(default_factory=list)
    fact_violations: list = field(default_factory=list)

    def acquisition_monotone(self) -> bool:
        seen = [a for a in self.acquisition if a is not None]
        return all(a <= b for a, b in zip(seen, seen[1:]))

    def to_json(self) -> dict:
        return {
            "loss": [[float(v) for v in row] for row in self.loss],
            "err": self.err,
            "acquisition": self.acquisition,
            "decay": [r.__dict__ for r in self.decay],
            "monotone_violations": [list(v) for v in self.monotone_violations],
            "fact_violations": [list(v) for v in self.fact_violations],
        }

    def to_csv(self) -> str:
        """One row per layer: errors followed by the per-label losses."""
        n = self.loss.shape[1] if self.loss.size else 0
        head = ["layer", "err0", "err_eta1"] + [f"loss_{j}" for j in range(n)]
        rows = [",".join(head)]
        for k, e in enumerate(self.err):
            cells = [str(e["layer"]), repr(float(e["err0"])), repr(float(e["err_eta1"]))]
            rows.append(",".join(cells + [repr(float(v)) for v in self.loss[k]]))
        return "\n".join(rows) + "\n"

    def render(self) -> str:
        lines = ["layer  err0      err_eta1  mean_loss  max_loss"]
        for k, e in enumerate(self.err):
            row = self.loss[k]
            lines.append(f"{e['layer']:>5}  {e['err0']:<8.4f}  {e['err_eta1']:<8.4f}  "
                         f"{np.mean(row):<9.3e}  {np.max(row):.3e}")
        lines.append("")
        for i, a in enumerate(self.acquisition, start=1):
            lines.append(f"level {i}: acquired at layer {a if a is not None else '-'}")
        counts: dict = {}
        for r in self.decay:
            counts[r.status] = counts.get(r.status, 0) + 1
        lines.append("decay: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
        lines.append(f"monotonicity violations: {len(self.monotone_violations)}")
        lines.append(f"margin/loss violations: {len(self.fact_violations)}")
        return "\n".join(lines) + "\n"


def acquisition_layers(trace: TrainTrace, levels) -> list:
    M = trace.margin_matrix()
    out = []
    for L in levels:
        idx = np.asarray(L, dtype=int)
        ok = np.flatnonzero((M[:, idx] > 0).all(axis=1))
        out.append(int(ok[0]) + 1 if ok.size else None)
    return out


def metrics_report(trace: TrainTrace, lp: LossParams, levels=None) -> MetricsReport:
    levels = levels if levels is not None else trace.meta.get("levels", [])
    return MetricsReport(
        loss=trace.loss_matrix(),
        err=[dict(e) for e in trace.layers],
        acquisition=acquisition_layers(trace, levels) if levels else [],
        decay=decay_report(trace, lp),
        monotone_violations=nonincreasing_violations(trace, lp),
        fact_violations=fact_loss_violations(trace, lp),
    )


# ---------------------------------------------------------------- random features fit

@dataclass
class RfFitReport:
    q_width: int
    target_id: str
    weight_norm: float
    max_error: float
    delta: float | None = None
    eps: float | None = None
    condition: float = 1.0
    warning: str | None = None


def rf_fit(features, target, eps_fit: float = 1e-6, target_id: str = "", *,
           eps: float | None = None, beta: float | None = None, M: float | None = None,
           n: int | None = None, spec: ActivationSpec | None = None,
           cond_warn: float = 1e12) -> RfFitReport:
    """Ridge fit min |Phi w - p|^2 + eps_fit |w|^2 via the smaller Gram matrix.

    When eps, beta, M, n and spec are all given, the matching delta bound is
    attached. Poor conditioning is reported in the warning field.
    """
    Phi = np.asarray(features, dtype=float)
    p = np.asarray(target, dtype=float)
    if Phi.ndim != 2 or Phi.shape[0] != p.shape[0] or Phi.shape[0] < 1:
        raise ValueError("need features (N, q) and N target values, N >= 1")
    if eps_fit < 0:
        raise ValueError("eps_fit must be >= 0")
    N, q = Phi.shape
    dual = N <= q
    G = Phi @ Phi.T if dual else Phi.T @ Phi
    lam, U = np.linalg.eigh(G)
    shifted = lam + eps_fit
    lo = shifted.min()
    cond = float(shifted.max() / lo) if lo > 0 else float("inf")
    warning = None
    if not lo > 0:
        raise np.linalg.LinAlgError("ridge system is singular (eps_fit = 0 and rank deficient)")
    if cond > cond_warn:
        warning = f"ill-conditioned ridge system (condition {cond:.3e})"
    if dual:
        w = Phi.T @ (U @ ((U.T @ p) / shifted))
    else:
        w = U @ ((U.T @ (Phi.T @ p)) / shifted)
    if not np.all(np.isfinite(w)):
        raise np.linalg.LinAlgError("ridge solve produced non-finite weights")
    err = float(np.max(np.abs(Phi @ w - p)))
    delta = None
    if None not in (eps, beta, M, n, spec):
        delta = delta_bound(eps, beta, q, M, n, spec)
    return RfFitReport(q, target_id, float(np.linalg.norm(w)), err, delta, eps, cond, warning)


def quadratic_target(X, rng):
    """Random multilinear degree-2 polynomial normalized so max |p| = 1 on X.

    Returns (values, coefficient norm)."""
    n = X.shape[1]
    mons = [()] + [(i,) for i in range(n)] + list(itertools.combinations(range(n), 2))
    c = rng.standard_normal(len(mons))
    P = np.stack([np.prod(X[:, list(m)], axis=1) if m else np.ones(len(X)) for m in mons], 1)
    p = P @ c
    s = np.max(np.abs(p))
    return p / s, float(np.linalg.norm(c) / s)


def rf_experiment(n: int = 8, q_width: int = 4096, beta: float | None = None, seed=0,
                  points: int = 512, eps: float = 0.1, eps_fit: float = 1e-6,
                  spec: ActivationSpec | None = None) -> RfFitReport:
    """Fit a random normalized quadratic on random boolean points with q_width
    beta-Xavier features. Points, target and features share one seeded stream."""
    spec = spec or make_activation("tanh", K=2)
    beta = beta_threshold(spec, eps) if beta is None else beta
    rng = np.random.default_rng(seed)
    X = rng.choice([-1.0, 1.0], size=(points, n))
    p, M = quadratic_target(X, rng)
    pair = xavier_pair(rng, q_width, n, beta)
    Phi = spec.evaluate(X @ pair.W.T + pair.b)
    return rf_fit(Phi, p, eps_fit, f"quad-n{n}-seed{seed}", eps=eps, beta=beta, M=M, n=n, spec=spec)


# ---------------------------------------------------------------- robust loss

@dataclass
class AuditResult:
    values: np.ndarray          # per label
    infeasible: np.ndarray      # per label


def robust_loss_audit(predictions, labels, eps: float, lp: LossParams,
                      feas_tol: float = 1e-9) -> AuditResult:
    """Sample-averaged robust loss per label (last axis); +inf with the
    infeasible flag when some margin minus eps leaves [0, 1]. Uses the same
    evaluation as empirical_loss, so eps = 0 reproduces it exactly."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    Z = (np.asarray(predictions, dtype=float) * np.asarray(labels, dtype=float))
    Z = Z.reshape(-1, Z.shape[-1]) if Z.ndim > 1 else Z[:, None]
    pl = PiecewiseLoss(lp)
    vals = np.maximum(pl.value(Z, feas_tol), pl.value(Z - eps, feas_tol))
    return AuditResult(vals.mean(axis=0), ~np.isfinite(vals).all(axis=0))


def pol_imp_audit(params, dataset, hierarchy: Hierarchy, trace: TrainTrace, lp: LossParams,
                  eps1: float | None = None) -> list:
    """Evidence for: small robust loss of (witness / B) on layer-k outputs
    implies layer k+1 loss <= that robust loss + eps_opt.

    Rows: (layer k, label, robust loss, next loss, holds). The beta actually
    used and the threshold beta(eps1/2) are attached to every row.
    """
    from .resnet import forward
    eps1 = lp.gamma if eps1 is None else eps1
    eps_opt = trace.meta["eps_opt"]
    Lm = trace.loss_matrix()
    beta_req = beta_threshold(params.activation, eps1 / 2)
    rows = []
    gam = None
    for k in range(0, params.D - 1):
        if k == 0:
            fh = dataset.X
        else:
            gam, fh = forward(params, dataset.X, upto=k)
        for i in range(1, hierarchy.r + 1):
            if i == 1:
                src = dataset.X
            elif k == 0:
                continue
            else:
                src = fh[..., hierarchy.levels[i - 2]]
            E = proximity_concat(hierarchy.proximity, src)
            flat = E.reshape(-1, E.shape[-1])
            for j in hierarchy.new_labels(i):
                claim = hierarchy.witnesses[j]
                vals = poly_eval(claim.witness, flat) / claim.B
                res = robust_loss_audit(vals, dataset.Y[..., j].reshape(-1), eps1, lp)
                rob = float(res.values[0])
                nxt = float(Lm[k, j])
                rows.append({"layer": k, "label": j, "robust": rob, "next": nxt,
                             "holds": bool(nxt <= rob + eps_opt) if np.isfinite(rob) else None,
                             "beta": params.beta, "beta_required": beta_req})
    return rows


# ---------------------------------------------------------------- loss checks

def _raw_loss(z, B: float, xi: float, mix: float):
    return base_loss(z, 1.0 / (2 * B)) + mix * base_loss(z, 1.0 - xi / 2)


def cubic_push_grid(B: float, xi: float, points: int = 100_000, mix: float = 0.25):
    """Count grid points x in [1/(4B), 1] with l(q(x) - gamma) > e^-gamma l(x)
    for q(x) = 1.5x - 0.5x^3. The loss is evaluated from its formula, so
    degenerate (B, xi) with 1/(2B) = 1 - xi/2 are accepted.

    Returns (violations, min slack)."""
    g = min(1.0 / B, xi) / 32.0
    x = np.linspace(1.0 / (4 * B), 1.0, points)
    qt = 1.5 * x - 0.5 * x ** 3
    lhs = _raw_loss(qt - g, B, xi, mix)
    rhs = exp(-g) * _raw_loss(x, B, xi, mix)
    return int(np.sum(lhs > rhs)), float(np.min(rhs - lhs))


CUBIC_GRID = ((1.0, 1.0), (2.0, 0.5), (3.0, 0.25), (10.0, 0.1))


def loss_suite(points: int = 100_000, mixes=(0.25, 1 / 40, 1 / 8000)) -> list:
    checks = []
    for B, xi in CUBIC_GRID:
        for mix in mixes:
            v, slack = cubic_push_grid(B, xi, points, mix)
            checks.append(Check(f"cubic_push B={B:g} xi={xi:g} mix={mix:.3g}", v == 0, v,
                                f"min slack {slack:.3e}"))
    lp = LossParams(3.0, 0.25, 10)
    checks.append(Check("loss(0) = 1 + mix", abs(float(np.asarray(
        empirical_loss(np.zeros((1, 1)), np.ones((1, 1)), lp))[0]) - (1 + lp.mix)) < 1e-15))
    checks.append(Check("loss at eta1", abs(_raw_loss(lp.eta1, lp.B, lp.xi, lp.mix)
                                          - lp.mix * (1 - lp.eta1 / lp.eta2)) < 1e-15))
    checks.append(Check("loss(1) = 0", _raw_loss(1.0, lp.B, lp.xi, lp.mix) == 0.0))
    checks.append(Check("negative margin infeasible", not np.isfinite(_raw_loss(-0.1, 3, 0.25, 0.1))))
    return checks


# ---------------------------------------------------------------- hermite and kernel checks

def hermite_suite(seed=0, samples: int = 400_000, max_deg: int = 12, corr_deg: int = 6) -> list:
    checks = []
    # orthonormality by quadrature
    G = np.array([[gauss_expectation(lambda x, i=i, j=j: hermite_eval(i, x) * hermite_eval(j, x), 64)
                   for j in range(max_deg + 1)] for i in range(max_deg + 1)])
    err = float(np.max(np.abs(G - np.eye(max_deg + 1))))
    checks.append(Check("orthonormality", err <= 1e-8, err))
    # E[h_i(X) h_j(Y)] = delta_ij rho^i
    rng = np.random.default_rng(seed)
    worst = 0.0
    for rho in (-0.5, 0.0, 0.7):
        X = rng.standard_normal(samples)
        Y = rho * X + sqrt(1 - rho * rho) * rng.standard_normal(samples)
        HX, HY = hermite_table(corr_deg, X), hermite_table(corr_deg, Y)
        for i in range(corr_deg + 1):
            for j in range(corr_deg + 1):
                prod = HX[i] * HY[j]
                dev = abs(prod.mean() - (rho ** i if i == j else 0.0))
                se = prod.std(ddof=1) / sqrt(samples)
                z = dev / se if se > 0 else (0.0 if dev < 1e-12 else np.inf)
                worst = max(worst, float(z))
    checks.append(Check("correlated product expectation", worst <= 4.0, worst, "max |z| score"))
    # derivative identity h_s' = sqrt(s) h_{s-1}
    xs = np.linspace(-3, 3, 25)
    h = 1e-5
    rel = 0.0
    for s in range(1, 9):
        fd = (hermite_eval(s, xs + h) - hermite_eval(s, xs - h)) / (2 * h)
        ref = sqrt(s) * hermite_eval(s - 1, xs)
        rel = max(rel, float(np.max(np.abs(fd - ref) / np.maximum(np.abs(ref), 1.0))))
    checks.append(Check("derivative identity", rel <= 1e-6, rel))
    return checks


def random_query_points(rng, n: int):
    """Direction uniform on the sphere, squared norm in [0.25 n, 1.69 n]."""
    u = rng.standard_normal(n)
    return u / np.linalg.norm(u) * sqrt(n) * rng.uniform(0.5, 1.3)


def kernel_suite(ns=(4, 16), betas=(0.8, 0.95), queries: int = 100, samples: int = 100_000,
                 seed=0, spec: ActivationSpec | None = None) -> list:
    spec = spec or make_activation("tanh")
    checks = []
    rng = np.random.default_rng(seed)
    t = 0
    for n in ns:
        for beta in betas:
            hits = 0
            for _ in range(queries):
                q = KernelQuery(random_query_points(rng, n), random_query_points(rng, n), beta)
                val, tail = kernel_analytic(q, spec)
                est, se = kernel_mc(q, spec, samples, seed=int(seed) * 100_003 + t)
                t += 1
                hits += abs(val - est) <= 3 * se + tail
            checks.append(Check(f"kernel agreement n={n} beta={beta}", hits >= 0.95 * queries,
                                hits, f"{hits}/{queries} within 3 stderr + tail"))
    # Gram matrices are PSD
    worst = np.inf
    for n in ns:
        pts = [random_query_points(rng, n) for _ in range(8)]
        K = np.array([[kernel_analytic(KernelQuery(a, b, 0.9), spec)[0] for b in pts] for a in pts])
        worst = min(worst, float(np.linalg.eigvalsh(K).min()))
    checks.append(Check("gram psd", worst >= -1e-8, worst))
    return checks


# ---------------------------------------------------------------- brain dump

def braindump_suite(d: int = 64, k: int = 5, q_labels: int = 20_000, trials: int = 100, seed=0,
                    chernoff_trials: int = 10_000) -> list:
    checks = []
    model = gen_braindump(d, 1, 1, k, q_labels, seed)
    rng = np.random.default_rng(seed + 1)
    xs = rng.choice([-1.0, 1.0], size=(trials, d))
    errs = np.array([reconstruction_error(model, 1, x) for x in xs])
    ok = int(np.sum(errs <= 0.25))
    checks.append(Check("reconstruction within 0.25", ok >= 0.95 * trials, ok,
                        f"{ok}/{trials}, median error {np.median(errs):.3f}"))
    W = model.weights[0].astype(float)
    x = xs[0]
    Xi = W * np.where(W @ x >= 0, 1.0, -1.0)[:, None]          # (q, d)
    a = float(alpha_dk(d, k))
    z = np.abs(Xi.mean(axis=0) - a * x) / (Xi.std(axis=0, ddof=1) / sqrt(q_labels))
    checks.append(Check("per-coordinate mean matches alpha x", float(z.max()) <= 4.0, float(z.max())))
    checks.append(Check("alpha(10,3) = 0.15", alpha_dk(10, 3) == Fraction(3, 20) and float(alpha_dk(10, 3)) == 0.15,
                        str(alpha_dk(10, 3))))
    ratios = [central_binom_ratio(kk) for kk in range(20, 201)]
    dev = max(abs(r - 1) for r in ratios)
    checks.append(Check("central binomial asymptotics (k >= 20)", dev <= 0.02, dev))
    worst = 0.0
    for p_plus, p_minus in ((0.6, 0.2), (0.3, 0.1), (0.5, 0.45), (0.9, 0.0)):
        mu, pnz = p_plus - p_minus, p_plus + p_minus
        for q in (50, 200, 1000):
            for eps in (0.1, 0.3, 0.5):
                emp = chernoff_deviation_freq(p_plus, p_minus, q, eps, chernoff_trials, seed)
                bound = extended_chernoff_bound(q, eps, mu, pnz)
                worst = max(worst, emp / min(bound, 1.0) if bound > 0 else (np.inf if emp else 0.0))
    checks.append(Check("extended chernoff", worst <= 2.0, worst, "max empirical / bound"))
    return checks


# ---------------------------------------------------------------- random features sweep

def rf_suite(n: int = 8, q_list=(512, 4096), seeds: int = 10, eps: float = 0.1) -> list:
    spec = make_activation("tanh", K=2)
    beta = beta_threshold(spec, eps)
    reports = {q: [rf_experiment(n, q, beta, s, eps=eps, spec=spec) for s in range(seeds)]
               for q in q_list}
    checks = []
    med = {q: float(np.median([r.max_error for r in reps])) for q, reps in reports.items()}
    qmax = max(q_list)
    good = sum(r.max_error <= eps for r in reports[qmax])
    checks.append(Check(f"max error <= {eps} at q={qmax}", good >= 0.9 * seeds, good,
                        f"{good}/{seeds} seeds"))
    qs = sorted(q_list)
    checks.append(Check("median error improves with width",
                        all(med[a] > med[b] for a, b in zip(qs, qs[1:])), med))
    warn = [r.warning for reps in reports.values() for r in reps if r.warning]
    checks.append(Check("ridge solves well conditioned", not warn, len(warn)))
    return checks
