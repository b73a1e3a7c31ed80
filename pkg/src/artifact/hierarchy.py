"""Hierarchical multi-label targets.

Two generators: junta hierarchies over a proximity structure, and the
"brain dump" circuit whose labels are random signed majorities of the
wires of a layered K-junta circuit. Inputs are arrays of shape (m, T, d)
(sample, location, coordinate); labels have shape (m, T, n).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, exp

import numpy as np

from .ptf import PtfClaim, SparsePoly, compose_linear, cube_points, junta_claim, \
    multilinear_extension, ptf_check, table_index


@dataclass(frozen=True)
class ProximityMap:
    """e: G -> G^w as an integer table of shape (T, w); locations are 0-based."""
    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.int64)
        if t.ndim != 2 or t.shape[0] < 1 or t.shape[1] < 1:
            raise ValueError("proximity table must be (T, w)")
        if not np.array_equal(t[:, 0], np.arange(t.shape[0])):
            raise ValueError("e_1(g) must equal g")
        if t.min() < 0 or t.max() >= t.shape[0]:
            raise ValueError("proximity entries must be valid locations")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def T(self) -> int:
        return self.table.shape[0]

    @property
    def w(self) -> int:
        return self.table.shape[1]

    def e(self, g: int) -> tuple:
        return tuple(int(v) for v in self.table[g])

    def to_json(self):
        return {"table": self.table.tolist()}


def make_proximity(kind: str = "singleton", T: int = 1, w_half: int = 0) -> ProximityMap:
    """singleton: one location; window1d: g, g-1..g-w_half, g+1..g+w_half (clamped)."""
    if T < 1 or w_half < 0:
        raise ValueError("need T >= 1 and w_half >= 0")
    if kind == "singleton":
        return ProximityMap(np.zeros((1, 1), dtype=np.int64))
    if kind != "window1d":
        raise ValueError(f"unknown proximity kind {kind!r}")
    rows = []
    for g in range(T):
        left = [min(max(g - s, 0), T - 1) for s in range(1, w_half + 1)]
        right = [min(max(g + s, 0), T - 1) for s in range(1, w_half + 1)]
        rows.append([g] + left + right)
    return ProximityMap(np.array(rows, dtype=np.int64))


def proximity_concat(prox: ProximityMap, X) -> np.ndarray:
    """E_g for every location: (..., T, dim) -> (..., T, w*dim), slots in e-order."""
    X = np.asarray(X)
    E = X[..., prox.table, :]                       # (..., T, w, dim)
    return E.reshape(E.shape[:-2] + (prox.w * X.shape[-1],))


@dataclass(frozen=True)
class JuntaDef:
    level: int          # 1-based
    deps: tuple         # indices into the E_g input of that level
    table: tuple        # +-1 values indexed by table_index

    def __call__(self, E):
        idx = table_index(E[..., list(self.deps)].reshape(-1, len(self.deps)))
        return np.asarray(self.table, dtype=float)[idx].reshape(E.shape[:-1])


@dataclass
class Hierarchy:
    d: int
    n: int
    K: int
    levels: list                 # cumulative sorted index arrays L_1..L_r
    proximity: ProximityMap
    defs: list                   # JuntaDef per label
    witnesses: list | None = None

    def __post_init__(self):
        prev = set()
        for L in self.levels:
            if not prev <= set(L):
                raise ValueError("levels must be nested")
            prev = set(L)
        if prev != set(range(self.n)):
            raise ValueError("last level must contain every label")

    @property
    def r(self) -> int:
        return len(self.levels)

    def level_of(self, j: int) -> int:
        for i, L in enumerate(self.levels):
            if j in L:
                return i + 1
        raise KeyError(j)

    def new_labels(self, i: int) -> list:
        """Labels first appearing at level i (1-based)."""
        cur = set(self.levels[i - 1])
        prev = set(self.levels[i - 2]) if i >= 2 else set()
        return sorted(cur - prev)

    def input_dim(self, i: int) -> int:
        w = self.proximity.w
        return w * (self.d if i == 1 else len(self.levels[i - 2]))

    def xi(self) -> float:
        return 1.0 / (self.K * 2 ** ((self.K + 2) / 2))


def _random_nonconstant_table(rng, K: int) -> np.ndarray:
    while True:
        t = rng.choice([-1.0, 1.0], size=2 ** K)
        if np.any(t != t[0]):
            return t


def _level_sizes(n: int, r: int, level_sizes=None) -> list:
    if level_sizes is None:
        base = [n // r + (1 if i < n % r else 0) for i in range(r)]
    else:
        base = [int(s) for s in level_sizes]
    if len(base) != r or sum(base) != n or min(base) < 1:
        raise ValueError("level_sizes must give r positive counts summing to n")
    return base


def gen_junta_hierarchy(d: int, n: int, r: int, K: int, proximity: ProximityMap | None = None,
                        level_sizes=None, seed=0) -> Hierarchy:
    """Random junta hierarchy with witness claims attached.

    level_sizes are the numbers of new labels per level (default: equal split).
    """
    proximity = proximity or make_proximity("singleton")
    rng = np.random.default_rng(seed)
    sizes = _level_sizes(n, r, level_sizes)
    levels, defs, wits = [], [None] * n, [None] * n
    start = 0
    for i, sz in enumerate(sizes, start=1):
        pool = proximity.w * (d if i == 1 else start)
        if K > pool:
            raise ValueError(f"level {i}: K={K} exceeds the {pool} available coordinates")
        for j in range(start, start + sz):
            deps = tuple(int(v) for v in rng.choice(pool, size=K, replace=False))
            table = _random_nonconstant_table(rng, K)
            defs[j] = JuntaDef(i, deps, tuple(table.tolist()))
            wits[j] = junta_claim(table, pool, list(deps))
        start += sz
        levels.append(np.arange(start))
    return Hierarchy(d, n, K, levels, proximity, defs, wits)


@dataclass
class BrainDumpModel:
    d: int
    r: int
    K: int
    k: int
    q_labels: int
    deps: np.ndarray          # (r, d, K) wire indices into the previous layer
    tables: np.ndarray        # (r, d, 2^K) +-1
    weights: np.ndarray       # (r, q_labels, d) entries in {-1, 0, 1}

    def __post_init__(self):
        if self.k % 2 == 0:
            raise ValueError("k must be odd")
        if not np.all(np.abs(self.weights).sum(-1) == self.k):
            raise ValueError("each weight vector needs exactly k nonzeros")

    @property
    def n(self) -> int:
        return self.r * self.q_labels

    @property
    def levels(self) -> list:
        return [np.arange((i + 1) * self.q_labels) for i in range(self.r)]

    def wires(self, x) -> list:
        """[G^0 = x, G^1, ..., G^r] for inputs of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        out = [x]
        for i in range(self.r):
            prev = out[-1]
            G = np.empty_like(prev)
            for l in range(self.d):
                sub = prev[..., self.deps[i, l]].reshape(-1, self.K)
                G[..., l] = self.tables[i, l][table_index(sub)].reshape(prev.shape[:-1])
            out.append(G)
        return out


def gen_braindump(d: int, r: int, K: int, k: int, q_labels: int, seed=0) -> BrainDumpModel:
    if k % 2 == 0 or not (1 <= k <= d) or not (1 <= K <= d) or r < 1 or q_labels < 1:
        raise ValueError("infeasible brain-dump parameters")
    rng = np.random.default_rng(seed)
    deps = np.empty((r, d, K), dtype=np.int64)
    tables = np.empty((r, d, 2 ** K))
    for i in range(r):
        for l in range(d):
            deps[i, l] = rng.choice(d, size=K, replace=False)
            tables[i, l] = _random_nonconstant_table(rng, K)
    weights = np.zeros((r, q_labels, d), dtype=np.int8)
    for i in range(r):
        # k distinct coordinates per vector, uniform signs
        keys = rng.random((q_labels, d))
        support = np.argsort(keys, axis=1)[:, :k]
        signs = rng.choice(np.array([-1, 1], dtype=np.int8), size=(q_labels, k))
        np.put_along_axis(weights[i], support, signs, axis=1)
    return BrainDumpModel(d, r, K, k, q_labels, deps, tables, weights)


def _check_boolean(X):
    if not np.all(np.abs(np.asarray(X)) == 1.0):
        raise ValueError("inputs must be +-1 for boolean generators")


def eval_labels(target, X) -> np.ndarray:
    """Labels y of shape (m, T, n) for inputs X of shape (m, T, d)."""
    X = np.asarray(X, dtype=float)
    _check_boolean(X)
    if isinstance(target, BrainDumpModel):
        if X.shape[-2] != 1:
            raise ValueError("brain-dump models use a single location")
        G = target.wires(X[:, 0, :])
        blocks = [np.where(G[i + 1] @ target.weights[i].T.astype(float) >= 0, 1.0, -1.0)
                  for i in range(target.r)]
        return np.concatenate(blocks, axis=-1)[:, None, :]
    h = target
    m, T, _ = X.shape
    if T != h.proximity.T:
        raise ValueError("location count does not match the proximity map")
    Y = np.zeros((m, T, h.n))
    prev = X
    for i in range(1, h.r + 1):
        E = proximity_concat(h.proximity, prev)
        for j in h.new_labels(i):
            Y[..., j] = h.defs[j](E)
        prev = Y[..., h.levels[i - 1]]
    return Y


@dataclass
class Dataset:
    X: np.ndarray        # (m, T, d)
    Y: np.ndarray        # (m, T, n)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.X.ndim != 3 or self.Y.ndim != 3 or self.X.shape[:2] != self.Y.shape[:2]:
            raise ValueError("inconsistent dataset shapes")
        if self.Y.size and not np.all(np.abs(self.Y) == 1.0):
            raise ValueError("labels must be +-1")

    @property
    def m(self) -> int:
        return self.X.shape[0]


def sample_dataset(target, m: int, seed=0, generator: str | None = None) -> Dataset:
    """m i.i.d. samples with inputs uniform on the boolean cube."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    if isinstance(target, BrainDumpModel):
        T, d, w, r = 1, target.d, 1, target.r
        gen = generator or "braindump"
    else:
        T, d, w, r = target.proximity.T, target.d, target.proximity.w, target.r
        gen = generator or "junta"
    X = rng.choice(np.array([-1.0, 1.0]), size=(m, T, d))
    Y = eval_labels(target, X)
    meta = {"d": d, "n": int(Y.shape[-1]), "r": r, "G": T, "w": w, "seed": seed, "generator": gen}
    return Dataset(X, Y, meta)


def alpha_dk(d: int, k: int) -> Fraction:
    """alpha_{d,k} = (k/d) C(k-1, (k-1)/2) / 2^{k-1} as an exact fraction."""
    if k % 2 == 0 or not (1 <= k <= d):
        raise ValueError("need odd k with 1 <= k <= d")
    return Fraction(k, d) * Fraction(comb(k - 1, (k - 1) // 2), 2 ** (k - 1))


def central_binom_ratio(k: int) -> float:
    """sqrt(pi k) C(2k,k) / 4^k, which tends to 1."""
    return float(np.sqrt(np.pi * k) * (Fraction(comb(2 * k, k), 4 ** k)))


def reconstruction_error(model: BrainDumpModel, level: int, x) -> float:
    """|| W Psi(x) / (q alpha) - x ||_inf for the level's weight vectors.

    level is 1-based: the weights of level i read the wires G^i.
    """
    W = model.weights[level - 1].astype(float).T     # (d, q)
    x = np.asarray(x, dtype=float)
    psi = np.where(W.T @ x >= 0, 1.0, -1.0)
    a = float(alpha_dk(model.d, model.k))
    return float(np.max(np.abs(W @ psi / (model.q_labels * a) - x)))


def braindump_witness(model: BrainDumpModel, level: int, label: int) -> SparsePoly:
    """Opt-in explicit witness for a level >= 2 label as a polynomial of the
    previous level's labels: the majority of junta extensions composed with
    the linear wire reconstruction. Only practical for small d and K."""
    if level < 2:
        raise ValueError("level-1 labels read the input directly")
    if model.d > 12 or model.K > 2:
        raise ValueError("explicit witness limited to d <= 12, K <= 2")
    d, K = model.d, model.K
    terms: dict = {}
    w = model.weights[level - 1, label]
    for l in np.flatnonzero(w):
        ext = multilinear_extension(model.tables[level - 1, l], d, list(model.deps[level - 1, l]))
        for a, c in ext.terms.items():
            terms[a] = terms.get(a, 0.0) + float(w[l]) * c
    p = SparsePoly(d, terms)
    a = float(alpha_dk(d, model.k))
    A = model.weights[level - 2].astype(float).T / (model.q_labels * a)   # (d, q)
    return compose_linear(p, A)


@dataclass
class HierarchyReport:
    passes: bool
    no_data: bool
    labels: list                  # (label, holds, worst_low, worst_high, exact)
    failing: list


def validate_hierarchy(dataset: Dataset, hierarchy: Hierarchy, perturbations: int = 64, seed=0):
    """Check every label's witness against the realized lower-level labels."""
    if hierarchy.witnesses is None or any(w is None for w in hierarchy.witnesses):
        raise ValueError("hierarchy carries no witnesses")
    if dataset.m == 0:
        return HierarchyReport(True, True, [], [])
    rows, failing = [], []
    prev = dataset.X
    for i in range(1, hierarchy.r + 1):
        E = proximity_concat(hierarchy.proximity, prev)
        flat = E.reshape(-1, E.shape[-1])
        for j in hierarchy.new_labels(i):
            rep = ptf_check(flat, dataset.Y[..., j].reshape(-1), hierarchy.witnesses[j],
                            perturbations, seed)
            rows.append((j, rep.holds, rep.worst_margin_low, rep.worst_margin_high, rep.exact))
            if not rep.holds:
                failing.append(j)
        prev = dataset.Y[..., hierarchy.levels[i - 1]]
    return HierarchyReport(not failing, False, rows, failing)


def extended_chernoff_bound(q: int, eps: float, mu: float, p_nonzero: float) -> float:
    """4 exp(-q eps^2 mu^2 / (12 Pr(X != 0)))."""
    return 4.0 * exp(-q * eps * eps * mu * mu / (12.0 * p_nonzero))


def chernoff_deviation_freq(p_plus: float, p_minus: float, q: int, eps: float,
                            trials: int = 10_000, seed=0) -> float:
    """Monte Carlo frequency of |sum X_i / (q|mu|) - sign(mu)| >= eps for
    i.i.d. X_i in {-1, 0, 1} with the given probabilities of +1 and -1."""
    rng = np.random.default_rng(seed)
    mu = p_plus - p_minus
    if mu == 0:
        raise ValueError("mean must be nonzero")
    n_plus = rng.binomial(q, p_plus, size=trials)
    rest = 1.0 - p_plus
    n_minus = rng.binomial(q - n_plus, p_minus / rest if rest > 0 else 0.0)
    dev = np.abs((n_plus - n_minus) / (q * abs(mu)) - np.sign(mu))
    return float(np.mean(dev >= eps))
