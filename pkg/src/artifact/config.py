"""Experiment configuration: one JSON file, schema-versioned, seeds derived
from a single master seed."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
SEED_STREAMS = ("generator", "data", "init", "training", "verification")


class ConfigError(ValueError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


@dataclass
class GeneratorConfig:
    kind: str                       # junta | braindump
    d: int
    n: int
    r: int
    K: int
    m: int
    k: int = 3                      # braindump fan-in of the majorities
    q_labels: int = 0               # braindump labels per level, n = r q_labels
    proximity: dict = field(default_factory=lambda: {"kind": "singleton", "T": 1, "w_half": 0})
    level_sizes: list | None = None


@dataclass
class NetworkConfig:
    q_width: int
    D: int
    beta: float | str               # number or "auto"
    beta_eps: float | None = None   # eps for "auto"; default gamma / 2
    orthogonal_mode: str = "random"
    activation: str = "tanh"


@dataclass
class LossConfig:
    B: float
    xi: float | str                 # number or "auto" (junta certificate value)
    barrier: float | None = None


@dataclass
class TrainSection:
    eps_opt: float
    max_iters: int = 5000
    method: str = "admm"
    parallel: bool = False


@dataclass
class OutputConfig:
    dir: str = "out"


@dataclass
class ExperimentConfig:
    schema_version: int
    seed: int
    generator: GeneratorConfig
    network: NetworkConfig
    loss: LossConfig
    train: TrainSection
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {"generator": GeneratorConfig, "network": NetworkConfig, "loss": LossConfig,
             "train": TrainSection, "output": OutputConfig}


def _build(cls, obj, prefix: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{prefix} must be an object", prefix)
    names = {f.name for f in dataclasses.fields(cls)}
    for k in obj:
        if k not in names:
            raise ConfigError(f"unknown field {prefix}.{k}", f"{prefix}.{k}")
    for f in dataclasses.fields(cls):
        required = f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
        if required and f.name not in obj:
            raise ConfigError(f"missing required field {prefix}.{f.name}", f"{prefix}.{f.name}")
    return cls(**obj)


def _check(cfg: ExperimentConfig):
    g, nw, lo, tr = cfg.generator, cfg.network, cfg.loss, cfg.train

    def need(cond, fld, msg):
        if not cond:
            raise ConfigError(f"{fld}: {msg}", fld)

    need(g.kind in ("junta", "braindump"), "generator.kind", "must be 'junta' or 'braindump'")
    for name in ("d", "n", "r", "K", "m"):
        need(isinstance(getattr(g, name), int) and getattr(g, name) >= 1, f"generator.{name}",
             "must be a positive integer")
    if g.kind == "braindump":
        need(g.k % 2 == 1, "generator.k", "must be odd")
        need(g.q_labels >= 1 and g.n == g.r * g.q_labels, "generator.q_labels",
             "must be positive with n = r * q_labels")
        need(g.proximity.get("kind", "singleton") == "singleton", "generator.proximity",
             "brain-dump targets use the singleton proximity")
    need(isinstance(nw.q_width, int) and nw.q_width >= 1, "network.q_width", "must be >= 1")
    need(isinstance(nw.D, int) and nw.D >= 2, "network.D", "must be >= 2")
    need(nw.beta == "auto" or (isinstance(nw.beta, (int, float)) and 0 <= nw.beta <= 1),
         "network.beta", "must be a number in [0, 1] or 'auto'")
    need(nw.orthogonal_mode in ("random", "identity"), "network.orthogonal_mode",
         "must be 'random' or 'identity'")
    need(lo.xi == "auto" or (isinstance(lo.xi, (int, float)) and 0 < lo.xi <= 1), "loss.xi",
         "must be in (0, 1] or 'auto'")
    need(isinstance(lo.B, (int, float)) and lo.B >= 1, "loss.B", "must be >= 1")
    need(isinstance(tr.eps_opt, (int, float)) and tr.eps_opt > 0, "train.eps_opt", "must be > 0")
    need(tr.method in ("admm", "subgradient", "exact"), "train.method", "unknown method")


def config_from_dict(obj: dict) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    for k in ("schema_version", "seed", "generator", "network", "loss", "train"):
        if k not in obj:
            raise ConfigError(f"missing required field {k}", k)
    extra = set(obj) - {"schema_version", "seed", *_SECTIONS}
    if extra:
        k = sorted(extra)[0]
        raise ConfigError(f"unknown field {k}", k)
    if obj["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {obj['schema_version']!r}", "schema_version")
    seed = obj["seed"]
    if not isinstance(seed, int) or not (0 <= seed < 2 ** 64):
        raise ConfigError("seed must be an integer in [0, 2^64)", "seed")
    parts = {k: _build(cls, obj.get(k, {}), k) for k, cls in _SECTIONS.items()}
    cfg = ExperimentConfig(SCHEMA_VERSION, seed, **parts)
    _check(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    return config_from_dict(obj)


def derive_seeds(master: int) -> dict:
    """Named 64-bit seeds split off the master seed."""
    out = {}
    for i, name in enumerate(SEED_STREAMS):
        s = np.random.SeedSequence([master & 0xFFFFFFFF, master >> 32, i]).generate_state(2, np.uint32)
        out[name] = int(s[0]) | (int(s[1]) << 32)
    return out


def resolve(cfg: ExperimentConfig) -> ExperimentConfig:
    """Replace "auto" entries with concrete values (returns a copy)."""
    from .hermite import beta_threshold, make_activation

    cfg = dataclasses.replace(cfg, network=dataclasses.replace(cfg.network),
                              loss=dataclasses.replace(cfg.loss))
    if cfg.loss.xi == "auto":
        K = cfg.generator.K
        cfg.loss.xi = 1.0 / (K * 2 ** ((K + 2) / 2)) if cfg.generator.kind == "junta" else 1.0
    if cfg.network.beta == "auto":
        gamma = min(1.0 / cfg.loss.B, cfg.loss.xi) / 32.0
        eps = cfg.network.beta_eps if cfg.network.beta_eps is not None else gamma / 2
        spec = make_activation(cfg.network.activation, K=cfg.generator.K)
        cfg.network.beta = float(beta_threshold(spec, eps))
        cfg.network.beta_eps = eps
    return cfg
