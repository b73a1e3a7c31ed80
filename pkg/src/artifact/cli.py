"""Command line: gen, train, report and the verification suites.

Every run writes manifest.json (resolved config, derived seeds, library
version). Outputs carry the SHA-256 of that manifest so a file can always be
traced back to the exact configuration that produced it.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import ConfigError, ExperimentConfig, derive_seeds, load_config, resolve
from .hermite import make_activation
from .hierarchy import gen_braindump, gen_junta_hierarchy, make_proximity, sample_dataset
from .resnet import init_network
from .storage import (FormatError, canonical_json, load_dataset, load_target, load_trace_json,
                      read_json, save_checkpoint, save_dataset, save_target, save_trace_csv,
                      save_trace_json, sha256_text, write_json)
from .train import LossParams, TrainConfig, train_all
from . import verify

OUT_ENV = "ARTIFACT_OUT"


# ---------------------------------------------------------------- manifest

def build_manifest(cfg: ExperimentConfig) -> tuple[dict, str]:
    body = cfg.to_json()
    body.pop("output", None)           # the location of a run does not change its results
    man = {"library_version": __version__, "config": body, "seeds": derive_seeds(cfg.seed)}
    return man, sha256_text(canonical_json(man))


def _setup(args, need_config=True):
    cfg = None
    if args.config:
        cfg = load_config(args.config)
    elif need_config:
        raise ConfigError("--config is required for this command", "--config")
    if cfg is not None and args.seed is not None:
        cfg.seed = args.seed
    out = args.out or os.environ.get(OUT_ENV) or (cfg.output.dir if cfg else "out")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _write_manifest(cfg, out: Path):
    cfg = resolve(cfg)
    man, h = build_manifest(cfg)
    write_json(out / "manifest.json", dict(man, sha256=h))
    return cfg, man, h


# ---------------------------------------------------------------- pipeline

def make_target(cfg: ExperimentConfig, seed: int):
    g = cfg.generator
    if g.kind == "braindump":
        return gen_braindump(g.d, g.r, g.K, g.k, g.q_labels, seed)
    px = g.proximity
    prox = make_proximity(px.get("kind", "singleton"), int(px.get("T", 1)), int(px.get("w_half", 0)))
    return gen_junta_hierarchy(g.d, g.n, g.r, g.K, prox, g.level_sizes, seed)


def cmd_gen(cfg, out: Path) -> dict:
    cfg, man, h = _write_manifest(cfg, out)
    seeds = man["seeds"]
    target = make_target(cfg, seeds["generator"])
    ds = sample_dataset(target, cfg.generator.m, seeds["data"], cfg.generator.kind)
    save_target(target, out / "target.json", h)
    save_dataset(ds, out / "dataset.json", h)
    return {"manifest": h, "files": ["manifest.json", "target.json", "dataset.json"]}


def _current(out: Path, h: str) -> bool:
    try:
        return read_json(out / "dataset.json")["meta"].get("manifest") == h \
            and read_json(out / "target.json").get("manifest") == h
    except (OSError, FormatError, KeyError):
        return False


def loss_params(cfg: ExperimentConfig, m: int, G: int) -> LossParams:
    return LossParams(float(cfg.loss.B), float(cfg.loss.xi), m, G, cfg.loss.barrier)


def cmd_train(cfg, out: Path, threads: int = 1) -> dict:
    rcfg, man, h = _write_manifest(cfg, out)
    if not _current(out, h):
        cmd_gen(cfg, out)
    target = load_target(out / "target.json")
    ds = load_dataset(out / "dataset.json")
    g, nw = rcfg.generator, rcfg.network
    prox = getattr(target, "proximity", None) or make_proximity("singleton")
    act = make_activation(nw.activation, K=g.K)
    params = init_network(g.d, g.n, nw.q_width, nw.D, prox, float(nw.beta), nw.orthogonal_mode,
                          man["seeds"]["init"], act)
    lp = loss_params(rcfg, ds.m, ds.X.shape[1])
    tc = TrainConfig(eps_opt=rcfg.train.eps_opt, max_iters=rcfg.train.max_iters,
                     method=rcfg.train.method, parallel=rcfg.train.parallel,
                     workers=threads)
    trace = train_all(params, ds, lp, tc)
    trace.meta["levels"] = [np.asarray(L).tolist() for L in target.levels]
    trace.meta["manifest"] = h
    save_checkpoint(params, out / "checkpoint", h)
    save_trace_csv(trace, out / "trace.csv", h)
    save_trace_json(trace, out / "trace.json", h)
    final = trace.layers[-1]
    return {"manifest": h, "final_err0": final["err0"], "final_err_eta1": final["err_eta1"],
            "files": ["checkpoint.npz", "checkpoint.json", "trace.csv", "trace.json"]}


def cmd_report(cfg, out: Path) -> dict:
    man = read_json(out / "manifest.json")
    h = man["sha256"]
    from .config import config_from_dict
    rcfg = config_from_dict(dict(man["config"], output={"dir": str(out)}))
    trace = load_trace_json(out / "trace.json")
    ds = load_dataset(out / "dataset.json")
    lp = loss_params(rcfg, ds.m, ds.X.shape[1])
    rep = verify.metrics_report(trace, lp, trace.meta.get("levels"))
    text = f"manifest {h}\n" + rep.render()
    (out / "report.txt").write_text(text, encoding="utf-8")
    write_json(out / "metrics.json", dict(rep.to_json(), manifest=h))
    (out / "metrics.csv").write_text(f"# manifest {h}\n" + rep.to_csv(), encoding="utf-8")
    sys.stdout.write(text)
    return {"manifest": h, "files": ["report.txt", "metrics.json", "metrics.csv"]}


def _suite(name, fn, cfg, out: Path, seed_override) -> dict:
    if seed_override is not None:
        seed = seed_override
    elif cfg is not None:
        seed = derive_seeds(cfg.seed)["verification"]
    else:
        seed = 0
    man = {"library_version": __version__, "suite": name, "seed": seed,
           "config": None if cfg is None else build_manifest(cfg)[0]["config"]}
    h = sha256_text(canonical_json(man))
    write_json(out / "manifest.json", dict(man, sha256=h))
    checks = fn(seed)
    rows = [{"name": c.name, "passed": bool(c.passed), "value": c.value, "detail": c.detail}
            for c in checks]
    write_json(out / f"verify_{name}.json", {"seed": seed, "library_version": __version__,
                                              "manifest": h, "checks": rows})
    for r in rows:
        sys.stdout.write(f"{'PASS' if r['passed'] else 'FAIL'}  {r['name']}  {r['detail']}\n")
    return {"passed": all(r["passed"] for r in rows), "files": [f"verify_{name}.json"]}


_SUITES = {
    "verify-kernel": ("kernel", lambda s: verify.hermite_suite(s) + verify.kernel_suite(seed=s)),
    "verify-rf": ("rf", lambda s: verify.rf_suite()),
    "verify-braindump": ("braindump", lambda s: verify.braindump_suite(seed=s)),
    "verify-loss": ("loss", lambda s: verify.loss_suite()),
}


# ---------------------------------------------------------------- entry point

def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, default=None, help="override the master seed")
    common.add_argument("--threads", type=int, default=1, help="BLAS thread cap")
    common.add_argument("--out", default=None, help=f"output directory (or ${OUT_ENV})")
    p = argparse.ArgumentParser(prog="artifact", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True)
    for name in ("gen", "train", "report", *_SUITES):
        sub.add_parser(name, parents=[common])
    return p


def _error(kind: str, message: str, field=None) -> int:
    rec = {"error": kind, "message": message}
    if field is not None:
        rec["field"] = field
    sys.stderr.write(json.dumps(rec, sort_keys=True) + "\n")
    return 2


def run_cli(argv=None) -> int:
    p = _parser()
    try:
        args = p.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.threads < 1:
        return _error("usage", "--threads must be >= 1", "--threads")
    try:
        with threadpool_limits(args.threads):
            if args.cmd in _SUITES:
                cfg, out = _setup(args, need_config=False)
                name, fn = _SUITES[args.cmd]
                res = _suite(name, fn, cfg, out, args.seed)
                return 0 if res["passed"] else 1
            if args.cmd == "report":
                cfg, out = _setup(args, need_config=False)
                cmd_report(cfg, out)
                return 0
            cfg, out = _setup(args)
            res = cmd_gen(cfg, out) if args.cmd == "gen" else cmd_train(cfg, out, args.threads)
            sys.stdout.write(json.dumps(res, sort_keys=True) + "\n")
            return 0
    except ConfigError as e:
        return _error("config", str(e), e.field)
    except FormatError as e:
        return _error("format", str(e))
    except FileNotFoundError as e:
        return _error("io", f"missing file {e.filename}")
    except OSError as e:
        return _error("io", str(e))
    except ValueError as e:
        return _error("value", str(e))


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
