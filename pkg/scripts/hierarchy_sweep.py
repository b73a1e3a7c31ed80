"""Train the d=10 junta hierarchy over several seeds and tabulate the outcome.

    python3 scripts/hierarchy_sweep.py --seeds 10 --out out/sweep
"""
import argparse
from pathlib import Path

import numpy as np

from artifact.cli import cmd_train
from artifact.config import load_config
from artifact.resnet import forward
from artifact.storage import load_checkpoint, load_dataset, load_target, load_trace_json
from artifact.train import LossParams, margin_error
from artifact.verify import metrics_report

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "configs" / "hierarchy_d10.json"))
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--out", default="out/sweep")
    args = ap.parse_args()

    print("seed  L1_err0  final_err0  acquisition        monotone  decay_violations")
    for s in range(args.seeds):
        cfg = load_config(args.config)
        cfg.seed = s
        out = Path(args.out) / f"seed{s}"
        out.mkdir(parents=True, exist_ok=True)
        cmd_train(cfg, out)
        target, ds = load_target(out / "target.json"), load_dataset(out / "dataset.json")
        params, trace = load_checkpoint(out / "checkpoint"), load_trace_json(out / "trace.json")
        L1 = np.asarray(target.levels[0], dtype=int)
        _, f = forward(params, ds.X, upto=1)
        lp = LossParams(float(cfg.loss.B), float(cfg.loss.xi), ds.m, ds.X.shape[1])
        rep = metrics_report(trace, lp, target.levels)
        print(f"{s:4d}  {margin_error(f[..., L1], ds.Y[..., L1], 0.0):7.4f}  "
              f"{trace.layers[-1]['err0']:10.4f}  {str(rep.acquisition):17s}  "
              f"{str(rep.acquisition_monotone()):8s}  {len(rep.monotone_violations)}")


if __name__ == "__main__":
    main()
