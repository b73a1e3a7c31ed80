"""Random-features fit of degree-2 targets: max error against width.

    python3 scripts/rf_width_sweep.py --widths 256 512 1024 2048 4096
"""
import argparse

import numpy as np

from artifact.hermite import beta_threshold, make_activation
from artifact.verify import rf_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--widths", type=int, nargs="+", default=[256, 512, 1024, 2048, 4096])
    args = ap.parse_args()

    spec = make_activation("tanh", K=2)
    beta = beta_threshold(spec, args.eps)
    print(f"beta = {beta:.10f}")
    print("width  median_err  worst_err  median_|w|  delta")
    for q in args.widths:
        reps = [rf_experiment(args.n, q, beta, s, eps=args.eps, spec=spec) for s in range(args.seeds)]
        err = np.array([r.max_error for r in reps])
        wn = np.median([r.weight_norm for r in reps])
        print(f"{q:5d}  {np.median(err):10.2e}  {err.max():9.2e}  {wn:10.3g}  {reps[0].delta:.3g}")


if __name__ == "__main__":
    main()
