"""A wider junta hierarchy with more samples than random features per block.

The loss is infinite for negative margins, so a block can only move a label
when it fits every sample with a nonnegative margin. With q well below the
number of distinct inputs most labels stay at zero; compare --q 2048.

    python3 scripts/larger_hierarchy.py --d 16 --m 1500 --q 256
"""
import argparse

import numpy as np

from artifact.hierarchy import gen_junta_hierarchy, sample_dataset
from artifact.resnet import init_network
from artifact.train import LossParams, TrainConfig, train_all
from artifact.verify import metrics_report


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--d", type=int, default=16)
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--r", type=int, default=3)
    ap.add_argument("--m", type=int, default=1500)
    ap.add_argument("--q", type=int, default=256)
    ap.add_argument("--D", type=int, default=4)
    ap.add_argument("--beta", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    h = gen_junta_hierarchy(args.d, args.n, args.r, 2, seed=args.seed)
    ds = sample_dataset(h, args.m, args.seed + 1)
    p = init_network(args.d, args.n, args.q, args.D, beta=args.beta, seed=args.seed + 2)
    lp = LossParams(3.0, h.xi(), ds.m, 1)
    tr = train_all(p, ds, lp, TrainConfig(eps_opt=1e-4))
    rep = metrics_report(tr, lp, [np.asarray(L).tolist() for L in h.levels])
    print(rep.render())


if __name__ == "__main__":
    main()
