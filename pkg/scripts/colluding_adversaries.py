"""Greedy collusion status for k in {1, 3, 5} with ten simultaneous path-finding users."""

import argparse
from pathlib import Path

import numpy as np

from extwarn.attacks import AttackBudget
from extwarn.dataset import split
from extwarn.runner import Scenario, simulate, write_trace_rows
from extwarn.synthetic import labeled_sample, random_tree, unit_schema
from extwarn.tree import train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--leaves", type=int, default=48)
    ap.add_argument("--users", type=int, default=10)
    ap.add_argument("--k", type=int, nargs="+", default=[1, 3, 5])
    ap.add_argument("--budget", type=int, default=200)
    ap.add_argument("--every", type=int, default=25)
    ap.add_argument("--strategy", choices=["ig", "summary", "both"], default="summary")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--out", default="out/colluding")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in args.seeds:
        rng = np.random.default_rng(seed)
        # wide margins keep leaves comparable in size, so no single leaf dominates coverage
        tree = random_tree(unit_schema(2), args.leaves, list("abcde"), rng, margin=0.3)
        tr, te, va = split(labeled_sample(tree, 5000, rng), seed=seed)
        sc = Scenario(n_users=args.users, k_list=tuple(args.k), strategy=args.strategy,
                      budget=AttackBudget(args.budget, seed, args.every))
        res = simulate(sc, train(tr), tr, te, va)
        write_trace_rows(out / f"seed{seed}.csv", res.rows)
        for s in sorted({r.strategy for r in res.rows}):
            finals = " ".join(f"k={k}:{res.final(s, k).status:.1f}" for k in args.k)
            print(f"seed {seed} {s}: {finals}")


if __name__ == "__main__":
    main()
