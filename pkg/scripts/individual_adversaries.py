"""Extraction status and adversary accuracy vs queries for single random and path-finding users.

Writes one trace per (attack, strategy) to --out and prints the final checkpoints.
"""

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
    ap.add_argument("--leaves", type=int, default=24)
    ap.add_argument("--features", type=int, default=2)
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--budget", type=int, default=1000)
    ap.add_argument("--every", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/individual")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    tree = random_tree(unit_schema(args.features), args.leaves, ["a", "b", "c"], rng)
    tr, te, va = split(labeled_sample(tree, args.n, rng), seed=args.seed)
    source = train(tr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for kind in ("random", "pathfinding"):
        sc = Scenario(attack=kind, strategy="both", budget=AttackBudget(args.budget, args.seed, args.every))
        res = simulate(sc, source, tr, te, va)
        write_trace_rows(out / f"{kind}.csv", res.rows)
        for strategy in ("ig", "summary"):
            f = res.final(strategy, 1)
            print(f"{kind:12s} {strategy:8s} queries={f.queries_per_user:5d} status={f.status:6.2f} "
                  f"1-R_test={f.one_minus_r_test:.4f} 1-R_unif={f.one_minus_r_unif:.4f}")


if __name__ == "__main__":
    main()
