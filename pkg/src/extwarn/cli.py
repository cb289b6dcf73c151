"""Command line: train, run, serve, attack, status."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import tree as tree_mod
from .attacks import make_attack, read_trace, write_trace
from .dataset import load_csv, load_schema, split, write_csv
from .runner import Scenario, ScenarioError, build_monitor, replay, run
from .service import RemoteOracle, parse_address, serve
from .tree import TreeParams

log = logging.getLogger("extwarn")


def _budget(value: str) -> int | None:
    return None if value.lower() in ("none", "inf", "unlimited") else int(value)


def _tree_params(args) -> TreeParams:
    return TreeParams(max_depth=args.max_depth, min_leaf=args.min_leaf, min_gain=args.min_gain)


def _add_tree_flags(p):
    p.add_argument("--max-depth", type=float, default=float("inf"))
    p.add_argument("--min-leaf", type=int, default=1)
    p.add_argument("--min-gain", type=float, default=0.0)


def _add_monitor_flags(p):
    p.add_argument("--strategy", choices=["ig", "summary", "both"], default=None,
                   help="default: both for continuous schemas, ig otherwise")
    p.add_argument("--k", type=int, nargs="+", default=[1])
    p.add_argument("--threshold", type=float, default=50.0)
    p.add_argument("--every", type=int, default=None, help="checkpoint every N queries")
    p.add_argument("--train", help="training split CSV (class statistics for the summary monitor)")
    p.add_argument("--validation", help="validation split CSV (information-gain monitor)")


def _monitor_from_args(args, source):
    strategy = args.strategy or ("both" if source.schema.all_continuous else "ig")
    if strategy != "ig" and not source.schema.all_continuous:
        raise ScenarioError("summary strategy needs an all-continuous schema; use --strategy ig")
    load = lambda p: load_csv(p, source.schema, source.classes) if p else None  # noqa: E731
    return build_monitor(source, strategy, args.k, args.threshold, train_set=load(args.train),
                         validation=load(args.validation), every=args.every)


def cmd_train(args) -> int:
    schema = load_schema(args.schema)
    data = load_csv(args.data, schema)
    tr, te, va = split(data, tuple(args.fractions), args.split_seed)
    model = tree_mod.train(tr, _tree_params(args))
    tree_mod.save(model, args.out)
    if args.split_dir:
        d = Path(args.split_dir)
        d.mkdir(parents=True, exist_ok=True)
        for name, part in (("train", tr), ("test", te), ("validation", va)):
            write_csv(part, d / f"{name}.csv")
    print(json.dumps({"leaves": model.leaf_count, "depth": model.depth, "train": len(tr), "test": len(te),
                      "validation": len(va)}))
    return 0


SCENARIO_FLAGS = {
    "data": "dataset", "schema": "schema", "split_seed": "split_seed", "n_users": "n_users",
    "strategy": "strategy", "threshold": "threshold", "out_dir": "out_dir", "unif_n": "unif_n",
    "unif_seed": "unif_seed", "eps": "eps",
}


def cmd_run(args) -> int:
    obj = Scenario().to_json() if args.scenario is None else Scenario.load(args.scenario).to_json()
    for flag, key in SCENARIO_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            obj[key] = v
    if args.fractions is not None:
        obj["fractions"] = args.fractions
    if args.attack is not None:
        obj["attack"] = args.attack[0] if len(args.attack) == 1 else args.attack
    if args.k is not None:
        obj["k_list"] = args.k
    if args.same_seed:
        obj["same_seed"] = True
    budget = dict(obj["budget"])
    if args.max_queries is not None:
        budget["max_queries"] = _budget(args.max_queries)
    if args.seed is not None:
        budget["seed"] = args.seed
    if args.checkpoint_every is not None:
        budget["checkpoint_every"] = args.checkpoint_every
    obj["budget"] = budget
    scenario = Scenario.from_json(obj)
    if not scenario.dataset or not scenario.schema:
        raise ScenarioError("dataset and schema paths are required (--data/--schema or --scenario)")
    result = run(scenario)
    for s in sorted({r.strategy for r in result.rows}):
        for k in scenario.k_list:
            f = result.final(s, k)
            print(f"{s} k={k} queries/user={f.queries_per_user} status={f.status:.2f} "
                  f"1-R_test={f.one_minus_r_test:.4f} 1-R_unif={f.one_minus_r_unif:.4f}")
    print(f"{len(result.events)} warning events; outputs in {scenario.out_dir}")
    return 0


def cmd_serve(args) -> int:
    source = tree_mod.load(args.model)
    monitor = _monitor_from_args(args, source)
    server = serve(source, monitor, *parse_address(args.bind))
    host, port = server.server_address[:2]
    print(f"listening on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        if args.warnings:
            with open(args.warnings, "w", encoding="utf-8") as fh:
                fh.writelines(e.dumps() + "\n" for e in monitor.events)
    return 0


def cmd_attack(args) -> int:
    if args.model:
        source = tree_mod.load(args.model)
        schema = source.schema
    elif args.schema:
        source, schema = None, load_schema(args.schema)
    else:
        raise ScenarioError("give --model, or --schema together with --connect")
    if source is None and not args.connect:
        raise ScenarioError("--connect is required without --model")
    budget = _budget(args.budget)
    if budget is None and args.kind == "random":
        raise ScenarioError("random attack needs a finite --budget")
    records, clients, streams = [], [], {}
    try:
        for i in range(args.n_users):
            uid = f"{args.user}{i}" if args.n_users > 1 else args.user
            if args.connect:
                client = RemoteOracle(args.connect, uid, schema)
                clients.append(client)
                oracle = client
            else:
                oracle = source.predict
            streams[uid] = make_attack(args.kind, oracle, schema, args.seed + i, args.eps).steps()
        n = 0
        while streams and (budget is None or n < budget):
            for uid in list(streams):
                try:
                    x, pred = next(streams[uid])
                except StopIteration:
                    del streams[uid]
                    continue
                records.append((uid, x, pred))
            n += 1
    finally:
        for c in clients:
            c.close()
    write_trace(args.out, schema, records)
    print(f"{len(records)} queries written to {args.out}")
    return 0


def cmd_status(args) -> int:
    if args.connect:
        with RemoteOracle(args.connect) as client:
            out = {str(k): client.status(k) for k in args.k}
            summaries = client.summaries() if args.dump_summaries else None
    else:
        if not (args.log and args.model):
            raise ScenarioError("offline status needs --log and --model (or use --connect)")
        source = tree_mod.load(args.model)
        monitor = _monitor_from_args(args, source)
        replay(read_trace(args.log, source.schema), monitor)
        out = {str(k): {"results": {s: r.to_json() for s, r in monitor.collusion(k).items()},
                        "query_count": monitor.query_count} for k in args.k}
        summaries = None
        if args.dump_summaries:
            if "summary" not in monitor.monitors:
                raise ScenarioError("--dump-summaries needs the summary strategy")
            summaries = monitor.monitors["summary"].dump()
        if args.warnings:
            with open(args.warnings, "w", encoding="utf-8") as fh:
                fh.writelines(e.dumps() + "\n" for e in monitor.events)
    print(json.dumps(out, sort_keys=True, indent=2))
    if args.dump_summaries:
        with open(args.dump_summaries, "w", encoding="utf-8") as fh:
            fh.writelines(json.dumps(s, sort_keys=True) + "\n" for s in summaries)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="extwarn", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a tree on a CSV dataset and save it as JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fractions", type=float, nargs=3, default=[0.8, 0.1, 0.1])
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--split-dir", help="also write train/test/validation CSVs here")
    _add_tree_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="simulate attacking users against a trained tree")
    p.add_argument("--scenario", help="scenario JSON; flags below override its fields")
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--fractions", type=float, nargs=3)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--n-users", type=int)
    p.add_argument("--attack", nargs="+", choices=["random", "pathfinding"],
                   help="one kind for all users or one per user")
    p.add_argument("--k", type=int, nargs="+")
    p.add_argument("--strategy", choices=["ig", "summary", "both"])
    p.add_argument("--threshold", type=float)
    p.add_argument("--max-queries", help="per-user budget; 'none' runs path-finding to completion")
    p.add_argument("--seed", type=int, help="seed of the first user; user i gets seed + i")
    p.add_argument("--same-seed", action="store_true", help="give every user the same seed")
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--unif-n", type=int)
    p.add_argument("--unif-seed", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve", help="serve a tree over newline-delimited JSON with monitoring")
    p.add_argument("--model", required=True)
    p.add_argument("--bind", default="127.0.0.1:7070")
    p.add_argument("--warnings", help="write warning events here on shutdown")
    _add_monitor_flags(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("attack", help="run an attack against a local model or a server")
    p.add_argument("--model")
    p.add_argument("--schema", help="feature schema, needed with --connect when --model is absent")
    p.add_argument("--connect", help="host:port of a running server")
    p.add_argument("--kind", choices=["random", "pathfinding"], default="pathfinding")
    p.add_argument("--budget", default="1000", help="queries per user; 'none' for no limit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--user", default="user")
    p.add_argument("--n-users", type=int, default=1)
    p.add_argument("--out", required=True, help="trace CSV")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("status", help="collusion status from a server or an offline trace replay")
    p.add_argument("--connect")
    p.add_argument("--log", help="attack trace CSV to replay offline")
    p.add_argument("--model")
    p.add_argument("--dump-summaries", help="write per-user model summaries as JSON lines")
    p.add_argument("--warnings", help="offline only: write replayed warning events here")
    _add_monitor_flags(p)
    p.set_defaults(func=cmd_status)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
