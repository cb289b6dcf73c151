"""Scenario orchestration: deploy a tree, run simulated adversaries, drive the monitors."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .attacks import (AttackBudget, ConstantClassifier, NullClassifier, PathfindingAttack, RecoveredRuleSet,
                      RuleSetClassifier, make_attack)
from .dataset import Dataset, Schema, class_stats, load_csv, load_schema, sample_uniform, split
from .metrics import disagreement
from .monitor import ExtractionMonitor, WarningEvent
from .strategy1 import IGMonitor
from .strategy2 import SummaryMonitor
from .tree import DecisionTree, TreeParams, train, train_arrays

log = logging.getLogger(__name__)

STRATEGIES = {"ig": ("ig",), "summary": ("summary",), "both": ("ig", "summary")}


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    dataset: str = ""
    schema: str = ""
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_seed: int = 0
    tree_params: TreeParams = field(default_factory=TreeParams)
    monitor_params: TreeParams = field(default_factory=TreeParams)
    n_users: int = 1
    attack: str | list[str] = "pathfinding"
    k_list: tuple[int, ...] = (1,)
    strategy: str = "both"
    threshold: float = 50.0
    budget: AttackBudget = field(default_factory=AttackBudget)
    same_seed: bool = False
    eps: float = 1e-6
    unif_n: int = 10_000
    unif_seed: int = 2_024
    normalize: str = "source"
    out_dir: str = "out"

    def attacks(self) -> list[str]:
        if isinstance(self.attack, str):
            return [self.attack] * self.n_users
        if len(self.attack) != self.n_users:
            raise ScenarioError(f"{len(self.attack)} attack kinds given for {self.n_users} users")
        return list(self.attack)

    def user_seed(self, i: int) -> int:
        return self.budget.seed if self.same_seed else self.budget.seed + i

    def validate(self, schema: Schema | None = None) -> None:
        if self.n_users < 1:
            raise ScenarioError("n_users must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ScenarioError(f"strategy must be one of {sorted(STRATEGIES)}")
        if not self.k_list or any(k < 1 or k > self.n_users for k in self.k_list):
            raise ScenarioError(f"k_list entries must lie in 1..n_users={self.n_users}")
        kinds = self.attacks()
        for kind in kinds:
            if kind not in ("random", "pathfinding"):
                raise ScenarioError(f"unknown attack kind {kind!r}")
        if self.budget.max_queries is None and "random" in kinds:
            raise ScenarioError("random attacks need a finite max_queries")
        if schema is not None and not schema.all_continuous:
            if "summary" in STRATEGIES[self.strategy]:
                raise ScenarioError("summary strategy needs an all-continuous schema; use strategy 'ig'")
            if "pathfinding" in kinds:
                raise ScenarioError("path-finding attack needs an all-continuous schema")

    def to_json(self) -> dict:
        d = asdict(self)
        d["tree_params"] = self.tree_params.to_json()
        d["monitor_params"] = self.monitor_params.to_json()
        d["fractions"] = list(self.fractions)
        d["k_list"] = list(self.k_list)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "Scenario":
        obj = dict(obj)
        unknown = set(obj) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ScenarioError(f"unknown scenario fields {sorted(unknown)}")
        if "tree_params" in obj:
            obj["tree_params"] = TreeParams.from_json(obj["tree_params"])
        if "monitor_params" in obj:
            obj["monitor_params"] = TreeParams.from_json(obj["monitor_params"])
        if "budget" in obj:
            obj["budget"] = AttackBudget(**obj["budget"])
        if "fractions" in obj:
            obj["fractions"] = tuple(obj["fractions"])
        if "k_list" in obj:
            obj["k_list"] = tuple(obj["k_list"])
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class TraceRow:
    queries_per_user: int
    strategy: str
    k: int
    status: float
    users: tuple[str, ...]
    one_minus_r_test: float
    one_minus_r_unif: float


TRACE_HEADER = ["queries_per_user", "strategy", "k", "status", "users", "one_minus_r_test", "one_minus_r_unif"]


@dataclass
class RunResult:
    rows: list[TraceRow]
    events: list[WarningEvent]
    source: DecisionTree
    users: dict

    def final(self, strategy: str, k: int) -> TraceRow:
        return [r for r in self.rows if r.strategy == strategy and r.k == k][-1]

    def series(self, strategy: str, k: int) -> list[TraceRow]:
        return [r for r in self.rows if r.strategy == strategy and r.k == k]

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        trace, warnings = out / "trace.csv", out / "warnings.jsonl"
        write_trace_rows(trace, self.rows)
        with open(warnings, "w", encoding="utf-8") as fh:
            for e in self.events:
                fh.write(e.dumps() + "\n")
        return trace, warnings


def write_trace_rows(path, rows: Sequence[TraceRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for r in rows:
            w.writerow([r.queries_per_user, r.strategy, r.k, repr(r.status), ";".join(r.users),
                        repr(r.one_minus_r_test), repr(r.one_minus_r_unif)])


def build_monitor(source: DecisionTree, strategy: str, k_list, threshold: float, *,
                  train_set: Dataset | None = None, validation: Dataset | None = None,
                  monitor_params: TreeParams = TreeParams(), normalize: str = "source",
                  every: int | None = None) -> ExtractionMonitor:
    monitors = []
    for s in STRATEGIES[strategy]:
        if s == "ig":
            if validation is None:
                raise ScenarioError("information-gain monitor needs a validation set")
            monitors.append(IGMonitor(source, validation, threshold, monitor_params, normalize))
        else:
            if train_set is None:
                raise ScenarioError("summary monitor needs the training set for class statistics")
            monitors.append(SummaryMonitor(source, class_stats(train_set, source), threshold))
    return ExtractionMonitor(monitors, k_list, threshold, every)


def _pooled_surrogate(attacks: dict, group: Sequence[str], params: TreeParams):
    members = [attacks[u] for u in group]
    if all(isinstance(a, PathfindingAttack) for a in members):
        rules = RecoveredRuleSet()
        for a in members:
            rules = rules.merge(a.rules)
        if len(rules):
            return RuleSetClassifier(rules)
    X = [x for a in members for x in a.X]
    labels = [l for a in members for l in a.labels]
    if not labels:
        return NullClassifier()
    classes = sorted(set(labels))
    if len(classes) == 1:
        return ConstantClassifier(classes[0])
    index = {c: i for i, c in enumerate(classes)}
    return train_arrays(members[0].schema, classes, np.array(X), np.array([index[l] for l in labels]), params)


def simulate(scenario: Scenario, source: DecisionTree, train_set: Dataset, test: Dataset,
             validation: Dataset) -> RunResult:
    """Run every simulated user to budget, interleaved one query per user per round."""
    schema = source.schema
    scenario.validate(schema)
    monitor = build_monitor(source, scenario.strategy, scenario.k_list, scenario.threshold,
                            train_set=train_set, validation=validation,
                            monitor_params=scenario.monitor_params, normalize=scenario.normalize)
    unif = sample_uniform(schema, scenario.unif_n, scenario.unif_seed)
    width = len(str(scenario.n_users - 1))
    user_ids = [f"user{i:0{width}d}" for i in range(scenario.n_users)]
    attacks, streams = {}, {}
    for i, (uid, kind) in enumerate(zip(user_ids, scenario.attacks())):
        a = make_attack(kind, source.predict, schema, scenario.user_seed(i), scenario.eps, scenario.monitor_params)
        attacks[uid] = a
        streams[uid] = a.steps()

    rows: list[TraceRow] = []
    total = 0
    last: list = [None, None]

    def score(rounds: int, results: dict) -> list[TraceRow]:
        out, surrogates = [], {}
        for (strategy, k), res in results.items():
            group = res.users or tuple(sorted(u for u in user_ids if attacks[u].X)[:k])
            if group not in surrogates:
                model = _pooled_surrogate(attacks, group, scenario.monitor_params) if group else NullClassifier()
                surrogates[group] = (1.0 - disagreement(model, source, test.X),
                                     1.0 - disagreement(model, source, unif))
            acc_test, acc_unif = surrogates[group]
            out.append(TraceRow(rounds, strategy, k, res.status, res.users, acc_test, acc_unif))
        return out

    def checkpoint(rounds: int):
        results, _ = monitor.checkpoint(ts=total)
        last[:] = [rounds, results]
        rows.extend(score(rounds, results))

    budget = scenario.budget.max_queries
    every = scenario.budget.checkpoint_every
    rounds = 0
    active = list(user_ids)
    while active and (budget is None or rounds < budget):
        for uid in list(active):
            try:
                x, pred = next(streams[uid])
            except StopIteration:
                active.remove(uid)
                continue
            monitor.observe(uid, x, pred)
            total += 1
        if not active:
            break
        rounds += 1
        if rounds % every == 0:
            checkpoint(rounds)
    if last[0] != rounds:
        checkpoint(rounds)
    else:
        # attacks that finished after this checkpoint may have recorded more rules since
        del rows[len(rows) - len(last[1]):]
        rows.extend(score(rounds, last[1]))
    log.info("simulated %d users, %d queries, %d checkpoints", len(user_ids), total, len(rows))
    return RunResult(rows, list(monitor.events), source, attacks)


def prepare(scenario: Scenario):
    """Load, split and train the source tree described by ``scenario``."""
    schema = load_schema(scenario.schema)
    scenario.validate(schema)
    data = load_csv(scenario.dataset, schema)
    train_set, test, validation = split(data, scenario.fractions, scenario.split_seed)
    source = train(train_set, scenario.tree_params)
    return source, train_set, test, validation


def run(scenario: Scenario, write: bool = True) -> RunResult:
    source, train_set, test, validation = prepare(scenario)
    result = simulate(scenario, source, train_set, test, validation)
    if write:
        result.write(scenario.out_dir)
    return result


def replay(records, monitor: ExtractionMonitor) -> list[WarningEvent]:
    """Feed a recorded ``(user, x, prediction)`` log through ``monitor`` in order."""
    events = []
    for user, x, pred in records:
        events += monitor.observe(user, x, pred)
    return events
