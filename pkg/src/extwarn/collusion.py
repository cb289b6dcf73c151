"""Report types and subset search shared by both monitors."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence


class CollusionError(ValueError):
    pass


@dataclass(frozen=True)
class ExtractionReport:
    user_id: str
    strategy: str
    status: float
    query_count: int
    warning: bool
    over_100: bool = False


@dataclass(frozen=True)
class CollusionResult:
    users: tuple[str, ...]
    status: float
    method: str
    strategy: str = ""
    k: int = 0

    def to_json(self) -> dict:
        return {"users": list(self.users), "status": self.status, "method": self.method,
                "strategy": self.strategy, "k": self.k}


def brute_select(users: Sequence[str], k: int, gain: Callable[[tuple[str, ...]], float],
                 cap: int = 10_000) -> tuple[tuple[str, ...], float]:
    """Exact maximiser of ``gain`` over all k-subsets; ties go to the lexicographically first tuple."""
    users = sorted(users)
    k = min(k, len(users))
    if k < 1:
        return (), 0.0
    n_comb = math.comb(len(users), k)
    if n_comb > cap:
        raise CollusionError(f"{n_comb} combinations exceed the cap of {cap}; use greedy selection")
    best, best_gain = None, -math.inf
    for combo in itertools.combinations(users, k):
        g = gain(combo)
        if g > best_gain:
            best, best_gain = combo, g
    return best, best_gain


def greedy_select(users: Sequence[str], k: int,
                  gain: Callable[[tuple[str, ...]], float]) -> tuple[tuple[str, ...], float]:
    """Add, k times, the user whose pooled gain with the users chosen so far is highest.

    Each round takes the best candidate even if pooling lowers the gain, so
    the result is always a real subset of the size searched by brute force.
    Selection stops early only when no candidate has a positive pooled gain.
    Ties go to the lowest user id.
    """
    pool = sorted(users)
    chosen: tuple[str, ...] = ()
    current = 0.0
    for _ in range(min(k, len(pool))):
        pick, pick_gain = None, 0.0
        for u in pool:
            g = gain(tuple(sorted(chosen + (u,))))
            if g > pick_gain:
                pick, pick_gain = u, g
        if pick is None:
            break
        chosen = tuple(sorted(chosen + (pick,)))
        pool.remove(pick)
        current = pick_gain
    return chosen, current
