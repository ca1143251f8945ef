"""Allocation stage: budget ledger, streaming PoolRank admission, batch
oracles and the baseline allocators.

The rank-index hot path has two interchangeable backends: a compiled
extension (_rankcore) and a pure-Python fallback (_rankcore_py). The
backend is chosen once at import. Set RPAF_BACKEND=pure or
RPAF_BACKEND=compiled to force one; forcing `compiled` raises if the
extension was not built.
"""
from __future__ import annotations

import os

import numpy as np

from . import _rankcore_py


def _select_backend():
    forced = os.environ.get("RPAF_BACKEND", "").strip().lower()
    if forced == "pure":
        return _rankcore_py
    if forced == "compiled":
        from . import _rankcore
        return _rankcore
    if forced:
        raise ValueError(
            f"RPAF_BACKEND must be 'pure' or 'compiled', got {forced!r}")
    try:
        from . import _rankcore
        return _rankcore
    except ImportError:
        return _rankcore_py


_backend = _select_backend()

BACKEND = _backend.BACKEND_NAME
RankIndex = _backend.RankCore
num_buckets = _backend.num_buckets


def backend_module(name=None):
    """Return a rank-index backend module by name (both for benchmarks,
    the active one when name is None)."""
    if name is None:
        return _backend
    if name == "pure":
        return _rankcore_py
    if name == "compiled":
        from . import _rankcore
        return _rankcore
    raise ValueError(f"unknown backend {name!r}")


def bucketize(a_tilde, eta):
    """Bucket index floor(a_tilde/eta), clamped so a_tilde=1.0 lands in
    the last bucket."""
    return _backend.bucket_of(float(a_tilde), float(eta),
                              _backend.num_buckets(float(eta)))


class BudgetLedger:
    """Strict per-period counter: at most `period_budget` consumptions
    between resets, regardless of what any rank estimate says."""

    def __init__(self, period_budget):
        if period_budget <= 0 or int(period_budget) != period_budget:
            raise ValueError("period budget must be a positive integer")
        self.period_budget = int(period_budget)
        self.consumed = 0
        self.period_id = 0

    def try_consume(self):
        """Consume one unit if quota remains; False means downgrade."""
        if self.consumed < self.period_budget:
            self.consumed += 1
            return True
        return False

    def remaining(self):
        return self.period_budget - self.consumed

    def reset(self):
        self.consumed = 0
        self.period_id += 1


class PoolRankAllocator:
    """Streaming admission: rank each relaxed action against the
    previous period's pool and admit while rank < M, ledger permitting.
    Every observed action feeds the next period's index.
    """

    name = "poolrank"

    def __init__(self, period_budget, eta):
        self.ledger = BudgetLedger(period_budget)
        self.index = RankIndex(eta)

    def decide(self, a_tilde):
        rank = self.index.rank(a_tilde)
        admit = rank < self.ledger.period_budget
        action = 1 if (admit and self.ledger.try_consume()) else 0
        self.index.observe(a_tilde)
        return action

    def end_period(self):
        self.index.rotate()
        self.ledger.reset()


class ThresholdAllocator:
    """Round the relaxed action at a fixed threshold, ledger permitting.
    No cross-request pool; isolates what the rank index adds."""

    name = "threshold"

    def __init__(self, period_budget, threshold=0.5):
        if not 0.0 <= threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        self.ledger = BudgetLedger(period_budget)
        self.threshold = float(threshold)

    def decide(self, a_tilde):
        want = a_tilde >= self.threshold
        return 1 if (want and self.ledger.try_consume()) else 0

    def end_period(self):
        self.ledger.reset()


class GreedyAllocator:
    """First-come-first-served: real-time while quota remains."""

    name = "greedy"

    def __init__(self, period_budget):
        self.ledger = BudgetLedger(period_budget)

    def decide(self, a_tilde=None):
        return 1 if self.ledger.try_consume() else 0

    def end_period(self):
        self.ledger.reset()


class AllRealtimeAllocator:
    """Unbudgeted upper-bound reference: every request real-time."""

    name = "all-realtime"

    def __init__(self, period_budget=None):
        self.ledger = None

    def decide(self, a_tilde=None):
        return 1

    def end_period(self):
        pass


def batch_oracle(values, budget_m):
    """Binary vector selecting the budget_m largest values, ties broken
    by lowest index (arrival order)."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    if not 0 <= budget_m <= n:
        raise ValueError("budget must lie in [0, len(values)]")
    order = np.argsort(-values, kind="stable")
    actions = np.zeros(n, dtype=np.int64)
    actions[order[:budget_m]] = 1
    return actions
