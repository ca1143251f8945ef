"""Pure-Python streaming rank index (fallback backend).

Semantics must stay bit-identical to the compiled backend in
_rankcore.pyx: same bucket arithmetic (including the 1e-9 float guard),
same strict-greater rank convention, same decide/rotate behavior.
"""
from __future__ import annotations

import math

import numpy as np

BACKEND_NAME = "pure"

_BUCKET_GUARD = 1e-9


def num_buckets(eta):
    """Bucket count for a resolution: ceil(1/eta) with a float guard so
    exactly-dividing resolutions (0.1, 0.001) do not gain a phantom bucket."""
    if not 0.0 < eta < 1.0:
        raise ValueError("resolution must lie in (0, 1)")
    return int(math.ceil(1.0 / eta - _BUCKET_GUARD))


def bucket_of(value, eta, nb):
    """floor(value/eta) with a guard against x/eta landing just below an
    integer, clamped into [0, nb-1] so value=1.0 maps to the last bucket."""
    b = int(math.floor(value / eta + _BUCKET_GUARD))
    if b < 0:
        return 0
    if b >= nb:
        return nb - 1
    return b


class RankCore:
    """Dual-buffer bucket index over one period's pool of relaxed actions.

    `observe` fills the current period's counting array C; `rotate`
    publishes strict-greater suffix sums of C as the online rank array
    and clears C, so queries always rank against the previous period.
    """

    def __init__(self, eta):
        self.eta = float(eta)
        self.nb = num_buckets(eta)
        self._c = np.zeros(self.nb, dtype=np.int64)
        self._a_online = np.zeros(self.nb, dtype=np.int64)

    def bucket(self, value):
        return bucket_of(value, self.eta, self.nb)

    def rank(self, value):
        """Number of previous-period entries in strictly higher buckets."""
        return int(self._a_online[self.bucket(value)])

    def observe(self, value):
        self._c[self.bucket(value)] += 1

    def decide(self, value, budget_m, consumed):
        """One streaming admission: returns (action, new_consumed).

        Provisionally admit iff rank < budget_m, downgrade to 0 when the
        ledger is exhausted, and record the value in C either way.
        """
        b = self.bucket(value)
        action = 1 if self._a_online[b] < budget_m else 0
        if action == 1:
            if consumed >= budget_m:
                action = 0
            else:
                consumed += 1
        self._c[b] += 1
        return action, consumed

    def decide_stream(self, values, budget_m, consumed=0):
        """Vector form of decide over one period's arrival order."""
        values = np.ascontiguousarray(values, dtype=np.float64)
        actions = np.zeros(values.shape[0], dtype=np.int64)
        for i in range(values.shape[0]):
            actions[i], consumed = self.decide(values[i], budget_m, consumed)
        return actions, consumed

    def rotate(self):
        """Period boundary: build suffix sums of C, swap them online,
        reset C."""
        fresh = np.zeros(self.nb, dtype=np.int64)
        total = 0
        for i in range(self.nb - 1, -1, -1):
            fresh[i] = total
            total += self._c[i]
        self._a_online = fresh
        self._c = np.zeros(self.nb, dtype=np.int64)

    def counts(self):
        return self._c.copy()

    def online(self):
        return self._a_online.copy()

    def set_online(self, arr):
        """Test hook: overwrite the online rank array (negative controls)."""
        arr = np.asarray(arr, dtype=np.int64)
        if arr.shape != (self.nb,):
            raise ValueError("online array shape mismatch")
        self._a_online = arr.copy()
