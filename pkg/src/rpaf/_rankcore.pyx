# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled streaming rank index (hot path of the allocation stage).

Mirror of _rankcore_py.py; any semantic change must be made in both.
Typed-memoryview implementation, no numpy C-API.
"""
from libc.math cimport floor, ceil

import numpy as np

BACKEND_NAME = "compiled"

cdef double _BUCKET_GUARD = 1e-9


cpdef int num_buckets(double eta) except -1:
    """Bucket count for a resolution: ceil(1/eta) with a float guard so
    exactly-dividing resolutions (0.1, 0.001) do not gain a phantom bucket."""
    if not 0.0 < eta < 1.0:
        raise ValueError("resolution must lie in (0, 1)")
    return <int>ceil(1.0 / eta - _BUCKET_GUARD)


cdef inline int _bucket(double value, double eta, int nb) nogil:
    cdef int b = <int>floor(value / eta + _BUCKET_GUARD)
    if b < 0:
        return 0
    if b >= nb:
        return nb - 1
    return b


cpdef int bucket_of(double value, double eta, int nb):
    """floor(value/eta) with a guard against x/eta landing just below an
    integer, clamped into [0, nb-1] so value=1.0 maps to the last bucket."""
    return _bucket(value, eta, nb)


cdef class RankCore:
    """Dual-buffer bucket index over one period's pool of relaxed actions.

    `observe` fills the current period's counting array C; `rotate`
    publishes strict-greater suffix sums of C as the online rank array
    and clears C, so queries always rank against the previous period.
    """

    cdef public double eta
    cdef public int nb
    cdef object _c_arr, _a_arr
    cdef long long[::1] _c
    cdef long long[::1] _a_online

    def __init__(self, eta):
        self.eta = float(eta)
        self.nb = num_buckets(self.eta)
        self._c_arr = np.zeros(self.nb, dtype=np.int64)
        self._a_arr = np.zeros(self.nb, dtype=np.int64)
        self._c = self._c_arr
        self._a_online = self._a_arr

    cpdef int bucket(self, double value):
        return _bucket(value, self.eta, self.nb)

    cpdef int rank(self, double value):
        """Number of previous-period entries in strictly higher buckets."""
        return <int>self._a_online[_bucket(value, self.eta, self.nb)]

    cpdef observe(self, double value):
        self._c[_bucket(value, self.eta, self.nb)] += 1

    cpdef tuple decide(self, double value, long long budget_m,
                       long long consumed):
        """One streaming admission: returns (action, new_consumed).

        Provisionally admit iff rank < budget_m, downgrade to 0 when the
        ledger is exhausted, and record the value in C either way.
        """
        cdef int b = _bucket(value, self.eta, self.nb)
        cdef int action = 1 if self._a_online[b] < budget_m else 0
        if action == 1:
            if consumed >= budget_m:
                action = 0
            else:
                consumed += 1
        self._c[b] += 1
        return action, consumed

    cpdef tuple decide_stream(self, values, long long budget_m,
                              long long consumed=0):
        """Vector form of decide over one period's arrival order."""
        cdef double[::1] vals = np.ascontiguousarray(values, dtype=np.float64)
        actions_arr = np.zeros(vals.shape[0], dtype=np.int64)
        cdef long long[::1] actions = actions_arr
        cdef Py_ssize_t i
        cdef int b, action
        cdef double eta = self.eta
        cdef int nb = self.nb
        for i in range(vals.shape[0]):
            b = _bucket(vals[i], eta, nb)
            action = 1 if self._a_online[b] < budget_m else 0
            if action == 1:
                if consumed >= budget_m:
                    action = 0
                else:
                    consumed += 1
            self._c[b] += 1
            actions[i] = action
        return actions_arr, consumed

    cpdef rotate(self):
        """Period boundary: build suffix sums of C, swap them online,
        reset C."""
        fresh_arr = np.zeros(self.nb, dtype=np.int64)
        cdef long long[::1] fresh = fresh_arr
        cdef long long total = 0
        cdef Py_ssize_t i
        for i in range(self.nb - 1, -1, -1):
            fresh[i] = total
            total += self._c[i]
        self._a_arr = fresh_arr
        self._a_online = fresh
        self._c_arr = np.zeros(self.nb, dtype=np.int64)
        self._c = self._c_arr

    cpdef counts(self):
        return np.asarray(self._c_arr).copy()

    cpdef online(self):
        return np.asarray(self._a_arr).copy()

    cpdef set_online(self, arr):
        """Test hook: overwrite the online rank array (negative controls)."""
        arr = np.ascontiguousarray(arr, dtype=np.int64)
        if arr.shape[0] != self.nb or arr.ndim != 1:
            raise ValueError("online array shape mismatch")
        self._a_arr = arr.copy()
        self._a_online = self._a_arr
