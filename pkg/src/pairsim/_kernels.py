"""Sequential hot loops, compiled with numba when available.

Every kernel has a pure-numpy twin with identical results.  The numba path
is used unless numba is missing or ``PAIRSIM_DISABLE_NUMBA`` is set to a
non-empty value other than ``0``.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None


def _numba_disabled() -> bool:
    flag = os.environ.get("PAIRSIM_DISABLE_NUMBA", "")
    return flag not in ("", "0")


HAVE_NUMBA = numba is not None
BACKEND = "numba" if HAVE_NUMBA and not _numba_disabled() else "numpy"


# --------------------------------------------------------------------------
# numpy implementations


def dead_time_mask_numpy(times, dead_time):
    """Keep-mask of a non-paralyzable dead-time filter over sorted ``times``."""
    times = np.asarray(times, dtype=np.int64)
    n = times.size
    keep = np.zeros(n, dtype=bool)
    if n == 0:
        return keep
    if dead_time <= 0:
        keep[:] = True
        return keep
    # A tag at least one dead time after its predecessor is always kept; every
    # other kept tag is the first one at least one dead time after a kept tag.
    gaps = np.diff(times)
    frontier = np.flatnonzero(np.concatenate(([True], gaps >= dead_time)))
    keep[frontier] = True
    while frontier.size:
        nxt = np.searchsorted(times, times[frontier] + dead_time, side="left")
        nxt = nxt[nxt < n]
        nxt = np.unique(nxt[~keep[nxt]])
        keep[nxt] = True
        frontier = nxt
    return keep


def tia_intervals_numpy(starts, stops, start_dead_time, lower, upper):
    """Start/stop intervals for sorted ``starts`` and ``stops``.

    Each start accepted by the dead-time rule records ``stop - start`` of the
    first stop with ``lower <= stop - start <= upper``.  Returns the intervals
    and the indices of the starts that produced them.
    """
    starts = np.asarray(starts, dtype=np.int64)
    stops = np.asarray(stops, dtype=np.int64)
    accepted = np.flatnonzero(dead_time_mask_numpy(starts, start_dead_time))
    if accepted.size == 0 or stops.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    t0 = starts[accepted]
    idx = np.searchsorted(stops, t0 + lower, side="left")
    ok = idx < stops.size
    idx = idx[ok]
    t0 = t0[ok]
    src = accepted[ok]
    dt = stops[idx] - t0
    ok = dt <= upper
    return dt[ok], src[ok]


def merge_sorted_numpy(a, b):
    """Merge two sorted int64 arrays; returns merged values and a source flag (0 = a, 1 = b).

    Ties place elements of ``a`` first.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    values = np.concatenate((a, b))
    source = np.concatenate((np.zeros(a.size, np.uint8), np.ones(b.size, np.uint8)))
    order = np.argsort(values, kind="stable")
    return values[order], source[order]


# --------------------------------------------------------------------------
# numba implementations


def _dead_time_mask_loop(times, dead_time):
    n = times.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    if n == 0:
        return keep
    last = times[0]
    keep[0] = True
    for k in range(1, n):
        if times[k] - last >= dead_time:
            keep[k] = True
            last = times[k]
    return keep


def _tia_loop(starts, stops, start_dead_time, lower, upper):
    n = starts.shape[0]
    m = stops.shape[0]
    out = np.empty(n, dtype=np.int64)
    src = np.empty(n, dtype=np.int64)
    count = 0
    j = 0
    have_last = False
    last = np.int64(0)
    for k in range(n):
        t0 = starts[k]
        if have_last and t0 - last < start_dead_time:
            continue
        have_last = True
        last = t0
        while j < m and stops[j] - t0 < lower:
            j += 1
        if j < m and stops[j] - t0 <= upper:
            out[count] = stops[j] - t0
            src[count] = k
            count += 1
    return out[:count], src[:count]


def _merge_loop(a, b):
    na = a.shape[0]
    nb = b.shape[0]
    values = np.empty(na + nb, dtype=np.int64)
    source = np.empty(na + nb, dtype=np.uint8)
    i = 0
    j = 0
    k = 0
    while i < na and j < nb:
        if b[j] < a[i]:
            values[k] = b[j]
            source[k] = 1
            j += 1
        else:
            values[k] = a[i]
            source[k] = 0
            i += 1
        k += 1
    while i < na:
        values[k] = a[i]
        source[k] = 0
        i += 1
        k += 1
    while j < nb:
        values[k] = b[j]
        source[k] = 1
        j += 1
        k += 1
    return values, source


if HAVE_NUMBA:
    _dead_time_mask_nb = numba.njit(cache=True, nogil=True)(_dead_time_mask_loop)
    _tia_nb = numba.njit(cache=True, nogil=True)(_tia_loop)
    _merge_nb = numba.njit(cache=True, nogil=True)(_merge_loop)

    def dead_time_mask_numba(times, dead_time):
        times = np.ascontiguousarray(times, dtype=np.int64)
        if dead_time <= 0:
            return np.ones(times.size, dtype=bool)
        return _dead_time_mask_nb(times, np.int64(dead_time))

    def tia_intervals_numba(starts, stops, start_dead_time, lower, upper):
        return _tia_nb(
            np.ascontiguousarray(starts, dtype=np.int64),
            np.ascontiguousarray(stops, dtype=np.int64),
            np.int64(start_dead_time),
            np.int64(lower),
            np.int64(upper),
        )

    def merge_sorted_numba(a, b):
        return _merge_nb(
            np.ascontiguousarray(a, dtype=np.int64), np.ascontiguousarray(b, dtype=np.int64)
        )


IMPLEMENTATIONS = {
    "numpy": {
        "dead_time_mask": dead_time_mask_numpy,
        "tia_intervals": tia_intervals_numpy,
        "merge_sorted": merge_sorted_numpy,
    },
}
if HAVE_NUMBA:
    IMPLEMENTATIONS["numba"] = {
        "dead_time_mask": dead_time_mask_numba,
        "tia_intervals": tia_intervals_numba,
        "merge_sorted": merge_sorted_numba,
    }

dead_time_mask = IMPLEMENTATIONS[BACKEND]["dead_time_mask"]
tia_intervals = IMPLEMENTATIONS[BACKEND]["tia_intervals"]
merge_sorted = IMPLEMENTATIONS[BACKEND]["merge_sorted"]
