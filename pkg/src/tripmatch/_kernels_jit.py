"""Numba kernel backend: @njit builds of the hot loops.

match_block compiles the shared source from _match_core; chain_scan is the
straightforward sequential loop (the numpy backend carries the vectorized
equivalent). nogil lets the matcher fan blocks out across threads; cache=True
persists compiled code next to the package so repeat runs skip compilation.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from . import _match_core
from ._kernels_np import (  # noqa: F401  (shared reason codes)
    REASON_ABORTED_BY_TAP_IN,
    REASON_IN_JOURNEY,
    REASON_MISSING_TAP_OUT,
    REASON_NO_OPEN_JOURNEY,
    REASON_NON_INCREASING_TIME,
)
from ._match_core import TX_IN, TX_OUT, TX_TR  # noqa: F401

match_block = njit(cache=True, nogil=True)(_match_core.match_block)


@njit(cache=True, nogil=True)
def _chain_scan_loop(card, t, tx):
    n = card.size
    reason = np.full(n, -1, dtype=np.int8)
    cap = n // 2 + 1
    jy_lo = np.empty(cap, np.int64)
    jy_hi = np.empty(cap, np.int64)
    nj = 0
    open_start = -1
    for i in range(n):
        if open_start >= 0 and card[i] != card[open_start]:
            for k in range(open_start, i):
                reason[k] = 2  # MISSING_TAP_OUT at card end
            open_start = -1
        if open_start >= 0 and t[i] <= t[i - 1]:
            for k in range(open_start, i):
                reason[k] = 3  # NON_INCREASING_TIME
            open_start = -1
        if tx[i] == 0:  # tap-in
            if open_start >= 0:
                for k in range(open_start, i):
                    reason[k] = 1  # ABORTED_BY_TAP_IN
            open_start = i
        elif tx[i] == 1:  # transfer
            if open_start < 0:
                reason[i] = 0  # NO_OPEN_JOURNEY
        else:  # tap-out
            if open_start >= 0:
                jy_lo[nj] = open_start
                jy_hi[nj] = i + 1
                nj += 1
                open_start = -1
            else:
                reason[i] = 0
    if open_start >= 0:
        for k in range(open_start, n):
            reason[k] = 2
    return jy_lo[:nj], jy_hi[:nj], reason


def chain_scan(card: np.ndarray, t: np.ndarray, tx: np.ndarray):
    return _chain_scan_loop(card, t, tx)
