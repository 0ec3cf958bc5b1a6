"""Pure numpy kernel backend.

chain_scan is a genuinely vectorized reformulation of the sequential
chaining rules; match_block is the shared loop source executed by the
interpreter. Outputs are bit-identical to the jit backend (enforced by the
parity tests).
"""

from __future__ import annotations

import numpy as np

from ._match_core import TX_IN, TX_OUT, match_block  # noqa: F401  (re-exported)

# Orphan reason codes shared by both backends.
REASON_IN_JOURNEY = -1
REASON_NO_OPEN_JOURNEY = 0
REASON_ABORTED_BY_TAP_IN = 1
REASON_MISSING_TAP_OUT = 2
REASON_NON_INCREASING_TIME = 3


def _fill_intervals(target: np.ndarray, starts: np.ndarray, stops: np.ndarray, codes) -> None:
    """target[s:e] = code for every interval; vectorized grouped-arange."""
    lengths = stops - starts
    keep = lengths > 0
    if not np.any(keep):
        return
    codes_arr = np.broadcast_to(np.asarray(codes, dtype=target.dtype), keep.shape)[keep]
    starts, lengths = starts[keep], lengths[keep]
    offsets = np.repeat(np.cumsum(lengths) - lengths, lengths)
    idx = np.repeat(starts, lengths) + (np.arange(int(lengths.sum())) - offsets)
    target[idx] = np.repeat(codes_arr, lengths)


def chain_scan(card: np.ndarray, t: np.ndarray, tx: np.ndarray):
    """Chain taps into journeys over a (card, time)-sorted stream.

    A tap-in opens a journey, transfers extend it, the first tap-out closes
    it. A tap-in over an open journey orphans the open taps; transfers and
    tap-outs with nothing open are orphaned; a non-increasing timestamp
    orphans the open journey. Returns (journey_lo, journey_hi, reason) where
    reason[i] is an orphan code or -1 for taps inside complete journeys.
    """
    n = card.size
    reason = np.full(n, REASON_IN_JOURNEY, dtype=np.int8)
    if n == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64), reason

    new_card = np.empty(n, dtype=bool)
    new_card[0] = True
    new_card[1:] = card[1:] != card[:-1]
    tie = np.zeros(n, dtype=bool)
    tie[1:] = ~new_card[1:] & (t[1:] <= t[:-1])
    brk = new_card | tie | (tx == TX_IN)

    run_lo = np.flatnonzero(brk).astype(np.int64)
    run_hi = np.append(run_lo[1:], n)
    starts_in = tx[run_lo] == TX_IN

    out_pos = np.where(tx == TX_OUT, np.arange(n, dtype=np.int64), np.int64(n))
    first_out = np.minimum.reduceat(out_pos, run_lo)
    has_out = first_out < run_hi

    is_journey = starts_in & has_out
    jy_lo = run_lo[is_journey]
    jy_hi = first_out[is_journey] + 1

    # Orphans: taps trailing a closed journey inside its run.
    _fill_intervals(reason, jy_hi, run_hi[is_journey], REASON_NO_OPEN_JOURNEY)
    # Runs that never opened a journey.
    not_in = ~starts_in
    _fill_intervals(reason, run_lo[not_in], run_hi[not_in], REASON_NO_OPEN_JOURNEY)
    # Opened but never closed: reason depends on what ended the run.
    dangling = starts_in & ~has_out
    if np.any(dangling):
        d_lo, d_hi = run_lo[dangling], run_hi[dangling]
        ended_at_streams_end = d_hi == n
        codes = np.full(d_lo.size, REASON_ABORTED_BY_TAP_IN, dtype=np.int8)
        nxt = np.minimum(d_hi, n - 1)
        codes[new_card[nxt]] = REASON_MISSING_TAP_OUT
        codes[tie[nxt] & ~new_card[nxt]] = REASON_NON_INCREASING_TIME
        codes[ended_at_streams_end] = REASON_MISSING_TAP_OUT
        _fill_intervals(reason, d_lo, d_hi, codes)

    return jy_lo, jy_hi, reason
