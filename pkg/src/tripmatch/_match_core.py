"""Backend-neutral source of the candidate-scoring kernel.

match_block below is written in the numba-compilable subset of Python: the
jit backend compiles this exact function, the numpy backend runs it as-is.
Keep it free of Python objects; everything is primitive ints and ndarrays.

Per respondent it
  1. looks up, for every trip, the journeys whose service day and
     first/last endpoints equal the trip's (a packed-key CSR),
  2. intersects the per-trip card lists to get candidate cards,
  3. scores each candidate with a dynamic program over (trip, journey)
     that finds the cheapest order-preserving injective assignment
     (extra journeys on the card are skippable),
  4. keeps the minimum-total card, the runner-up, and an exact-tie flag.

Ties between cards break toward the smaller card code; card codes are
assigned in lexicographic card-id order, so this is the smallest card id.
Within a card, equal-cost assignments resolve toward the earliest journeys
(backtracking prefers "skip" on equality). Both rules make the output a pure
function of the inputs, independent of scheduling.
"""

import numpy as np

INF = np.int64(1) << np.int64(60)

TX_IN = 0
TX_TR = 1
TX_OUT = 2

STATUS_NO_CANDIDATE = 0
STATUS_MATCHED = 1


def match_block(
    lo,
    hi,
    n_trips,
    sp_first,
    sp_last,
    sp_tf,
    sp_tl,
    r_day,
    fk_keys,
    fk_off,
    fk_jidx,
    cd_keys,
    cd_off,
    cd_jidx,
    j_card,
    j_first,
    j_last,
    j_tin,
    j_tout,
    ep_base,
    day_base,
    window_s,
    out_status,
    out_best_card,
    out_second_card,
    out_best_total,
    out_second_total,
    out_tie,
    out_bj,
    out_sj,
    out_bdf,
    out_bdl,
    out_sdf,
    out_sdl,
):
    slo = np.empty(3, np.int64)
    shi = np.empty(3, np.int64)
    ptr = np.empty(3, np.int64)
    for r in range(lo, hi):
        out_status[r] = STATUS_NO_CANDIDATE
        out_best_card[r] = -1
        out_second_card[r] = -1
        out_best_total[r] = -1
        out_second_total[r] = -1
        out_tie[r] = 0
        for i in range(3):
            out_bj[r, i] = -1
            out_sj[r, i] = -1
            out_bdf[r, i] = 0
            out_bdl[r, i] = 0
            out_sdf[r, i] = 0
            out_sdl[r, i] = 0

        n_i = n_trips[r]
        day = r_day[r]
        if day < 0 or n_i <= 0:
            continue

        # Per-trip feasible-journey slices; a trip with no feasible journey
        # anywhere means no candidate card can exist.
        feasible = True
        for i in range(n_i):
            f = sp_first[r, i]
            l = sp_last[r, i]
            if f < 0 or l < 0:
                feasible = False
                break
            key = (day * ep_base + f) * ep_base + l
            pos = np.searchsorted(fk_keys, key)
            if pos >= fk_keys.size or fk_keys[pos] != key:
                feasible = False
                break
            slo[i] = fk_off[pos]
            shi[i] = fk_off[pos + 1]
        if not feasible:
            continue

        best_total = INF
        best_card = np.int64(-1)
        second_total = INF
        second_card = np.int64(-1)
        tie = 0

        for i in range(n_i):
            ptr[i] = slo[i]

        while True:
            # Highest card code under the pointers; advance everyone to it.
            target = np.int64(-1)
            exhausted = False
            for i in range(n_i):
                if ptr[i] >= shi[i]:
                    exhausted = True
                    break
                c = np.int64(j_card[fk_jidx[ptr[i]]])
                if c > target:
                    target = c
            if exhausted:
                break
            aligned = True
            for i in range(n_i):
                while ptr[i] < shi[i] and j_card[fk_jidx[ptr[i]]] < target:
                    ptr[i] += 1
                if ptr[i] >= shi[i]:
                    exhausted = True
                    break
                if j_card[fk_jidx[ptr[i]]] != target:
                    aligned = False
            if exhausted:
                break
            if not aligned:
                continue

            # Candidate card: DP over its journeys that day.
            ckey = target * day_base + day
            cpos = np.searchsorted(cd_keys, ckey)
            if cpos >= cd_keys.size or cd_keys[cpos] != ckey:
                # Cannot happen for cards found via the feasibility index.
                for i in range(n_i):
                    while ptr[i] < shi[i] and j_card[fk_jidx[ptr[i]]] == target:
                        ptr[i] += 1
                continue
            jlo = cd_off[cpos]
            jhi = cd_off[cpos + 1]
            nj = jhi - jlo
            total = INF
            if nj >= n_i:
                prev = np.empty(nj + 1, np.int64)
                cur = np.empty(nj + 1, np.int64)
                for j in range(nj + 1):
                    prev[j] = 0
                for i in range(n_i):
                    for j in range(i + 1):
                        cur[j] = INF
                    for j in range(i, nj):
                        jj = cd_jidx[jlo + j]
                        cost = INF
                        if j_first[jj] == sp_first[r, i] and j_last[jj] == sp_last[r, i]:
                            df = j_tin[jj] - sp_tf[r, i]
                            dl = j_tout[jj] - sp_tl[r, i]
                            adf = df if df >= 0 else -df
                            adl = dl if dl >= 0 else -dl
                            if window_s <= 0 or (adf <= window_s and adl <= window_s):
                                cost = adf + adl
                        take = INF
                        if prev[j] < INF and cost < INF:
                            take = prev[j] + cost
                        skip = cur[j]
                        cur[j + 1] = take if take < skip else skip
                    tmp = prev
                    prev = cur
                    cur = tmp
                total = prev[nj]

            if total < INF:
                if total < best_total:
                    second_total = best_total
                    second_card = best_card
                    best_total = total
                    best_card = target
                    tie = 0
                elif total == best_total:
                    tie = 1
                    if total < second_total:
                        second_total = total
                        second_card = target
                elif total < second_total:
                    second_total = total
                    second_card = target

            for i in range(n_i):
                while ptr[i] < shi[i] and j_card[fk_jidx[ptr[i]]] == target:
                    ptr[i] += 1

        if best_card < 0:
            continue

        out_status[r] = STATUS_MATCHED
        out_best_card[r] = best_card
        out_best_total[r] = best_total
        out_tie[r] = tie
        if second_card >= 0:
            out_second_card[r] = second_card
            out_second_total[r] = second_total

        # Backtrack per winning card to recover journeys and signed deltas.
        for which in range(2):
            card = best_card if which == 0 else second_card
            if card < 0:
                continue
            ckey = card * day_base + day
            cpos = np.searchsorted(cd_keys, ckey)
            jlo = cd_off[cpos]
            jhi = cd_off[cpos + 1]
            nj = jhi - jlo
            width = nj + 1
            dp = np.empty((n_i + 1) * width, np.int64)
            for j in range(width):
                dp[j] = 0
            for i in range(1, n_i + 1):
                row = i * width
                prow = row - width
                for j in range(width):
                    dp[row + j] = INF
                for j in range(i, nj + 1):
                    jj = cd_jidx[jlo + j - 1]
                    cost = INF
                    if j_first[jj] == sp_first[r, i - 1] and j_last[jj] == sp_last[r, i - 1]:
                        df = j_tin[jj] - sp_tf[r, i - 1]
                        dl = j_tout[jj] - sp_tl[r, i - 1]
                        adf = df if df >= 0 else -df
                        adl = dl if dl >= 0 else -dl
                        if window_s <= 0 or (adf <= window_s and adl <= window_s):
                            cost = adf + adl
                    take = INF
                    if dp[prow + j - 1] < INF and cost < INF:
                        take = dp[prow + j - 1] + cost
                    skip = dp[row + j - 1]
                    dp[row + j] = take if take < skip else skip
            i = n_i
            j = nj
            while i > 0:
                row = i * width
                if j > i and dp[row + j] == dp[row + j - 1]:
                    j -= 1  # skip: prefer earliest feasible journeys
                    continue
                jj = cd_jidx[jlo + j - 1]
                if which == 0:
                    out_bj[r, i - 1] = jj
                    out_bdf[r, i - 1] = j_tin[jj] - sp_tf[r, i - 1]
                    out_bdl[r, i - 1] = j_tout[jj] - sp_tl[r, i - 1]
                else:
                    out_sj[r, i - 1] = jj
                    out_sdf[r, i - 1] = j_tin[jj] - sp_tf[r, i - 1]
                    out_sdl[r, i - 1] = j_tout[jj] - sp_tl[r, i - 1]
                i -= 1
                j -= 1
