"""Candidate indexing and minimum-score card matching.

A respondent's reported trips are turned into match specs (endpoint keys and
reference times per trip). Candidate cards are those with at least one
endpoint-feasible order-preserving assignment of journeys to trips on the
respondent's day; every candidate is scored by the summed absolute time
differences at first and last stops, and the smallest-total card wins.
Exact ties break toward the lexicographically smallest card id and raise an
explicit tie flag; the runner-up card is tracked for ambiguity analysis.
"""

from __future__ import annotations

import csv
import datetime as dt
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import backend
from ._match_core import STATUS_MATCHED
from .errors import InvariantError, MissingEndpointError
from .ingest import DiaryRespondent, DiaryTrip, Journey, JourneyTable, classify_respondent
from .model import DiaryTime, EndpointKey, EndpointKind, normalize_endpoint
from .tables import MappingTables


class FirstStopSemantics:
    STATION_ARRIVAL = "STATION_ARRIVAL"
    BUS_BOARDING = "BUS_BOARDING"


@dataclass(frozen=True)
class TripMatchSpec:
    first_key: EndpointKey
    last_key: EndpointKey
    first_ref: DiaryTime
    last_ref: DiaryTime
    first_semantics: str


def trip_spec(trip: DiaryTrip, tables: MappingTables | None = None) -> TripMatchSpec:
    """Matching attributes of one trip.

    Rail ends match on station names (the reported arrival/alighting
    instants stand in for tap times); bus ends match on line names with
    boarding/alighting instants. Raises MissingEndpointError when the leg
    lacks the field its mode requires.
    """
    tables = tables or MappingTables()
    first_leg, last_leg = trip.legs[0], trip.legs[-1]
    if first_leg.mode.is_rail:
        if not first_leg.board_station:
            raise MissingEndpointError(f"trip {trip.respondent_id}#{trip.index_in_day}: no board station")
        first_key = normalize_endpoint(first_leg.board_station, EndpointKind.STATION, tables.alias)
        semantics = FirstStopSemantics.STATION_ARRIVAL
    else:
        if not first_leg.board_line:
            raise MissingEndpointError(f"trip {trip.respondent_id}#{trip.index_in_day}: no board line")
        first_key = normalize_endpoint(first_leg.board_line, EndpointKind.BUS_LINE, tables.alias)
        semantics = FirstStopSemantics.BUS_BOARDING
    if last_leg.mode.is_rail:
        if not last_leg.alight_station:
            raise MissingEndpointError(f"trip {trip.respondent_id}#{trip.index_in_day}: no alight station")
        last_key = normalize_endpoint(last_leg.alight_station, EndpointKind.STATION, tables.alias)
    else:
        if not last_leg.board_line:
            raise MissingEndpointError(f"trip {trip.respondent_id}#{trip.index_in_day}: no alight line")
        last_key = normalize_endpoint(last_leg.board_line, EndpointKind.BUS_LINE, tables.alias)
    return TripMatchSpec(first_key, last_key, trip.first_ref, trip.last_ref, semantics)


@dataclass(frozen=True)
class Assignment:
    """An injective order-preserving trips -> journeys map on one card.

    per_trip holds signed (card minus diary) deltas at first and last stop;
    the score is the sum of their absolute values.
    """

    journey_ids: tuple[int, ...]
    per_trip: tuple[tuple[int, int], ...]

    @property
    def total_delta_t_s(self) -> int:
        return sum(abs(f) + abs(l) for f, l in self.per_trip)


@dataclass(frozen=True)
class CardMatch:
    card_id: str
    assignment: Assignment


@dataclass(frozen=True)
class MatchResult:
    respondent_id: str
    status: str  # MATCHED | NO_CANDIDATE
    best: CardMatch | None = None
    second_best: CardMatch | None = None
    tie: bool = False

    @property
    def gap_seconds(self) -> int | None:
        if self.best is None or self.second_best is None:
            return None
        return self.second_best.assignment.total_delta_t_s - self.best.assignment.total_delta_t_s


# ---------------------------------------------------------------------------
# Index
# ---------------------------------------------------------------------------

class CandidateIndex:
    """Retrieval structure over complete journeys.

    lookup(day, key) returns the journeys whose first OR last endpoint is
    key on that service day. The packed-key CSRs drive the batch kernel.
    """

    def __init__(self, journeys: JourneyTable):
        self.journeys = journeys
        j = journeys
        n = len(j)
        self.ep_strings = j.endpoints
        self.n_endpoints = np.int64(max(len(j.endpoints), 1))
        if n:
            self.day_min = np.int64(j.day.min())
            self.day_count = np.int64(j.day.max() - self.day_min + 1)
        else:
            self.day_min = np.int64(0)
            self.day_count = np.int64(1)
        e = self.n_endpoints
        if self.day_count * e * e >= (np.int64(1) << np.int64(62)):
            raise InvariantError("packed index key would overflow int64")

        day_rel = (j.day - self.day_min).astype(np.int64)
        arange = np.arange(n, dtype=np.int64)

        k3 = (day_rel * e + j.first_ep) * e + j.last_ep
        order = np.lexsort((arange, j.tin, j.card_code, k3))
        k3s = k3[order]
        boundaries = np.flatnonzero(np.concatenate(([True], k3s[1:] != k3s[:-1])))
        self.fk_keys = k3s[boundaries] if n else np.empty(0, np.int64)
        self.fk_off = np.append(boundaries, n).astype(np.int64) if n else np.zeros(1, np.int64)
        self.fk_jidx = order.astype(np.int32)

        k2 = j.card_code.astype(np.int64) * self.day_count + day_rel
        order2 = np.lexsort((arange, j.tin, k2))
        k2s = k2[order2]
        b2 = np.flatnonzero(np.concatenate(([True], k2s[1:] != k2s[:-1])))
        self.cd_keys = k2s[b2] if n else np.empty(0, np.int64)
        self.cd_off = np.append(b2, n).astype(np.int64) if n else np.zeros(1, np.int64)
        self.cd_jidx = order2.astype(np.int32)

        # first-OR-last endpoint lookup (journeys deduplicated per key)
        ke = np.concatenate([day_rel * e + j.first_ep, day_rel * e + j.last_ep])
        jj = np.concatenate([arange, arange])
        pair = ke * max(n, 1) + jj
        pair = np.unique(pair)
        ke_u = pair // max(n, 1)
        jj_u = (pair % max(n, 1)).astype(np.int32)
        b3 = np.flatnonzero(np.concatenate(([True], ke_u[1:] != ke_u[:-1]))) if pair.size else np.empty(0, np.int64)
        self.ep_keys = ke_u[b3] if pair.size else np.empty(0, np.int64)
        self.ep_off = np.append(b3, pair.size).astype(np.int64) if pair.size else np.zeros(1, np.int64)
        self.ep_jidx = jj_u

    def ep_code(self, key: EndpointKey) -> int:
        s = key.to_string()
        pos = int(np.searchsorted(self.ep_strings, s))
        if pos < len(self.ep_strings) and str(self.ep_strings[pos]) == s:
            return pos
        return -1

    def card_code(self, card_id: str) -> int:
        cards = self.journeys.cards
        pos = int(np.searchsorted(cards, card_id))
        if pos < len(cards) and str(cards[pos]) == card_id:
            return pos
        return -1

    def day_rel(self, day: dt.date) -> int:
        rel = (day - dt.date(1970, 1, 1)).days - int(self.day_min)
        if 0 <= rel < int(self.day_count):
            return rel
        return -1

    def lookup(self, day: dt.date, key: EndpointKey) -> list[int]:
        rel = self.day_rel(day)
        code = self.ep_code(key)
        if rel < 0 or code < 0:
            return []
        k = np.int64(rel) * self.n_endpoints + code
        pos = int(np.searchsorted(self.ep_keys, k))
        if pos >= self.ep_keys.size or self.ep_keys[pos] != k:
            return []
        return self.ep_jidx[self.ep_off[pos] : self.ep_off[pos + 1]].tolist()

    def card_day_journeys(self, card_code: int, day_rel: int) -> np.ndarray:
        k = np.int64(card_code) * self.day_count + day_rel
        pos = int(np.searchsorted(self.cd_keys, k))
        if pos >= self.cd_keys.size or self.cd_keys[pos] != k:
            return np.empty(0, np.int32)
        return self.cd_jidx[self.cd_off[pos] : self.cd_off[pos + 1]]


def build_index(journeys: JourneyTable) -> CandidateIndex:
    return CandidateIndex(journeys)


# ---------------------------------------------------------------------------
# Reference scorer (pure python; the kernel reimplements this DP)
# ---------------------------------------------------------------------------

def score_assignment(specs: list[TripMatchSpec], journeys: list[Journey]) -> Assignment | None:
    """Minimum-total order-preserving assignment of trips to one card's journeys.

    specs must be ordered by first reference time, journeys by tap-in time.
    Extra journeys are skippable; returns None when no endpoint-feasible
    assignment exists. Equal-cost solutions resolve to the earliest journeys.
    """
    n_i, n_j = len(specs), len(journeys)
    if n_i == 0 or n_j < n_i:
        return None
    inf = float("inf")

    def cost(i: int, j: int) -> float:
        sp, jy = specs[i], journeys[j]
        if jy.first_endpoint != sp.first_key or jy.last_endpoint != sp.last_key:
            return inf
        df = jy.tap_in.epoch_seconds - sp.first_ref.epoch_seconds
        dl = jy.tap_out.epoch_seconds - sp.last_ref.epoch_seconds
        return abs(df) + abs(dl)

    dp = [[0.0] * (n_j + 1)] + [[inf] * (n_j + 1) for _ in range(n_i)]
    for i in range(1, n_i + 1):
        for j in range(i, n_j + 1):
            take = dp[i - 1][j - 1] + cost(i - 1, j - 1)
            skip = dp[i][j - 1]
            dp[i][j] = min(take, skip)
    if dp[n_i][n_j] == inf:
        return None

    ids: list[int] = []
    deltas: list[tuple[int, int]] = []
    i, j = n_i, n_j
    while i > 0:
        if j > i and dp[i][j] == dp[i][j - 1]:
            j -= 1
            continue
        jy, sp = journeys[j - 1], specs[i - 1]
        ids.append(j - 1)
        deltas.append(
            (
                jy.tap_in.epoch_seconds - sp.first_ref.epoch_seconds,
                jy.tap_out.epoch_seconds - sp.last_ref.epoch_seconds,
            )
        )
        i -= 1
        j -= 1
    return Assignment(journey_ids=tuple(reversed(ids)), per_trip=tuple(reversed(deltas)))


def match_respondent(
    r: DiaryRespondent,
    index: CandidateIndex,
    tables: MappingTables | None = None,
) -> MatchResult:
    """Reference matcher over the index (object path; the pipeline uses match_all)."""
    category = classify_respondent(r)
    if category is None:
        raise ValueError(f"respondent {r.respondent_id} is not eligible for matching")
    specs = [trip_spec(t, tables) for t in r.trips]
    rel = index.day_rel(r.day)
    if rel < 0:
        return MatchResult(r.respondent_id, "NO_CANDIDATE")

    card_sets: list[set[int]] = []
    per_trip_feasible: list[dict[int, list[int]]] = []
    for sp in specs:
        fcode = index.ep_code(sp.first_key)
        lcode = index.ep_code(sp.last_key)
        if fcode < 0 or lcode < 0:
            return MatchResult(r.respondent_id, "NO_CANDIDATE")
        feasible: dict[int, list[int]] = {}
        for jid in index.lookup(r.day, sp.first_key):
            if index.journeys.first_ep[jid] == fcode and index.journeys.last_ep[jid] == lcode:
                feasible.setdefault(int(index.journeys.card_code[jid]), []).append(jid)
        if not feasible:
            return MatchResult(r.respondent_id, "NO_CANDIDATE")
        card_sets.append(set(feasible))
        per_trip_feasible.append(feasible)

    candidates = sorted(set.intersection(*card_sets))
    scored: list[tuple[int, int, Assignment]] = []
    for ccode in candidates:
        jids = index.card_day_journeys(ccode, rel)
        journeys = [index.journeys.journey(int(j)) for j in jids]
        assignment = score_assignment(specs, journeys)
        if assignment is None:
            continue
        assignment = Assignment(
            journey_ids=tuple(int(jids[k]) for k in assignment.journey_ids),
            per_trip=assignment.per_trip,
        )
        scored.append((assignment.total_delta_t_s, ccode, assignment))
    if not scored:
        return MatchResult(r.respondent_id, "NO_CANDIDATE")
    scored.sort(key=lambda it: (it[0], it[1]))
    best_total, best_code, best_assignment = scored[0]
    tie = len(scored) > 1 and scored[1][0] == best_total
    second = None
    if len(scored) > 1:
        s_total, s_code, s_assignment = scored[1]
        second = CardMatch(str(index.journeys.cards[s_code]), s_assignment)
    return MatchResult(
        respondent_id=r.respondent_id,
        status="MATCHED",
        best=CardMatch(str(index.journeys.cards[best_code]), best_assignment),
        second_best=second,
        tie=tie,
    )


# ---------------------------------------------------------------------------
# Batch matching
# ---------------------------------------------------------------------------

@dataclass
class MatchRateSummary:
    per_year: list[tuple[int, int, int]]  # (year, eligible, matched)

    @property
    def eligible(self) -> int:
        return sum(e for _, e, _ in self.per_year)

    @property
    def matched(self) -> int:
        return sum(m for _, _, m in self.per_year)

    @property
    def percent(self) -> float:
        return 100.0 * self.matched / self.eligible if self.eligible else 0.0


@dataclass
class MatchSet:
    results: list[MatchResult]
    summary: MatchRateSummary
    journeys: JourneyTable

    def by_id(self) -> dict[str, MatchResult]:
        return {r.respondent_id: r for r in self.results}


def match_all(
    respondents: list[DiaryRespondent],
    index: CandidateIndex,
    tables: MappingTables | None = None,
    threads: int = 1,
    window_s: int = 0,
    kernels=None,
) -> MatchSet:
    """Match every eligible respondent against the index.

    Eligible means classified train/bus/mixed (2 or 3 trips). The result is
    a pure function of (respondents, index): per-respondent outputs are
    written to disjoint slots, so any thread count gives identical output.
    """
    kernels = kernels or backend.get_kernels()
    tables = tables or MappingTables()
    eligible = [r for r in respondents if classify_respondent(r) is not None]
    n = len(eligible)

    n_trips = np.zeros(n, np.int8)
    sp_first = np.full((n, 3), -1, np.int32)
    sp_last = np.full((n, 3), -1, np.int32)
    sp_tf = np.zeros((n, 3), np.int64)
    sp_tl = np.zeros((n, 3), np.int64)
    r_day = np.full(n, -1, np.int64)
    for k, r in enumerate(eligible):
        r_day[k] = index.day_rel(r.day)
        n_trips[k] = len(r.trips)
        try:
            specs = [trip_spec(t, tables) for t in r.trips]
        except MissingEndpointError:
            r_day[k] = -1  # unmatchable; keep slot as NO_CANDIDATE
            continue
        for i, sp in enumerate(specs):
            sp_first[k, i] = index.ep_code(sp.first_key)
            sp_last[k, i] = index.ep_code(sp.last_key)
            sp_tf[k, i] = sp.first_ref.epoch_seconds
            sp_tl[k, i] = sp.last_ref.epoch_seconds

    out_status = np.zeros(n, np.int8)
    out_best_card = np.full(n, -1, np.int32)
    out_second_card = np.full(n, -1, np.int32)
    out_best_total = np.full(n, -1, np.int64)
    out_second_total = np.full(n, -1, np.int64)
    out_tie = np.zeros(n, np.int8)
    out_bj = np.full((n, 3), -1, np.int32)
    out_sj = np.full((n, 3), -1, np.int32)
    out_bdf = np.zeros((n, 3), np.int64)
    out_bdl = np.zeros((n, 3), np.int64)
    out_sdf = np.zeros((n, 3), np.int64)
    out_sdl = np.zeros((n, 3), np.int64)

    def run_block(lo: int, hi: int) -> None:
        kernels.match_block(
            lo, hi, n_trips, sp_first, sp_last, sp_tf, sp_tl, r_day,
            index.fk_keys, index.fk_off, index.fk_jidx,
            index.cd_keys, index.cd_off, index.cd_jidx,
            index.journeys.card_code, index.journeys.first_ep, index.journeys.last_ep,
            index.journeys.tin, index.journeys.tout,
            index.n_endpoints, index.day_count, np.int64(window_s),
            out_status, out_best_card, out_second_card,
            out_best_total, out_second_total, out_tie,
            out_bj, out_sj, out_bdf, out_bdl, out_sdf, out_sdl,
        )

    if n:
        if threads > 1:
            chunk = max(256, (n + threads - 1) // threads)
            ranges = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(lambda rg: run_block(*rg), ranges))
        else:
            run_block(0, n)

    cards = index.journeys.cards
    results: list[MatchResult] = []
    for k, r in enumerate(eligible):
        if out_status[k] != STATUS_MATCHED:
            results.append(MatchResult(r.respondent_id, "NO_CANDIDATE"))
            continue
        ntr = int(n_trips[k])
        best = CardMatch(
            str(cards[out_best_card[k]]),
            Assignment(
                journey_ids=tuple(int(out_bj[k, i]) for i in range(ntr)),
                per_trip=tuple((int(out_bdf[k, i]), int(out_bdl[k, i])) for i in range(ntr)),
            ),
        )
        second = None
        if out_second_card[k] >= 0:
            second = CardMatch(
                str(cards[out_second_card[k]]),
                Assignment(
                    journey_ids=tuple(int(out_sj[k, i]) for i in range(ntr)),
                    per_trip=tuple((int(out_sdf[k, i]), int(out_sdl[k, i])) for i in range(ntr)),
                ),
            )
        if best.assignment.total_delta_t_s != int(out_best_total[k]):
            raise InvariantError("kernel total does not match backtracked assignment")
        results.append(
            MatchResult(r.respondent_id, "MATCHED", best, second, tie=bool(out_tie[k]))
        )

    per_year: dict[int, list[int]] = {}
    for r, res in zip(eligible, results):
        bucket = per_year.setdefault(r.covariates.year, [0, 0])
        bucket[0] += 1
        if res.status == "MATCHED":
            bucket[1] += 1
    summary = MatchRateSummary(
        per_year=[(y, e, m) for y, (e, m) in sorted(per_year.items())]
    )
    return MatchSet(results=results, summary=summary, journeys=index.journeys)


# ---------------------------------------------------------------------------
# matches.csv
# ---------------------------------------------------------------------------

MATCHES_HEADER = (
    ["respondent_id", "status", "card_id", "total_delta_t_s", "tie",
     "second_card_id", "second_delta_t_s", "gap_s"]
    + [f"trip{i}_journey" for i in (1, 2, 3)]
    + [f"trip{i}_first_s" for i in (1, 2, 3)]
    + [f"trip{i}_last_s" for i in (1, 2, 3)]
    + [f"second_trip{i}_first_s" for i in (1, 2, 3)]
    + [f"second_trip{i}_last_s" for i in (1, 2, 3)]
)


def write_matches(match_set: MatchSet, path: str | Path) -> None:
    jt = match_set.journeys
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MATCHES_HEADER)
        for res in match_set.results:
            row = [res.respondent_id, res.status]
            if res.best is None:
                row += [""] * (len(MATCHES_HEADER) - 2)
            else:
                a = res.best.assignment
                second = res.second_best
                row += [
                    res.best.card_id,
                    a.total_delta_t_s,
                    "true" if res.tie else "false",
                    second.card_id if second else "",
                    second.assignment.total_delta_t_s if second else "",
                    res.gap_seconds if second else "",
                ]
                refs = [jt.journey_ref(j) for j in a.journey_ids]
                row += refs + [""] * (3 - len(refs))
                firsts = [f for f, _ in a.per_trip]
                lasts = [l for _, l in a.per_trip]
                row += firsts + [""] * (3 - len(firsts))
                row += lasts + [""] * (3 - len(lasts))
                if second:
                    sf = [f for f, _ in second.assignment.per_trip]
                    sl = [l for _, l in second.assignment.per_trip]
                    row += sf + [""] * (3 - len(sf))
                    row += sl + [""] * (3 - len(sl))
                else:
                    row += [""] * 6
            w.writerow(row)


@dataclass(frozen=True)
class MatchRow:
    respondent_id: str
    status: str
    card_id: str | None
    total_delta_t_s: int | None
    tie: bool
    second_card_id: str | None
    second_delta_t_s: int | None
    gap_s: int | None
    journeys: tuple[str, ...]
    first_s: tuple[int, ...]
    last_s: tuple[int, ...]
    second_first_s: tuple[int, ...]
    second_last_s: tuple[int, ...]


def read_matches(path: str | Path) -> list[MatchRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MATCHES_HEADER:
            raise InvariantError(f"{path}: unexpected matches.csv header")
        rows = []
        for row in reader:
            rec = dict(zip(MATCHES_HEADER, row))
            matched = rec["status"] == "MATCHED"
            ints = lambda names: tuple(int(rec[n]) for n in names if rec[n] != "")
            rows.append(
                MatchRow(
                    respondent_id=rec["respondent_id"],
                    status=rec["status"],
                    card_id=rec["card_id"] or None,
                    total_delta_t_s=int(rec["total_delta_t_s"]) if matched else None,
                    tie=rec["tie"] == "true",
                    second_card_id=rec["second_card_id"] or None,
                    second_delta_t_s=int(rec["second_delta_t_s"]) if rec["second_delta_t_s"] else None,
                    gap_s=int(rec["gap_s"]) if rec["gap_s"] else None,
                    journeys=tuple(rec[f"trip{i}_journey"] for i in (1, 2, 3) if rec[f"trip{i}_journey"]),
                    first_s=ints([f"trip{i}_first_s" for i in (1, 2, 3)]),
                    last_s=ints([f"trip{i}_last_s" for i in (1, 2, 3)]),
                    second_first_s=ints([f"second_trip{i}_first_s" for i in (1, 2, 3)]),
                    second_last_s=ints([f"second_trip{i}_last_s" for i in (1, 2, 3)]),
                )
            )
    return rows
