import datetime as dt
from itertools import combinations

import numpy as np
import pytest

from tripmatch import backend
from tripmatch.errors import MissingEndpointError
from tripmatch.ingest import DiaryLeg, DiaryTrip, reconstruct_journeys
from tripmatch.matcher import (
    build_index,
    match_all,
    match_respondent,
    score_assignment,
    trip_spec,
)
from tripmatch.model import EndpointKey, EndpointKind, LegMode, TxType

from conftest import DAY, bus_trip, dts, rail_trip, respondent, tap


def journeys_from(taps):
    jt, orphans = reconstruct_journeys(taps)
    assert orphans == []
    return jt


def simple_journey(card, t_in, t_out, a, b, mode=LegMode.TRAIN):
    return [tap(card, t_in, TxType.TAP_IN, a, mode), tap(card, t_out, TxType.TAP_OUT, b, mode)]


def brute_force_total(specs, journeys):
    """Minimum total over all injective order-preserving feasible assignments."""
    best = None
    idx = range(len(journeys))
    for combo in combinations(idx, len(specs)):
        total = 0
        ok = True
        for i, j in enumerate(combo):
            sp, jy = specs[i], journeys[j]
            if jy.first_endpoint != sp.first_key or jy.last_endpoint != sp.last_key:
                ok = False
                break
            total += abs(jy.tap_in.epoch_seconds - sp.first_ref.epoch_seconds)
            total += abs(jy.tap_out.epoch_seconds - sp.last_ref.epoch_seconds)
        if ok and (best is None or total < best):
            best = total
    return best


class TestTripSpec:
    def test_train_trip(self):
        spec = trip_spec(rail_trip("R1", 1, "X", "Y", "08:00", "08:40"))
        assert spec.first_key == EndpointKey(EndpointKind.STATION, "x")
        assert spec.last_key == EndpointKey(EndpointKind.STATION, "y")
        assert spec.first_semantics == "STATION_ARRIVAL"
        assert spec.first_ref == dts("08:00")

    def test_bus_trip(self):
        spec = trip_spec(bus_trip("R1", 1, "5C", "150S", "09:05", "09:45"))
        assert spec.first_key == EndpointKey(EndpointKind.BUS_LINE, "5c")
        assert spec.last_key == EndpointKey(EndpointKind.BUS_LINE, "150s")
        assert spec.first_semantics == "BUS_BOARDING"

    def test_missing_board_line(self):
        trip = DiaryTrip(
            respondent_id="R1",
            day=DAY,
            index_in_day=1,
            legs=(DiaryLeg(mode=LegMode.BUS),),
            first_ref=dts("08:00"),
            last_ref=dts("08:30"),
        )
        with pytest.raises(MissingEndpointError):
            trip_spec(trip)

    def test_mixed_leg_trip_resolves_per_leg(self):
        trip = DiaryTrip(
            respondent_id="R1",
            day=DAY,
            index_in_day=1,
            legs=(
                DiaryLeg(mode=LegMode.TRAIN, board_station="X", alight_station="M"),
                DiaryLeg(mode=LegMode.BUS, board_line="5C"),
            ),
            first_ref=dts("08:00"),
            last_ref=dts("08:40"),
        )
        spec = trip_spec(trip)
        assert spec.first_key.kind is EndpointKind.STATION
        assert spec.last_key == EndpointKey(EndpointKind.BUS_LINE, "5c")
        assert spec.first_semantics == "STATION_ARRIVAL"


class TestBuildIndex:
    def test_lookup_first_and_last(self):
        jt = journeys_from(simple_journey("C1", "08:00", "08:30", "A", "B"))
        index = build_index(jt)
        a = EndpointKey(EndpointKind.STATION, "a")
        b = EndpointKey(EndpointKind.STATION, "b")
        c = EndpointKey(EndpointKind.STATION, "c")
        assert index.lookup(DAY, a) == [0]
        assert index.lookup(DAY, b) == [0]
        assert index.lookup(DAY, c) == []

    def test_lookup_other_day_empty(self):
        jt = journeys_from(simple_journey("C1", "08:00", "08:30", "A", "B"))
        index = build_index(jt)
        a = EndpointKey(EndpointKind.STATION, "a")
        assert index.lookup(DAY + dt.timedelta(days=1), a) == []

    def test_empty_journeys(self):
        jt = journeys_from([])
        index = build_index(jt)
        assert index.lookup(DAY, EndpointKey(EndpointKind.STATION, "a")) == []


class TestScoreAssignment:
    def test_two_trip_example(self):
        specs = [
            trip_spec(rail_trip("R1", 1, "A", "B", "08:00", "08:30")),
            trip_spec(rail_trip("R1", 2, "B", "A", "16:00", "16:30")),
        ]
        jt = journeys_from(
            simple_journey("C1", "08:03", "08:31", "A", "B")
            + simple_journey("C1", "16:10", "16:29", "B", "A")
        )
        a = score_assignment(specs, list(jt))
        assert a is not None
        assert a.total_delta_t_s == 180 + 60 + 600 + 60 == 900

    def test_identity_zero(self):
        specs = [
            trip_spec(rail_trip("R1", 1, "A", "B", "08:00", "08:30")),
            trip_spec(rail_trip("R1", 2, "B", "A", "16:00", "16:30")),
        ]
        jt = journeys_from(
            simple_journey("C1", "08:00", "08:30", "A", "B")
            + simple_journey("C1", "16:00", "16:30", "B", "A")
        )
        a = score_assignment(specs, list(jt))
        assert a.total_delta_t_s == 0

    def test_skippable_extras_pick_first_and_third(self):
        specs = [
            trip_spec(rail_trip("R1", 1, "A", "B", "08:00", "08:30")),
            trip_spec(rail_trip("R1", 2, "A", "B", "16:00", "16:30")),
        ]
        jt = journeys_from(
            simple_journey("C1", "08:00", "08:30", "A", "B")
            + simple_journey("C1", "12:00", "12:30", "A", "B")
            + simple_journey("C1", "16:00", "16:30", "A", "B")
        )
        journeys = list(jt)
        a = score_assignment(specs, journeys)
        assert a.total_delta_t_s == 0
        assert a.journey_ids == (0, 2)
        assert brute_force_total(specs, journeys) == 0

    def test_no_feasible_assignment(self):
        specs = [trip_spec(rail_trip("R1", 1, "A", "B", "08:00", "08:30"))]
        jt = journeys_from(simple_journey("C1", "08:00", "08:30", "A", "C"))
        assert score_assignment(specs, list(jt)) is None

    def test_dp_equals_brute_force_randomized(self):
        rng = np.random.default_rng(71)
        stations = ["s0", "s1", "s2"]
        for _ in range(300):
            n_spec = int(rng.integers(1, 4))
            n_j = int(rng.integers(n_spec, 9))
            taps = []
            base = 5 * 3600
            for j in range(n_j):
                t0 = base + j * 3600 + int(rng.integers(0, 1800))
                t1 = t0 + int(rng.integers(300, 1500))
                a, b = rng.choice(stations, 2)
                taps.extend(
                    simple_journey("C1", f"{t0 // 3600:02d}:{t0 % 3600 // 60:02d}:{t0 % 60:02d}",
                                   f"{t1 // 3600:02d}:{t1 % 3600 // 60:02d}:{t1 % 60:02d}", a, b)
                )
            jt = journeys_from(taps)
            journeys = list(jt)
            trips = []
            for i in range(n_spec):
                first = 6 * 3600 + i * 4 * 3600 + int(rng.integers(0, 6)) * 300
                last = first + int(rng.integers(1, 6)) * 300
                a, b = rng.choice(stations, 2)
                trips.append(
                    rail_trip("R1", i + 1, a, b,
                              f"{first // 3600:02d}:{first % 3600 // 60:02d}",
                              f"{last // 3600:02d}:{last % 3600 // 60:02d}")
                )
            specs = [trip_spec(t) for t in trips]
            mine = score_assignment(specs, journeys)
            oracle = brute_force_total(specs, journeys)
            if oracle is None:
                assert mine is None
            else:
                assert mine is not None and mine.total_delta_t_s == oracle


class TestMatchRespondent:
    def _index_two_cards(self):
        taps = (
            simple_journey("C1", "08:03", "08:31", "A", "B")
            + simple_journey("C1", "16:10", "16:29", "B", "A")
            + simple_journey("C2", "08:05", "08:35", "A", "B")
            + simple_journey("C2", "16:10", "16:35", "B", "A")
        )
        return build_index(journeys_from(taps))

    def _respondent(self):
        return respondent(
            "R1",
            [
                rail_trip("R1", 1, "A", "B", "08:00", "08:30"),
                rail_trip("R1", 2, "B", "A", "16:00", "16:30"),
            ],
        )

    def test_single_candidate(self):
        taps = simple_journey("C1", "08:03", "08:31", "A", "B") + simple_journey(
            "C1", "16:10", "16:29", "B", "A"
        )
        res = match_respondent(self._respondent(), build_index(journeys_from(taps)))
        assert res.status == "MATCHED"
        assert res.best.card_id == "C1"
        assert res.second_best is None
        assert res.tie is False

    def test_two_candidates_gap(self):
        res = match_respondent(self._respondent(), self._index_two_cards())
        assert res.best.card_id == "C1"
        assert res.best.assignment.total_delta_t_s == 900
        assert res.second_best.assignment.total_delta_t_s == 1500
        assert res.gap_seconds == 600

    def test_zero_candidates(self):
        taps = simple_journey("C9", "08:00", "08:30", "Q", "W")
        res = match_respondent(self._respondent(), build_index(journeys_from(taps)))
        assert res.status == "NO_CANDIDATE"

    def test_tie_breaks_to_smaller_card(self):
        taps = (
            simple_journey("C2", "08:05", "08:35", "A", "B")
            + simple_journey("C2", "16:05", "16:35", "B", "A")
            + simple_journey("C1", "08:05", "08:35", "A", "B")
            + simple_journey("C1", "16:05", "16:35", "B", "A")
        )
        res = match_respondent(self._respondent(), build_index(journeys_from(taps)))
        assert res.best.card_id == "C1"
        assert res.tie is True
        assert res.gap_seconds == 0

    def test_ineligible_raises(self):
        r = respondent("R1", [rail_trip("R1", 1, "A", "B", "08:00", "08:30")])
        with pytest.raises(ValueError):
            match_respondent(r, self._index_two_cards())


class TestMatchAll:
    def _random_world(self, seed, n_resp=40, n_cards=25):
        rng = np.random.default_rng(seed)
        stations = [f"s{i}" for i in range(4)]
        taps = []
        for c in range(n_cards):
            card = f"C{c:03d}"
            n_j = int(rng.integers(1, 6))
            t = 5 * 3600
            for _ in range(n_j):
                t0 = t + int(rng.integers(0, 3600))
                t1 = t0 + int(rng.integers(300, 2400))
                t = t1 + 600
                a, b = rng.choice(stations, 2)
                taps.extend(
                    simple_journey(card, f"{t0 // 3600:02d}:{t0 % 3600 // 60:02d}:{t0 % 60:02d}",
                                   f"{t1 // 3600:02d}:{t1 % 3600 // 60:02d}:{t1 % 60:02d}", a, b)
                )
        respondents = []
        for k in range(n_resp):
            n_t = int(rng.integers(2, 4))
            trips = []
            for i in range(n_t):
                first = 5 * 3600 + i * 5 * 3600 + int(rng.integers(0, 12)) * 300
                last = first + int(rng.integers(1, 8)) * 300
                a, b = rng.choice(stations, 2)
                trips.append(
                    rail_trip(f"R{k:03d}", i + 1, a, b,
                              f"{first // 3600:02d}:{first % 3600 // 60:02d}",
                              f"{last // 3600:02d}:{last % 3600 // 60:02d}")
                )
            respondents.append(respondent(f"R{k:03d}", trips))
        return respondents, build_index(journeys_from(taps))

    def test_kernel_agrees_with_reference(self, kernels):
        respondents, index = self._random_world(5)
        batch = match_all(respondents, index, kernels=kernels)
        for r, res in zip(respondents, batch.results):
            ref = match_respondent(r, index)
            assert res.status == ref.status, r.respondent_id
            if res.status == "MATCHED":
                assert res.best.card_id == ref.best.card_id
                assert res.best.assignment.total_delta_t_s == ref.best.assignment.total_delta_t_s
                assert res.best.assignment.per_trip == ref.best.assignment.per_trip
                assert res.tie == ref.tie
                if ref.second_best is None:
                    assert res.second_best is None
                else:
                    assert res.second_best.card_id == ref.second_best.card_id
                    assert (
                        res.second_best.assignment.total_delta_t_s
                        == ref.second_best.assignment.total_delta_t_s
                    )

    def test_backends_identical(self):
        respondents, index = self._random_world(6)
        a = match_all(respondents, index, kernels=backend.get_kernels("numpy"))
        b = match_all(respondents, index, kernels=backend.get_kernels("numba"))
        assert a.results == b.results

    def test_threads_identical(self):
        respondents, index = self._random_world(7, n_resp=120)
        a = match_all(respondents, index, threads=1)
        b = match_all(respondents, index, threads=4)
        assert a.results == b.results

    def test_summary_percent(self):
        respondents, index = self._random_world(8)
        batch = match_all(respondents, index)
        matched = sum(1 for r in batch.results if r.status == "MATCHED")
        assert batch.summary.matched == matched
        assert batch.summary.eligible == len(batch.results)

    def test_empty_index_yields_no_candidates(self):
        respondents, _ = self._random_world(9, n_resp=5)
        empty_index = build_index(journeys_from([]))
        batch = match_all(respondents, empty_index)
        assert all(r.status == "NO_CANDIDATE" for r in batch.results)

    def test_time_window_prefilter(self):
        taps = (
            simple_journey("C1", "10:00", "10:30", "A", "B")
            + simple_journey("C1", "18:00", "18:30", "B", "A")
        )
        r = respondent(
            "R1",
            [
                rail_trip("R1", 1, "A", "B", "08:00", "08:30"),
                rail_trip("R1", 2, "B", "A", "16:00", "16:30"),
            ],
        )
        index = build_index(journeys_from(taps))
        no_window = match_all([r], index)
        assert no_window.results[0].status == "MATCHED"  # default: pure endpoint filter
        narrow = match_all([r], index, window_s=3600)
        assert narrow.results[0].status == "NO_CANDIDATE"  # 2h deviation > 1h window
        wide = match_all([r], index, window_s=3 * 3600)
        assert wide.results[0].status == "MATCHED"

    def test_zero_noise_identity_and_decoy_resistance(self):
        # a zero-cost match cannot be displaced by extra decoy cards
        taps = (
            simple_journey("C1", "08:00", "08:30", "A", "B")
            + simple_journey("C1", "16:00", "16:30", "B", "A")
        )
        decoys = (
            simple_journey("D1", "08:05", "08:35", "A", "B")
            + simple_journey("D1", "16:05", "16:35", "B", "A")
        )
        r = respondent(
            "R1",
            [
                rail_trip("R1", 1, "A", "B", "08:00", "08:30"),
                rail_trip("R1", 2, "B", "A", "16:00", "16:30"),
            ],
        )
        res_plain = match_all([r], build_index(journeys_from(taps)))
        res_decoy = match_all([r], build_index(journeys_from(taps + decoys)))
        assert res_plain.results[0].best.assignment.total_delta_t_s == 0
        assert res_decoy.results[0].best.card_id == "C1"
        assert res_decoy.results[0].best.assignment.total_delta_t_s == 0
