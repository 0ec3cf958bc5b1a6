import math

import numpy as np

from tripmatch.report import (
    AnalysisKnobs,
    GAP_BUCKETS,
    MatchedRespondent,
    SECTION_COLUMNS,
    build_bundle,
    errors_from_matched,
    match_rate_rows,
    paired_trip_rows,
    second_card_rows,
    shapiro_gate,
)

from conftest import rail_trip, respondent


def matched(resp_id, deltas, second=None, gap=None, trips=None, **cov):
    if trips is None:
        trips = [
            rail_trip(resp_id, i + 1, "A", "B", f"{8 + 4 * i:02d}:00", f"{8 + 4 * i:02d}:30")
            for i in range(len(deltas))
        ]
    r = respondent(resp_id, trips, **cov)
    return MatchedRespondent(
        respondent=r,
        per_trip=deltas,
        second_per_trip=second,
        total_s=sum(abs(f) + abs(l) for f, l in deltas),
        gap_s=gap,
    )


class TestGapBuckets:
    def test_bucket_edges(self):
        two = [(0, 0), (0, 0)]
        assert matched("R1", two, gap=None).gap_bucket() == "unique_match"
        # avg gap = gap / (2 * 2 trips) / 60 minutes
        assert matched("R2", two, second=two, gap=0).gap_bucket() == "[0,5)"
        assert matched("R3", two, second=two, gap=4 * 240 * 60 // 240 * 240).gap_bucket() != ""
        assert matched("R4", two, second=two, gap=int(4.99 * 4 * 60)).gap_bucket() == "[0,5)"
        assert matched("R5", two, second=two, gap=5 * 4 * 60).gap_bucket() == "[5,30)"
        assert matched("R6", two, second=two, gap=30 * 4 * 60).gap_bucket() == "[30,60)"
        assert matched("R7", two, second=two, gap=60 * 4 * 60).gap_bucket() == "60+"

    def test_second_card_rows_percentages(self):
        ms = [
            matched("R1", [(0, 0), (0, 0)], gap=None),
            matched("R2", [(0, 0), (0, 0)], second=[(0, 0), (0, 0)], gap=0),
            matched("R3", [(0, 0), (0, 0)], second=[(0, 0), (0, 0)], gap=100 * 240),
        ]
        rows = second_card_rows(ms)
        assert [r["bucket"] for r in rows] == GAP_BUCKETS
        by_bucket = {r["bucket"]: r for r in rows}
        assert by_bucket["unique_match"]["count"] == 1
        assert by_bucket["[0,5)"]["count"] == 1
        assert by_bucket["60+"]["count"] == 1
        assert by_bucket["unique_match"]["percent"] == "33.33"


class TestSubstitution:
    def test_second_card_substituted_only_for_close_gaps(self):
        close = matched(
            "R1", [(60, 60), (60, 60)], second=[(600, 600), (600, 600)], gap=960
        )  # avg gap 960/(2*2)/60 = 4 min -> [0,5)
        far = matched(
            "R2", [(30, 30), (30, 30)], second=[(900, 900), (900, 900)], gap=3480 * 100
        )
        base = errors_from_matched([close, far])
        sub = errors_from_matched([close, far], substitute_second=True)
        assert base.signed_first_s.tolist() == [60, 60, 30, 30]
        assert sub.signed_first_s.tolist() == [600, 600, 30, 30]


class TestPairedRows:
    def test_pairwise_cutoff(self):
        # R1: (5 min, 10 min) errors; R2: (40 min, 2 min)
        ms = [
            matched("R1", [(300, 0), (600, 0)]),
            matched("R2", [(2400, 0), (120, 0)]),
        ]
        table = errors_from_matched(ms)
        knobs = AnalysisKnobs(cutoffs_min=(math.inf, 30.0))
        rows, all_p = paired_trip_rows(table, knobs)
        assert [r["cutoff_min"] for r in rows] == ["all", "all", "30", "30"]
        # at 30 min the R2 pair drops entirely (pairwise rule)
        assert rows[0]["count"] == 2 and rows[2]["count"] == 1
        assert rows[2]["group"] == "first_trip" and rows[2]["median_min"] == "5.00"


class TestShapiroGate:
    def test_subsample_deterministic(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=8000)
        a = shapiro_gate(x, 0.01, subsample_seed=7)
        b = shapiro_gate(x, 0.01, subsample_seed=7)
        assert a == b
        assert a["subsampled"] == "true" and a["n_used"] == 5000

    def test_normal_not_rejected_for_gaussian(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=1000)
        assert shapiro_gate(x, 0.01, 0)["verdict"] == "normal_not_rejected"

    def test_exponential_rejected(self):
        rng = np.random.default_rng(13)
        x = rng.exponential(size=1000)
        assert shapiro_gate(x, 0.01, 0)["verdict"] == "non_normal"

    def test_tiny_sample_unavailable(self):
        out = shapiro_gate(np.array([1.0, 2.0]), 0.01, 0)
        assert out["verdict"].startswith("unavailable")


class TestTwinCards:
    def test_identical_behavior_twin_lands_in_closest_bucket(self):
        """Two cards per traveler with near-identical journeys: everyone gets
        a runner-up card inside the [0,5) average-gap bucket."""
        from tripmatch.ingest import reconstruct_journeys
        from tripmatch.matcher import build_index, match_all
        from tripmatch.model import TxType
        from tripmatch.report import matched_from_set, second_card_rows

        from conftest import tap

        taps = []
        respondents = []
        for k in range(12):
            a, b = f"s{k}a", f"s{k}b"
            for card, off in ((f"C{k:02d}", 0), (f"T{k:02d}", 1)):
                taps += [
                    tap(card, f"08:0{off}", TxType.TAP_IN, a),
                    tap(card, f"08:3{off}", TxType.TAP_OUT, b),
                    tap(card, f"16:0{off}", TxType.TAP_IN, b),
                    tap(card, f"16:3{off}", TxType.TAP_OUT, a),
                ]
            respondents.append(
                respondent(
                    f"R{k:02d}",
                    [
                        rail_trip(f"R{k:02d}", 1, a, b, "08:00", "08:30"),
                        rail_trip(f"R{k:02d}", 2, b, a, "16:00", "16:30"),
                    ],
                )
            )
        journeys, _ = reconstruct_journeys(taps)
        match_set = match_all(respondents, build_index(journeys))
        ms = matched_from_set(match_set, {r.respondent_id: r for r in respondents})
        rows = {r["bucket"]: r["count"] for r in second_card_rows(ms)}
        assert rows["[0,5)"] == 12
        assert rows["unique_match"] == 0
        for res in match_set.results:
            assert res.best.card_id.startswith("C")  # zero-cost true card wins
            assert res.second_best is not None


class TestAdapterParity:
    def test_matched_from_set_equals_matched_from_rows(self, tmp_path):
        """The in-memory and matches.csv paths must describe matched
        respondents identically."""
        from tripmatch.ingest import parse_diary, parse_transactions, reconstruct_journeys
        from tripmatch.matcher import build_index, match_all, read_matches, write_matches
        from tripmatch.report import matched_from_rows, matched_from_set as mf_set
        from tripmatch.synth import NoiseConfig, SynthConfig, generate
        from tripmatch.tables import load_tables

        cfg = SynthConfig(
            seed=13,
            n_travelers=80,
            days_span=4,
            n_stations=16,
            n_bus_lines=8,
            noise=NoiseConfig(
                rounding={5: 0.8, 15: 0.2},
                recall_shift=("normal", 200.0),
                decoy_card_factor=8.0,
            ),
        )
        data = generate(cfg, tmp_path)
        tables = load_tables(data.tables_dir)
        respondents, _ = parse_diary(data.diary_path, tables)
        table, _ = parse_transactions(data.transactions_path, tables)
        journeys, _ = reconstruct_journeys(table)
        match_set = match_all(respondents, build_index(journeys), tables)
        by_id = {r.respondent_id: r for r in respondents}

        from_set = mf_set(match_set, by_id)
        path = tmp_path / "matches.csv"
        write_matches(match_set, path)
        from_rows = matched_from_rows(read_matches(path), by_id)

        assert len(from_set) == len(from_rows) > 0
        for a, b in zip(from_set, from_rows):
            assert a.respondent.respondent_id == b.respondent.respondent_id
            assert a.per_trip == b.per_trip
            assert a.second_per_trip == b.second_per_trip
            assert a.total_s == b.total_s
            assert a.gap_s == b.gap_s
            assert a.gap_bucket() == b.gap_bucket()


class TestBundleCompleteness:
    def test_all_sections_present_even_when_empty(self):
        bundle, table = build_bundle([], [], [], AnalysisKnobs())
        for section in SECTION_COLUMNS:
            assert section in bundle, section
        assert len(table) == 0

    def test_match_rate_total_row(self):
        rows = match_rate_rows([(2020, 10, 7), (2021, 10, 8)])
        assert rows[-1]["year"] == "TOTAL"
        assert rows[-1]["percent"] == "75.00"
        assert rows[0]["percent"] == "70.00"

    def test_match_rate_survey_scale_shape(self):
        # output-format fixture at the published survey scale: five years,
        # 1336 eligible, 942 matched, 70.51% overall
        per_year = [
            (2018, 247, 169),
            (2019, 283, 217),
            (2020, 235, 165),
            (2021, 242, 176),
            (2022, 329, 215),
        ]
        rows = match_rate_rows(per_year)
        assert rows[-1] == {"year": "TOTAL", "eligible": 1336, "matched": 942, "percent": "70.51"}
        assert rows[0]["percent"] == "68.42"
        assert rows[1]["percent"] == "76.68"
