"""Analysis battery and report bundle assembly.

Everything the pipeline publishes flows through here: per-group descriptive
plus test tables with cut-off sensitivity, the paired first-vs-second-trip
comparison, normality checks, signed early/late consistency, match-ambiguity
sensitivity with the runner-up card, and the card-side frequency summaries.

A bundle is a dict of named sections, each a list of flat row dicts, plus a
meta block; it serializes to one JSON document or to one CSV per section.
All minute values are written with two decimals at serialization only.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics, stats
from .errors import (
    AllZeroDifferencesError,
    DegenerateVarianceError,
    SampleSizeOutOfRangeError,
    ZeroVarianceError,
)
from .ingest import DiaryRespondent, classify_respondent
from .matcher import MatchRow, MatchSet
from .metrics import ErrorTable

DEFAULT_CUTOFFS_MIN = (math.inf, 200.0, 100.0, 60.0, 30.0)

SECTION_COLUMNS = {
    "match_rate": ["year", "eligible", "matched", "percent"],
    "tests": [
        "method", "grouping", "cutoff_min", "group", "count",
        "mean_min", "std_min", "q1_min", "median_min", "q3_min", "iqr_min",
        "statistic", "p", "stars", "mode",
    ],
    "tests_second": [
        "method", "grouping", "cutoff_min", "group", "count",
        "mean_min", "std_min", "q1_min", "median_min", "q3_min", "iqr_min",
        "statistic", "p", "stars", "mode",
    ],
    "bonferroni": ["grouping", "p_raw", "m", "p_adjusted", "stars_adjusted"],
    "quadrants": ["quadrant", "count", "fraction"],
    "signed_summary": ["metric", "value"],
    "hist_abs_first": ["bin_lo_min", "bin_hi_min", "count"],
    "hist_signed_first": ["bin_lo_min", "bin_hi_min", "count"],
    "shapiro": ["variable", "n", "n_used", "subsampled", "w", "p", "verdict"],
    "second_card": ["bucket", "count", "percent"],
    "card_frequency": [
        "year", "cards_1", "cards_2", "cards_3", "cards_4plus",
        "card_days", "days", "avg_card_days_per_day",
    ],
    "od_summary": ["year", "n_od_days", "mean", "median", "std", "q1", "q3", "max"],
    "diary_summary": [
        "year", "reported_trips", "respondents",
        "resp_1", "resp_2", "resp_3", "resp_4plus",
    ],
}

GAP_BUCKETS = ["unique_match", "[0,5)", "[5,30)", "[30,60)", "60+"]


@dataclass
class AnalysisKnobs:
    cutoffs_min: tuple[float, ...] = DEFAULT_CUTOFFS_MIN
    exact_threshold: int = 20
    bonferroni_m: int = 0  # 0 = use the family size
    shapiro_threshold: float = 0.01
    shapiro_subsample_seed: int = 0

    def policy(self) -> stats.TestPolicy:
        return stats.TestPolicy(exact_threshold=self.exact_threshold)


# ---------------------------------------------------------------------------
# Matched-trip view shared by the in-memory and CSV entry points
# ---------------------------------------------------------------------------

@dataclass
class MatchedRespondent:
    respondent: DiaryRespondent
    per_trip: list[tuple[int, int]]
    second_per_trip: list[tuple[int, int]] | None
    total_s: int
    gap_s: int | None

    @property
    def n_trips(self) -> int:
        return len(self.per_trip)

    def gap_bucket(self) -> str:
        if self.gap_s is None:
            return "unique_match"
        avg_min = self.gap_s / (2.0 * self.n_trips) / 60.0
        if avg_min < 5.0:
            return "[0,5)"
        if avg_min < 30.0:
            return "[5,30)"
        if avg_min < 60.0:
            return "[30,60)"
        return "60+"


def matched_from_set(match_set: MatchSet, respondents_by_id) -> list[MatchedRespondent]:
    out = []
    for res in match_set.results:
        if res.status != "MATCHED":
            continue
        second = res.second_best.assignment.per_trip if res.second_best else None
        out.append(
            MatchedRespondent(
                respondent=respondents_by_id[res.respondent_id],
                per_trip=list(res.best.assignment.per_trip),
                second_per_trip=list(second) if second else None,
                total_s=res.best.assignment.total_delta_t_s,
                gap_s=res.gap_seconds,
            )
        )
    return out


def matched_from_rows(rows: list[MatchRow], respondents_by_id) -> list[MatchedRespondent]:
    out = []
    for row in rows:
        if row.status != "MATCHED" or row.respondent_id not in respondents_by_id:
            continue
        second = None
        if row.second_card_id and row.second_first_s:
            second = list(zip(row.second_first_s, row.second_last_s))
        out.append(
            MatchedRespondent(
                respondent=respondents_by_id[row.respondent_id],
                per_trip=list(zip(row.first_s, row.last_s)),
                second_per_trip=second,
                total_s=row.total_delta_t_s,
                gap_s=row.gap_s,
            )
        )
    return out


def errors_from_matched(
    matched: list[MatchedRespondent], substitute_second: bool = False
) -> ErrorTable:
    records = []
    for m in matched:
        deltas = m.per_trip
        if substitute_second and m.second_per_trip is not None and m.gap_bucket() == "[0,5)":
            deltas = m.second_per_trip
        category = classify_respondent(m.respondent)
        if category is None:
            continue
        for trip, (df, dl) in zip(m.respondent.trips, deltas):
            records.append(
                metrics.ErrorRecord(
                    respondent_id=m.respondent.respondent_id,
                    trip_index=trip.index_in_day,
                    signed_first_s=int(df),
                    signed_last_s=int(dl),
                    mode=category,
                    covariates=m.respondent.covariates,
                )
            )
    return ErrorTable.from_records(records)


# ---------------------------------------------------------------------------
# Section builders
# ---------------------------------------------------------------------------

def _fmt_cutoff(c: float) -> str:
    return "all" if math.isinf(c) else f"{c:g}"


def _stats_cells(st: metrics.DescriptiveStats | None) -> dict:
    if st is None:
        return {
            "count": 0, "mean_min": "", "std_min": "", "q1_min": "",
            "median_min": "", "q3_min": "", "iqr_min": "",
        }
    return {
        "count": st.count,
        "mean_min": f"{st.mean:.2f}",
        "std_min": "" if st.std is None else f"{st.std:.2f}",
        "q1_min": f"{st.q1:.2f}",
        "median_min": f"{st.median:.2f}",
        "q3_min": f"{st.q3:.2f}",
        "iqr_min": f"{st.iqr:.2f}",
    }


def group_test_rows(table: ErrorTable, knobs: AnalysisKnobs) -> tuple[list[dict], dict[str, float]]:
    """Rows of the tests section plus the all-data p-value per grouping."""
    rows: list[dict] = []
    all_data_p: dict[str, float] = {}
    groupings = metrics.TWO_LEVEL_GROUPINGS + metrics.MULTI_LEVEL_GROUPINGS
    for name in groupings:
        values, labels, levels = metrics.grouping_arrays(table, name)
        if len(levels) < 2:
            continue
        blocks = stats.sensitivity_sweep(values, labels, levels, knobs.cutoffs_min, knobs.policy())
        for block in blocks:
            if math.isinf(block.cutoff_min) and block.p_value is not None:
                all_data_p[name] = block.p_value
            for cell in block.cells:
                rows.append(
                    {
                        "method": block.method,
                        "grouping": name,
                        "cutoff_min": _fmt_cutoff(block.cutoff_min),
                        "group": cell.group,
                        **_stats_cells(cell.stats),
                        "statistic": "" if block.statistic is None else f"{block.statistic:.6g}",
                        "p": "" if block.p_value is None else f"{block.p_value:.6g}",
                        "stars": block.stars,
                        "mode": block.mode,
                    }
                )
    return rows, all_data_p


def paired_trip_rows(table: ErrorTable, knobs: AnalysisKnobs) -> tuple[list[dict], float | None]:
    """First-vs-second-trip comparison rows (two-trip respondents only).

    The cut-off keeps a pair when both trips' errors are below it, keeping
    the sample paired.
    """
    pairs = metrics.first_second_pairs(table)
    rows: list[dict] = []
    all_data_p: float | None = None
    for cutoff in knobs.cutoffs_min:
        if pairs.size == 0:
            kept = pairs
        elif math.isinf(cutoff):
            kept = pairs
        else:
            mask = (pairs[:, 0] < cutoff * 60.0) & (pairs[:, 1] < cutoff * 60.0)
            kept = pairs[mask]
        statistic = p = None
        mode = ""
        if kept.size:
            try:
                res = stats.wilcoxon_signed_rank(kept, knobs.policy())
                statistic, p, mode = res.statistic, res.p_value, res.mode
            except (AllZeroDifferencesError, SampleSizeOutOfRangeError):
                pass
        if math.isinf(cutoff):
            all_data_p = p
        for pos, label in ((0, "first_trip"), (1, "second_trip")):
            st = metrics.describe(kept[:, pos]) if kept.size else None
            rows.append(
                {
                    "method": "wilcoxon_signed_rank",
                    "grouping": "trip_order",
                    "cutoff_min": _fmt_cutoff(cutoff),
                    "group": label,
                    **_stats_cells(st),
                    "statistic": "" if statistic is None else f"{statistic:.6g}",
                    "p": "" if p is None else f"{p:.6g}",
                    "stars": stats.significance_stars(p),
                    "mode": mode,
                }
            )
    return rows, all_data_p


def bonferroni_rows(all_data_p: dict[str, float], m_override: int) -> list[dict]:
    if not all_data_p:
        return []
    names = list(all_data_p)
    ps = [all_data_p[n] for n in names]
    m = m_override if m_override > 0 else len(ps)
    adjusted = stats.bonferroni(ps, m)
    return [
        {
            "grouping": name,
            "p_raw": f"{p:.6g}",
            "m": m,
            "p_adjusted": f"{adj:.6g}",
            "stars_adjusted": stats.significance_stars(adj),
        }
        for name, p, adj in zip(names, ps, adjusted)
    ]


def quadrant_rows(table: ErrorTable) -> tuple[list[dict], list[dict]]:
    q = metrics.quadrant_counts(table.signed_first_s, table.signed_last_s)
    fr = q.fractions()
    rows = [
        {"quadrant": "late_late", "count": q.late_late, "fraction": f"{fr['late_late']:.4f}"},
        {"quadrant": "early_early", "count": q.early_early, "fraction": f"{fr['early_early']:.4f}"},
        {"quadrant": "late_early", "count": q.late_early, "fraction": f"{fr['late_early']:.4f}"},
        {"quadrant": "early_late", "count": q.early_late, "fraction": f"{fr['early_late']:.4f}"},
        {"quadrant": "zero_first_only", "count": q.zero_first_only, "fraction": ""},
        {"quadrant": "zero_last_only", "count": q.zero_last_only, "fraction": ""},
        {"quadrant": "zero_both", "count": q.zero_both, "fraction": ""},
    ]
    f = table.signed_first_s
    l = table.signed_last_s
    n = len(table)
    summary = [
        {"metric": "n_trips", "value": str(n)},
        {"metric": "n_classified", "value": str(q.classified)},
        {"metric": "consistent_fraction", "value": f"{q.consistent_fraction:.4f}"},
    ]
    if n:
        summary += [
            {"metric": "share_negative_first", "value": f"{float(np.mean(f < 0)):.4f}"},
            {"metric": "share_positive_first", "value": f"{float(np.mean(f > 0)):.4f}"},
            {"metric": "share_negative_last", "value": f"{float(np.mean(l < 0)):.4f}"},
            {"metric": "share_positive_last", "value": f"{float(np.mean(l > 0)):.4f}"},
        ]
        try:
            r = metrics.signed_correlation(f, l)
            summary.append({"metric": "pearson_r_first_last", "value": f"{r:.4f}"})
        except DegenerateVarianceError:
            summary.append({"metric": "pearson_r_first_last", "value": ""})
    return rows, summary


def hist_rows(values_s, signed: bool) -> list[dict]:
    return [
        {"bin_lo_min": lo, "bin_hi_min": hi, "count": c}
        for lo, hi, c in metrics.histogram_minutes(values_s, signed=signed)
    ]


def shapiro_gate(values, threshold: float, subsample_seed: int) -> dict:
    """Normality verdict; deterministic seeded subsample above n=5000."""
    arr = np.asarray(values, dtype=float)
    n = int(arr.size)
    used = arr
    subsampled = False
    if n > 5000:
        rng = np.random.Generator(np.random.Philox(key=np.uint64(subsample_seed)))
        used = arr[np.sort(rng.choice(n, 5000, replace=False))]
        subsampled = True
    try:
        res = stats.shapiro_wilk(used)
    except (SampleSizeOutOfRangeError, ZeroVarianceError) as exc:
        return {
            "n": n, "n_used": int(used.size), "subsampled": str(subsampled).lower(),
            "w": "", "p": "", "verdict": f"unavailable:{type(exc).__name__}",
        }
    verdict = "non_normal" if res.p_value < threshold else "normal_not_rejected"
    return {
        "n": n,
        "n_used": int(used.size),
        "subsampled": str(subsampled).lower(),
        "w": f"{res.statistic:.6f}",
        "p": f"{res.p_value:.6g}",
        "verdict": verdict,
    }


def shapiro_rows(table: ErrorTable, matched: list[MatchedRespondent], knobs: AnalysisKnobs) -> list[dict]:
    totals = np.array([m.total_s for m in matched], dtype=float) / 60.0
    avgs = np.array(
        [m.total_s / (2.0 * m.n_trips) for m in matched], dtype=float
    ) / 60.0
    variables = [
        ("total_delta_t", totals),
        ("avg_delta_t", avgs),
        ("abs_first", table.abs_first_s.astype(float) / 60.0),
    ]
    rows = []
    for name, values in variables:
        rows.append(
            {"variable": name, **shapiro_gate(values, knobs.shapiro_threshold, knobs.shapiro_subsample_seed)}
        )
    return rows


def second_card_rows(matched: list[MatchedRespondent]) -> list[dict]:
    counts = {b: 0 for b in GAP_BUCKETS}
    for m in matched:
        counts[m.gap_bucket()] += 1
    total = sum(counts.values())
    return [
        {
            "bucket": b,
            "count": counts[b],
            "percent": f"{100.0 * counts[b] / total:.2f}" if total else "",
        }
        for b in GAP_BUCKETS
    ]


def second_card_tests(matched: list[MatchedRespondent], knobs: AnalysisKnobs) -> list[dict]:
    """Re-run the all-data battery with the runner-up card substituted for
    every respondent whose average gap is under five minutes."""
    table2 = errors_from_matched(matched, substitute_second=True)
    if len(table2) == 0:
        return []
    all_knobs = AnalysisKnobs(
        cutoffs_min=(math.inf,),
        exact_threshold=knobs.exact_threshold,
        bonferroni_m=knobs.bonferroni_m,
    )
    rows, _ = group_test_rows(table2, all_knobs)
    return rows


def match_rate_rows(per_year: list[tuple[int, int, int]]) -> list[dict]:
    rows = []
    for year, eligible, matched in per_year:
        pct = 100.0 * matched / eligible if eligible else 0.0
        rows.append(
            {"year": year, "eligible": eligible, "matched": matched, "percent": f"{pct:.2f}"}
        )
    eligible = sum(e for _, e, _ in per_year)
    matched = sum(m for _, _, m in per_year)
    pct = 100.0 * matched / eligible if eligible else 0.0
    rows.append(
        {"year": "TOTAL", "eligible": eligible, "matched": matched, "percent": f"{pct:.2f}"}
    )
    return rows


def diary_summary_rows(respondents: list[DiaryRespondent]) -> list[dict]:
    per_year: dict[int, dict[str, int]] = {}
    for r in respondents:
        bucket = per_year.setdefault(
            r.covariates.year,
            {"reported_trips": 0, "respondents": 0, "resp_1": 0, "resp_2": 0, "resp_3": 0, "resp_4plus": 0},
        )
        bucket["reported_trips"] += len(r.trips)
        bucket["respondents"] += 1
        n = len(r.trips)
        key = "resp_4plus" if n >= 4 else f"resp_{n}"
        bucket[key] += 1
    rows = []
    for year in sorted(per_year):
        rows.append({"year": year, **per_year[year]})
    return rows


def card_frequency_rows(journeys) -> list[dict]:
    """Per-year card frequency buckets over (card, service day) pairs."""
    import datetime as dt

    rows = []
    if len(journeys) == 0:
        return rows
    epoch = dt.date(1970, 1, 1)
    first_year = (epoch + dt.timedelta(days=int(journeys.day.min()))).year
    last_year = (epoch + dt.timedelta(days=int(journeys.day.max()))).year
    for year in range(first_year, last_year + 1):
        lo = (dt.date(year, 1, 1) - epoch).days
        hi = (dt.date(year + 1, 1, 1) - epoch).days
        mask = (journeys.day >= lo) & (journeys.day < hi)
        if not np.any(mask):
            continue
        sub_day = journeys.day[mask]
        key = journeys.card_code[mask].astype(np.int64) * (int(sub_day.max()) + 1) + sub_day
        _, counts = np.unique(key, return_counts=True)
        n_days = int(np.unique(sub_day).size)
        card_days = int(counts.size)
        rows.append(
            {
                "year": year,
                "cards_1": int(np.sum(counts == 1)),
                "cards_2": int(np.sum(counts == 2)),
                "cards_3": int(np.sum(counts == 3)),
                "cards_4plus": int(np.sum(counts >= 4)),
                "card_days": card_days,
                "days": n_days,
                "avg_card_days_per_day": f"{card_days / n_days:.2f}" if n_days else "",
            }
        )
    return rows


def od_summary_rows(journeys) -> list[dict]:
    import datetime as dt

    from .ingest import od_daily_summary

    rows = []
    if len(journeys) == 0:
        return rows
    year_of = {dt.date(1970, 1, 1) + dt.timedelta(days=int(d)) for d in np.unique(journeys.day)}
    for year in sorted({d.year for d in year_of}):
        summary = od_daily_summary(journeys, year)
        if summary is None:
            continue
        rows.append(
            {
                "year": year,
                "n_od_days": summary["n_od_days"],
                "mean": f"{summary['mean']:.2f}",
                "median": f"{summary['median']:.2f}",
                "std": "" if math.isnan(summary["std"]) else f"{summary['std']:.2f}",
                "q1": f"{summary['q1']:.2f}",
                "q3": f"{summary['q3']:.2f}",
                "max": f"{summary['max']:.0f}",
            }
        )
    return rows


# ---------------------------------------------------------------------------
# Bundle assembly and serialization
# ---------------------------------------------------------------------------

def build_bundle(
    respondents: list[DiaryRespondent],
    matched: list[MatchedRespondent],
    per_year: list[tuple[int, int, int]],
    knobs: AnalysisKnobs,
    card_sections: dict[str, list[dict]] | None = None,
) -> tuple[dict, ErrorTable]:
    table = errors_from_matched(matched)
    test_rows, all_data_p = group_test_rows(table, knobs)
    paired, paired_p = paired_trip_rows(table, knobs)
    test_rows += paired
    if paired_p is not None:
        all_data_p["trip_order"] = paired_p
    quad, signed_summary = quadrant_rows(table)

    bundle: dict = {"meta": {"n_respondents": len(respondents), "n_matched": len(matched), "n_trips": len(table)}}
    bundle["match_rate"] = match_rate_rows(per_year)
    bundle["tests"] = test_rows
    bundle["bonferroni"] = bonferroni_rows(all_data_p, knobs.bonferroni_m)
    bundle["quadrants"] = quad
    bundle["signed_summary"] = signed_summary
    bundle["hist_abs_first"] = hist_rows(table.abs_first_s, signed=False)
    bundle["hist_signed_first"] = hist_rows(table.signed_first_s, signed=True)
    bundle["shapiro"] = shapiro_rows(table, matched, knobs)
    bundle["second_card"] = second_card_rows(matched)
    bundle["tests_second"] = second_card_tests(matched, knobs)
    bundle["diary_summary"] = diary_summary_rows(respondents)
    for name in ("card_frequency", "od_summary"):
        bundle[name] = (card_sections or {}).get(name, [])
    return bundle, table


def write_bundle_csv(bundle: dict, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for section, columns in SECTION_COLUMNS.items():
        rows = bundle.get(section, [])
        path = out / f"{section}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            w.writeheader()
            for row in rows:
                w.writerow({k: row.get(k, "") for k in columns})
        written.append(path)
    return written


def write_bundle_json(bundle: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bundle, fh, indent=1)
        fh.write("\n")
    return path


def load_bundle_json(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
