"""Per-trip error records and the descriptive layer on top of them.

The sign convention is card time minus diary time: negative means the
respondent reported a later time than the card shows ("early reporting",
i.e. the tap happened before the reported instant). Absolute values feed
the dispersion tables; signed values feed the consistency analysis.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateVarianceError, EmptySampleError
from .model import Covariates, ModeCategory

ERRORS_HEADER = [
    "respondent_id",
    "trip_index",
    "signed_first_s",
    "signed_last_s",
    "abs_first_s",
    "abs_last_s",
    "mode",
    "year",
    "gender",
    "day_type1",
    "day_type2",
    "interview",
    "schedule",
    "region",
    "family_position",
]


@dataclass(frozen=True)
class ErrorRecord:
    """One matched trip's reporting error joined with its covariates."""

    respondent_id: str
    trip_index: int
    signed_first_s: int
    signed_last_s: int
    mode: ModeCategory
    covariates: Covariates

    @property
    def abs_first_s(self) -> int:
        return abs(self.signed_first_s)

    @property
    def abs_last_s(self) -> int:
        return abs(self.signed_last_s)


class ErrorTable:
    """Columnar error records; the unit of every statistic downstream."""

    def __init__(self, columns: dict[str, np.ndarray]):
        n = len(columns["respondent_id"])
        for name in ERRORS_HEADER:
            if name not in columns or len(columns[name]) != n:
                raise ValueError(f"bad or missing column {name}")
        self.cols = columns

    def __len__(self) -> int:
        return len(self.cols["respondent_id"])

    def column(self, name: str) -> np.ndarray:
        return self.cols[name]

    @property
    def abs_first_s(self) -> np.ndarray:
        return self.cols["abs_first_s"]

    @property
    def signed_first_s(self) -> np.ndarray:
        return self.cols["signed_first_s"]

    @property
    def signed_last_s(self) -> np.ndarray:
        return self.cols["signed_last_s"]

    @classmethod
    def from_records(cls, records) -> "ErrorTable":
        rows = list(records)
        get = lambda fn: np.array([fn(r) for r in rows])
        empty = lambda v: "" if v is None else v.value
        return cls(
            {
                "respondent_id": get(lambda r: r.respondent_id).astype(str)
                if rows
                else np.array([], dtype=str),
                "trip_index": get(lambda r: r.trip_index).astype(np.int32)
                if rows
                else np.array([], dtype=np.int32),
                "signed_first_s": get(lambda r: r.signed_first_s).astype(np.int64)
                if rows
                else np.array([], dtype=np.int64),
                "signed_last_s": get(lambda r: r.signed_last_s).astype(np.int64)
                if rows
                else np.array([], dtype=np.int64),
                "abs_first_s": get(lambda r: r.abs_first_s).astype(np.int64)
                if rows
                else np.array([], dtype=np.int64),
                "abs_last_s": get(lambda r: r.abs_last_s).astype(np.int64)
                if rows
                else np.array([], dtype=np.int64),
                "mode": get(lambda r: r.mode.value).astype(str) if rows else np.array([], dtype=str),
                "year": get(lambda r: r.covariates.year).astype(np.int32)
                if rows
                else np.array([], dtype=np.int32),
                "gender": get(lambda r: r.covariates.gender.value).astype(str)
                if rows
                else np.array([], dtype=str),
                "day_type1": get(lambda r: r.covariates.day_type1.value).astype(str)
                if rows
                else np.array([], dtype=str),
                "day_type2": get(lambda r: r.covariates.day_type2.value).astype(str)
                if rows
                else np.array([], dtype=str),
                "interview": get(lambda r: r.covariates.interview.value).astype(str)
                if rows
                else np.array([], dtype=str),
                "schedule": get(lambda r: empty(r.covariates.schedule)).astype(str)
                if rows
                else np.array([], dtype=str),
                "region": get(lambda r: empty(r.covariates.region)).astype(str)
                if rows
                else np.array([], dtype=str),
                "family_position": get(lambda r: r.covariates.family_position.value).astype(str)
                if rows
                else np.array([], dtype=str),
            }
        )

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ERRORS_HEADER)
            cols = [self.cols[name] for name in ERRORS_HEADER]
            for row in zip(*cols):
                w.writerow([str(v) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "ErrorTable":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ERRORS_HEADER:
                raise ValueError(f"{path}: unexpected errors.csv header {header}")
            rows = list(reader)
        cols: dict[str, np.ndarray] = {}
        ints = {"trip_index", "signed_first_s", "signed_last_s", "abs_first_s", "abs_last_s", "year"}
        for i, name in enumerate(ERRORS_HEADER):
            raw = [row[i] for row in rows]
            if name in ints:
                cols[name] = np.array([int(v) for v in raw], dtype=np.int64)
            else:
                cols[name] = np.array(raw, dtype=str) if raw else np.array([], dtype=str)
        cols["trip_index"] = cols["trip_index"].astype(np.int32)
        cols["year"] = cols["year"].astype(np.int32)
        return cls(cols)


def trip_errors(results, respondents_by_id, substitute_second_for=frozenset()) -> ErrorTable:
    """Error records for every matched trip, covariates joined per respondent.

    results are MatchResult objects; respondents_by_id maps respondent id to
    its DiaryRespondent. Respondents named in substitute_second_for take
    their per-trip deltas from the second-best card instead (used by the
    match-ambiguity sensitivity analysis).
    """
    from .ingest import classify_respondent

    records: list[ErrorRecord] = []
    for res in results:
        if res.status != "MATCHED" or res.best is None:
            continue
        r = respondents_by_id[res.respondent_id]
        source = res.best
        if res.respondent_id in substitute_second_for and res.second_best is not None:
            source = res.second_best
        category = classify_respondent(r)
        if category is None:
            continue
        for trip, (df, dl) in zip(r.trips, source.assignment.per_trip):
            records.append(
                ErrorRecord(
                    respondent_id=res.respondent_id,
                    trip_index=trip.index_in_day,
                    signed_first_s=int(df),
                    signed_last_s=int(dl),
                    mode=category,
                    covariates=r.covariates,
                )
            )
    return ErrorTable.from_records(records)


# ---------------------------------------------------------------------------
# Descriptive statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DescriptiveStats:
    """Count plus location/spread in decimal minutes.

    Quantiles interpolate linearly between closest ranks (position
    1 + (n-1)q in the sorted sample); std is the n-1 sample estimate and is
    None for singleton samples.
    """

    count: int
    mean: float
    std: float | None
    q1: float
    median: float
    q3: float

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def describe(values_s) -> DescriptiveStats:
    """Descriptive statistics of per-trip seconds, reported in minutes."""
    arr = np.asarray(values_s, dtype=float)
    if arr.size == 0:
        raise EmptySampleError("describe requires at least one value")
    q1, med, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
    std = float(np.std(arr, ddof=1)) / 60.0 if arr.size >= 2 else None
    return DescriptiveStats(
        count=int(arr.size),
        mean=float(np.mean(arr)) / 60.0,
        std=std,
        q1=float(q1) / 60.0,
        median=float(med) / 60.0,
        q3=float(q3) / 60.0,
    )


def apply_cutoff(values_s, cutoff_min: float) -> tuple[np.ndarray, int]:
    """Keep values strictly below the cut-off (minutes); report exclusions."""
    if not cutoff_min > 0:
        raise ValueError(f"cut-off must be positive, got {cutoff_min}")
    arr = np.asarray(values_s)
    if math.isinf(cutoff_min):
        return arr.copy(), 0
    kept = arr[arr < cutoff_min * 60.0]
    return kept, int(arr.size - kept.size)


# ---------------------------------------------------------------------------
# Signed analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadrantCounts:
    """Sign-consistency of first-stop vs last-stop errors.

    Records with a zero on either side are tallied separately and excluded
    from the quadrant fractions (second precision makes exact zeros real).
    """

    late_late: int
    early_early: int
    late_early: int
    early_late: int
    zero_first_only: int
    zero_last_only: int
    zero_both: int

    @property
    def classified(self) -> int:
        return self.late_late + self.early_early + self.late_early + self.early_late

    @property
    def total(self) -> int:
        return self.classified + self.zero_first_only + self.zero_last_only + self.zero_both

    def fractions(self) -> dict[str, float]:
        c = self.classified
        if c == 0:
            return {"late_late": 0.0, "early_early": 0.0, "late_early": 0.0, "early_late": 0.0}
        return {
            "late_late": self.late_late / c,
            "early_early": self.early_early / c,
            "late_early": self.late_early / c,
            "early_late": self.early_late / c,
        }

    @property
    def consistent_fraction(self) -> float:
        c = self.classified
        return (self.late_late + self.early_early) / c if c else 0.0


def quadrant_counts(signed_first_s, signed_last_s) -> QuadrantCounts:
    f = np.asarray(signed_first_s, dtype=np.int64)
    l = np.asarray(signed_last_s, dtype=np.int64)
    if f.shape != l.shape:
        raise ValueError("signed arrays must align")
    zf, zl = f == 0, l == 0
    both = zf & zl
    return QuadrantCounts(
        late_late=int(np.sum((f > 0) & (l > 0))),
        early_early=int(np.sum((f < 0) & (l < 0))),
        late_early=int(np.sum((f > 0) & (l < 0))),
        early_late=int(np.sum((f < 0) & (l > 0))),
        zero_first_only=int(np.sum(zf & ~zl)),
        zero_last_only=int(np.sum(zl & ~zf)),
        zero_both=int(np.sum(both)),
    )


def signed_correlation(signed_first_s, signed_last_s) -> float:
    """Pearson correlation between first- and last-stop signed errors."""
    f = np.asarray(signed_first_s, dtype=float)
    l = np.asarray(signed_last_s, dtype=float)
    if f.size < 2:
        raise DegenerateVarianceError("correlation requires n >= 2")
    if np.std(f) == 0.0 or np.std(l) == 0.0:
        raise DegenerateVarianceError("correlation undefined for constant input")
    return float(np.corrcoef(f, l)[0, 1])


def first_second_pairs(table: ErrorTable) -> np.ndarray:
    """(abs first-stop error of 1st trip, of 2nd trip) per two-trip respondent.

    Pairing follows the reported in-day order; respondents contributing
    anything else than exactly two matched trips are skipped. Returns an
    (m, 2) int64 array of seconds ordered by respondent id.
    """
    resp = table.column("respondent_id")
    idx = table.column("trip_index")
    absf = table.column("abs_first_s")
    by_resp: dict[str, dict[int, int]] = {}
    for r, i, v in zip(resp, idx, absf):
        by_resp.setdefault(str(r), {})[int(i)] = int(v)
    pairs = []
    for r, trips in sorted(by_resp.items()):
        if len(trips) != 2:
            continue
        first_idx, second_idx = sorted(trips)
        pairs.append((trips[first_idx], trips[second_idx]))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def histogram_minutes(values_s, signed: bool = False) -> list[tuple[int, int, int]]:
    """1-minute-wide bins (lo_min, hi_min, count), contiguous over the range."""
    arr = np.asarray(values_s, dtype=float) / 60.0
    if arr.size == 0:
        return []
    bins = np.floor(arr).astype(np.int64)
    lo = int(bins.min()) if signed else min(0, int(bins.min()))
    hi = int(bins.max())
    counts = np.bincount(bins - lo, minlength=hi - lo + 1)
    return [(lo + k, lo + k + 1, int(c)) for k, c in enumerate(counts)]


# ---------------------------------------------------------------------------
# Grouping registry used by the analysis battery
# ---------------------------------------------------------------------------

# name -> (column, ordered level values, is_two_level)
_STATIC_GROUPINGS: dict[str, tuple[str, list[str], bool]] = {
    "gender": ("gender", ["MALE", "FEMALE"], True),
    "day_type1": ("day_type1", ["WEEKDAY", "WEEKEND"], True),
    "day_type2": ("day_type2", ["NORMAL_WEEKDAY", "WEEKEND_OR_HOLIDAY"], True),
    "interview": ("interview", ["INTERNET", "TELEPHONE"], True),  # OTHER excluded
    "schedule": ("schedule", ["FIXED", "FLEXIBLE"], True),  # unmapped excluded
    "region": ("region", ["ZEALAND_FUNEN", "JUTLAND"], True),  # unmapped excluded
    "mode": ("mode", ["TRAIN_ONLY", "BUS_ONLY", "MIXED"], False),
    "family_position": (
        "family_position",
        ["SINGLE", "OLDER_COUPLE", "YOUNGER_COUPLE", "CHILD_U25"],
        False,
    ),
}

TWO_LEVEL_GROUPINGS = [k for k, v in _STATIC_GROUPINGS.items() if v[2]]
MULTI_LEVEL_GROUPINGS = [k for k, v in _STATIC_GROUPINGS.items() if not v[2]] + ["year"]


def grouping_arrays(table: ErrorTable, name: str) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """(values_s, labels, ordered levels) for a named grouping.

    Labels not in the level list (OTHER interviews, unmapped schedule or
    region, i.e. empty strings) simply never match a level and drop out of
    the tests while remaining in the table.
    """
    values = table.abs_first_s
    if name == "year":
        labels = table.column("year").astype(str)
        levels = sorted(set(labels.tolist()))
        return values, labels, levels
    if name not in _STATIC_GROUPINGS:
        raise KeyError(f"unknown grouping {name!r}")
    col, levels, _ = _STATIC_GROUPINGS[name]
    return values, table.column(col), list(levels)
