"""Core domain types: timestamps, endpoint keys, covariates, and day-type rules.

Times are stored as integer seconds everywhere so that score sums are exact;
conversion to decimal minutes happens only at report serialization.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from enum import Enum

from .errors import EmptyNameError

_EPOCH = dt.date(1970, 1, 1)

DIARY_GRID_S = 300  # diary times sit on a 5-minute grid


class TxType(Enum):
    TAP_IN = "IN"
    TRANSFER = "TR"
    TAP_OUT = "OUT"


class LegMode(Enum):
    TRAIN = "TRAIN"
    METRO = "METRO"
    BUS = "BUS"

    @property
    def is_rail(self) -> bool:
        return self is not LegMode.BUS


class EndpointKind(Enum):
    STATION = "STATION"
    BUS_LINE = "LINE"


class Gender(Enum):
    MALE = "MALE"
    FEMALE = "FEMALE"


class DayType1(Enum):
    WEEKDAY = "WEEKDAY"
    WEEKEND = "WEEKEND"


class DayType2(Enum):
    NORMAL_WEEKDAY = "NORMAL_WEEKDAY"
    WEEKEND_OR_HOLIDAY = "WEEKEND_OR_HOLIDAY"


class Interview(Enum):
    INTERNET = "INTERNET"
    TELEPHONE = "TELEPHONE"
    OTHER = "OTHER"


class Schedule(Enum):
    FIXED = "FIXED"
    FLEXIBLE = "FLEXIBLE"


class Region(Enum):
    ZEALAND_FUNEN = "ZEALAND_FUNEN"
    JUTLAND = "JUTLAND"


class FamilyPosition(Enum):
    SINGLE = "SINGLE"
    OLDER_IN_COUPLE = "OLDER_COUPLE"
    YOUNGER_IN_COUPLE = "YOUNGER_COUPLE"
    CHILD_UNDER_25 = "CHILD_U25"


class ModeCategory(Enum):
    TRAIN_ONLY = "TRAIN_ONLY"
    BUS_ONLY = "BUS_ONLY"
    MIXED = "MIXED"


@dataclass(frozen=True, order=True, slots=True)
class Timestamp:
    """A civil wall-clock instant: calendar date plus second-of-day.

    Ordering is lexicographic on (date, seconds_of_day); there is no
    timezone handling, only a single civil clock.
    """

    date: dt.date
    seconds_of_day: int

    def __post_init__(self) -> None:
        if not isinstance(self.date, dt.date):
            raise ValueError(f"date must be a datetime.date, got {self.date!r}")
        if not 0 <= self.seconds_of_day <= 86399:
            raise ValueError(f"seconds_of_day out of range: {self.seconds_of_day}")

    @property
    def epoch_seconds(self) -> int:
        return (self.date - _EPOCH).days * 86400 + self.seconds_of_day

    @classmethod
    def from_epoch_seconds(cls, s: int) -> "Timestamp":
        days, sod = divmod(int(s), 86400)
        return cls(_EPOCH + dt.timedelta(days=days), sod)

    @classmethod
    def parse_iso(cls, text: str) -> "Timestamp":
        # fixed "YYYY-MM-DDTHH:MM:SS" layout; strptime is far too slow here
        try:
            if len(text) != 19 or text[10] != "T" or text[4] != "-" or text[7] != "-" \
                    or text[13] != ":" or text[16] != ":":
                raise ValueError
            day = dt.date(int(text[0:4]), int(text[5:7]), int(text[8:10]))
            h, m, s = int(text[11:13]), int(text[14:16]), int(text[17:19])
            if not (0 <= h <= 23 and 0 <= m <= 59 and 0 <= s <= 59):
                raise ValueError
        except ValueError:
            raise ValueError(f"bad ISO timestamp {text!r}") from None
        return cls(day, h * 3600 + m * 60 + s)

    def iso(self) -> str:
        h, rem = divmod(self.seconds_of_day, 3600)
        m, s = divmod(rem, 60)
        return f"{self.date.isoformat()}T{h:02d}:{m:02d}:{s:02d}"


@dataclass(frozen=True, order=True, slots=True)
class DiaryTime:
    """A reported time, constrained to the survey's 5-minute grid."""

    ts: Timestamp

    def __post_init__(self) -> None:
        if self.ts.seconds_of_day % DIARY_GRID_S != 0:
            raise ValueError(
                f"diary time {self.ts.iso()} is not on the {DIARY_GRID_S}s grid"
            )

    @property
    def epoch_seconds(self) -> int:
        return self.ts.epoch_seconds


@dataclass(frozen=True, order=True, slots=True)
class EndpointKey:
    """A normalized matching key: a station name or a bus-line name.

    Keys must already be in canonical form (case-folded, whitespace
    collapsed); build them through normalize_endpoint.
    """

    kind: EndpointKind
    key: str

    def __post_init__(self) -> None:
        if not self.key:
            raise ValueError("endpoint key must be non-empty")
        if self.key != " ".join(self.key.casefold().split()):
            raise ValueError(f"endpoint key not normalized: {self.key!r}")

    def to_string(self) -> str:
        prefix = "station" if self.kind is EndpointKind.STATION else "line"
        return f"{prefix}:{self.key}"

    @classmethod
    def from_string(cls, text: str) -> "EndpointKey":
        prefix, _, key = text.partition(":")
        kinds = {"station": EndpointKind.STATION, "line": EndpointKind.BUS_LINE}
        if prefix not in kinds or not key:
            raise ValueError(f"bad endpoint key string: {text!r}")
        return cls(kinds[prefix], key)


@dataclass(frozen=True)
class Covariates:
    """Respondent attributes joined onto every error record.

    schedule and region are None when the external mapping tables do not
    cover the respondent; such respondents are excluded from the
    corresponding group tests but retained everywhere else (the same
    treatment ``interview == OTHER`` receives in interview-type tests).
    """

    gender: Gender
    day_type1: DayType1
    day_type2: DayType2
    interview: Interview
    schedule: Schedule | None
    region: Region | None
    family_position: FamilyPosition
    year: int

    def __post_init__(self) -> None:
        # Holidays extend the weekend class, never shrink it.
        if self.day_type1 is DayType1.WEEKEND and self.day_type2 is not DayType2.WEEKEND_OR_HOLIDAY:
            raise ValueError("weekend days must carry day_type2=WEEKEND_OR_HOLIDAY")


def abs_diff_seconds(a: Timestamp, b: Timestamp) -> int:
    """Absolute wall-clock difference in whole seconds (cross-midnight safe)."""
    return abs(a.epoch_seconds - b.epoch_seconds)


def derive_day_types(date: dt.date, holidays: frozenset[dt.date] | set[dt.date]) -> tuple[DayType1, DayType2]:
    """Classify a date as weekday/weekend and normal-weekday/weekend-or-holiday."""
    if date.weekday() >= 5:
        return DayType1.WEEKEND, DayType2.WEEKEND_OR_HOLIDAY
    if date in holidays:
        return DayType1.WEEKDAY, DayType2.WEEKEND_OR_HOLIDAY
    return DayType1.WEEKDAY, DayType2.NORMAL_WEEKDAY


def normalize_name(raw: str, alias_table: dict[str, str] | None = None) -> str:
    """Canonicalize an endpoint name: trim, case-fold, collapse whitespace, alias.

    The alias table maps already-folded names to canonical ones and must be
    chain-free (see tables.load_alias). Raises EmptyNameError on blank input.
    """
    s = raw.strip()
    if not s:
        raise EmptyNameError(f"blank endpoint name: {raw!r}")
    s = " ".join(s.casefold().split())
    if alias_table:
        s = alias_table.get(s, s)
    return s


def normalize_endpoint(
    raw: str,
    kind: EndpointKind,
    alias_table: dict[str, str] | None = None,
) -> EndpointKey:
    """Build the normalized matching key for a raw station or line name."""
    return EndpointKey(kind, normalize_name(raw, alias_table))
