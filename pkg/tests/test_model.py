import datetime as dt

import pytest

from tripmatch.errors import EmptyNameError
from tripmatch.model import (
    DayType1,
    DayType2,
    DiaryTime,
    EndpointKey,
    EndpointKind,
    Timestamp,
    abs_diff_seconds,
    derive_day_types,
    normalize_endpoint,
    normalize_name,
)

from conftest import covariates, ts


class TestTimestamp:
    def test_ordering_is_lexicographic(self):
        a = Timestamp(dt.date(2021, 3, 1), 86399)
        b = Timestamp(dt.date(2021, 3, 2), 0)
        assert a < b
        assert Timestamp(dt.date(2021, 3, 1), 10) < Timestamp(dt.date(2021, 3, 1), 11)

    def test_epoch_roundtrip(self):
        t = Timestamp(dt.date(2021, 3, 1), 12345)
        assert Timestamp.from_epoch_seconds(t.epoch_seconds) == t

    def test_iso_roundtrip(self):
        assert Timestamp.parse_iso("2021-03-01T08:05:30").iso() == "2021-03-01T08:05:30"

    def test_seconds_of_day_range(self):
        with pytest.raises(ValueError):
            Timestamp(dt.date(2021, 3, 1), 86400)
        with pytest.raises(ValueError):
            Timestamp(dt.date(2021, 3, 1), -1)


class TestDiaryTime:
    def test_grid_enforced(self):
        DiaryTime(ts("08:05"))
        with pytest.raises(ValueError):
            DiaryTime(ts("08:05:30"))
        with pytest.raises(ValueError):
            DiaryTime(ts("08:01"))


class TestAbsDiffSeconds:
    def test_same_day(self):
        assert abs_diff_seconds(ts("08:00"), ts("08:05")) == 300

    def test_zero_iff_equal(self):
        assert abs_diff_seconds(ts("08:00"), ts("08:00")) == 0
        assert abs_diff_seconds(ts("08:00"), ts("08:00:01")) > 0

    def test_cross_midnight(self):
        a = Timestamp(dt.date(2021, 3, 1), 23 * 3600 + 59 * 60)
        b = Timestamp(dt.date(2021, 3, 2), 60)
        assert abs_diff_seconds(a, b) == 120

    def test_symmetric(self):
        a, b = ts("07:13:22"), ts("19:45:01")
        assert abs_diff_seconds(a, b) == abs_diff_seconds(b, a)


class TestDeriveDayTypes:
    def test_saturday(self):
        assert derive_day_types(dt.date(2021, 3, 6), frozenset()) == (
            DayType1.WEEKEND,
            DayType2.WEEKEND_OR_HOLIDAY,
        )

    def test_plain_tuesday(self):
        assert derive_day_types(dt.date(2021, 3, 2), frozenset()) == (
            DayType1.WEEKDAY,
            DayType2.NORMAL_WEEKDAY,
        )

    def test_holiday_tuesday(self):
        day = dt.date(2021, 3, 2)
        assert derive_day_types(day, frozenset({day})) == (
            DayType1.WEEKDAY,
            DayType2.WEEKEND_OR_HOLIDAY,
        )

    def test_exhaustive_combinations(self):
        # weekend/weekday x holiday membership covers all four cases
        sat, tue = dt.date(2021, 3, 6), dt.date(2021, 3, 2)
        holidays = frozenset({sat, tue})
        assert derive_day_types(sat, holidays)[0] is DayType1.WEEKEND
        assert derive_day_types(sat, holidays)[1] is DayType2.WEEKEND_OR_HOLIDAY
        assert derive_day_types(tue, holidays)[1] is DayType2.WEEKEND_OR_HOLIDAY
        assert derive_day_types(sat, frozenset())[1] is DayType2.WEEKEND_OR_HOLIDAY
        assert derive_day_types(tue, frozenset())[1] is DayType2.NORMAL_WEEKDAY


class TestNormalizeEndpoint:
    def test_alias_applied_after_folding(self):
        alias = {"nørreport st.": "norreport"}
        key = normalize_endpoint("  Nørreport St. ", EndpointKind.STATION, alias)
        assert key == EndpointKey(EndpointKind.STATION, "norreport")

    def test_idempotent(self):
        key = normalize_endpoint("norreport", EndpointKind.STATION, {})
        again = normalize_endpoint(key.key, EndpointKind.STATION, {})
        assert key == again

    def test_blank_raises(self):
        with pytest.raises(EmptyNameError):
            normalize_endpoint("   ", EndpointKind.STATION, {})

    def test_whitespace_collapsed(self):
        assert normalize_name("A   B\tC") == "a b c"

    def test_idempotent_with_alias(self):
        alias = {"kbh h": "koebenhavn h"}
        once = normalize_name(" KBH  H ", alias)
        assert normalize_name(once, alias) == once


class TestCovariates:
    def test_weekend_forces_weekend_or_holiday(self):
        with pytest.raises(ValueError):
            covariates(day_type1=DayType1.WEEKEND, day_type2=DayType2.NORMAL_WEEKDAY)
        covariates(day_type1=DayType1.WEEKEND, day_type2=DayType2.WEEKEND_OR_HOLIDAY)


class TestEndpointKey:
    def test_string_roundtrip(self):
        for key in (
            EndpointKey(EndpointKind.STATION, "norreport"),
            EndpointKey(EndpointKind.BUS_LINE, "5c"),
        ):
            assert EndpointKey.from_string(key.to_string()) == key
