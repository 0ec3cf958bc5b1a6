"""Shared builders for compact test data."""

from __future__ import annotations

import datetime as dt

import pytest

from tripmatch.ingest import CardTransaction, DiaryLeg, DiaryRespondent, DiaryTrip
from tripmatch.model import (
    Covariates,
    DayType1,
    DayType2,
    DiaryTime,
    EndpointKey,
    EndpointKind,
    FamilyPosition,
    Gender,
    Interview,
    LegMode,
    Timestamp,
    TxType,
)

DAY = dt.date(2021, 3, 1)  # a Monday


def ts(text: str) -> Timestamp:
    """'08:00' or '08:00:30' on DAY, or a full ISO datetime."""
    if "T" in text:
        return Timestamp.parse_iso(text)
    parts = [int(p) for p in text.split(":")]
    while len(parts) < 3:
        parts.append(0)
    h, m, s = parts
    return Timestamp(DAY, h * 3600 + m * 60 + s)


def dts(text: str) -> DiaryTime:
    return DiaryTime(ts(text))


def tap(card: str, when: str, tx: TxType, endpoint: str, mode: LegMode = LegMode.TRAIN) -> CardTransaction:
    kind = EndpointKind.BUS_LINE if mode is LegMode.BUS else EndpointKind.STATION
    key = EndpointKey(kind, " ".join(endpoint.casefold().split()))
    return CardTransaction(card, ts(when), tx, key, mode)


def rail_trip(resp: str, idx: int, board: str, alight: str, first: str, last: str,
              day: dt.date = DAY, mode: LegMode = LegMode.TRAIN) -> DiaryTrip:
    return DiaryTrip(
        respondent_id=resp,
        day=day,
        index_in_day=idx,
        legs=(DiaryLeg(mode=mode, board_station=board, alight_station=alight),),
        first_ref=dts(first),
        last_ref=dts(last),
    )


def bus_trip(resp: str, idx: int, board_line: str, alight_line: str, first: str, last: str,
             day: dt.date = DAY) -> DiaryTrip:
    legs = [DiaryLeg(mode=LegMode.BUS, board_line=board_line)]
    if alight_line != board_line:
        legs.append(DiaryLeg(mode=LegMode.BUS, board_line=alight_line))
    return DiaryTrip(
        respondent_id=resp,
        day=day,
        index_in_day=idx,
        legs=tuple(legs),
        first_ref=dts(first),
        last_ref=dts(last),
    )


def covariates(year: int = 2021, **overrides) -> Covariates:
    base = dict(
        gender=Gender.FEMALE,
        day_type1=DayType1.WEEKDAY,
        day_type2=DayType2.NORMAL_WEEKDAY,
        interview=Interview.TELEPHONE,
        schedule=None,
        region=None,
        family_position=FamilyPosition.SINGLE,
        year=year,
    )
    base.update(overrides)
    return Covariates(**base)


def respondent(resp: str, trips, day: dt.date = DAY, **cov) -> DiaryRespondent:
    trips = tuple(sorted(trips, key=lambda t: (t.first_ref, t.index_in_day)))
    return DiaryRespondent(
        respondent_id=resp,
        day=day,
        trips=trips,
        covariates=covariates(year=day.year, **cov),
    )


@pytest.fixture(params=["numpy", "numba"])
def kernels(request):
    from tripmatch import backend

    return backend.get_kernels(request.param)
