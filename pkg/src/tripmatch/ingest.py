"""CSV ingestion, journey reconstruction, and respondent classification.

Transactions are held columnar (numpy arrays over interned card/endpoint
pools) so that multi-million-row inputs stay fast and small; the dataclass
views materialize on demand. Diary files are small and parse row-wise.

File schemas:

    transactions.csv  card_id,timestamp,tx_type,mode,endpoint_kind,endpoint_raw
                      tx_type in {IN,TR,OUT}; mode in {TRAIN,METRO,BUS};
                      endpoint_kind in {STATION,LINE}; timestamp ISO-8601 seconds.
    diary.csv         respondent_id,day,trip_index,leg_index,mode,
                      board_station,alight_station,board_line,
                      first_ref_time,last_ref_time,
                      gender,interview,occupation_code,family_position
                      (one row per leg; trip-level fields repeat per leg)
"""

from __future__ import annotations

import csv
import warnings
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import backend
from .errors import EmptyNameError, SchemaError
from .model import (
    Covariates,
    DiaryTime,
    EndpointKey,
    EndpointKind,
    FamilyPosition,
    Gender,
    Interview,
    LegMode,
    ModeCategory,
    Timestamp,
    TxType,
    derive_day_types,
    normalize_endpoint,
)
from .tables import MappingTables

TRANSACTIONS_HEADER = ["card_id", "timestamp", "tx_type", "mode", "endpoint_kind", "endpoint_raw"]
DIARY_HEADER = [
    "respondent_id",
    "day",
    "trip_index",
    "leg_index",
    "mode",
    "board_station",
    "alight_station",
    "board_line",
    "first_ref_time",
    "last_ref_time",
    "gender",
    "interview",
    "occupation_code",
    "family_position",
]

TX_CODE = {"IN": 0, "TR": 1, "OUT": 2}
MODE_CODE = {"TRAIN": 0, "METRO": 1, "BUS": 2}
KIND_CODE = {"STATION": 0, "LINE": 1}

_TX_BY_CODE = {0: TxType.TAP_IN, 1: TxType.TRANSFER, 2: TxType.TAP_OUT}
_MODE_BY_CODE = {0: LegMode.TRAIN, 1: LegMode.METRO, 2: LegMode.BUS}

ORPHAN_REASONS = {
    0: "NO_OPEN_JOURNEY",
    1: "ABORTED_BY_TAP_IN",
    2: "MISSING_TAP_OUT",
    3: "NON_INCREASING_TIME",
}


@dataclass(frozen=True, slots=True)
class CardTransaction:
    card_id: str
    ts: Timestamp
    tx_type: TxType
    endpoint: EndpointKey
    mode: LegMode

    def __post_init__(self) -> None:
        if (self.mode is LegMode.BUS) != (self.endpoint.kind is EndpointKind.BUS_LINE):
            raise ValueError(
                f"bus taps carry line identity, rail taps station identity: "
                f"{self.mode.value} vs {self.endpoint.kind.value}"
            )


@dataclass(frozen=True)
class RejectedRow:
    line_no: int
    reason: str


@dataclass(frozen=True)
class OrphanTap:
    card_id: str
    line_no: int
    reason: str


class TransactionTable:
    """Columnar transactions. card/endpoint pools are lexicographically
    sorted so integer code order equals string order."""

    def __init__(self, card_code, t, tx, mode, ep, line_no, cards, endpoints):
        self.card_code = card_code  # int32
        self.t = t  # int64 epoch seconds
        self.tx = tx  # int8 (TX_CODE)
        self.mode = mode  # int8 (MODE_CODE)
        self.ep = ep  # int32 into endpoints
        self.line_no = line_no  # int64 source line numbers
        self.cards = cards  # np str array, sorted
        self.endpoints = endpoints  # np str array of EndpointKey strings, sorted

    def __len__(self) -> int:
        return int(self.t.size)

    def row(self, i: int) -> CardTransaction:
        key = EndpointKey.from_string(str(self.endpoints[self.ep[i]]))
        return CardTransaction(
            card_id=str(self.cards[self.card_code[i]]),
            ts=Timestamp.from_epoch_seconds(int(self.t[i])),
            tx_type=_TX_BY_CODE[int(self.tx[i])],
            endpoint=key,
            mode=_MODE_BY_CODE[int(self.mode[i])],
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self.row(i)

    @classmethod
    def from_transactions(cls, transactions) -> "TransactionTable":
        rows = list(transactions)
        cards = np.array(sorted({t.card_id for t in rows}), dtype=str)
        endpoints = np.array(sorted({t.endpoint.to_string() for t in rows}), dtype=str)
        card_idx = {c: i for i, c in enumerate(cards.tolist())}
        ep_idx = {e: i for i, e in enumerate(endpoints.tolist())}
        return cls(
            card_code=np.array([card_idx[t.card_id] for t in rows], dtype=np.int32),
            t=np.array([t.ts.epoch_seconds for t in rows], dtype=np.int64),
            tx=np.array([TX_CODE[t.tx_type.value] for t in rows], dtype=np.int8),
            mode=np.array([MODE_CODE[t.mode.value] for t in rows], dtype=np.int8),
            ep=np.array([ep_idx[t.endpoint.to_string()] for t in rows], dtype=np.int32),
            line_no=np.arange(1, len(rows) + 1, dtype=np.int64),
            cards=cards,
            endpoints=endpoints,
        )


def _read_transactions_frame(path: Path) -> tuple[pd.DataFrame, np.ndarray, list[RejectedRow]]:
    """Read the raw frame plus per-row source line numbers.

    Fast path via pandas; on ragged rows fall back to a python csv pass that
    pins exact line numbers for the structural rejects.
    """
    try:
        with warnings.catch_warnings():
            # ragged rows must not be silently truncated or dropped
            warnings.simplefilter("error", pd.errors.ParserWarning)
            df = pd.read_csv(
                path,
                dtype={
                    "card_id": "category",
                    "timestamp": str,
                    "tx_type": "category",
                    "mode": "category",
                    "endpoint_kind": "category",
                    "endpoint_raw": "category",
                },
                na_filter=False,
                on_bad_lines="error",
                index_col=False,
            )
    except FileNotFoundError as exc:
        raise SchemaError(f"FileUnreadable: {path}: {exc}") from exc
    except (pd.errors.ParserError, pd.errors.ParserWarning, UnicodeDecodeError):
        return _read_transactions_slow(path)
    except (OSError, pd.errors.EmptyDataError) as exc:
        raise SchemaError(f"FileUnreadable: {path}: {exc}") from exc
    if list(df.columns) != TRANSACTIONS_HEADER:
        raise SchemaError(f"{path}: expected header {TRANSACTIONS_HEADER}, got {list(df.columns)}")
    return df, np.arange(2, len(df) + 2, dtype=np.int64), []


def _read_transactions_slow(path: Path) -> tuple[pd.DataFrame, np.ndarray, list[RejectedRow]]:
    rows: list[list[str]] = []
    line_nos: list[int] = []
    rejected: list[RejectedRow] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRANSACTIONS_HEADER:
            raise SchemaError(f"{path}: expected header {TRANSACTIONS_HEADER}, got {header}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(TRANSACTIONS_HEADER):
                rejected.append(RejectedRow(line_no, "BAD_FIELD_COUNT"))
                continue
            rows.append(row)
            line_nos.append(line_no)
    df = pd.DataFrame(rows, columns=TRANSACTIONS_HEADER, dtype=str)
    for col in ("card_id", "tx_type", "mode", "endpoint_kind", "endpoint_raw"):
        df[col] = df[col].astype("category")
    return df, np.array(line_nos, dtype=np.int64), rejected


def _category_codes(col: pd.Series, allowed: dict[str, int]) -> tuple[np.ndarray, np.ndarray]:
    """(per-row small-int codes or -1, per-row validity mask)."""
    cats = col.cat.categories.to_numpy(dtype=str)
    lut = np.array([allowed.get(c, -1) for c in cats], dtype=np.int8)
    raw_codes = col.cat.codes.to_numpy()
    mapped = lut[raw_codes]
    return mapped, mapped >= 0


def parse_transactions(
    path: str | Path,
    tables: MappingTables | None = None,
) -> tuple[TransactionTable, list[RejectedRow]]:
    """Parse transactions.csv; invalid rows are rejected with a reason code.

    Output preserves file order. Endpoint names are normalized (and aliased)
    during parsing so all downstream joins are on canonical keys.
    """
    tables = tables or MappingTables()
    path = Path(path)
    df, line_nos, rejected = _read_transactions_frame(path)
    n = len(df)
    reason = np.full(n, -1, dtype=np.int8)
    reason_names = [
        "EMPTY_CARD",
        "BAD_TIMESTAMP",
        "UNKNOWN_TX_TYPE",
        "UNKNOWN_MODE",
        "UNKNOWN_ENDPOINT_KIND",
        "EMPTY_ENDPOINT",
        "MODE_ENDPOINT_MISMATCH",
    ]

    card_cats = df["card_id"].cat.categories.to_numpy(dtype=str)
    card_ok_lut = np.array([bool(c.strip()) for c in card_cats], dtype=bool)
    card_codes_raw = df["card_id"].cat.codes.to_numpy()
    checks = [card_ok_lut[card_codes_raw]]

    times = pd.to_datetime(
        df["timestamp"], format="%Y-%m-%dT%H:%M:%S", errors="coerce", cache=False
    ).to_numpy()
    t_ok = ~pd.isna(times)
    t_ok &= times.astype("datetime64[s]").astype(np.int64) >= 0
    checks.append(t_ok)

    tx_codes, tx_ok = _category_codes(df["tx_type"], TX_CODE)
    checks.append(tx_ok)
    mode_codes, mode_ok = _category_codes(df["mode"], MODE_CODE)
    checks.append(mode_ok)
    kind_codes, kind_ok = _category_codes(df["endpoint_kind"], KIND_CODE)
    checks.append(kind_ok)

    ep_cats = df["endpoint_raw"].cat.categories.to_numpy(dtype=str)
    ep_nonblank_lut = np.array([bool(c.strip()) for c in ep_cats], dtype=bool)
    ep_codes_raw = df["endpoint_raw"].cat.codes.to_numpy()
    checks.append(ep_nonblank_lut[ep_codes_raw] if n else np.zeros(0, bool))

    checks.append((mode_codes == MODE_CODE["BUS"]) == (kind_codes == KIND_CODE["LINE"]))

    del df  # frees the raw string column well before pool construction

    for code, ok in enumerate(checks):
        bad = (reason < 0) & ~ok
        reason[bad] = code

    valid = reason < 0
    for idx in np.flatnonzero(~valid):
        rejected.append(RejectedRow(int(line_nos[idx]), reason_names[reason[idx]]))
    rejected.sort(key=lambda r: r.line_no)

    # Interned pools over valid rows only; lexicographic order gives the
    # deterministic tie-breaks the matcher relies on.
    v_card_raw = card_codes_raw[valid]
    used_cards = np.unique(v_card_raw)
    card_rank = np.full(card_cats.size, -1, dtype=np.int64)
    order = np.argsort(card_cats[used_cards], kind="stable")
    card_rank[used_cards[order]] = np.arange(used_cards.size)
    cards = card_cats[used_cards[order]]

    v_kind = kind_codes[valid].astype(np.int64)
    v_ep_raw = ep_codes_raw[valid].astype(np.int64)
    pair = v_kind * len(ep_cats) + v_ep_raw
    uniq_pairs, pair_inverse = np.unique(pair, return_inverse=True)
    pair_strings = []
    for p in uniq_pairs.tolist():
        kind_code, raw_code = divmod(p, len(ep_cats))
        kind = EndpointKind.STATION if kind_code == 0 else EndpointKind.BUS_LINE
        pair_strings.append(normalize_endpoint(ep_cats[raw_code], kind, tables.alias).to_string())
    endpoints, ep_of_pair = np.unique(np.array(pair_strings, dtype=str), return_inverse=True)

    table = TransactionTable(
        card_code=card_rank[v_card_raw].astype(np.int32),
        t=times[valid].astype("datetime64[s]").astype(np.int64),
        tx=tx_codes[valid],
        mode=mode_codes[valid],
        ep=ep_of_pair[pair_inverse].astype(np.int32),
        line_no=line_nos[valid],
        cards=cards,
        endpoints=endpoints,
    )
    return table, rejected


# ---------------------------------------------------------------------------
# Journey reconstruction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Journey:
    card_id: str
    service_day: dt.date
    taps: tuple[CardTransaction, ...]
    first_endpoint: EndpointKey
    last_endpoint: EndpointKey
    tap_in: Timestamp
    tap_out: Timestamp

    def __post_init__(self) -> None:
        if len(self.taps) < 2:
            raise ValueError("a journey needs at least tap-in and tap-out")
        if self.taps[0].tx_type is not TxType.TAP_IN or self.taps[-1].tx_type is not TxType.TAP_OUT:
            raise ValueError("journeys start with a tap-in and end with a tap-out")
        if any(t.tx_type is not TxType.TRANSFER for t in self.taps[1:-1]):
            raise ValueError("interior taps must be transfers")
        times = [t.ts.epoch_seconds for t in self.taps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("journey timestamps must strictly increase")
        if self.service_day != self.taps[0].ts.date:
            raise ValueError("service day is the calendar date of the first tap")


class JourneyTable:
    """Columnar complete journeys plus the sorted tap stream they came from."""

    def __init__(self, card_code, day, tin, tout, first_ep, last_ep, tap_lo, tap_hi,
                 ord_on_card, taps: TransactionTable):
        self.card_code = card_code
        self.day = day  # int64 epoch days of the first tap
        self.tin = tin
        self.tout = tout
        self.first_ep = first_ep
        self.last_ep = last_ep
        self.tap_lo = tap_lo
        self.tap_hi = tap_hi
        self.ord_on_card = ord_on_card  # 0-based among the card's complete journeys
        self.taps = taps  # sorted by (card, time, line)

    def __len__(self) -> int:
        return int(self.tin.size)

    @property
    def cards(self) -> np.ndarray:
        return self.taps.cards

    @property
    def endpoints(self) -> np.ndarray:
        return self.taps.endpoints

    def journey_ref(self, i: int) -> str:
        """Stable cross-run id: '<card_id>#<ordinal among complete journeys>'."""
        return f"{self.cards[self.card_code[i]]}#{int(self.ord_on_card[i])}"

    def journey(self, i: int) -> Journey:
        taps = tuple(self.taps.row(j) for j in range(int(self.tap_lo[i]), int(self.tap_hi[i])))
        return Journey(
            card_id=taps[0].card_id,
            service_day=taps[0].ts.date,
            taps=taps,
            first_endpoint=taps[0].endpoint,
            last_endpoint=taps[-1].endpoint,
            tap_in=taps[0].ts,
            tap_out=taps[-1].ts,
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self.journey(i)


def reconstruct_journeys(
    transactions: TransactionTable | "list[CardTransaction]",
    kernels=None,
) -> tuple[JourneyTable, list[OrphanTap]]:
    """Chain taps into complete journeys; everything else lands in the orphan log.

    Complete-journey tap count plus orphan count equals the input count.
    Output order is (card_id, time), independent of input order.
    """
    if not isinstance(transactions, TransactionTable):
        transactions = TransactionTable.from_transactions(transactions)
    kernels = kernels or backend.get_kernels()

    order = np.lexsort((transactions.line_no, transactions.t, transactions.card_code))
    sorted_taps = TransactionTable(
        card_code=transactions.card_code[order],
        t=transactions.t[order],
        tx=transactions.tx[order],
        mode=transactions.mode[order],
        ep=transactions.ep[order],
        line_no=transactions.line_no[order],
        cards=transactions.cards,
        endpoints=transactions.endpoints,
    )
    jy_lo, jy_hi, reason = kernels.chain_scan(sorted_taps.card_code, sorted_taps.t, sorted_taps.tx)

    orphan_idx = np.flatnonzero(reason >= 0)
    orphans = [
        OrphanTap(
            card_id=str(sorted_taps.cards[sorted_taps.card_code[i]]),
            line_no=int(sorted_taps.line_no[i]),
            reason=ORPHAN_REASONS[int(reason[i])],
        )
        for i in orphan_idx
    ]

    card_code = sorted_taps.card_code[jy_lo]
    # Ordinal among the card's complete journeys (journeys are card-grouped).
    if card_code.size:
        first_of_card = np.empty(card_code.size, dtype=bool)
        first_of_card[0] = True
        first_of_card[1:] = card_code[1:] != card_code[:-1]
        group_start = np.maximum.accumulate(np.where(first_of_card, np.arange(card_code.size), 0))
        ordn = (np.arange(card_code.size) - group_start).astype(np.int32)
    else:
        ordn = np.zeros(0, dtype=np.int32)

    table = JourneyTable(
        card_code=card_code.astype(np.int32),
        day=sorted_taps.t[jy_lo] // 86400,
        tin=sorted_taps.t[jy_lo],
        tout=sorted_taps.t[jy_hi - 1],
        first_ep=sorted_taps.ep[jy_lo].astype(np.int32),
        last_ep=sorted_taps.ep[jy_hi - 1].astype(np.int32),
        tap_lo=jy_lo,
        tap_hi=jy_hi,
        ord_on_card=ordn,
        taps=sorted_taps,
    )
    return table, orphans


# ---------------------------------------------------------------------------
# Diary parsing
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class DiaryLeg:
    mode: LegMode
    board_station: str | None = None
    alight_station: str | None = None
    board_line: str | None = None


@dataclass(frozen=True, slots=True)
class DiaryTrip:
    respondent_id: str
    day: dt.date
    index_in_day: int
    legs: tuple[DiaryLeg, ...]
    first_ref: DiaryTime
    last_ref: DiaryTime
    cross_midnight: bool = False

    def __post_init__(self) -> None:
        if not self.legs:
            raise ValueError("a trip needs at least one leg")
        if self.first_ref > self.last_ref:
            raise ValueError("first reference time after last reference time")


@dataclass(frozen=True)
class DiaryRespondent:
    respondent_id: str
    day: dt.date
    trips: tuple[DiaryTrip, ...]  # sorted by (first_ref, index_in_day)
    covariates: Covariates
    cross_region: bool = False


def classify_respondent(r: DiaryRespondent) -> ModeCategory | None:
    """Train-only / bus-only / mixed, or None for 1-trip and 4+-trip respondents."""
    if len(r.trips) not in (2, 3):
        return None
    modes = [leg.mode for trip in r.trips for leg in trip.legs]
    if all(m.is_rail for m in modes):
        return ModeCategory.TRAIN_ONLY
    if all(m is LegMode.BUS for m in modes):
        return ModeCategory.BUS_ONLY
    return ModeCategory.MIXED


_GENDERS = {g.value: g for g in Gender}
_INTERVIEWS = {i.value: i for i in Interview}
_FAMILY = {f.value: f for f in FamilyPosition}
_LEG_MODES = {m.value: m for m in LegMode}


def _parse_diary_time(text: str) -> DiaryTime:
    return DiaryTime(Timestamp.parse_iso(text))


@dataclass
class _TripRows:
    rows: list[dict] = field(default_factory=list)
    line_nos: list[int] = field(default_factory=list)


def parse_diary(
    path: str | Path,
    tables: MappingTables | None = None,
) -> tuple[list[DiaryRespondent], list[RejectedRow]]:
    """Parse diary.csv into respondents with derived covariates.

    Rejection is per trip (a bad leg row invalidates its trip) or per
    respondent (inconsistent day or covariate values). Respondents keep
    their file order; trips are sorted by reported first time.
    """
    tables = tables or MappingTables()
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"FileUnreadable: {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DIARY_HEADER:
            raise SchemaError(f"{path}: expected header {DIARY_HEADER}, got {header}")
        trip_rows: dict[tuple[str, int], _TripRows] = {}
        cov_by_resp: dict[str, set[tuple[str, str, str, str]]] = {}
        resp_order: list[str] = []
        rejected: list[RejectedRow] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(DIARY_HEADER):
                rejected.append(RejectedRow(line_no, "BAD_FIELD_COUNT"))
                continue
            rec = dict(zip(DIARY_HEADER, (cell.strip() for cell in row)))
            if not rec["respondent_id"]:
                rejected.append(RejectedRow(line_no, "EMPTY_RESPONDENT"))
                continue
            try:
                trip_index = int(rec["trip_index"])
                int(rec["leg_index"])
                if trip_index < 1:
                    raise ValueError
            except ValueError:
                rejected.append(RejectedRow(line_no, "BAD_INDEX"))
                continue
            key = (rec["respondent_id"], trip_index)
            if rec["respondent_id"] not in cov_by_resp:
                resp_order.append(rec["respondent_id"])
                cov_by_resp[rec["respondent_id"]] = set()
            cov_by_resp[rec["respondent_id"]].add(
                (rec["gender"], rec["interview"], rec["occupation_code"], rec["family_position"])
            )
            trip_rows.setdefault(key, _TripRows())
            trip_rows[key].rows.append(rec)
            trip_rows[key].line_nos.append(line_no)

    trips_by_resp: dict[str, list[DiaryTrip]] = {}
    key_memo: dict[tuple[str, EndpointKind], EndpointKey | None] = {}
    for (resp_id, trip_index), bucket in trip_rows.items():
        trip = _assemble_trip(resp_id, trip_index, bucket, rejected)
        if trip is not None:
            trips_by_resp.setdefault(resp_id, []).append(trip)

    respondents: list[DiaryRespondent] = []
    for resp_id in resp_order:
        trips = trips_by_resp.get(resp_id)
        if not trips:
            continue
        days = {t.day for t in trips}
        if len(days) != 1:
            rejected.append(RejectedRow(0, f"RESPONDENT_DAY_MISMATCH:{resp_id}"))
            continue
        cov_fields = cov_by_resp[resp_id]
        if len(cov_fields) != 1:
            rejected.append(RejectedRow(0, f"COVARIATE_MISMATCH:{resp_id}"))
            continue
        gender_s, interview_s, occupation, family_s = next(iter(cov_fields))
        if gender_s not in _GENDERS or interview_s not in _INTERVIEWS or family_s not in _FAMILY:
            rejected.append(RejectedRow(0, f"BAD_COVARIATE:{resp_id}"))
            continue
        trips.sort(key=lambda t: (t.first_ref, t.index_in_day))
        day = next(iter(days))
        dt1, dt2 = derive_day_types(day, tables.holidays)
        first_key = _leg_first_key(trips[0].legs[0], tables, key_memo)
        region = tables.region_of(first_key) if first_key else None
        cross_region = False
        if region is not None:
            for trip in trips:
                for key in _trip_endpoint_keys(trip, tables, key_memo):
                    r2 = tables.region_of(key)
                    if r2 is not None and r2 is not region:
                        cross_region = True
        cov = Covariates(
            gender=_GENDERS[gender_s],
            day_type1=dt1,
            day_type2=dt2,
            interview=_INTERVIEWS[interview_s],
            schedule=tables.schedule_of(occupation) if occupation else None,
            region=region,
            family_position=_FAMILY[family_s],
            year=day.year,
        )
        respondents.append(
            DiaryRespondent(
                respondent_id=resp_id,
                day=day,
                trips=tuple(trips),
                covariates=cov,
                cross_region=cross_region,
            )
        )
    rejected.sort(key=lambda r: r.line_no)
    return respondents, rejected


def _assemble_trip(resp_id, trip_index, bucket: _TripRows, rejected: list[RejectedRow]):
    first_line = min(bucket.line_nos)
    rows = bucket.rows
    try:
        day = dt.date.fromisoformat(rows[0]["day"])
    except ValueError:
        rejected.append(RejectedRow(first_line, "BAD_DAY"))
        return None
    shared = {(r["day"], r["first_ref_time"], r["last_ref_time"]) for r in rows}
    if len(shared) != 1:
        rejected.append(RejectedRow(first_line, "INCONSISTENT_TRIP"))
        return None
    try:
        first_ref = _parse_diary_time(rows[0]["first_ref_time"])
        last_ref = _parse_diary_time(rows[0]["last_ref_time"])
    except ValueError:
        rejected.append(RejectedRow(first_line, "BAD_REF_TIME"))
        return None
    legs_sorted = sorted(zip(bucket.line_nos, rows), key=lambda lr: int(lr[1]["leg_index"]))
    leg_indexes = [int(r["leg_index"]) for _, r in legs_sorted]
    if leg_indexes != list(range(1, len(leg_indexes) + 1)):
        rejected.append(RejectedRow(first_line, "BAD_LEG_SEQUENCE"))
        return None
    legs = []
    for _, r in legs_sorted:
        if r["mode"] not in _LEG_MODES:
            rejected.append(RejectedRow(first_line, "UNKNOWN_MODE"))
            return None
        legs.append(
            DiaryLeg(
                mode=_LEG_MODES[r["mode"]],
                board_station=r["board_station"] or None,
                alight_station=r["alight_station"] or None,
                board_line=r["board_line"] or None,
            )
        )
    try:
        return DiaryTrip(
            respondent_id=resp_id,
            day=day,
            index_in_day=trip_index,
            legs=tuple(legs),
            first_ref=first_ref,
            last_ref=last_ref,
            cross_midnight=first_ref.ts.date != day,
        )
    except ValueError as exc:
        rejected.append(RejectedRow(first_line, f"BAD_TRIP:{exc}"))
        return None


def _normalize_memo(raw: str, kind: EndpointKind, tables: MappingTables, memo: dict) -> EndpointKey | None:
    token = (raw, kind)
    if token not in memo:
        try:
            memo[token] = normalize_endpoint(raw, kind, tables.alias)
        except EmptyNameError:
            memo[token] = None
    return memo[token]


def _leg_first_key(leg: DiaryLeg, tables: MappingTables, memo: dict) -> EndpointKey | None:
    if leg.mode.is_rail:
        if leg.board_station:
            return _normalize_memo(leg.board_station, EndpointKind.STATION, tables, memo)
    elif leg.board_line:
        return _normalize_memo(leg.board_line, EndpointKind.BUS_LINE, tables, memo)
    return None


def _trip_endpoint_keys(trip: DiaryTrip, tables: MappingTables, memo: dict):
    keys = []
    for leg in trip.legs:
        for raw, kind in (
            (leg.board_station, EndpointKind.STATION),
            (leg.alight_station, EndpointKind.STATION),
            (leg.board_line, EndpointKind.BUS_LINE),
        ):
            if raw:
                key = _normalize_memo(raw, kind, tables, memo)
                if key is not None:
                    keys.append(key)
    return keys


# ---------------------------------------------------------------------------
# Frequency summaries
# ---------------------------------------------------------------------------

def card_trip_frequency(journeys: JourneyTable | "list[Journey]") -> dict[str, int]:
    """Cards bucketed by complete journeys per (card, service day): 1/2/3/4+."""
    if isinstance(journeys, JourneyTable):
        if len(journeys) == 0:
            return {"1": 0, "2": 0, "3": 0, "4+": 0}
        day = journeys.day - journeys.day.min()
        key = journeys.card_code.astype(np.int64) * (day.max() + 1) + day
        _, counts = np.unique(key, return_counts=True)
    else:
        from collections import Counter

        per = Counter((j.card_id, j.service_day) for j in journeys)
        counts = np.array(list(per.values()), dtype=np.int64)
        if counts.size == 0:
            return {"1": 0, "2": 0, "3": 0, "4+": 0}
    return {
        "1": int(np.sum(counts == 1)),
        "2": int(np.sum(counts == 2)),
        "3": int(np.sum(counts == 3)),
        "4+": int(np.sum(counts >= 4)),
    }


def _count_summary(counts: np.ndarray) -> dict[str, float] | None:
    if counts.size == 0:
        return None
    q1, med, q3 = np.percentile(counts, [25.0, 50.0, 75.0])
    return {
        "n_od_days": int(counts.size),
        "mean": float(np.mean(counts)),
        "median": float(med),
        "std": float(np.std(counts, ddof=1)) if counts.size >= 2 else float("nan"),
        "q1": float(q1),
        "q3": float(q3),
        "max": float(counts.max()),
    }


def od_daily_counts(
    journeys: JourneyTable | "list[Journey]",
) -> tuple[dict[tuple[str, str, dt.date], int], dict[str, float] | None]:
    """Journey counts per (first endpoint, last endpoint, service day)."""
    if isinstance(journeys, JourneyTable):
        if len(journeys) == 0:
            return {}, None
        e = np.int64(len(journeys.endpoints))
        day0 = journeys.day.min()
        d = np.int64(journeys.day.max() - day0 + 1)
        key = (journeys.first_ep.astype(np.int64) * e + journeys.last_ep) * d + (journeys.day - day0)
        uniq, counts = np.unique(key, return_counts=True)
        out: dict[tuple[str, str, dt.date], int] = {}
        eps = journeys.endpoints
        for k, c in zip(uniq.tolist(), counts.tolist()):
            fl, rel_day = divmod(k, int(d))
            f, l = divmod(fl, int(e))
            out[(str(eps[f]), str(eps[l]), dt.date(1970, 1, 1) + dt.timedelta(days=int(rel_day + day0)))] = c
        return out, _count_summary(counts)
    per: dict[tuple[str, str, dt.date], int] = {}
    for j in journeys:
        key = (j.first_endpoint.to_string(), j.last_endpoint.to_string(), j.service_day)
        per[key] = per.get(key, 0) + 1
    counts = np.array(list(per.values()), dtype=np.int64)
    return per, _count_summary(counts)


def od_daily_summary(journeys: JourneyTable, year: int | None = None) -> dict[str, float] | None:
    """Vectorized OD/day count summary, optionally restricted to one year."""
    if len(journeys) == 0:
        return None
    mask = np.ones(len(journeys), dtype=bool)
    if year is not None:
        y0 = (dt.date(year, 1, 1) - dt.date(1970, 1, 1)).days
        y1 = (dt.date(year + 1, 1, 1) - dt.date(1970, 1, 1)).days
        mask = (journeys.day >= y0) & (journeys.day < y1)
    if not np.any(mask):
        return None
    e = np.int64(len(journeys.endpoints))
    day = journeys.day[mask]
    day0 = day.min()
    d = np.int64(day.max() - day0 + 1)
    key = (journeys.first_ep[mask].astype(np.int64) * e + journeys.last_ep[mask]) * d + (day - day0)
    _, counts = np.unique(key, return_counts=True)
    return _count_summary(counts)
