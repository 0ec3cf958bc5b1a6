"""Seeded generator of ground-truth travelers, card journeys, and noisy diaries.

Purpose: exercise the matcher and the statistics battery without real data.
Every traveler owns a deterministic block of a counter-based random stream,
so output is byte-identical across runs and adding travelers never perturbs
existing ones.

Stream splitting: draws come from Philox generators keyed by
(seed, stream_id * 2^32 + chunk_no); each stream is a matrix of fixed-size
rows (one row per traveler / decoy / day) materialized in 4096-row chunks.
Row t of a stream is therefore a pure function of (seed, stream, t).

Noise model per trip: one recall shift (shared by first/last time under
scope='trip', independent under scope='time'), optional planted extra shift
for one covariate group, then independent rounding of each reported time to
a 5/15/30-minute grid ("none" keeps true times, which the generator then
places on the 5-minute survey grid so reported == true exactly). Endpoint
misreporting and tap-out dropping are independent per trip.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import BrokenLinkError, ConfigError
from .ingest import parse_diary, parse_transactions, reconstruct_journeys
from .model import Region, Schedule
from .tables import MappingTables, write_tables

_STREAM_GLOBAL = 0
_STREAM_TRAVELER = 1
_STREAM_DECOY = 2
_CHUNK_ROWS = 4096

_K_TRAVELER = 128
_K_DECOY = 32
_MAX_TRIPS = 6

# header slots in a traveler block
_U_TRIPS, _U_MODE, _U_GENDER, _U_INTERVIEW, _U_SCHED, _U_FAMILY, _U_OCC, _U_DAY, _U_REGION = range(9)
# per-trip slots (base 9 + trip_no * 19)
(_T_START, _T_DUR, _T_PAIR_A, _T_PAIR_B, _T_TRANSFER, _T_TRANSFER_EP, _T_RAIL_KIND,
 _T_SHIFT_U1, _T_SHIFT_U2, _T_GRID_F, _T_GRID_L, _T_MIS_F, _T_MIS_F_PICK,
 _T_MIS_L, _T_MIS_L_PICK, _T_DROP, _T_SHIFT2_U1, _T_SHIFT2_U2, _T_WALK) = range(19)
_T_BASE = 9
_T_STRIDE = 19

_WINDOW_LO = 5 * 3600
_WINDOW_S = 17 * 3600

TRANSACTIONS_NAME = "transactions.csv"
DIARY_NAME = "diary.csv"
LINKAGE_NAME = "linkage.csv"
LINKAGE_HEADER = ["respondent_id", "card_id", "trip_index", "journey_id"]


def _block_rows(seed: int, stream: int, lo: int, hi: int, width: int) -> np.ndarray:
    """Rows [lo, hi) of the stream's block matrix."""
    out = np.empty((hi - lo, width), dtype=np.float64)
    pos = lo
    while pos < hi:
        chunk_no = pos // _CHUNK_ROWS
        key = (np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64((stream << 32) + chunk_no))
        rng = np.random.Generator(np.random.Philox(key=key))
        chunk = rng.random((_CHUNK_ROWS, width))
        c_lo = pos - chunk_no * _CHUNK_ROWS
        c_hi = min(_CHUNK_ROWS, hi - chunk_no * _CHUNK_ROWS)
        out[pos - lo : pos - lo + (c_hi - c_lo)] = chunk[c_lo:c_hi]
        pos += c_hi - c_lo
    return out


@dataclass(frozen=True)
class PlantedEffect:
    """Extra recall shift injected into one covariate group."""

    covariate: str  # gender | interview | schedule | family_position | region
    group: str
    extra_shift_s: int


@dataclass(frozen=True)
class NoiseConfig:
    rounding: dict[int, float] | None = None  # minutes grid -> probability
    recall_shift: tuple[str, float] | None = None  # ('normal', std_s) | ('constant', value_s)
    recall_shift_scope: str = "trip"  # trip | time
    station_misreport_prob: float = 0.0
    missing_tapout_prob: float = 0.0
    decoy_card_factor: float = 0.0
    walk_time_max_s: int = 0
    planted: PlantedEffect | None = None

    def validate(self) -> None:
        if self.rounding is not None:
            if set(self.rounding) - {5, 15, 30}:
                raise ConfigError("synth.noise.rounding: grids must be 5, 15, or 30 minutes")
            if abs(sum(self.rounding.values()) - 1.0) > 1e-9:
                raise ConfigError("synth.noise.rounding: probabilities must sum to 1")
        if self.recall_shift is not None:
            kind, param = self.recall_shift
            if kind not in ("normal", "constant"):
                raise ConfigError("synth.noise.recall_shift: kind must be normal|constant")
            if kind == "normal" and param < 0:
                raise ConfigError("synth.noise.recall_shift: std must be >= 0")
        if self.recall_shift_scope not in ("trip", "time"):
            raise ConfigError("synth.noise.recall_shift_scope: must be trip|time")
        for name in ("station_misreport_prob", "missing_tapout_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"synth.noise.{name}: must be in [0, 1]")
        if self.decoy_card_factor < 0:
            raise ConfigError("synth.noise.decoy_card_factor: must be >= 0")
        if self.walk_time_max_s < 0:
            raise ConfigError("synth.noise.walk_time_max_s: must be >= 0")


def _check_dist(name: str, dist: dict, keys: set) -> None:
    if set(dist) != keys:
        raise ConfigError(f"{name}: expected keys {sorted(keys)}, got {sorted(dist)}")
    if any(v < 0 for v in dist.values()):
        raise ConfigError(f"{name}: negative probability")
    if abs(sum(dist.values()) - 1.0) > 1e-9:
        raise ConfigError(f"{name}: probabilities must sum to 1")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_travelers: int = 100
    days_span: int = 7
    base_date: dt.date = dt.date(2021, 3, 1)
    n_stations: int = 40
    n_bus_lines: int = 12
    region_split: float = 0.7  # share of stations/lines in ZEALAND_FUNEN
    unique_sequences: bool = False
    holiday_fraction: float = 0.0
    trips_per_day: dict[str, float] = field(
        default_factory=lambda: {"1": 0.15, "2": 0.60, "3": 0.15, "4+": 0.10}
    )
    mode_pref: dict[str, float] = field(
        default_factory=lambda: {"train": 0.45, "bus": 0.35, "mixed": 0.20}
    )
    gender_split: dict[str, float] = field(
        default_factory=lambda: {"MALE": 0.45, "FEMALE": 0.55}
    )
    interview_split: dict[str, float] = field(
        default_factory=lambda: {"INTERNET": 0.20, "TELEPHONE": 0.78, "OTHER": 0.02}
    )
    schedule_split: dict[str, float] = field(
        default_factory=lambda: {"FIXED": 0.70, "FLEXIBLE": 0.30}
    )
    family_split: dict[str, float] = field(
        default_factory=lambda: {
            "SINGLE": 0.30,
            "OLDER_COUPLE": 0.20,
            "YOUNGER_COUPLE": 0.25,
            "CHILD_U25": 0.25,
        }
    )
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def validate(self) -> None:
        if self.n_travelers < 1:
            raise ConfigError("synth.n_travelers: must be >= 1")
        if self.days_span < 1:
            raise ConfigError("synth.days_span: must be >= 1")
        if self.n_stations < 4 or self.n_bus_lines < 2:
            raise ConfigError("synth.network: need >= 4 stations and >= 2 bus lines")
        if not 0.0 < self.region_split < 1.0:
            raise ConfigError("synth.region_split: must be in (0, 1)")
        if not 0.0 <= self.holiday_fraction <= 1.0:
            raise ConfigError("synth.holiday_fraction: must be in [0, 1]")
        _check_dist("synth.trips_per_day", self.trips_per_day, {"1", "2", "3", "4+"})
        _check_dist("synth.mode_pref", self.mode_pref, {"train", "bus", "mixed"})
        _check_dist("synth.gender_split", self.gender_split, {"MALE", "FEMALE"})
        _check_dist("synth.interview_split", self.interview_split, {"INTERNET", "TELEPHONE", "OTHER"})
        _check_dist("synth.schedule_split", self.schedule_split, {"FIXED", "FLEXIBLE"})
        _check_dist(
            "synth.family_split",
            self.family_split,
            {"SINGLE", "OLDER_COUPLE", "YOUNGER_COUPLE", "CHILD_U25"},
        )
        self.noise.validate()
        if self.noise.planted is not None:
            p = self.noise.planted
            allowed = {
                "gender": set(self.gender_split),
                "interview": set(self.interview_split),
                "schedule": set(self.schedule_split),
                "family_position": set(self.family_split),
                "region": {r.value for r in Region},
            }
            if p.covariate not in allowed:
                raise ConfigError(f"synth.noise.planted.covariate: unknown {p.covariate!r}")
            if p.group not in allowed[p.covariate]:
                raise ConfigError(f"synth.noise.planted.group: unknown {p.group!r}")


@dataclass
class SynthOutput:
    out_dir: Path
    transactions_path: Path
    diary_path: Path
    linkage_path: Path
    tables_dir: Path
    n_travelers: int
    n_decoys: int
    n_transactions: int
    n_diary_rows: int
    n_linkage_rows: int


def _pick(dist_items: list[tuple[str, float]], u: float) -> str:
    acc = 0.0
    for key, p in dist_items:
        acc += p
        if u < acc:
            return key
    return dist_items[-1][0]


def _round_nearest(x: int, grid: int) -> int:
    """Nearest multiple of grid; exact midpoints round up."""
    return (x + grid // 2) // grid * grid


def _box_muller(u1: float, u2: float) -> float:
    return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)


class _PairAllocator:
    """Endpoint-pair selection.

    unique mode hands out globally distinct (first, last) pairs per
    (day, pool-combination), guaranteeing unique endpoint sequences per day;
    popularity mode skews draws toward low indexes so decoys share endpoints
    with travelers and candidate sets stay non-trivial.
    """

    def __init__(self, n_stations: int, n_lines: int, unique: bool):
        self.sizes = {"S": n_stations, "L": n_lines}
        self.unique = unique
        self.counters: dict[tuple[int, str, str], int] = {}

    def _decode(self, a_pool: str, b_pool: str, idx: int) -> tuple[int, int]:
        pa, pb = self.sizes[a_pool], self.sizes[b_pool]
        if a_pool == b_pool:
            if idx >= pa * (pa - 1):
                raise ConfigError(
                    "synth.n_stations/n_bus_lines: network too small for unique_sequences"
                )
            a, r = divmod(idx, pa - 1)
            return a, r + (r >= a)
        if idx >= pa * pb:
            raise ConfigError("synth network too small for unique_sequences")
        return divmod(idx, pb)

    def alloc_unique(self, day_idx: int, a_pool: str, b_pool: str) -> tuple[int, int]:
        key = (day_idx, a_pool, b_pool)
        idx = self.counters.get(key, 0)
        self.counters[key] = idx + 1
        return self._decode(a_pool, b_pool, idx)

    def draw_popular(self, a_pool: str, b_pool: str, u1: float, u2: float,
                     lo_a: int = 0, hi_a: int | None = None,
                     lo_b: int = 0, hi_b: int | None = None) -> tuple[int, int]:
        pa = (hi_a if hi_a is not None else self.sizes[a_pool]) - lo_a
        pb = (hi_b if hi_b is not None else self.sizes[b_pool]) - lo_b
        a = lo_a + min(int(u1**1.5 * pa), pa - 1)
        if a_pool == b_pool and pb > 1:
            r = min(int(u2**1.5 * (pb - 1)), pb - 2)
            b = lo_b + r + (1 if lo_b + r >= a else 0)
        else:
            b = lo_b + min(int(u2**1.5 * pb), pb - 1)
        return a, b

    def pair(self, day_idx: int, a_pool: str, b_pool: str, u1: float, u2: float,
             region_bounds: tuple[int, int, int, int] | None) -> tuple[int, int]:
        if self.unique:
            return self.alloc_unique(day_idx, a_pool, b_pool)
        if region_bounds is None:
            return self.draw_popular(a_pool, b_pool, u1, u2)
        lo_a, hi_a, lo_b, hi_b = region_bounds
        return self.draw_popular(a_pool, b_pool, u1, u2, lo_a, hi_a, lo_b, hi_b)


class _Generator:
    def __init__(self, config: SynthConfig):
        config.validate()
        self.cfg = config
        self.day0 = (config.base_date - dt.date(1970, 1, 1)).days
        self.res = 300 if config.noise.rounding is None else 1
        self.stations = [f"st{i:03d}" for i in range(config.n_stations)]
        self.lines = [f"l{i:02d}" for i in range(config.n_bus_lines)]
        self.n_z_stations = max(1, min(config.n_stations - 1, round(config.n_stations * config.region_split)))
        self.n_z_lines = max(1, min(config.n_bus_lines - 1, round(config.n_bus_lines * config.region_split)))
        self.occ_codes = {
            "FIXED": [f"occ_f{i}" for i in range(3)],
            "FLEXIBLE": [f"occ_x{i}" for i in range(3)],
        }
        self.pairs = _PairAllocator(config.n_stations, config.n_bus_lines, config.unique_sequences)
        self.rounding_items = (
            sorted(config.noise.rounding.items()) if config.noise.rounding else None
        )
        self.dists = {
            name: sorted(getattr(config, name).items())
            for name in (
                "trips_per_day",
                "mode_pref",
                "gender_split",
                "interview_split",
                "schedule_split",
                "family_split",
            )
        }

    # -- network tables ----------------------------------------------------

    def holidays(self) -> frozenset[dt.date]:
        cfg = self.cfg
        if cfg.holiday_fraction <= 0:
            return frozenset()
        u = _block_rows(cfg.seed, _STREAM_GLOBAL, 0, cfg.days_span, 1)[:, 0]
        days = []
        for k in range(cfg.days_span):
            day = cfg.base_date + dt.timedelta(days=k)
            if day.weekday() < 5 and u[k] < cfg.holiday_fraction:
                days.append(day)
        return frozenset(days)

    def mapping_tables(self) -> MappingTables:
        regions: dict[str, Region] = {}
        for i, name in enumerate(self.stations):
            regions[f"station:{name}"] = (
                Region.ZEALAND_FUNEN if i < self.n_z_stations else Region.JUTLAND
            )
        for i, name in enumerate(self.lines):
            regions[f"line:{name}"] = (
                Region.ZEALAND_FUNEN if i < self.n_z_lines else Region.JUTLAND
            )
        schedule = {code: Schedule.FIXED for code in self.occ_codes["FIXED"]}
        schedule.update({code: Schedule.FLEXIBLE for code in self.occ_codes["FLEXIBLE"]})
        return MappingTables(
            alias={}, holidays=self.holidays(), regions=regions, schedule=schedule
        )

    # -- noise -------------------------------------------------------------

    def _shift_s(self, u1: float, u2: float) -> int:
        rs = self.cfg.noise.recall_shift
        if rs is None:
            return 0
        kind, param = rs
        if kind == "constant":
            return int(round(param))
        return int(round(_box_muller(u1, u2) * param))

    def _grid_pick(self, u: float) -> int:
        acc = 0.0
        for grid_min, p in self.rounding_items:
            acc += p
            if u < acc:
                return grid_min * 60
        return self.rounding_items[-1][0] * 60

    def _diary_time(self, true_epoch: int, shift: int, grid_u: float, day_epoch: int) -> int:
        grid = 300 if self.rounding_items is None else self._grid_pick(grid_u)
        x = max(true_epoch + shift, day_epoch)
        return _round_nearest(x, grid)

    # -- traveler ----------------------------------------------------------

    def traveler(self, t: int, block: np.ndarray):
        """One traveler: (covariate row, diary rows, tap rows, linkage rows)."""
        cfg = self.cfg
        noise = cfg.noise
        resp_id = f"R{t:07d}"
        card_id = f"C{t:07d}"

        n_trips = self._n_trips(block[_U_TRIPS])
        pref = _pick(self.dists["mode_pref"], block[_U_MODE])
        gender = _pick(self.dists["gender_split"], block[_U_GENDER])
        interview = _pick(self.dists["interview_split"], block[_U_INTERVIEW])
        sched_class = _pick(self.dists["schedule_split"], block[_U_SCHED])
        family = _pick(self.dists["family_split"], block[_U_FAMILY])
        occ = self.occ_codes[sched_class][min(int(block[_U_OCC] * 3), 2)]
        day_idx = min(int(block[_U_DAY] * cfg.days_span), cfg.days_span - 1)
        day = cfg.base_date + dt.timedelta(days=day_idx)
        day_epoch = (self.day0 + day_idx) * 86400
        in_zealand = block[_U_REGION] < cfg.region_split
        region_name = Region.ZEALAND_FUNEN.value if in_zealand else Region.JUTLAND.value

        planted_extra = 0
        if noise.planted is not None:
            value = {
                "gender": gender,
                "interview": interview,
                "schedule": sched_class,
                "family_position": family,
                "region": region_name,
            }[noise.planted.covariate]
            if value == noise.planted.group:
                planted_extra = int(noise.planted.extra_shift_s)

        slot = _WINDOW_S // n_trips // 300 * 300  # grid-aligned so true times can sit on it
        dur_cap = min(3900, slot - 600)

        diary_rows: list[tuple] = []
        tap_rows: list[tuple] = []
        linkage_rows: list[tuple] = []
        journey_ord = 0

        for i in range(n_trips):
            tb = block[_T_BASE + i * _T_STRIDE : _T_BASE + (i + 1) * _T_STRIDE]
            start_span = (slot - dur_cap - 300) // self.res
            start = day_epoch + _WINDOW_LO + i * slot + int(tb[_T_START] * start_span) * self.res
            dur = 600 + int(tb[_T_DUR] * ((dur_cap - 600) // self.res + 1)) * self.res
            t_out_true = start + dur

            trip_kind = self._trip_kind(pref, i, tb[_T_RAIL_KIND])
            region_bounds = self._region_bounds(trip_kind, in_zealand)
            a_pool = "S" if trip_kind in ("rail", "mixedleg") else "L"
            b_pool = "L" if trip_kind in ("bus", "mixedleg") else "S"
            a, b = self.pairs.pair(day_idx, a_pool, b_pool, tb[_T_PAIR_A], tb[_T_PAIR_B], region_bounds)

            first_name = self.stations[a] if a_pool == "S" else self.lines[a]
            last_name = self.stations[b] if b_pool == "S" else self.lines[b]
            rail_mode = "METRO" if tb[_T_RAIL_KIND] < 0.35 else "TRAIN"

            walk = 0
            if trip_kind in ("rail", "mixedleg") and noise.walk_time_max_s > 0:
                walk = int(tb[_T_WALK] * (noise.walk_time_max_s + 1))
            t_in_card = start + walk

            # card taps
            first_mode = rail_mode if a_pool == "S" else "BUS"
            last_mode = rail_mode if b_pool == "S" else "BUS"
            dropped = tb[_T_DROP] < noise.missing_tapout_prob
            tap_rows.append((card_id, t_in_card, "IN", first_mode,
                             "STATION" if a_pool == "S" else "LINE", first_name))
            if trip_kind == "rail" and tb[_T_TRANSFER] < 0.30 and t_out_true - t_in_card >= 2:
                mid_name = self.stations[
                    min(int(tb[_T_TRANSFER_EP] * cfg.n_stations), cfg.n_stations - 1)
                ]
                tap_rows.append((card_id, (t_in_card + t_out_true) // 2, "TR", rail_mode,
                                 "STATION", mid_name))
            if not dropped:
                tap_rows.append((card_id, t_out_true, "OUT", last_mode,
                                 "STATION" if b_pool == "S" else "LINE", last_name))

            # diary report
            shift_f = self._shift_s(tb[_T_SHIFT_U1], tb[_T_SHIFT_U2]) + planted_extra
            if noise.recall_shift_scope == "time":
                shift_l = self._shift_s(tb[_T_SHIFT2_U1], tb[_T_SHIFT2_U2]) + planted_extra
            else:
                shift_l = shift_f
            ref_first = self._diary_time(start, shift_f, tb[_T_GRID_F], day_epoch)
            ref_last = self._diary_time(t_out_true, shift_l, tb[_T_GRID_L], day_epoch)
            ref_last = max(ref_last, ref_first)

            rep_first = first_name
            if tb[_T_MIS_F] < noise.station_misreport_prob:
                rep_first = self._other_endpoint(a_pool, a, tb[_T_MIS_F_PICK])
            rep_last = last_name
            if tb[_T_MIS_L] < noise.station_misreport_prob:
                rep_last = self._other_endpoint(b_pool, b, tb[_T_MIS_L_PICK])

            diary_rows.extend(
                self._diary_leg_rows(
                    resp_id, day, i + 1, trip_kind, rail_mode, rep_first, rep_last,
                    ref_first, ref_last, gender, interview, occ, family,
                )
            )
            if not dropped:
                linkage_rows.append((resp_id, card_id, i + 1, f"{card_id}#{journey_ord}"))
                journey_ord += 1

        return diary_rows, tap_rows, linkage_rows

    def _n_trips(self, u: float) -> int:
        items = self.dists["trips_per_day"]
        acc = 0.0
        for key, p in items:
            if p <= 0:
                continue
            if u < acc + p:
                if key == "4+":
                    sub = (u - acc) / p
                    return 4 + min(int(sub * (_MAX_TRIPS - 3)), _MAX_TRIPS - 4)
                return int(key)
            acc += p
        for key, p in reversed(items):
            if p > 0:
                return 4 if key == "4+" else int(key)
        raise ConfigError("synth.trips_per_day: all probabilities zero")

    def _trip_kind(self, pref: str, trip_no: int, u: float) -> str:
        if pref == "train":
            return "rail"
        if pref == "bus":
            return "bus"
        if u < 0.35:
            return "mixedleg"  # rail first leg, bus last leg
        return "rail" if trip_no % 2 == 0 else "bus"

    def _region_bounds(self, trip_kind: str, in_zealand: bool):
        if self.cfg.unique_sequences:
            return None
        s_lo, s_hi = (0, self.n_z_stations) if in_zealand else (self.n_z_stations, self.cfg.n_stations)
        l_lo, l_hi = (0, self.n_z_lines) if in_zealand else (self.n_z_lines, self.cfg.n_bus_lines)
        if trip_kind == "rail":
            return (s_lo, s_hi, s_lo, s_hi)
        if trip_kind == "bus":
            return (l_lo, l_hi, l_lo, l_hi)
        return (s_lo, s_hi, l_lo, l_hi)

    def _other_endpoint(self, pool: str, current: int, u: float) -> str:
        names = self.stations if pool == "S" else self.lines
        r = min(int(u * (len(names) - 1)), len(names) - 2)
        return names[r + (1 if r >= current else 0)]

    def _diary_leg_rows(self, resp_id, day, trip_index, trip_kind, rail_mode,
                        first_name, last_name, ref_first, ref_last,
                        gender, interview, occ, family):
        iso_f = _epoch_iso(ref_first)
        iso_l = _epoch_iso(ref_last)
        common = (gender, interview, occ, family)
        day_iso = day.isoformat()
        if trip_kind == "rail":
            return [
                (resp_id, day_iso, trip_index, 1, rail_mode, first_name, last_name, "",
                 iso_f, iso_l) + common
            ]
        if trip_kind == "bus":
            if first_name == last_name:
                return [
                    (resp_id, day_iso, trip_index, 1, "BUS", "", "", first_name, iso_f, iso_l)
                    + common
                ]
            return [
                (resp_id, day_iso, trip_index, 1, "BUS", "", "", first_name, iso_f, iso_l) + common,
                (resp_id, day_iso, trip_index, 2, "BUS", "", "", last_name, iso_f, iso_l) + common,
            ]
        # mixed-leg: rail then bus
        mid = self.stations[0]
        return [
            (resp_id, day_iso, trip_index, 1, rail_mode, first_name, mid, "", iso_f, iso_l) + common,
            (resp_id, day_iso, trip_index, 2, "BUS", "", "", last_name, iso_f, iso_l) + common,
        ]

    # -- decoys (vectorized) -------------------------------------------------

    def decoy_chunk(self, lo: int, hi: int) -> pd.DataFrame:
        """Tap rows for decoy cards [lo, hi); pure function of (seed, range)."""
        cfg = self.cfg
        u = _block_rows(cfg.seed, _STREAM_DECOY, lo, hi, _K_DECOY)
        n = hi - lo
        day_idx = np.minimum((u[:, 0] * cfg.days_span).astype(np.int64), cfg.days_span - 1)
        n_j = 1 + np.minimum((u[:, 1] * 3).astype(np.int64), 2)
        p_line = cfg.mode_pref["bus"] + 0.5 * cfg.mode_pref["mixed"]

        if cfg.unique_sequences:
            return self._decoy_chunk_unique(lo, u, day_idx, n_j, p_line)

        # vectorized popularity path: pad every decoy to 3 journey slots, mask
        day_epoch = (self.day0 + day_idx) * 86400
        slot = (_WINDOW_S // n_j) // 300 * 300
        dur_cap = np.minimum(3900, slot - 600)
        start_span = (slot - dur_cap - 300) // self.res
        dur_steps = (dur_cap - 600) // self.res + 1

        j_idx = np.arange(3)[None, :]
        active = j_idx < n_j[:, None]
        u_start = u[:, 2:20:6]
        u_dur = u[:, 3:21:6]
        u_a = u[:, 4:22:6]
        u_b = u[:, 5:23:6]
        u_kind = u[:, 6:24:6]
        u_mode = u[:, 7:25:6]

        start = (
            day_epoch[:, None]
            + _WINDOW_LO
            + j_idx * slot[:, None]
            + (u_start * start_span[:, None]).astype(np.int64) * self.res
        )
        dur = 600 + (u_dur * dur_steps[:, None]).astype(np.int64) * self.res
        is_line = u_kind < p_line

        n_st, n_ln = cfg.n_stations, cfg.n_bus_lines
        a_st = np.minimum((u_a**1.5 * n_st).astype(np.int64), n_st - 1)
        r_st = np.minimum((u_b**1.5 * (n_st - 1)).astype(np.int64), n_st - 2)
        b_st = r_st + (r_st >= a_st)
        a_ln = np.minimum((u_a**1.5 * n_ln).astype(np.int64), n_ln - 1)
        r_ln = np.minimum((u_b**1.5 * (n_ln - 1)).astype(np.int64), n_ln - 2)
        b_ln = r_ln + (r_ln >= a_ln)

        st_names = np.array(self.stations, dtype=str)
        ln_names = np.array(self.lines, dtype=str)
        first = np.where(is_line, ln_names[a_ln], st_names[a_st])
        last = np.where(is_line, ln_names[b_ln], st_names[b_st])
        mode = np.where(is_line, "BUS", np.where(u_mode < 0.35, "METRO", "TRAIN"))
        kind = np.where(is_line, "LINE", "STATION")

        cards = np.char.add("X", np.char.zfill(np.arange(lo, hi).astype(str), 7))
        cards3 = np.broadcast_to(cards[:, None], (n, 3))

        mask = active.ravel()

        def tap_stack(a_in, a_out):
            return np.stack([a_in.ravel()[mask], a_out.ravel()[mask]], axis=1).ravel()

        return pd.DataFrame(
            {
                "card_id": tap_stack(cards3, cards3),
                "timestamp": _epoch_iso_array(tap_stack(start, start + dur).astype(np.int64)),
                "tx_type": np.tile(np.array(["IN", "OUT"]), int(mask.sum())),
                "mode": tap_stack(mode, mode),
                "endpoint_kind": tap_stack(kind, kind),
                "endpoint_raw": tap_stack(first, last),
            }
        )

    def _decoy_chunk_unique(self, lo, u, day_idx, n_j, p_line) -> pd.DataFrame:
        cfg = self.cfg
        rows_card, rows_t, rows_tx, rows_mode, rows_kind, rows_ep = [], [], [], [], [], []
        for k in range(u.shape[0]):
            d = int(day_idx[k])
            day_epoch = (self.day0 + d) * 86400
            nj = int(n_j[k])
            slot = _WINDOW_S // nj // 300 * 300
            dur_cap = min(3900, slot - 600)
            card = f"X{lo + k:07d}"
            for j in range(nj):
                base = 2 + j * 6
                is_line = u[k, base + 4] < p_line
                pool = "L" if is_line else "S"
                a, b = self.pairs.alloc_unique(d, pool, pool)
                names = self.lines if is_line else self.stations
                start_span = (slot - dur_cap - 300) // self.res
                start = day_epoch + _WINDOW_LO + j * slot + int(u[k, base + 0] * start_span) * self.res
                dur = 600 + int(u[k, base + 1] * ((dur_cap - 600) // self.res + 1)) * self.res
                mode = "BUS" if is_line else ("METRO" if u[k, base + 5] < 0.35 else "TRAIN")
                kind = "LINE" if is_line else "STATION"
                rows_card += [card, card]
                rows_t += [start, start + dur]
                rows_tx += ["IN", "OUT"]
                rows_mode += [mode, mode]
                rows_kind += [kind, kind]
                rows_ep += [names[a], names[b]]
        return pd.DataFrame(
            {
                "card_id": rows_card,
                "timestamp": _epoch_iso_array(np.array(rows_t, dtype=np.int64)),
                "tx_type": rows_tx,
                "mode": rows_mode,
                "endpoint_kind": rows_kind,
                "endpoint_raw": rows_ep,
            }
        )


def _epoch_iso(epoch_s: int) -> str:
    return str(np.datetime64(int(epoch_s), "s"))


def _epoch_iso_array(epoch_s: np.ndarray) -> np.ndarray:
    return epoch_s.astype("datetime64[s]").astype(str)


DIARY_COLUMNS = [
    "respondent_id", "day", "trip_index", "leg_index", "mode",
    "board_station", "alight_station", "board_line",
    "first_ref_time", "last_ref_time",
    "gender", "interview", "occupation_code", "family_position",
]


def generate(config: SynthConfig, out_dir: str | Path) -> SynthOutput:
    """Write transactions.csv, diary.csv, linkage.csv, and tables/ under out_dir.

    Byte-identical for identical configs. Travelers come first in the
    transaction file (cards C*), then decoy cards (X*); taps are
    chronological within each card.
    """
    gen = _Generator(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables_dir = out / "tables"
    write_tables(gen.mapping_tables(), tables_dir)

    tx_path = out / TRANSACTIONS_NAME
    diary_path = out / DIARY_NAME
    link_path = out / LINKAGE_NAME

    n_tx = 0
    n_diary = 0
    n_link = 0
    with open(tx_path, "w", newline="", encoding="utf-8") as tx_fh, open(
        diary_path, "w", newline="", encoding="utf-8"
    ) as d_fh, open(link_path, "w", newline="", encoding="utf-8") as l_fh:
        tx_fh.write("card_id,timestamp,tx_type,mode,endpoint_kind,endpoint_raw\n")
        d_fh.write(",".join(DIARY_COLUMNS) + "\n")
        l_fh.write(",".join(LINKAGE_HEADER) + "\n")
        d_writer = csv.writer(d_fh, lineterminator="\n")
        l_writer = csv.writer(l_fh, lineterminator="\n")

        for chunk_lo in range(0, config.n_travelers, _CHUNK_ROWS):
            chunk_hi = min(chunk_lo + _CHUNK_ROWS, config.n_travelers)
            blocks = _block_rows(config.seed, _STREAM_TRAVELER, chunk_lo, chunk_hi, _K_TRAVELER)
            tap_acc: list[tuple] = []
            for t in range(chunk_lo, chunk_hi):
                diary_rows, tap_rows, linkage_rows = gen.traveler(t, blocks[t - chunk_lo])
                tap_acc.extend(tap_rows)
                for row in diary_rows:
                    d_writer.writerow(row)
                for row in linkage_rows:
                    l_writer.writerow(row)
                n_diary += len(diary_rows)
                n_link += len(linkage_rows)
            if tap_acc:
                frame = pd.DataFrame(
                    tap_acc,
                    columns=["card_id", "timestamp", "tx_type", "mode", "endpoint_kind", "endpoint_raw"],
                )
                frame["timestamp"] = _epoch_iso_array(frame["timestamp"].to_numpy(dtype=np.int64))
                frame.to_csv(tx_fh, header=False, index=False, lineterminator="\n")
                n_tx += len(frame)

        n_decoys = int(config.noise.decoy_card_factor * config.n_travelers)
        for chunk_lo in range(0, n_decoys, _CHUNK_ROWS):
            chunk_hi = min(chunk_lo + _CHUNK_ROWS, n_decoys)
            frame = gen.decoy_chunk(chunk_lo, chunk_hi)
            frame.to_csv(tx_fh, header=False, index=False, lineterminator="\n")
            n_tx += len(frame)

    return SynthOutput(
        out_dir=out,
        transactions_path=tx_path,
        diary_path=diary_path,
        linkage_path=link_path,
        tables_dir=tables_dir,
        n_travelers=config.n_travelers,
        n_decoys=n_decoys,
        n_transactions=n_tx,
        n_diary_rows=n_diary,
        n_linkage_rows=n_link,
    )


# ---------------------------------------------------------------------------
# Linkage-based truth (independent of the matcher)
# ---------------------------------------------------------------------------

def read_linkage(path: str | Path) -> list[tuple[str, str, int, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != LINKAGE_HEADER:
            raise BrokenLinkError(f"{path}: unexpected linkage header {header}")
        return [(r[0], r[1], int(r[2]), r[3]) for r in reader if r]


def truth_error_distribution(
    linkage_path: str | Path,
    transactions_path: str | Path,
    diary_path: str | Path,
    tables: MappingTables | None = None,
) -> np.ndarray:
    """True per-trip |reported first time - tap-in| seconds, from the linkage.

    Reconstructs journeys directly from the transactions (no matching is
    involved) and joins by the linkage's journey ids.
    """
    table, _ = parse_transactions(transactions_path, tables)
    journeys, _ = reconstruct_journeys(table)
    tap_in_by_ref = {journeys.journey_ref(i): int(journeys.tin[i]) for i in range(len(journeys))}

    respondents, _ = parse_diary(diary_path, tables)
    first_by_key: dict[tuple[str, int], int] = {}
    for r in respondents:
        for trip in r.trips:
            first_by_key[(r.respondent_id, trip.index_in_day)] = trip.first_ref.epoch_seconds

    errors = []
    for resp_id, card_id, trip_index, journey_id in read_linkage(linkage_path):
        if journey_id not in tap_in_by_ref:
            raise BrokenLinkError(f"linkage references missing journey {journey_id}")
        if (resp_id, trip_index) not in first_by_key:
            raise BrokenLinkError(f"linkage references missing diary trip {resp_id}#{trip_index}")
        errors.append(abs(first_by_key[(resp_id, trip_index)] - tap_in_by_ref[journey_id]))
    return np.array(errors, dtype=np.int64)
