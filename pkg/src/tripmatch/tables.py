"""External mapping tables: aliases, holidays, regions, schedule flexibility.

All four are small CSV files kept outside the code because the category
mappings come from registries we do not control:

    alias.csv     raw,canonical            endpoint-name aliases
    holidays.csv  date                     ISO-8601 public holidays
    regions.csv   endpoint_key,region      e.g. "station:norreport,ZEALAND_FUNEN"
    schedule.csv  occupation_code,schedule schedule in {fixed,flexible}
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import EndpointKey, Region, Schedule

TABLE_FILES = ("alias.csv", "holidays.csv", "regions.csv", "schedule.csv")


@dataclass
class MappingTables:
    alias: dict[str, str] = field(default_factory=dict)
    holidays: frozenset[dt.date] = frozenset()
    regions: dict[str, Region] = field(default_factory=dict)
    schedule: dict[str, Schedule] = field(default_factory=dict)

    def region_of(self, key: EndpointKey) -> Region | None:
        return self.regions.get(key.to_string())

    def schedule_of(self, occupation_code: str) -> Schedule | None:
        return self.schedule.get(occupation_code.strip())


def _read_rows(path: Path, expected_header: list[str]) -> list[list[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != expected_header:
                raise ConfigError(
                    f"{path}: expected header {expected_header}, got {header}"
                )
            return [row for row in reader if row and any(cell.strip() for cell in row)]
    except OSError as exc:
        raise ConfigError(f"cannot read mapping table {path}: {exc}") from exc


def load_alias(path: Path) -> dict[str, str]:
    """Load alias pairs; both sides are folded and chains are resolved.

    Canonical values must be fix-points after resolution; a cycle is a
    configuration error.
    """
    table: dict[str, str] = {}
    for row in _read_rows(path, ["raw", "canonical"]):
        if len(row) != 2:
            raise ConfigError(f"{path}: alias rows need 2 columns, got {row}")
        raw = " ".join(row[0].strip().casefold().split())
        canon = " ".join(row[1].strip().casefold().split())
        if not raw or not canon:
            raise ConfigError(f"{path}: blank alias entry {row}")
        table[raw] = canon
    resolved: dict[str, str] = {}
    for raw, canon in table.items():
        seen = {raw}
        while canon in table and table[canon] != canon:
            if canon in seen:
                raise ConfigError(f"{path}: alias cycle through {canon!r}")
            seen.add(canon)
            canon = table[canon]
        resolved[raw] = canon
    return resolved


def load_holidays(path: Path) -> frozenset[dt.date]:
    days = set()
    for row in _read_rows(path, ["date"]):
        try:
            days.add(dt.date.fromisoformat(row[0].strip()))
        except ValueError as exc:
            raise ConfigError(f"{path}: bad date {row[0]!r}") from exc
    return frozenset(days)


def load_regions(path: Path) -> dict[str, Region]:
    regions: dict[str, Region] = {}
    by_value = {r.value: r for r in Region}
    for row in _read_rows(path, ["endpoint_key", "region"]):
        if len(row) != 2 or row[1].strip() not in by_value:
            raise ConfigError(f"{path}: bad region row {row}")
        EndpointKey.from_string(row[0].strip())  # validates shape
        regions[row[0].strip()] = by_value[row[1].strip()]
    return regions


def load_schedule(path: Path) -> dict[str, Schedule]:
    sched: dict[str, Schedule] = {}
    mapping = {"fixed": Schedule.FIXED, "flexible": Schedule.FLEXIBLE}
    for row in _read_rows(path, ["occupation_code", "schedule"]):
        if len(row) != 2 or row[1].strip().lower() not in mapping:
            raise ConfigError(f"{path}: bad schedule row {row}")
        sched[row[0].strip()] = mapping[row[1].strip().lower()]
    return sched


def load_tables(directory: str | Path, require_all: bool = True) -> MappingTables:
    """Load the four mapping tables from a directory.

    With require_all every file must exist (missing files are configuration
    errors); otherwise absent files yield empty tables.
    """
    d = Path(directory)
    paths = {name: d / name for name in TABLE_FILES}
    if require_all:
        for p in paths.values():
            if not p.is_file():
                raise ConfigError(f"missing mapping table: {p}")
    def have(name: str) -> bool:
        return paths[name].is_file()

    return MappingTables(
        alias=load_alias(paths["alias.csv"]) if have("alias.csv") else {},
        holidays=load_holidays(paths["holidays.csv"]) if have("holidays.csv") else frozenset(),
        regions=load_regions(paths["regions.csv"]) if have("regions.csv") else {},
        schedule=load_schedule(paths["schedule.csv"]) if have("schedule.csv") else {},
    )


def write_tables(tables: MappingTables, directory: str | Path) -> None:
    """Write mapping tables as CSV (used by the synthetic generator)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "alias.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["raw", "canonical"])
        for raw in sorted(tables.alias):
            w.writerow([raw, tables.alias[raw]])
    with open(d / "holidays.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date"])
        for day in sorted(tables.holidays):
            w.writerow([day.isoformat()])
    with open(d / "regions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["endpoint_key", "region"])
        for key in sorted(tables.regions):
            w.writerow([key, tables.regions[key].value])
    with open(d / "schedule.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["occupation_code", "schedule"])
        for code in sorted(tables.schedule):
            w.writerow([code, tables.schedule[code].value.lower()])
