"""Pipeline configuration: a flat key = value text format.

Sections are dotted key prefixes; '#' starts a comment. Distributions are
space-separated label:probability pairs. Relative paths resolve against the
config file's directory. Example:

    inputs.mode = synth
    out.dir = out
    run.threads = 2
    matcher.window_min = 0
    stats.cutoffs_min = 200,100,60,30
    synth.seed = 42
    synth.travelers = 5000
    synth.trips_per_day = 1:0.15 2:0.6 3:0.15 4+:0.1
    synth.noise.rounding = 5:0.7 15:0.2 30:0.1
    synth.noise.recall_shift = normal:240
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .synth import NoiseConfig, PlantedEffect, SynthConfig
from .tables import TABLE_FILES


@dataclass
class PipelineConfig:
    mode: str = "synth"  # synth | files
    out_dir: Path = Path("out")
    transactions: Path | None = None
    diary: Path | None = None
    tables_dir: Path | None = None
    threads: int = 1
    window_min: int = 0
    exact_threshold: int = 20
    cutoffs_min: tuple[float, ...] = (math.inf, 200.0, 100.0, 60.0, 30.0)
    bonferroni_m: int = 0
    shapiro_threshold: float = 0.01
    shapiro_subsample_seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self) -> None:
        if self.mode not in ("synth", "files"):
            raise ConfigError("inputs.mode: must be synth|files")
        if self.threads < 1:
            raise ConfigError("run.threads: must be >= 1")
        if self.window_min < 0:
            raise ConfigError("matcher.window_min: must be >= 0")
        if self.exact_threshold < 1:
            raise ConfigError("stats.exact_threshold: must be >= 1")
        cuts = list(self.cutoffs_min)
        if not cuts or not math.isinf(cuts[0]):
            raise ConfigError("stats.cutoffs_min: first entry must be the all-data pass")
        if any(b >= a for a, b in zip(cuts, cuts[1:])) or any(c <= 0 for c in cuts[1:]):
            raise ConfigError("stats.cutoffs_min: cut-offs must be strictly decreasing and positive")
        if not 0.0 < self.shapiro_threshold < 1.0:
            raise ConfigError("shapiro.threshold: must be in (0, 1)")
        if self.mode == "files":
            for name, path in (
                ("inputs.transactions", self.transactions),
                ("inputs.diary", self.diary),
                ("inputs.tables", self.tables_dir),
            ):
                if path is None:
                    raise ConfigError(f"{name}: required when inputs.mode = files")
                if not Path(path).exists():
                    raise ConfigError(f"{name}: path does not exist: {path}")
            for fname in TABLE_FILES:
                p = Path(self.tables_dir) / fname
                if not p.is_file():
                    raise ConfigError(f"inputs.tables: missing mapping table: {p}")
        self.synth.validate()


def _parse_dist(key: str, text: str, cast_key=str) -> dict:
    out = {}
    for item in text.split():
        label, _, prob = item.rpartition(":")
        if not label:
            raise ConfigError(f"{key}: malformed distribution item {item!r}")
        try:
            out[cast_key(label)] = float(prob)
        except ValueError as exc:
            raise ConfigError(f"{key}: bad probability in {item!r}") from exc
    return out


def _parse_bool(key: str, text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {text!r}")


def read_flat_file(path: str | Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{line_no}: expected key = value")
        key = key.strip()
        if key in entries:
            raise ConfigError(f"{path}:{line_no}: duplicate key {key}")
        entries[key] = value.strip()
    return entries


_INT_KEYS = {
    "run.threads": "threads",
    "matcher.window_min": "window_min",
    "stats.exact_threshold": "exact_threshold",
    "stats.bonferroni_m": "bonferroni_m",
    "shapiro.subsample_seed": "shapiro_subsample_seed",
}

_SYNTH_INT_KEYS = {
    "synth.seed": "seed",
    "synth.travelers": "n_travelers",
    "synth.days_span": "days_span",
    "synth.stations": "n_stations",
    "synth.bus_lines": "n_bus_lines",
}

_SYNTH_DIST_KEYS = {
    "synth.trips_per_day": "trips_per_day",
    "synth.mode_pref": "mode_pref",
    "synth.gender_split": "gender_split",
    "synth.interview_split": "interview_split",
    "synth.schedule_split": "schedule_split",
    "synth.family_split": "family_split",
}

_NOISE_FLOAT_KEYS = {
    "synth.noise.station_misreport_prob": "station_misreport_prob",
    "synth.noise.missing_tapout_prob": "missing_tapout_prob",
    "synth.noise.decoy_card_factor": "decoy_card_factor",
}


def parse_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    entries = read_flat_file(path)
    base = path.parent
    cfg = PipelineConfig()
    synth_kw: dict = {}
    noise_kw: dict = {}

    def resolve(p: str) -> Path:
        candidate = Path(p)
        return candidate if candidate.is_absolute() else base / candidate

    for key, value in entries.items():
        try:
            if key == "inputs.mode":
                cfg.mode = value
            elif key == "inputs.transactions":
                cfg.transactions = resolve(value)
            elif key == "inputs.diary":
                cfg.diary = resolve(value)
            elif key == "inputs.tables":
                cfg.tables_dir = resolve(value)
            elif key == "out.dir":
                cfg.out_dir = resolve(value)
            elif key in _INT_KEYS:
                setattr(cfg, _INT_KEYS[key], int(value))
            elif key == "shapiro.threshold":
                cfg.shapiro_threshold = float(value)
            elif key == "stats.cutoffs_min":
                cuts = [float(v) for v in value.split(",") if v.strip()]
                cfg.cutoffs_min = tuple([math.inf] + cuts)
            elif key in _SYNTH_INT_KEYS:
                synth_kw[_SYNTH_INT_KEYS[key]] = int(value)
            elif key == "synth.base_date":
                synth_kw["base_date"] = dt.date.fromisoformat(value)
            elif key == "synth.region_split":
                synth_kw["region_split"] = float(value)
            elif key == "synth.holiday_fraction":
                synth_kw["holiday_fraction"] = float(value)
            elif key == "synth.unique_sequences":
                synth_kw["unique_sequences"] = _parse_bool(key, value)
            elif key in _SYNTH_DIST_KEYS:
                synth_kw[_SYNTH_DIST_KEYS[key]] = _parse_dist(key, value)
            elif key == "synth.noise.rounding":
                noise_kw["rounding"] = None if value == "none" else _parse_dist(key, value, int)
            elif key == "synth.noise.recall_shift":
                if value == "none":
                    noise_kw["recall_shift"] = None
                else:
                    kind, _, param = value.partition(":")
                    noise_kw["recall_shift"] = (kind, float(param))
            elif key == "synth.noise.recall_shift_scope":
                noise_kw["recall_shift_scope"] = value
            elif key in _NOISE_FLOAT_KEYS:
                noise_kw[_NOISE_FLOAT_KEYS[key]] = float(value)
            elif key == "synth.noise.walk_time_max_s":
                noise_kw["walk_time_max_s"] = int(value)
            elif key == "synth.noise.planted":
                if value == "none":
                    noise_kw["planted"] = None
                else:
                    parts = value.split(":")
                    if len(parts) != 3:
                        raise ConfigError(f"{key}: expected covariate:group:extra_shift_s")
                    noise_kw["planted"] = PlantedEffect(parts[0], parts[1], int(parts[2]))
            else:
                raise ConfigError(f"unknown config key: {key}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc

    if noise_kw:
        synth_kw["noise"] = NoiseConfig(**noise_kw)
    if synth_kw:
        cfg.synth = SynthConfig(**synth_kw)
    cfg.validate()
    return cfg
