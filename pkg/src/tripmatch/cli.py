"""Batch pipeline CLI.

Subcommands:
    synth    --config F --out DIR          write a synthetic dataset
    match    --diary F --transactions F --tables DIR --out DIR
    analyze  --matches F --diary F --out DIR [--tables DIR]
    report   --analysis DIR --format {csv,json} [--out DIR]
    all      --config F                    the full pipeline

Exit codes: 0 success, 2 configuration error, 3 input schema error,
4 internal invariant violation. TRIPMATCH_LOG sets log verbosity
(DEBUG/INFO/WARNING); logs go to stderr, outputs are files only.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from pathlib import Path

from . import backend, report, synth
from .config import PipelineConfig, parse_config
from .errors import EXIT_INTERNAL, EXIT_OK, ConfigError, SchemaError, TripmatchError
from .ingest import parse_diary, parse_transactions, reconstruct_journeys
from .matcher import build_index, match_all, read_matches, write_matches
from .report import AnalysisKnobs
from .tables import MappingTables, load_tables

log = logging.getLogger("tripmatch")


def _setup_logging() -> None:
    level = os.environ.get("TRIPMATCH_LOG", "INFO").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )


class _StageWriter:
    """Tracks files written by the current run so failures leave no partial output."""

    def __init__(self) -> None:
        self.paths: list[Path] = []

    def track(self, *paths: Path) -> None:
        self.paths.extend(paths)

    def cleanup(self) -> None:
        for p in self.paths:
            try:
                if p.is_file():
                    p.unlink()
            except OSError:
                pass


def _write_section(rows: list[dict], columns: list[str], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in columns})


def _read_section(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def run_synth(cfg: PipelineConfig, out_dir: Path, writer: _StageWriter) -> synth.SynthOutput:
    out = synth.generate(cfg.synth, out_dir)
    writer.track(out.transactions_path, out.diary_path, out.linkage_path)
    log.info(
        "synth: %d travelers, %d decoys, %d transactions, %d diary rows, %d linkage rows",
        out.n_travelers, out.n_decoys, out.n_transactions, out.n_diary_rows, out.n_linkage_rows,
    )
    return out


def run_match(
    diary_path: Path,
    transactions_path: Path,
    tables: MappingTables,
    out_dir: Path,
    threads: int,
    window_min: int,
    writer: _StageWriter,
    parsed_diary=None,
) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    respondents, diary_rejects = parsed_diary if parsed_diary else parse_diary(diary_path, tables)
    log.info("ingest: %d respondents, %d rejected diary rows", len(respondents), len(diary_rejects))
    table, tx_rejects = parse_transactions(transactions_path, tables)
    log.info("ingest: %d transactions, %d rejected rows", len(table), len(tx_rejects))
    journeys, orphans = reconstruct_journeys(table)
    del table  # journeys carry their own sorted tap arrays
    log.info("journeys: %d complete, %d orphan taps", len(journeys), len(orphans))

    rejects_path = out_dir / "rejected_rows.csv"
    with open(rejects_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "line_no", "reason"])
        for r in diary_rejects:
            w.writerow(["diary", r.line_no, r.reason])
        for r in tx_rejects:
            w.writerow(["transactions", r.line_no, r.reason])
    orphans_path = out_dir / "orphan_taps.csv"
    with open(orphans_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["card_id", "line_no", "reason"])
        for o in orphans:
            w.writerow([o.card_id, o.line_no, o.reason])
    writer.track(rejects_path, orphans_path)

    index = build_index(journeys)
    match_set = match_all(
        respondents, index, tables, threads=threads, window_s=window_min * 60
    )
    log.info(
        "match: %d eligible, %d matched (%.2f%%), backend=%s, threads=%d",
        match_set.summary.eligible,
        match_set.summary.matched,
        match_set.summary.percent,
        backend.backend_name(),
        threads,
    )
    matches_path = out_dir / "matches.csv"
    write_matches(match_set, matches_path)
    writer.track(matches_path)

    freq_path = out_dir / "card_frequency.csv"
    _write_section(
        report.card_frequency_rows(journeys), report.SECTION_COLUMNS["card_frequency"], freq_path
    )
    od_path = out_dir / "od_summary.csv"
    _write_section(report.od_summary_rows(journeys), report.SECTION_COLUMNS["od_summary"], od_path)
    writer.track(freq_path, od_path)
    return matches_path


def run_analyze(
    matches_path: Path,
    diary_path: Path,
    tables: MappingTables,
    out_dir: Path,
    knobs: AnalysisKnobs,
    writer: _StageWriter,
    parsed_diary=None,
) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    respondents, _ = parsed_diary if parsed_diary else parse_diary(diary_path, tables)
    respondents_by_id = {r.respondent_id: r for r in respondents}
    rows = read_matches(matches_path)
    matched = report.matched_from_rows(rows, respondents_by_id)
    log.info("analyze: %d matched respondents of %d rows", len(matched), len(rows))

    from .ingest import classify_respondent

    eligible_ids = {r.respondent_id for r in respondents if classify_respondent(r) is not None}
    matched_ids = {row.respondent_id for row in rows if row.status == "MATCHED"}
    per_year: dict[int, list[int]] = {}
    for r in respondents:
        if r.respondent_id not in eligible_ids:
            continue
        bucket = per_year.setdefault(r.covariates.year, [0, 0])
        bucket[0] += 1
        if r.respondent_id in matched_ids:
            bucket[1] += 1
    per_year_rows = [(y, e, m) for y, (e, m) in sorted(per_year.items())]

    card_sections = {}
    for name in ("card_frequency", "od_summary"):
        sibling = matches_path.parent / f"{name}.csv"
        if sibling.is_file():
            card_sections[name] = _read_section(sibling)

    bundle, table = report.build_bundle(respondents, matched, per_year_rows, knobs, card_sections)
    errors_path = out_dir / "errors.csv"
    table.to_csv(errors_path)
    analysis_path = out_dir / "analysis.json"
    report.write_bundle_json(bundle, analysis_path)
    writer.track(errors_path, analysis_path)
    log.info("analyze: %d error records, %d report sections", len(table), len(bundle) - 1)
    return analysis_path


def run_report(analysis_path: Path, fmt: str, out_dir: Path, writer: _StageWriter) -> None:
    bundle = report.load_bundle_json(analysis_path)
    if fmt == "csv":
        written = report.write_bundle_csv(bundle, out_dir)
        writer.track(*written)
        log.info("report: %d csv sections -> %s", len(written), out_dir)
    else:
        path = Path(out_dir) / "report.json"
        report.write_bundle_json(bundle, path)
        writer.track(path)
        log.info("report: json -> %s", path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _knobs_from_config(cfg: PipelineConfig) -> AnalysisKnobs:
    return AnalysisKnobs(
        cutoffs_min=tuple(cfg.cutoffs_min),
        exact_threshold=cfg.exact_threshold,
        bonferroni_m=cfg.bonferroni_m,
        shapiro_threshold=cfg.shapiro_threshold,
        shapiro_subsample_seed=cfg.shapiro_subsample_seed,
    )


def cmd_synth(args) -> int:
    cfg = parse_config(args.config)
    writer = _StageWriter()
    try:
        run_synth(cfg, Path(args.out), writer)
    except Exception:
        writer.cleanup()
        raise
    return EXIT_OK


def cmd_match(args) -> int:
    tables = load_tables(args.tables, require_all=True)
    writer = _StageWriter()
    try:
        run_match(
            Path(args.diary),
            Path(args.transactions),
            tables,
            Path(args.out),
            threads=args.threads,
            window_min=args.window_min,
            writer=writer,
        )
    except Exception:
        writer.cleanup()
        raise
    return EXIT_OK


def cmd_analyze(args) -> int:
    if args.tables:
        tables = load_tables(args.tables, require_all=True)
    else:
        log.warning("analyze: no --tables given; schedule/region/holiday mappings empty")
        tables = MappingTables()
    cutoffs = tuple([math.inf] + [float(c) for c in args.cutoffs.split(",") if c.strip()])
    knobs = AnalysisKnobs(
        cutoffs_min=cutoffs,
        exact_threshold=args.exact_threshold,
        bonferroni_m=args.bonferroni_m,
        shapiro_threshold=args.shapiro_threshold,
        shapiro_subsample_seed=args.shapiro_seed,
    )
    writer = _StageWriter()
    try:
        run_analyze(Path(args.matches), Path(args.diary), tables, Path(args.out), knobs, writer)
    except Exception:
        writer.cleanup()
        raise
    return EXIT_OK


def cmd_report(args) -> int:
    out_dir = Path(args.out) if args.out else Path(args.analysis) / "report"
    writer = _StageWriter()
    try:
        run_report(Path(args.analysis) / "analysis.json", args.format, out_dir, writer)
    except Exception:
        writer.cleanup()
        raise
    return EXIT_OK


def cmd_all(args) -> int:
    cfg = parse_config(args.config)
    if args.threads is not None:
        cfg.threads = args.threads
    out_dir = cfg.out_dir
    writer = _StageWriter()
    stage = "config"
    try:
        if cfg.mode == "synth":
            stage = "synth"
            data = run_synth(cfg, out_dir / "data", writer)
            diary_path = data.diary_path
            transactions_path = data.transactions_path
            tables_dir = data.tables_dir
        else:
            diary_path = Path(cfg.diary)
            transactions_path = Path(cfg.transactions)
            tables_dir = Path(cfg.tables_dir)
        stage = "ingest"
        tables = load_tables(tables_dir, require_all=True)
        parsed_diary = parse_diary(diary_path, tables)
        stage = "match"
        matches_path = run_match(
            diary_path, transactions_path, tables, out_dir,
            threads=cfg.threads, window_min=cfg.window_min, writer=writer,
            parsed_diary=parsed_diary,
        )
        stage = "analyze"
        analysis_path = run_analyze(
            matches_path, diary_path, tables, out_dir, _knobs_from_config(cfg), writer,
            parsed_diary=parsed_diary,
        )
        stage = "report"
        run_report(analysis_path, "csv", out_dir / "report", writer)
    except Exception as exc:
        log.error("stage %s failed: %s", stage, exc)
        writer.cleanup()
        raise
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tripmatch",
        description="Match travel-diary trips to smart-card journeys and analyze reporting error.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("match", help="match diary respondents to cards")
    p.add_argument("--diary", required=True)
    p.add_argument("--transactions", required=True)
    p.add_argument("--tables", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--window-min", type=int, default=0,
                   help="optional candidate time window in minutes, 0 = off")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("analyze", help="compute error records and the analysis bundle")
    p.add_argument("--matches", required=True)
    p.add_argument("--diary", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tables", default=None)
    p.add_argument("--cutoffs", default="200,100,60,30")
    p.add_argument("--exact-threshold", type=int, default=20)
    p.add_argument("--bonferroni-m", type=int, default=0)
    p.add_argument("--shapiro-threshold", type=float, default=0.01)
    p.add_argument("--shapiro-seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="render the analysis bundle")
    p.add_argument("--analysis", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("all", help="full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_all)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return exc.exit_code
    except SchemaError as exc:
        log.error("input schema error: %s", exc)
        return exc.exit_code
    except TripmatchError as exc:
        log.error("internal error: %s", exc)
        return exc.exit_code
    except Exception as exc:  # unexpected: report as internal invariant failure
        log.exception("unexpected failure: %s", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
