#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Generates a synthetic dataset, then times journey chaining and candidate
matching under both backends and checks the outputs are identical.

    python benchmarks/bench_backends.py [--travelers N] [--decoy-factor F]
"""

import argparse
import tempfile
import time
from pathlib import Path

from tripmatch import backend
from tripmatch.ingest import parse_diary, parse_transactions, reconstruct_journeys
from tripmatch.matcher import build_index, match_all
from tripmatch.synth import NoiseConfig, SynthConfig, generate
from tripmatch.tables import load_tables


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--travelers", type=int, default=5000)
    parser.add_argument("--decoy-factor", type=float, default=10.0)
    parser.add_argument("--days", type=int, default=10)
    args = parser.parse_args()

    cfg = SynthConfig(
        seed=77,
        n_travelers=args.travelers,
        days_span=args.days,
        n_stations=36,
        n_bus_lines=14,
        trips_per_day={"1": 0.1, "2": 0.6, "3": 0.2, "4+": 0.1},
        noise=NoiseConfig(
            rounding={5: 0.7, 15: 0.2, 30: 0.1},
            recall_shift=("normal", 240.0),
            decoy_card_factor=args.decoy_factor,
        ),
    )
    with tempfile.TemporaryDirectory() as tmp:
        print(f"generating {args.travelers} travelers, decoy x{args.decoy_factor} ...")
        data = generate(cfg, Path(tmp))
        tables = load_tables(data.tables_dir)
        respondents, _ = parse_diary(data.diary_path, tables)
        table, _ = parse_transactions(data.transactions_path, tables)
        print(f"{data.n_transactions} transactions, {len(respondents)} respondents")

        results = {}
        for name in ("numpy", "numba"):
            kernels = backend.get_kernels(name)
            # warm up jit compilation outside the timed region
            reconstruct_journeys(table, kernels=kernels)

            t0 = time.perf_counter()
            journeys, orphans = reconstruct_journeys(table, kernels=kernels)
            t_chain = time.perf_counter() - t0

            index = build_index(journeys)
            t0 = time.perf_counter()
            match_set = match_all(respondents, index, tables, kernels=kernels)
            t_match = time.perf_counter() - t0

            results[name] = {
                "chain_s": t_chain,
                "match_s": t_match,
                "journeys": len(journeys),
                "orphans": len(orphans),
                "matched": match_set.summary.matched,
                "results": match_set.results,
            }
            print(
                f"{name:>6}: chain {t_chain:7.3f}s   match {t_match:7.3f}s   "
                f"({len(journeys)} journeys, {match_set.summary.matched} matched)"
            )

        a, b = results["numpy"], results["numba"]
        assert a["results"] == b["results"], "backends disagree"
        print("outputs identical across backends")
        for stage in ("chain_s", "match_s"):
            speedup = a[stage] / b[stage] if b[stage] > 0 else float("inf")
            print(f"{stage[:-2]:>6} speedup numba vs numpy: {speedup:5.1f}x")


if __name__ == "__main__":
    main()
