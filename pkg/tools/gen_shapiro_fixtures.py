#!/usr/bin/env python3
"""Capture Shapiro-Wilk reference values as frozen test fixtures.

Runs scipy.stats.shapiro (an independent implementation of the same
published approximation) over a battery of samples and freezes both the
samples and the expected (W, p) pairs. Run once; the outputs are committed
so the test suite never depends on scipy.
"""

import json
from pathlib import Path

import numpy as np
from scipy import stats

OUT_DIR = Path(__file__).resolve().parent.parent / "tests" / "data"

CASES = []
sizes = [10, 50, 500, 4999]
for n in sizes:
    CASES.append(("normal", n, 100 + n))
    CASES.append(("normal", n, 200 + n))
    CASES.append(("uniform", n, 300 + n))
    CASES.append(("exponential", n, 400 + n))
    CASES.append(("exponential", n, 500 + n))
CASES = CASES[:20]


def draw(dist: str, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if dist == "normal":
        return rng.normal(0.0, 1.0, n)
    if dist == "uniform":
        return rng.uniform(-1.0, 1.0, n)
    if dist == "exponential":
        return rng.exponential(1.0, n)
    raise ValueError(dist)


def main() -> None:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    samples = {}
    expected = []
    for i, (dist, n, seed) in enumerate(CASES):
        x = draw(dist, n, seed)
        w, p = stats.shapiro(x)
        key = f"case_{i:02d}"
        samples[key] = x
        expected.append(
            {"key": key, "dist": dist, "n": n, "seed": seed, "w": float(w), "p": float(p)}
        )
        print(f"{key}: {dist:12s} n={n:5d} W={w:.8f} p={p:.6g}")
    np.savez_compressed(OUT_DIR / "shapiro_samples.npz", **samples)
    with open(OUT_DIR / "shapiro_expected.json", "w", encoding="utf-8") as fh:
        json.dump(expected, fh, indent=1)
    print(f"wrote {len(expected)} fixtures to {OUT_DIR}")


if __name__ == "__main__":
    main()
