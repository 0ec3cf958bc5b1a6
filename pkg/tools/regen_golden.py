#!/usr/bin/env python3
"""Regenerate the golden report fixtures from tests/golden/golden.conf.

Run only when the report format intentionally changes, then review the diff.
"""

import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
GOLDEN = ROOT / "tests" / "golden"


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "out"
        conf = Path(tmp) / "golden.conf"
        conf.write_text(
            (GOLDEN / "golden.conf").read_text(encoding="utf-8").replace("__OUT__", str(out)),
            encoding="utf-8",
        )
        subprocess.run([sys.executable, "-m", "tripmatch", "all", "--config", str(conf)], check=True)
        target = GOLDEN / "report"
        target.mkdir(parents=True, exist_ok=True)
        for old in target.glob("*.csv"):
            old.unlink()
        for src in sorted((out / "report").glob("*.csv")):
            (target / src.name).write_bytes(src.read_bytes())
            print("wrote", target / src.name)


if __name__ == "__main__":
    main()
