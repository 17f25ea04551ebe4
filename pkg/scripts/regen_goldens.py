"""Regenerate the golden report bundles under tests/golden/.

Run after an intentional change to report output, then review the diff.
"""

from __future__ import annotations

import sys
from pathlib import Path

from cntmf.cli import main

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
GOLDEN = ROOT / "tests" / "golden"

# name -> extra report arguments
CASES = {
    "defi_integration": [
        "--overrides", str(FIXTURES / "defi_integration.overrides.json"),
        "--controls", str(FIXTURES / "controls.json"),
        "--ledger", str(FIXTURES / "incidents_2025q1.jsonl"),
        "--quarter", "2025Q1",
    ],
    "exchange_hack": [
        "--overrides", str(FIXTURES / "exchange_hack.overrides.json"),
    ],
}


def report_argv(name: str, out: Path) -> list[str]:
    return ["report", str(FIXTURES / f"{name}.cntmf"), "--out", str(out), "--no-timestamp", *CASES[name]]


def regenerate() -> int:
    for name in CASES:
        code = main(report_argv(name, GOLDEN / name))
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(regenerate())
