#!/usr/bin/env python3
"""
Golden Report Generator

This script regenerates the seeded sample shipped with the repository and the
golden report the CLI must reproduce:
1. data/dgp0_seeded.csv - n=200 draws from DGP0 (homoskedastic), fixed seed
2. data/dgp0_golden_report.json - `lp_cli.py test` report on that file

The report is cross-checked against the direct-definition reference in
tests/reference_impl.py before it is kept.

Usage:
    python utils/gen_golden.py
"""

import json
import sys
from pathlib import Path

# Add parent directory to path so we can import the library
parent_dir = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(parent_dir))
sys.path.insert(0, str(parent_dir / "tests"))

try:
    import pandas as pd
    from lp_cli import main as cli_main
    from simulation import draw, make_dgp
    from statistic import TestConfig
    import reference_impl
except ImportError as e:
    print(f"❌ Import failed: {e}")
    print("Install the requirements first: pip install -r requirements.txt")
    sys.exit(1)

GOLDEN_N = 200
GOLDEN_SEED = 20240607
GOLDEN_ARGS = ["--p", "1", "--bandwidth-c", "1.0", "--weights", "uniform"]

DATA_DIR = parent_dir / "data"
CSV_PATH = DATA_DIR / "dgp0_seeded.csv"
REPORT_PATH = DATA_DIR / "dgp0_golden_report.json"


class GoldenMismatchError(RuntimeError):
    """The CLI report disagrees with the reference implementation"""


def write_sample(csv_path: Path = CSV_PATH):
    """Draw the seeded sample and write it with round-trip precision"""
    data = draw(make_dgp("dgp0"), GOLDEN_N, GOLDEN_SEED)
    frame = pd.DataFrame({"x1": data.x[:, 0], "y1": data.y[:, 0]})
    frame.to_csv(csv_path, index=False, float_format="%.17g", lineterminator="\n")
    return data


def write_report(csv_path: Path = CSV_PATH, report_path: Path = REPORT_PATH) -> dict:
    code = cli_main(["test", "--data", str(csv_path), *GOLDEN_ARGS, "--output", str(report_path)])
    if code != 0:
        raise GoldenMismatchError(f"CLI exited with code {code}")
    with open(report_path, encoding="utf-8") as f:
        return json.load(f)


def cross_check(data, report) -> float:
    """Relative difference between the golden T and the direct-definition reference"""
    cfg = TestConfig(p=1.0, bandwidth_c=1.0, weights="uniform")
    expected = reference_impl.reference_test(data, cfg)
    rel = abs(report["t_stat"] - expected["t_stat"]) / max(1.0, abs(expected["t_stat"]))
    if rel > 1e-9:
        raise GoldenMismatchError(f"T (CLI) = {report['t_stat']!r}, T (reference) = {expected['t_stat']!r}, "
                                  f"rel diff {rel:.2e}")
    return rel


def generate(data_dir: Path = DATA_DIR) -> dict:
    """Write both golden files into data_dir; the report is removed again if it fails the cross-check"""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    csv_path = data_dir / CSV_PATH.name
    report_path = data_dir / REPORT_PATH.name
    data = write_sample(csv_path)
    report = write_report(csv_path, report_path)
    try:
        cross_check(data, report)
    except GoldenMismatchError:
        report_path.unlink()
        raise
    return report


def main():
    print("🧪 Golden Report Generator")
    print("=" * 50)
    try:
        report = generate()
    except GoldenMismatchError as e:
        print(f"❌ {e}")
        sys.exit(1)
    print(f"✅ Wrote sample: {CSV_PATH}")
    print(f"✅ Wrote golden report: {REPORT_PATH}")
    print(f"\n📋 T={report['t_stat']:.6f}, p={report['p_value']:.6f}, reject={report['reject']}")
    print(f"💡 Commit both files under {DATA_DIR.name}/ so tests/test_cli.py compares against them")


if __name__ == "__main__":
    main()
