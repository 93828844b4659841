#!/usr/bin/env python3
"""
Command-line interface for the one-sided L_p kernel test

Subcommands:
    test      run the test on a CSV dataset and emit a JSON report
    simulate  run a rejection-frequency campaign and emit CSV/JSON
    power     evaluate local power (or the optimal weight) for a query file

Settings are resolved as: command-line flag > config file > environment > defaults.
Exit codes: 0 success, 2 configuration or input error, 3 degenerate variance.
"""

import argparse
import csv
import json
import logging
import re
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from config import LOGGING_CONFIG, OUTPUT_CONFIG, VERSION, ConfigError, get_runtime_config, load_env_file, setup_logging
from estimators import Dataset
from power_analysis import QUERY_KEYS, NoDirectionError, PowerPreconditionError, power_report
from simulation import ExperimentConfig, run_experiment
from statistic import DegenerateVarianceError, TestConfig, run_test

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEGENERATE = 3

_COLUMN = re.compile(r"^([xy])(\d+)$")


class IngestError(ConfigError):
    """Malformed input data file"""


def _rows(mask: np.ndarray) -> List[int]:
    # data rows are numbered from 1, the header is row 0
    return (np.flatnonzero(mask) + 1).tolist()


def _looks_numeric(name: str) -> bool:
    try:
        float(name)
        return True
    except ValueError:
        return False


def _short_rows(path: Path, width: int) -> List[int]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = [row for row in csv.reader(f, skipinitialspace=True) if row]
    return [i for i, row in enumerate(rows[1:], start=1) if len(row) < width]


def ingest_csv(path) -> Dataset:
    """Read a CSV with a header naming x1..xd and y1..yJ (in any order)"""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"Data file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[],
                            skipinitialspace=True, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise IngestError(f"{path}: file is empty (a header row x1..xd,y1..yJ is required)") from e
    except pd.errors.ParserError as e:
        raise IngestError(f"{path}: ragged rows: {e}") from e
    except UnicodeDecodeError as e:
        raise IngestError(f"{path}: not valid UTF-8") from e

    names = [str(c).strip() for c in frame.columns]
    if all(_looks_numeric(n) for n in names):
        raise IngestError(f"{path}: missing header row (expected column names x1..xd, y1..yJ)")
    parsed = {}
    for name in names:
        match = _COLUMN.match(name.lower())
        if not match:
            raise IngestError(f"{path}: unexpected column {name!r}; columns must be named x1..xd and y1..yJ")
        parsed[name] = (match.group(1), int(match.group(2)))
    frame.columns = names

    columns = {}
    for kind in ("x", "y"):
        indices = sorted(i for k, i in parsed.values() if k == kind)
        if not indices:
            raise IngestError(f"{path}: no {kind} columns")
        if indices != list(range(1, len(indices) + 1)):
            raise IngestError(f"{path}: {kind} columns must be numbered 1..{len(indices)}, got {indices}")
        columns[kind] = [next(n for n, v in parsed.items() if v == (kind, i)) for i in indices]

    if frame.empty:
        raise IngestError(f"{path}: no data rows")
    # pandas pads short rows with "", so count the fields on the raw lines
    short = _short_rows(path, len(names))
    if short:
        raise IngestError(f"{path}: ragged rows (too few fields) at data rows {short}")
    blank = (frame.apply(lambda col: col.str.strip()) == "").any(axis=1).to_numpy()
    if np.any(blank):
        raise IngestError(f"{path}: missing values at data rows {_rows(blank)}")

    ordered = columns["x"] + columns["y"]
    values = frame[ordered].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values).all(axis=1)
    if np.any(bad):
        raise IngestError(f"{path}: non-finite or non-numeric values at data rows {_rows(bad)}")

    d = len(columns["x"])
    return Dataset(values[:, :d], values[:, d:], column_names=tuple(ordered))


def _key_line(text: str, key: str) -> Optional[int]:
    match = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, match.start()) + 1 if match else None


def load_config_file(path, allowed: List[str]) -> Dict[str, Any]:
    """Load a flat JSON object; unknown or repeated keys fail with their line number"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e

    def no_duplicates(pairs):
        seen = {}
        for key, value in pairs:
            if key in seen:
                lines = [m.start() for m in re.finditer(r'"' + re.escape(key) + r'"\s*:', text)]
                line = text.count("\n", 0, lines[-1]) + 1 if lines else "?"
                raise ConfigError(f"{path}:{line}: duplicate key {key!r}")
            seen[key] = value
        return seen

    try:
        mapping = json.loads(text, object_pairs_hook=no_duplicates)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from e
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: config must be a JSON object of key/value pairs")
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"{path}:{_key_line(text, key) or '?'}: unknown key {key!r}")
    return mapping


def parse_domain(text: str) -> List[List[float]]:
    """'lo:hi[,lo:hi...]' -> [[lo, hi], ...]"""
    try:
        return [[float(v) for v in part.split(":")] for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"--domain expects lo:hi[,lo:hi...], got {text!r}") from e


def _env_layer() -> Dict[str, Any]:
    runtime = get_runtime_config()
    return {
        "mc_draws": runtime["MC_CONFIG"]["draws"],
        "mc_seed": runtime["MC_CONFIG"]["seed"],
        "workers": runtime["SIMULATION_CONFIG"]["workers"],
        "log_level": runtime["LOGGING_CONFIG"]["log_level"],
    }


def resolve_settings(flags: Dict[str, Any], file_path: Optional[str], allowed: List[str]) -> Dict[str, Any]:
    """Merge flag > config file > environment; keys left out fall back to the defaults"""
    env = _env_layer()
    merged = {k: v for k, v in env.items() if k in allowed}
    if file_path:
        merged.update(load_config_file(file_path, allowed))
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def _write_json(document: Dict[str, Any], output: Optional[str]):
    text = json.dumps(document, indent=OUTPUT_CONFIG["json_indent"])
    if output:
        Path(output).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")


def cmd_test(args) -> int:
    flags = {
        "p": args.p,
        "mode": args.mode,
        "alpha": args.alpha,
        "bandwidth": args.bandwidth,
        "bandwidth_c": args.bandwidth_c,
        "kernel": args.kernel,
        "domain": parse_domain(args.domain) if args.domain else None,
        "weights": args.weights,
        "grid_points": args.grid,
        "mc_draws": args.mc_draws,
        "mc_seed": args.seed,
        "workers": args.workers,
    }
    settings = resolve_settings(flags, args.config, TestConfig.field_names())
    cfg = TestConfig.from_mapping(settings, args.config or "flags")
    data = ingest_csv(args.data)

    report = run_test(data, cfg)
    document = report.to_dict()
    document["metadata"]["data"] = {"path": str(args.data), "columns": list(data.column_names or ())}
    _write_json(document, args.output)
    # keep stdout parseable when the JSON report goes there
    stream = sys.stdout if args.output else sys.stderr
    print(report.summary_line(), file=stream)
    return EXIT_OK


def cmd_simulate(args) -> int:
    flags = {"replications": args.replications, "base_seed": args.seed}
    allowed = ExperimentConfig.field_names()
    settings = resolve_settings(flags, args.config, allowed + ["workers"])
    # the environment layer always supplies workers; it is not an ExperimentConfig key
    env_workers = settings.pop("workers", 1)
    workers = int(args.workers or env_workers)
    cfg = ExperimentConfig.from_mapping(settings, args.config or "flags")

    result = run_experiment(cfg, workers=workers)
    if args.output:
        result.to_csv(args.output)
    else:
        sys.stdout.write(result.to_csv())
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump(result.to_dict(), f, indent=OUTPUT_CONFIG["json_indent"])
    if args.figure_data:
        result.to_csv(args.figure_data, figure=True)
    print(f"{len(result.cells)} cells, {cfg.replications} replications each, "
          f"{sum(c.failures for c in result.cells)} failures", file=sys.stderr)
    return EXIT_OK


def cmd_power(args) -> int:
    flags = {"p": args.p, "mode": args.mode, "alpha": args.alpha, "rate": args.rate, "sigma": args.sigma}
    query = {}
    if args.query:
        query = load_config_file(args.query, list(QUERY_KEYS))
    query.update({k: v for k, v in flags.items() if v is not None})
    report = power_report(query, args.query or "flags")
    report["query"] = query
    report["version"] = VERSION
    _write_json(report, args.output)
    print(f"drift={report['drift']:.6f}, power={report['power']:.6f}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lp_cli.py",
        description="One-sided L_p kernel test for functional inequalities",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
    python lp_cli.py test --data data/dgp0_seeded.csv --p 1 --bandwidth-c 1.0
    python lp_cli.py test --data sample.csv --mode equality --domain 0.05:0.95 --output report.json
    python lp_cli.py simulate --config campaign.json --workers 4 --figure-data curves.csv
    python lp_cli.py power --query query.json
        """
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="Logging level (default: LPTEST_LOG_LEVEL or WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    test = sub.add_parser("test", help="Run the test on a CSV dataset")
    test.add_argument("--data", required=True, help="CSV with columns x1..xd, y1..yJ")
    test.add_argument("--config", help="Flat JSON file with TestConfig keys")
    test.add_argument("--p", type=float, help="Exponent p >= 1")
    test.add_argument("--mode", choices=["inequality", "equality", "one_sided", "two_sided"])
    test.add_argument("--alpha", type=float, help="Nominal level")
    test.add_argument("--bandwidth", type=float, help="Fixed bandwidth h")
    test.add_argument("--bandwidth-c", type=float, help="c_h in h = c_h * s_X * n^(-1/5)")
    test.add_argument("--kernel", help="Kernel name (quartic2u, uniform, triangular)")
    test.add_argument("--domain", help="Integration box lo:hi[,lo:hi...]")
    test.add_argument("--weights", choices=["uniform", "inverse-se", "inverse-se-global"])
    test.add_argument("--grid", type=int, help="Grid points per axis")
    test.add_argument("--mc-draws", type=int, help="Monte Carlo draws for the normal functionals")
    test.add_argument("--seed", type=int, help="Monte Carlo seed for the normal functionals")
    test.add_argument("--workers", type=int, help="Threads for the grid evaluation")
    test.add_argument("--output", help="Write the JSON report here instead of stdout")
    test.set_defaults(handler=cmd_test)

    simulate = sub.add_parser("simulate", help="Run a rejection-frequency campaign")
    simulate.add_argument("--config", help="Flat JSON file with ExperimentConfig keys")
    simulate.add_argument("--workers", type=int, help="Worker processes")
    simulate.add_argument("--replications", type=int)
    simulate.add_argument("--seed", type=int, help="Base seed of the replication streams")
    simulate.add_argument("--output", help="CSV output (default: stdout)")
    simulate.add_argument("--json", help="Also write the JSON result here")
    simulate.add_argument("--figure-data", help="Write rejection-rate curves against c_h here")
    simulate.set_defaults(handler=cmd_simulate)

    power = sub.add_parser("power", help="Local power for a query file")
    power.add_argument("--query", help="Flat JSON file with delta, rho, weights, sigma, ...")
    power.add_argument("--p", type=int, choices=[1, 2])
    power.add_argument("--mode", choices=["inequality", "equality"])
    power.add_argument("--alpha", type=float)
    power.add_argument("--rate", choices=["root_n", "root_n_h"])
    power.add_argument("--sigma", type=float)
    power.add_argument("--output", help="Write the JSON report here instead of stdout")
    power.set_defaults(handler=cmd_power)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        load_env_file()
        logging_config = dict(LOGGING_CONFIG)
        logging_config["log_level"] = args.log_level or _env_layer()["log_level"]
        setup_logging(logging_config)
        return args.handler(args)
    except DegenerateVarianceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ConfigError, PowerPreconditionError, NoDirectionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
