#!/usr/bin/env python3
"""
Monte Carlo harness for the L_p kernel test

Data-generating processes Y = m(X) + sigma(X) U with X uniform on a box and
U standard normal, rejection-frequency campaigns over DGP x n x c_h x weight x p
grids, and population oracles (sigma^2 and the centering a_n) computed from
the analytic DGP moments.

Every replication draws from its own counter-based stream keyed by
(base_seed, cell, replication), so campaigns give the same numbers for any
number of worker processes.

Usage:
    python simulation.py --config campaign.json --workers 4
"""

import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import ndtri

from config import (
    LOGGING_CONFIG,
    MC_CONFIG,
    OUTPUT_CONFIG,
    SIMULATION_CONFIG,
    TEST_CONFIG,
    VERSION,
    ConfigError,
    setup_logging,
)
from estimators import Dataset, bandwidth_rule, make_grid, pop_rho_sq
from kernel_core import get_kernel
from normal_functionals import mean_lambda, q_constant
from statistic import DegenerateVarianceError, TestConfig, run_test

logger = logging.getLogger(__name__)

__all__ = [
    "DGPSpec", "make_dgp", "make_local_alternative", "draw", "bandwidth_rule",
    "replication_seed", "ExperimentConfig", "CellResult", "ExperimentResult",
    "run_experiment", "rejection_frequency", "pop_sigma_sq", "pop_a", "SimulationCampaign",
]

NOISE_MODELS = ("homo", "hetero")
DGP_CM = {"dgp1": 0.25, "dgp2": 0.20, "dgp3": 0.15, "dgp4": 0.10, "dgp5": 0.05}
DGP_NAMES = ("dgp0", *DGP_CM, "sine")
UNIT_BOX = ((0.0, 1.0),)

# Replications per worker task; fixed so chunking never depends on the worker count
CHUNK_SIZE = 50
_U53 = 2.0 ** 53


@dataclass(frozen=True)
class DGPSpec:
    """Y = mean_fn(X) + sigma_fn(X) U, X uniform on ``box``.

    mean_fn and sigma_fn take points of shape (n, d) and return (n,).
    """

    name: str
    mean_fn: Callable[[np.ndarray], np.ndarray]
    sigma_fn: Callable[[np.ndarray], np.ndarray]
    box: Tuple[Tuple[float, float], ...] = UNIT_BOX
    noise: str = "homo"
    c_m: Optional[float] = None

    @property
    def d(self) -> int:
        return len(self.box)

    @property
    def label(self) -> str:
        return f"{self.name}/{self.noise}"

    def _points(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float).reshape(-1, self.d)

    def mean(self, x) -> np.ndarray:
        return np.asarray(self.mean_fn(self._points(x)), dtype=float).reshape(-1)

    def scale(self, x) -> np.ndarray:
        return np.asarray(self.sigma_fn(self._points(x)), dtype=float).reshape(-1)

    def density(self, x) -> np.ndarray:
        points = self._points(x)
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        inside = np.all((points >= lo) & (points <= hi), axis=1)
        return np.where(inside, 1.0 / float(np.prod(hi - lo)), 0.0)

    def second_moment(self, x) -> np.ndarray:
        """E[Y^2 | X = x] = m(x)^2 + sigma(x)^2"""
        return self.mean(x) ** 2 + self.scale(x) ** 2


def _homo(points: np.ndarray) -> np.ndarray:
    return np.ones(points.shape[0])


def _hetero(points: np.ndarray) -> np.ndarray:
    return points[:, 0].copy()


def _noise_fn(noise: str) -> Callable[[np.ndarray], np.ndarray]:
    if noise == "homo":
        return _homo
    if noise == "hetero":
        return _hetero
    raise ConfigError(f"Unknown noise model {noise!r}. Options: {', '.join(NOISE_MODELS)}")


def _zero_mean(points: np.ndarray) -> np.ndarray:
    return np.zeros(points.shape[0])


def _sine_mean(points: np.ndarray) -> np.ndarray:
    return np.sin(2.0 * np.pi * points[:, 0])


def _quadratic_mean(c_m: float) -> Callable[[np.ndarray], np.ndarray]:
    def mean(points: np.ndarray) -> np.ndarray:
        x = points[:, 0]
        return x * (1.0 - x) - c_m
    return mean


def make_dgp(name: str, c_m: Optional[float] = None, noise: str = "homo") -> DGPSpec:
    """Named designs: dgp0 (m = 0), dgp1..dgp5 (m = x(1-x) - c_m), sine (m = sin 2 pi x).

    A name may carry its noise model as "dgp3/hetero". ``c_m`` overrides the
    constant of the quadratic designs; "alt" is the quadratic design with a free c_m.
    """
    name = str(name).strip().lower()
    if "/" in name:
        name, noise = name.split("/", 1)
    sigma_fn = _noise_fn(noise)

    if name == "dgp0":
        return DGPSpec("dgp0", _zero_mean, sigma_fn, noise=noise)
    if name == "sine":
        return DGPSpec("sine", _sine_mean, sigma_fn, noise=noise)
    if name in DGP_CM or name == "alt":
        if c_m is None:
            if name == "alt":
                raise ConfigError("DGP 'alt' needs an explicit c_m")
            c_m = DGP_CM[name]
        return DGPSpec(name, _quadratic_mean(float(c_m)), sigma_fn, noise=noise, c_m=float(c_m))
    raise ConfigError(f"Unknown DGP {name!r}. Options: {', '.join(DGP_NAMES)}, alt")


def make_local_alternative(delta: Callable[[np.ndarray], np.ndarray], scale: float,
                           noise: str = "homo", name: str = "local") -> DGPSpec:
    """m(x) = scale * delta(x); scale is n^(-1/2) or n^(-1/2) h^(-d/4) for Pitman drifts"""
    sigma_fn = _noise_fn(noise)

    def mean(points: np.ndarray) -> np.ndarray:
        values = np.asarray(delta(points), dtype=float).reshape(-1)
        return scale * np.broadcast_to(values, (points.shape[0],))

    return DGPSpec(name, mean, sigma_fn, noise=noise)


def replication_seed(base_seed: int, cell_key: Tuple, r: int) -> np.random.SeedSequence:
    """Independent stream for replication r of a cell"""
    digest = hashlib.blake2b(repr(cell_key).encode("utf-8"), digest_size=8).digest()
    cell_id = int.from_bytes(digest, "little")
    return np.random.SeedSequence(int(base_seed), spawn_key=(cell_id, int(r)))


def _generator(seed: Union[int, np.random.SeedSequence]) -> np.random.Generator:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))


def _open_uniforms(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms on (0, 1) from 53-bit integers, endpoints excluded"""
    return (rng.integers(0, 2 ** 53, size=size, dtype=np.int64).astype(float) + 0.5) / _U53


def draw(dgp: DGPSpec, n: int, seed: Union[int, np.random.SeedSequence]) -> Dataset:
    """n observations from the DGP; deterministic given the seed"""
    if int(n) < 1:
        raise ValueError(f"Sample size must be positive, got {n}")
    rng = _generator(seed)
    lo = np.array([b[0] for b in dgp.box])
    hi = np.array([b[1] for b in dgp.box])
    x = lo + (hi - lo) * _open_uniforms(rng, (int(n), dgp.d))
    # normals by inverse CDF so draws do not depend on numpy's normal sampler
    u = ndtri(_open_uniforms(rng, int(n)))
    y = dgp.mean(x) + dgp.scale(x) * u
    return Dataset(x, y)


def _population_weights(dgp: DGPSpec, cfg: TestConfig, grid, rho_sq: np.ndarray, q_value: float) -> np.ndarray:
    scheme = cfg.weights
    if not isinstance(scheme, str):
        raw = scheme(grid.points) if callable(scheme) else scheme
        return np.broadcast_to(np.asarray(raw, dtype=float).reshape(-1), (grid.size,)).copy()
    if scheme == "uniform":
        return np.ones(grid.size)
    rho = np.sqrt(rho_sq)
    if scheme == "inverse_se":
        return np.where(rho > 0, 1.0 / np.where(rho > 0, rho, 1.0), 0.0)
    sigma_tilde = q_value * grid.integrate(rho_sq ** cfg.p)
    return np.full(grid.size, sigma_tilde ** -0.5)


def _population_terms(dgp: DGPSpec, cfg: TestConfig):
    kernel = get_kernel(cfg.kernel, dgp.d)
    grid = make_grid(cfg.domain, cfg.grid_points)
    rho_sq = pop_rho_sq(dgp, kernel, grid.points)
    q_value = q_constant(cfg.spec, kernel, 1.0, cfg.mc, int(cfg.u_nodes), int(cfg.t_grid_size))
    weights = _population_weights(dgp, cfg, grid, rho_sq, q_value)
    return grid, rho_sq, weights, q_value


def pop_sigma_sq(dgp: DGPSpec, cfg: TestConfig) -> float:
    """q_p int rho^(2p) w^2 dx for J=1 from the analytic DGP moments"""
    grid, rho_sq, weights, q_value = _population_terms(dgp, cfg)
    return q_value * grid.integrate(rho_sq ** cfg.p * weights ** 2)


def pop_a(dgp: DGPSpec, cfg: TestConfig, h: float) -> float:
    """h^(-d/2) int rho^p w dx E Lambda_p(Z), the population counterpart of a_hat"""
    grid, rho_sq, weights, _ = _population_terms(dgp, cfg)
    return h ** (-dgp.d / 2.0) * grid.integrate(rho_sq ** (cfg.p / 2.0) * weights) * mean_lambda(cfg.spec)


@dataclass
class ExperimentConfig:
    """A campaign grid; every (dgp, noise, n, c_h, weight, p) combination is one cell.

    ``p_values`` runs several exponents side by side and replaces ``p`` when
    given. Cells that differ only in p share their replication streams, so
    the L1 and L2 tests are compared on the same samples.
    """

    dgps: List[str] = field(default_factory=lambda: list(SIMULATION_CONFIG["dgps"]))
    noises: List[str] = field(default_factory=lambda: ["homo"])
    n_values: List[int] = field(default_factory=lambda: list(SIMULATION_CONFIG["n_values"]))
    c_h_values: List[float] = field(default_factory=lambda: list(SIMULATION_CONFIG["c_h_values"]))
    weights: List[str] = field(default_factory=lambda: list(SIMULATION_CONFIG["weights"]))
    p: float = TEST_CONFIG["p"]
    p_values: Optional[List[float]] = None
    mode: str = TEST_CONFIG["mode"]
    alpha: float = TEST_CONFIG["alpha"]
    kernel: str = TEST_CONFIG["kernel"]
    domain: Any = field(default_factory=lambda: [list(axis) for axis in TEST_CONFIG["domain"]])
    grid_points: Optional[int] = TEST_CONFIG["grid_points"]
    replications: int = SIMULATION_CONFIG["replications"]
    base_seed: int = SIMULATION_CONFIG["base_seed"]
    mc_draws: int = MC_CONFIG["draws"]
    mc_seed: int = MC_CONFIG["seed"]

    def __post_init__(self):
        for name in ("dgps", "noises", "n_values", "c_h_values", "weights"):
            value = getattr(self, name)
            if isinstance(value, (str, int, float)):
                value = [value]
            if len(value) == 0:
                raise ConfigError(f"{name} must not be empty")
            setattr(self, name, list(value))
        for dgp in self.dgps:
            for noise in self.noises:
                make_dgp(dgp, noise=noise)
        if any(int(n) < 2 for n in self.n_values):
            raise ConfigError(f"Every n must be at least 2, got {self.n_values}")
        self.n_values = [int(n) for n in self.n_values]
        if any(not float(c) > 0 for c in self.c_h_values):
            raise ConfigError(f"Every c_h must be positive, got {self.c_h_values}")
        self.c_h_values = [float(c) for c in self.c_h_values]
        if int(self.replications) < 1:
            raise ConfigError(f"replications must be at least 1, got {self.replications}")
        self.replications = int(self.replications)
        if self.p_values is None:
            self.p_values = [self.p]
        elif isinstance(self.p_values, (int, float)):
            self.p_values = [self.p_values]
        if len(self.p_values) == 0:
            raise ConfigError("p_values must not be empty")
        self.p_values = [float(p) for p in self.p_values]
        # one TestConfig per weight scheme and p validates p, mode, alpha, kernel and domain
        for p in self.p_values:
            self.test_config(c_h=self.c_h_values[0], weights=self.weights[0], p=p)
        self.weights = [self.test_config(c_h=self.c_h_values[0], weights=w).weights for w in self.weights]

    def test_config(self, c_h: float, weights: str, p: Optional[float] = None) -> TestConfig:
        return TestConfig(p=self.p_values[0] if p is None else p, mode=self.mode, kernel=self.kernel,
                          bandwidth=None, bandwidth_c=c_h, domain=self.domain, weights=weights,
                          alpha=self.alpha, grid_points=self.grid_points,
                          mc_draws=self.mc_draws, mc_seed=self.mc_seed)

    def cells(self) -> List[Tuple[str, str, int, float, str, float]]:
        return [(dgp, noise, n, c_h, w, p)
                for dgp in self.dgps for noise in self.noises for n in self.n_values
                for c_h in self.c_h_values for w in self.weights for p in self.p_values]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any], source: str = "config") -> "ExperimentConfig":
        unknown = sorted(set(mapping) - set(cls.field_names()))
        if unknown:
            raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)}")
        return cls(**dict(mapping))


@dataclass
class CellResult:
    dgp: str
    noise: str
    n: int
    c_h: float
    weight: str
    p: float
    mode: str
    replications: int
    rejections: int
    failures: int
    mean_t: float
    runtime: float = 0.0

    @property
    def reject_rate(self) -> float:
        return self.rejections / self.replications

    @property
    def mc_se(self) -> float:
        r = self.reject_rate
        return math.sqrt(r * (1.0 - r) / self.replications)

    def row(self) -> Dict[str, Any]:
        return {
            "dgp": self.dgp, "noise": self.noise, "n": self.n, "c_h": self.c_h, "weight": self.weight,
            "p": self.p, "mode": self.mode, "replications": self.replications,
            "reject_rate": self.reject_rate, "mc_se": self.mc_se, "failures": self.failures,
            "mean_t": self.mean_t,
        }


CSV_COLUMNS = ["dgp", "noise", "n", "c_h", "weight", "p", "mode", "replications",
               "reject_rate", "mc_se", "failures", "mean_t"]
FIGURE_COLUMNS = ["dgp", "noise", "n", "weight", "p", "mode", "c_h", "reject_rate", "mc_se"]


@dataclass
class ExperimentResult:
    cells: List[CellResult]
    config: Dict[str, Any]
    runtime: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([c.row() for c in self.cells], columns=CSV_COLUMNS)

    def figure_data(self) -> pd.DataFrame:
        """Rejection probability against c_h, one curve per (dgp, noise, n, weight, p)"""
        frame = self.to_frame()[FIGURE_COLUMNS]
        return frame.sort_values(["dgp", "noise", "n", "weight", "p", "c_h"], kind="mergesort").reset_index(drop=True)

    def to_csv(self, path=None, figure: bool = False) -> Optional[str]:
        frame = self.figure_data() if figure else self.to_frame()
        return frame.to_csv(path, index=False, float_format=OUTPUT_CONFIG["csv_float_format"], lineterminator="\n")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": VERSION,
            "config": self.config,
            "runtime": self.runtime,
            "cells": [dict(c.row(), runtime=c.runtime) for c in self.cells],
        }

    def cell(self, dgp: str, n: int, c_h: float, weight: str = "uniform", noise: str = "homo",
             p: Optional[float] = None) -> CellResult:
        for c in self.cells:
            if (c.dgp, c.noise, c.n, c.weight) == (dgp, noise, n, weight) and math.isclose(c.c_h, c_h) \
                    and (p is None or c.p == float(p)):
                return c
        raise KeyError((dgp, noise, n, c_h, weight, p))


def rejection_frequency(dgp: DGPSpec, n: int, cfg: TestConfig, replications: int,
                        base_seed: int, cell_key: Optional[Tuple] = None,
                        start: int = 0) -> Tuple[int, int, List[float]]:
    """Run replications start..start+replications-1 of one cell.

    Returns (rejections, failures, t statistics of the successful runs).
    Degenerate-variance replications count as failures and never reject.
    """
    cell_key = cell_key if cell_key is not None else (dgp.label, n)
    rejections, failures, t_values = 0, 0, []
    for r in range(start, start + replications):
        data = draw(dgp, n, replication_seed(base_seed, cell_key, r))
        try:
            report = run_test(data, cfg)
        except DegenerateVarianceError as e:
            failures += 1
            logger.debug(f"Replication {r} of {cell_key} failed: {e}")
            continue
        rejections += int(report.reject)
        t_values.append(report.t_stat)
    return rejections, failures, t_values


def _run_chunk(task: Dict[str, Any]) -> Tuple[int, int, List[float], float]:
    """Worker entry point; rebuilds everything from plain data so tasks pickle.

    Returns the rejection_frequency triple plus the chunk's wall time.
    """
    started = time.perf_counter()
    cfg = ExperimentConfig.from_mapping(task["config"])
    dgp_name, noise, n, c_h, weight, p = task["cell"]
    dgp = make_dgp(dgp_name, noise=noise)
    test_cfg = cfg.test_config(c_h, weight, p)
    # p is left out of the stream key
    stream_key = (dgp_name, noise, n, c_h, weight)
    rejections, failures, t_values = rejection_frequency(dgp, n, test_cfg, task["count"], cfg.base_seed,
                                                         stream_key, task["start"])
    return rejections, failures, t_values, time.perf_counter() - started


def _tasks(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    config = cfg.to_dict()
    tasks = []
    for cell in cfg.cells():
        for start in range(0, cfg.replications, CHUNK_SIZE):
            tasks.append({"config": config, "cell": cell, "start": start,
                          "count": min(CHUNK_SIZE, cfg.replications - start)})
    return tasks


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Rejection frequencies for every cell; identical for any worker count"""
    started = time.perf_counter()
    tasks = _tasks(cfg)
    logger.info(f"Running {len(cfg.cells())} cells x {cfg.replications} replications "
                f"({len(tasks)} tasks, {workers} worker(s))")

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_chunk, tasks))
    else:
        outcomes = [_run_chunk(task) for task in tasks]

    per_cell: Dict[Tuple, List] = {}
    for task, outcome in zip(tasks, outcomes):
        per_cell.setdefault(tuple(task["cell"]), []).append(outcome)

    cells = []
    for key in cfg.cells():
        chunks = per_cell[tuple(key)]
        rejections = sum(c[0] for c in chunks)
        failures = sum(c[1] for c in chunks)
        t_values = [t for c in chunks for t in c[2]]
        mean_t = math.fsum(t_values) / len(t_values) if t_values else float("nan")
        dgp, noise, n, c_h, weight, p = key
        cells.append(CellResult(dgp=dgp, noise=noise, n=n, c_h=c_h, weight=weight, p=p,
                                mode=cfg.test_config(c_h, weight, p).mode, replications=cfg.replications,
                                rejections=rejections, failures=failures, mean_t=mean_t,
                                runtime=math.fsum(c[3] for c in chunks)))
        if failures:
            logger.warning(f"{key}: {failures} replication(s) had a degenerate variance")
        logger.info(f"{dgp}/{noise} n={n} c_h={c_h} {weight} p={p:g}: reject rate {cells[-1].reject_rate:.3f}")

    elapsed = time.perf_counter() - started
    return ExperimentResult(cells=cells, config=cfg.to_dict(), runtime=elapsed)


class SimulationCampaign:
    """Runs a campaign and writes its CSV, JSON, figure data and summary"""

    def __init__(self, config: ExperimentConfig = None, output_dir: str = None, workers: int = None):
        self.config = config or ExperimentConfig()
        self.output_dir = Path(output_dir or "simulation_results")
        self.workers = workers or SIMULATION_CONFIG["workers"]
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.setup_logging()
        self.result: Optional[ExperimentResult] = None

    def setup_logging(self):
        """Log to the console and, when enabled, to a file in the output directory"""
        cfg = dict(LOGGING_CONFIG)
        cfg["log_file"] = str(self.output_dir / cfg.get("log_file", "lptest.log"))
        setup_logging(cfg)
        self.logger = logging.getLogger(__name__)

    def run(self) -> ExperimentResult:
        self.logger.info(f"Starting campaign: {len(self.config.cells())} cells, "
                         f"{self.config.replications} replications each")
        self.result = run_experiment(self.config, self.workers)
        self.logger.info(f"Campaign completed in {self.result.runtime:.2f} seconds")
        return self.result

    def export_data(self, figure_data: bool = False):
        """Write results.csv, results.json and optionally figure_data.csv"""
        if self.result is None:
            raise RuntimeError("Run the campaign before exporting")
        csv_file = self.output_dir / "results.csv"
        self.result.to_csv(csv_file)
        self.logger.info(f"Exported CSV to {csv_file}")

        json_file = self.output_dir / "results.json"
        with open(json_file, "w", encoding="utf-8") as f:
            json.dump(self.result.to_dict(), f, indent=OUTPUT_CONFIG["json_indent"])
        self.logger.info(f"Exported JSON to {json_file}")

        if figure_data:
            figure_file = self.output_dir / "figure_data.csv"
            self.result.to_csv(figure_file, figure=True)
            self.logger.info(f"Exported figure data to {figure_file}")

        self.generate_summary()

    def generate_summary(self) -> Dict[str, Any]:
        frame = self.result.to_frame()
        summary = {
            "completed_at": datetime.now().isoformat(),
            "version": VERSION,
            "cells": len(frame),
            "replications": self.config.replications,
            "failures": int(frame["failures"].sum()),
            "runtime_seconds": self.result.runtime,
            "reject_rate_by_dgp": frame.groupby("dgp")["reject_rate"].mean().round(4).to_dict(),
        }
        summary_file = self.output_dir / "summary.json"
        with open(summary_file, "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=OUTPUT_CONFIG["json_indent"])
        self.logger.info(f"Generated summary: {summary_file}")
        return summary


def main():
    """Run the default campaign from config.py"""
    import argparse

    parser = argparse.ArgumentParser(description="Run a rejection-frequency campaign")
    parser.add_argument("--config", help="Flat JSON file with ExperimentConfig keys")
    parser.add_argument("--workers", type=int, help="Worker processes")
    parser.add_argument("--output-dir", default="simulation_results")
    parser.add_argument("--figure-data", action="store_true")
    args = parser.parse_args()

    mapping = {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            mapping = json.load(f)
    campaign = SimulationCampaign(ExperimentConfig.from_mapping(mapping, args.config or "defaults"),
                                  args.output_dir, args.workers)
    try:
        campaign.run()
        campaign.export_data(figure_data=args.figure_data)
        print(f"Campaign finished, results in {campaign.output_dir}")
    except KeyboardInterrupt:
        print("\nCampaign interrupted by user")


if __name__ == "__main__":
    main()
