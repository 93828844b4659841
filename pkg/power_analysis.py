"""
Local asymptotic power under Pitman drifts and optimal directional weights

For a direction delta_j, the population scale rho_j and weights w_j,

    eta_{s,z}(w, delta) = sum_j int delta_j^s(x) rho_j^z(x) w_j(x) dx

and the local power is 1 - Phi(z_(1-alpha) - drift), with the drift picked by
the test mode, p in {1, 2} and the rate of the alternative:

    inequality, g = n^(-1/2) delta           p=1: eta_10 / (2 sigma)
                                             p=2: eta_11 / (sigma sqrt(pi/2))
    inequality, g = n^(-1/2) h^(-d/4) delta  p=1: eta_2,-1 / (sqrt(8 pi) sigma)   needs eta_10 = 0
                                             p=2: eta_20 / (2 sigma)             needs eta_11 = 0
    equality,   g = n^(-1/2) h^(-d/4) delta  p=1: eta_2,-1 / (sqrt(2 pi) sigma)
                                             p=2: eta_20 / sigma
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtr, ndtri

from config import POWER_CONFIG, TEST_CONFIG, ConfigError
from estimators import EvalGrid, make_grid, normalize_domain
from kernel_core import KernelError, get_kernel
from normal_functionals import ONE_SIDED, TWO_SIDED, LambdaSpec, McSettings, q_constant

logger = logging.getLogger(__name__)

ROOT_N = "root_n"
ROOT_N_H = "root_n_h"
RATES = (ROOT_N, ROOT_N_H)
SUPPORTED_P = (1, 2)

# rho values at or below this count as vanishing when rho^-1 is needed
RHO_FLOOR = 1e-12

FunctionLike = Union[float, Callable, np.ndarray, Sequence]


class PowerPreconditionError(ValueError):
    """A local power formula was asked for outside the conditions it holds under"""


class NoDirectionError(ValueError):
    """The direction has no part the test can detect, so no optimal weight exists"""


def _tabulate(value: FunctionLike, grid: EvalGrid, J: Optional[int], name: str) -> np.ndarray:
    """Tabulate a constant, callable, table or per-outcome list on the grid as (G, J)"""
    G = grid.size

    def one(v) -> np.ndarray:
        if callable(v):
            out = np.asarray(v(grid.points), dtype=float)
        else:
            out = np.asarray(v, dtype=float)
        if out.ndim == 0:
            return np.full(G, float(out))
        if out.size == G:
            return out.reshape(G)
        raise ConfigError(f"{name}: expected {G} grid values, got shape {out.shape}")

    per_outcome = isinstance(value, (list, tuple)) and value and (
        callable(value[0]) or np.ndim(value[0]) > 0
        # a list of constants is one constant per outcome unless it has one value per grid point
        or (len(value) != G and all(np.ndim(v) == 0 and not callable(v) for v in value)))
    if per_outcome:
        columns = [one(v) for v in value]
    else:
        arr = None if callable(value) else np.asarray(value, dtype=float)
        if arr is not None and arr.ndim == 2 and arr.shape[0] == G:
            columns = [arr[:, j] for j in range(arr.shape[1])]
        else:
            columns = [one(value)]

    table = np.stack(columns, axis=1)
    if J is not None and table.shape[1] == 1 and J > 1:
        table = np.tile(table, (1, J))
    if not np.all(np.isfinite(table)):
        raise ConfigError(f"{name} has non-finite values on the grid")
    return table


@dataclass
class PowerQuery:
    """Inputs of the local power formulas.

    ``delta``, ``rho`` and ``weights`` may each be a constant, a callable of the
    grid points (G, d), a table of grid values, or a list with one entry per
    outcome. A flat list of numbers is read as per-outcome constants unless
    its length is the grid size. When ``sigma`` is None it is computed for J=1 as
    sqrt(q * int rho^(2p) w^2).
    """

    delta: FunctionLike
    rho: FunctionLike = 1.0
    weights: FunctionLike = 1.0
    sigma: Optional[float] = None
    alpha: float = TEST_CONFIG["alpha"]
    p: int = 1
    mode: str = ONE_SIDED
    rate: Optional[str] = None
    domain: Any = tuple(tuple(axis) for axis in TEST_CONFIG["domain"])
    grid_points: Optional[int] = TEST_CONFIG["grid_points"]
    kernel: Any = TEST_CONFIG["kernel"]
    mc: McSettings = field(default_factory=McSettings)
    u_nodes: int = TEST_CONFIG["u_nodes"]
    drift_tolerance: float = POWER_CONFIG["drift_tolerance"]

    def __post_init__(self):
        self.mode = {"inequality": ONE_SIDED, "equality": TWO_SIDED}.get(self.mode, self.mode)
        if self.mode not in (ONE_SIDED, TWO_SIDED):
            raise ConfigError(f"mode must be inequality or equality, got {self.mode!r}")
        if self.p not in SUPPORTED_P:
            raise ConfigError(f"Local power formulas exist for p in {SUPPORTED_P} only, got p={self.p}")
        self.p = int(self.p)
        if not 0.0 < float(self.alpha) < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.rate is None:
            self.rate = ROOT_N if self.mode == ONE_SIDED else ROOT_N_H
        if self.rate not in RATES:
            raise ConfigError(f"rate must be one of {RATES}, got {self.rate!r}")
        if self.mode == TWO_SIDED and self.rate != ROOT_N_H:
            raise ConfigError("Equality tests only have nontrivial local power at the root_n_h rate")
        if self.sigma is not None and not float(self.sigma) > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        try:
            self.domain = normalize_domain(self.domain)
            self.grid = make_grid(self.domain, self.grid_points)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e
        self.delta_table = _tabulate(self.delta, self.grid, None, "delta")
        self.J = self.delta_table.shape[1]
        self.rho_table = _tabulate(self.rho, self.grid, self.J, "rho")
        self.weight_table = _tabulate(self.weights, self.grid, self.J, "weights")
        for name, table in (("rho", self.rho_table), ("weights", self.weight_table)):
            if table.shape[1] != self.J:
                raise ConfigError(f"{name} has {table.shape[1]} outcomes, delta has {self.J}")
            if np.any(table < 0):
                raise ConfigError(f"{name} must be nonnegative")

    @property
    def spec(self) -> LambdaSpec:
        return LambdaSpec(float(self.p), self.mode)

    def q_value(self) -> float:
        """q_p (inequality) or q-bar_p (equality) for the query's kernel"""
        try:
            kernel = get_kernel(self.kernel, self.grid.d)
        except KernelError as e:
            raise ConfigError(str(e)) from e
        return q_constant(self.spec, kernel, 1.0, self.mc, self.u_nodes)

    def resolved_sigma(self) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        if self.J != 1:
            raise ConfigError("sigma must be given when J > 1 (cross-outcome covariances are not modelled)")
        rho, w = self.rho_table[:, 0], self.weight_table[:, 0]
        sigma_sq = self.q_value() * self.grid.integrate(rho ** (2 * self.p) * w ** 2)
        if not sigma_sq > 0:
            raise PowerPreconditionError("Population sigma is zero: the weights vanish wherever rho > 0")
        return math.sqrt(sigma_sq)


def eta(s: int, z: int, q: PowerQuery) -> float:
    """sum_j int delta_j^s rho_j^z w_j dx on the query grid"""
    if s not in (1, 2) or z not in (-1, 0, 1):
        raise ValueError(f"eta is defined for s in {{1, 2}} and z in {{-1, 0, 1}}, got s={s}, z={z}")
    rho, w = q.rho_table, q.weight_table
    if z == -1:
        vanishing = (rho <= RHO_FLOOR) & (w > 0)
        if np.any(vanishing):
            raise PowerPreconditionError(f"rho vanishes at {int(np.count_nonzero(vanishing))} grid points "
                                         "where the weight is positive, so eta with z=-1 is undefined")
        rho_z = np.where(rho > RHO_FLOOR, 1.0 / np.where(rho > RHO_FLOOR, rho, 1.0), 0.0)
    else:
        rho_z = rho ** z
    integrand = np.sum(q.delta_table ** s * rho_z * w, axis=1)
    return q.grid.integrate(integrand)


def power_from_drift(drift: float, alpha: float) -> float:
    """1 - Phi(z_(1-alpha) - drift)"""
    return float(ndtr(drift - ndtri(1.0 - alpha)))


def inequality_drift(q: PowerQuery) -> float:
    if q.mode != ONE_SIDED:
        raise ConfigError("inequality_drift needs an inequality (one_sided) query")
    sigma = q.resolved_sigma()
    if q.rate == ROOT_N:
        if q.p == 1:
            return eta(1, 0, q) / (2.0 * sigma)
        return eta(1, 1, q) / (sigma * math.sqrt(math.pi / 2.0))

    first_order = eta(1, 0, q) if q.p == 1 else eta(1, 1, q)
    if abs(first_order) > q.drift_tolerance:
        name = "eta_1_0" if q.p == 1 else "eta_1_1"
        raise PowerPreconditionError(
            f"The root_n_h formula requires {name} = 0, got {first_order:.6g}; "
            "use rate root_n for this direction")
    if q.p == 1:
        return eta(2, -1, q) / (math.sqrt(8.0 * math.pi) * sigma)
    return eta(2, 0, q) / (2.0 * sigma)


def equality_drift(q: PowerQuery) -> float:
    if q.mode != TWO_SIDED:
        raise ConfigError("equality_drift needs an equality (two_sided) query")
    sigma = q.resolved_sigma()
    if q.p == 1:
        return eta(2, -1, q) / (math.sqrt(2.0 * math.pi) * sigma)
    return eta(2, 0, q) / sigma


def local_power_inequality(q: PowerQuery) -> float:
    return power_from_drift(inequality_drift(q), q.alpha)


def local_power_equality(q: PowerQuery) -> float:
    return power_from_drift(equality_drift(q), q.alpha)


def local_power(q: PowerQuery) -> float:
    if q.mode == ONE_SIDED:
        return local_power_inequality(q)
    return local_power_equality(q)


@dataclass
class OptimalWeight:
    """Power-maximizing weight for a single direction.

    ``weights`` is the Cauchy-Schwarz maximizer as usually displayed;
    ``normalized`` is the same function rescaled so int w rho^(2p) dx = 1, and
    ``constraint_residual`` is int weights * rho^(2p) dx - 1 before rescaling.
    """

    grid: EvalGrid
    weights: np.ndarray
    normalized: np.ndarray
    constraint_residual: float
    drift: float
    power: float
    q_value: float
    p: int
    mode: str
    alpha: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "p": self.p,
            "mode": self.mode,
            "alpha": self.alpha,
            "drift": self.drift,
            "power": self.power,
            "q_value": self.q_value,
            "constraint_residual": self.constraint_residual,
            "grid": self.grid.points.tolist(),
            "weights": self.weights.tolist(),
            "normalized_weights": self.normalized.tolist(),
        }


def optimal_weight(delta: FunctionLike, rho: FunctionLike, p: int, mode: str = ONE_SIDED,
                   domain=None, grid_points: Optional[int] = None, alpha: float = TEST_CONFIG["alpha"],
                   kernel: Any = TEST_CONFIG["kernel"], mc: Optional[McSettings] = None,
                   u_nodes: int = TEST_CONFIG["u_nodes"]) -> OptimalWeight:
    """Optimal directional weight for J=1 and its local power"""
    query = PowerQuery(delta=delta, rho=rho, alpha=alpha, p=p, mode=mode,
                       domain=domain if domain is not None else TEST_CONFIG["domain"],
                       grid_points=grid_points, kernel=kernel, mc=mc or McSettings(), u_nodes=u_nodes)
    if query.J != 1:
        raise ConfigError(f"Optimal weights are defined for a single outcome, got J={query.J}")

    grid = query.grid
    d = query.delta_table[:, 0]
    r = query.rho_table[:, 0]
    if query.mode == ONE_SIDED:
        # only the positive part of the direction is detectable by a one-sided test
        direction = np.maximum(d, 0.0)
        rho_power = 1 + query.p
    else:
        direction = d * d
        rho_power = 2 + query.p
    active = direction > 0
    if not np.any(active):
        raise NoDirectionError("The direction has no positive part on the domain" if query.mode == ONE_SIDED
                               else "The direction is identically zero on the domain")
    if np.any(r[active] <= RHO_FLOOR):
        raise PowerPreconditionError("rho vanishes where the direction is active")

    safe_r = np.where(active, r, 1.0)
    if query.mode == ONE_SIDED:
        # both p use int (delta+)^2 rho^-2 under the root
        norm_sq = grid.integrate(np.where(active, direction ** 2 / safe_r ** 2, 0.0))
    else:
        norm_sq = grid.integrate(np.where(active, direction ** 2 / safe_r ** 4, 0.0))
    norm = math.sqrt(norm_sq)

    weights = np.where(active, direction / safe_r ** rho_power, 0.0) / norm
    scale = grid.integrate(weights * r ** (2 * query.p))
    normalized = weights / scale

    q_value = query.q_value()
    if query.mode == ONE_SIDED:
        denom = 2.0 * math.sqrt(q_value) if query.p == 1 else math.sqrt(q_value * math.pi / 2.0)
    else:
        denom = math.sqrt(2.0 * math.pi * q_value) if query.p == 1 else math.sqrt(q_value)
    drift = norm / denom

    logger.debug(f"Optimal weight (p={query.p}, {query.mode}): drift={drift:.6g}, residual={scale - 1.0:.3g}")
    return OptimalWeight(grid=grid, weights=weights, normalized=normalized,
                         constraint_residual=scale - 1.0, drift=drift,
                         power=power_from_drift(drift, query.alpha), q_value=q_value,
                         p=query.p, mode=query.mode, alpha=query.alpha)


def eta_values(q: PowerQuery) -> Dict[str, Optional[float]]:
    """Every eta_{s,z}; entries with z=-1 are None when rho vanishes under positive weight"""
    values = {}
    for s in (1, 2):
        for z in (-1, 0, 1):
            try:
                values[f"eta_{s}_{z}"] = eta(s, z, q)
            except PowerPreconditionError:
                values[f"eta_{s}_{z}"] = None
    return values


def _resolve_function(value, role: str, noise: str, kernel: Any, d: int):
    """Numbers and lists pass through; a string names a DGP whose mean (delta) or
    population rho supplies the function."""
    if not isinstance(value, str):
        return value
    from simulation import make_dgp
    from estimators import pop_rho_sq

    dgp = make_dgp(value, noise=noise)
    if role == "delta":
        return dgp.mean_fn
    product = get_kernel(kernel, d)
    return lambda points: np.sqrt(pop_rho_sq(dgp, product, points))


QUERY_KEYS = ("delta", "rho", "weights", "sigma", "alpha", "p", "mode", "rate", "domain",
              "grid_points", "kernel", "noise", "mc_draws", "mc_seed", "u_nodes", "drift_tolerance")


def query_from_mapping(mapping: Mapping[str, Any], source: str = "query") -> PowerQuery:
    """Build a PowerQuery from a flat JSON-style mapping.

    ``delta`` and ``rho`` may name a DGP ("dgp3", "sine", ...); ``noise`` picks
    its noise model. ``weights`` may be "optimal".
    """
    unknown = sorted(set(mapping) - set(QUERY_KEYS))
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)}")
    if "delta" not in mapping:
        raise ConfigError(f"{source}: 'delta' is required")

    values = dict(mapping)
    noise = values.pop("noise", "homo")
    kernel = values.get("kernel", TEST_CONFIG["kernel"])
    try:
        domain = normalize_domain(values.get("domain", TEST_CONFIG["domain"]))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{source}: {e}") from e
    mc_kwargs = {}
    if "mc_draws" in values:
        mc_kwargs["draws"] = values.pop("mc_draws")
    if "mc_seed" in values:
        mc_kwargs["seed"] = values.pop("mc_seed")
    values["mc"] = McSettings(**mc_kwargs)

    try:
        values["delta"] = _resolve_function(values["delta"], "delta", noise, kernel, len(domain))
        values["rho"] = _resolve_function(values.get("rho", 1.0), "rho", noise, kernel, len(domain))
    except (KeyError, ValueError) as e:
        raise ConfigError(f"{source}: {e}") from e
    return PowerQuery(**values)


def power_report(mapping: Mapping[str, Any], source: str = "query") -> Dict[str, Any]:
    """Evaluate a power query: drift, power and the eta values, plus the optimal
    weight when ``weights`` is "optimal"."""
    optimal = mapping.get("weights") == "optimal"
    values = dict(mapping)
    if optimal:
        values["weights"] = 1.0
    q = query_from_mapping(values, source)

    report: Dict[str, Any] = {
        "mode": q.mode,
        "p": q.p,
        "rate": q.rate,
        "alpha": q.alpha,
        "J": q.J,
        "eta_values": eta_values(q),
    }
    if optimal:
        best = optimal_weight(q.delta, q.rho, q.p, q.mode, q.domain, q.grid_points, q.alpha,
                              q.kernel, q.mc, q.u_nodes)
        report.update(drift=best.drift, power=best.power, q_value=best.q_value,
                      constraint_residual=best.constraint_residual,
                      optimal_weights=best.normalized.tolist())
        return report

    sigma = q.resolved_sigma()
    drift = inequality_drift(q) if q.mode == ONE_SIDED else equality_drift(q)
    report.update(sigma=sigma, drift=drift, power=power_from_drift(drift, q.alpha))
    return report
