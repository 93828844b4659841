"""
Studentized one-sided L_p test statistic

Assembles, for outcomes j = 1..J,

    Gamma_j  = int Lambda_p(g_hat_j(x)) w_j(x) dx
    a_hat_j  = h^(-d/2) int rho_hat_j^p(x) w_j(x) dx * E Lambda_p(Z)
    sigma_jk = int q_hat_jk(x) rho_hat_j^p rho_hat_k^p w_j w_k dx

and T_hat = sum_j {n^(p/2) h^((p-1)d/2) Gamma_j - a_hat_j} / sigma_hat with
sigma_hat^2 = 1' Sigma_hat 1. H0 is rejected iff T_hat > z_(1-alpha).
All integrals share one midpoint grid over the test domain.
"""

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from scipy.special import ndtr, ndtri

from config import TEST_CONFIG, MC_CONFIG, VERSION, ConfigError
from estimators import (
    Dataset,
    EvalGrid,
    KernelSmoother,
    SmoothedMoments,
    bandwidth_rule,
    boundary_axes,
    make_grid,
    normalize_domain,
)
from kernel_core import KernelError, OverlapQuadrature, ProductKernel, get_kernel, overlap_quadrature
from normal_functionals import (
    MODES,
    CovarianceCurve,
    LambdaSpec,
    McSettings,
    covariance_curve,
    mean_lambda,
    q_profile,
)

logger = logging.getLogger(__name__)

WEIGHT_SCHEMES = ("uniform", "inverse_se", "inverse_se_global")
MODE_ALIASES = {"inequality": "one_sided", "equality": "two_sided"}


class DegenerateVarianceError(ValueError):
    """sigma_hat^2 vanished, so the statistic is undefined"""


def _canonical(name: str) -> str:
    return str(name).strip().lower().replace("-", "_")


@dataclass
class TestConfig:
    """Resolved settings for one run of the test.

    Keys mirror the flat JSON config file. Either ``bandwidth`` (fixed h) or
    ``bandwidth_c`` (c_h in h = c_h * s_X * n^(-1/5)) must be set; a fixed
    bandwidth wins when both are present.
    """

    __test__ = False  # not a pytest class

    p: float = TEST_CONFIG["p"]
    mode: str = TEST_CONFIG["mode"]
    kernel: Any = TEST_CONFIG["kernel"]
    bandwidth: Optional[float] = TEST_CONFIG["bandwidth"]
    bandwidth_c: Optional[float] = TEST_CONFIG["bandwidth_c"]
    domain: Any = tuple(tuple(axis) for axis in TEST_CONFIG["domain"])
    weights: Union[str, np.ndarray, Callable] = TEST_CONFIG["weights"]
    alpha: float = TEST_CONFIG["alpha"]
    grid_points: Optional[int] = TEST_CONFIG["grid_points"]
    u_nodes: int = TEST_CONFIG["u_nodes"]
    degenerate_tol: float = TEST_CONFIG["degenerate_tol"]
    weight_cap: float = TEST_CONFIG["weight_cap"]
    variance_tol: float = TEST_CONFIG["variance_tol"]
    mc_draws: int = MC_CONFIG["draws"]
    mc_seed: int = MC_CONFIG["seed"]
    mc_antithetic: bool = MC_CONFIG["antithetic"]
    t_grid_size: int = MC_CONFIG["t_grid_size"]
    workers: int = 1

    def __post_init__(self):
        self.mode = MODE_ALIASES.get(_canonical(self.mode), _canonical(self.mode))
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of inequality/equality ({'/'.join(MODES)}), got {self.mode!r}")
        try:
            self.p = float(self.p)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"p must be a number, got {self.p!r}") from e
        if not np.isfinite(self.p) or self.p < 1:
            raise ConfigError(f"p must be >= 1, got {self.p}")
        if not 0.0 < float(self.alpha) < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        self.alpha = float(self.alpha)

        if self.bandwidth is not None and not float(self.bandwidth) > 0:
            raise ConfigError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.bandwidth_c is not None and not float(self.bandwidth_c) > 0:
            raise ConfigError(f"bandwidth_c must be positive, got {self.bandwidth_c}")
        if self.bandwidth is None and self.bandwidth_c is None:
            raise ConfigError("Set either bandwidth or bandwidth_c")

        try:
            self.domain = normalize_domain(self.domain)
        except ValueError as e:
            raise ConfigError(str(e)) from e

        if isinstance(self.weights, str):
            self.weights = _canonical(self.weights)
            if self.weights not in WEIGHT_SCHEMES:
                raise ConfigError(f"weights must be one of {WEIGHT_SCHEMES} or a table, got {self.weights!r}")

        if self.grid_points is not None and int(self.grid_points) < 1:
            raise ConfigError(f"grid_points must be positive, got {self.grid_points}")
        for name in ("u_nodes", "t_grid_size", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("degenerate_tol", "weight_cap", "variance_tol"):
            if not float(getattr(self, name)) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        # McSettings validates draws and seed
        self.mc

    @property
    def spec(self) -> LambdaSpec:
        return LambdaSpec(self.p, self.mode)

    @property
    def mc(self) -> McSettings:
        return McSettings(draws=self.mc_draws, seed=self.mc_seed, antithetic=self.mc_antithetic)

    @property
    def d(self) -> int:
        return len(self.domain)

    def resolve_bandwidth(self, data: Dataset) -> float:
        if self.bandwidth is not None:
            return float(self.bandwidth)
        try:
            return bandwidth_rule(float(self.bandwidth_c), data)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> Dict[str, Any]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "domain":
                value = [list(axis) for axis in value]
            elif f.name == "weights" and not isinstance(value, str):
                value = "custom"
            elif f.name == "kernel" and not isinstance(value, str):
                value = getattr(value, "name", "custom")
            out[f.name] = value
        return out

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any], source: str = "config") -> "TestConfig":
        unknown = sorted(set(mapping) - set(cls.field_names()))
        if unknown:
            raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)}")
        return cls(**dict(mapping))


@dataclass
class WeightTable:
    """Weights on the grid, one column per outcome"""

    values: np.ndarray
    scheme: str
    capped: int = 0
    degenerate: int = 0


@dataclass
class TestReport:
    __test__ = False

    t_stat: float
    gamma: List[float]
    a_hat: List[float]
    sigma_hat_sq: float
    sigma_matrix: List[List[float]]
    p_value: float
    reject: bool
    alpha: float
    critical_value: float
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def summary_line(self) -> str:
        return f"T={self.t_stat:.6f}, p={self.p_value:.6f}, reject={str(self.reject).lower()}"


@dataclass
class TestContext:
    """Everything computed once per (data, cfg) and shared by the pieces of the statistic"""

    __test__ = False

    data: Dataset
    cfg: TestConfig
    kernel: ProductKernel
    h: float
    grid: EvalGrid
    spec: LambdaSpec
    moments: SmoothedMoments
    curve: CovarianceCurve
    quadrature: OverlapQuadrature
    weights: Optional[WeightTable] = None

    def valid(self, j: int) -> np.ndarray:
        return self.moments.rho_sq[:, j] >= self.cfg.degenerate_tol

    def rho_power(self, j: int) -> np.ndarray:
        """rho_hat_j^p with degenerate cells set to 0"""
        rho_sq = np.where(self.valid(j), self.moments.rho_sq[:, j], 0.0)
        return rho_sq ** (self.spec.p / 2.0)

    def q_one(self) -> float:
        return float(q_profile(self.curve, self.quadrature, [1.0])[0])


def prepare(data: Dataset, cfg: TestConfig) -> TestContext:
    """Resolve kernel, bandwidth and grid, then smooth the data once"""
    if data.d != cfg.d:
        raise ConfigError(f"Domain has {cfg.d} axes but the data has {data.d} covariates")
    try:
        kernel = get_kernel(cfg.kernel, data.d)
    except KernelError as e:
        raise ConfigError(str(e)) from e

    h = cfg.resolve_bandwidth(data)
    grid = make_grid(cfg.domain, cfg.grid_points)
    spec = cfg.spec
    logger.info(f"Bandwidth h={h:.6g}, grid of {grid.size} points, p={spec.p}, mode={spec.mode}")

    moments = KernelSmoother(data, kernel, h).on_grid(grid, workers=int(cfg.workers))
    curve = covariance_curve(spec, cfg.mc, int(cfg.t_grid_size))
    quadrature = overlap_quadrature(kernel, int(cfg.u_nodes))
    ctx = TestContext(data, cfg, kernel, h, grid, spec, moments, curve, quadrature)
    ctx.weights = _resolve_weights(ctx)
    return ctx


def _pointwise_inverse_se(ctx: TestContext) -> WeightTable:
    rho_sq = ctx.moments.rho_sq
    valid = rho_sq >= ctx.cfg.degenerate_tol
    if not np.any(valid, axis=0).all():
        raise DegenerateVarianceError("inverse standard error weights: rho_hat vanishes on the whole grid "
                                      "(no observations near the domain, or Y identically zero)")
    inverse = np.where(valid, 1.0 / np.sqrt(np.where(valid, rho_sq, 1.0)), 0.0)
    capped = int(np.count_nonzero(inverse > ctx.cfg.weight_cap))
    values = np.minimum(inverse, ctx.cfg.weight_cap)
    return WeightTable(values, "inverse_se", capped=capped, degenerate=int(np.count_nonzero(~valid)))


def _global_inverse_se(ctx: TestContext) -> WeightTable:
    q_one = ctx.q_one()
    scales = []
    for j in range(ctx.data.J):
        sigma_tilde = q_one * ctx.grid.integrate(ctx.rho_power(j) ** 2)
        if not sigma_tilde > 0:
            raise DegenerateVarianceError(f"inverse standard error weights: sigma_tilde_{j + 1} = {sigma_tilde} "
                                          "(rho_hat vanishes on the whole grid)")
        scales.append(sigma_tilde ** -0.5)
    values = np.tile(np.asarray(scales), (ctx.grid.size, 1))
    degenerate = sum(int(np.count_nonzero(~ctx.valid(j))) for j in range(ctx.data.J))
    return WeightTable(values, "inverse_se_global", degenerate=degenerate)


def _custom_weights(ctx: TestContext, weights) -> WeightTable:
    raw = weights(ctx.grid.points) if callable(weights) else weights
    values = np.asarray(raw, dtype=float)
    if values.ndim == 1:
        values = np.tile(values[:, None], (1, ctx.data.J))
    if values.shape != (ctx.grid.size, ctx.data.J):
        raise ConfigError(f"Custom weight table has shape {values.shape}, "
                          f"expected ({ctx.grid.size},) or ({ctx.grid.size}, {ctx.data.J})")
    if np.any(~np.isfinite(values)) or np.any(values < 0):
        raise ConfigError("Custom weights must be finite and nonnegative")
    return WeightTable(values, "custom")


def _resolve_weights(ctx: TestContext) -> WeightTable:
    scheme = ctx.cfg.weights
    if isinstance(scheme, str):
        if scheme == "uniform":
            return WeightTable(np.ones((ctx.grid.size, ctx.data.J)), "uniform")
        if scheme == "inverse_se":
            return _pointwise_inverse_se(ctx)
        return _global_inverse_se(ctx)
    return _custom_weights(ctx, scheme)


def inverse_se_weights(data: Dataset, cfg: TestConfig, variant: Optional[str] = None) -> WeightTable:
    """Inverse standard error weights on the grid.

    variant "inverse_se" is the pointwise w(x) = 1/rho_hat(x); "inverse_se_global"
    rescales w-bar = 1 by sigma_tilde_jj^(-1/2). Defaults to cfg.weights.
    """
    variant = _canonical(variant or cfg.weights)
    if variant not in ("inverse_se", "inverse_se_global"):
        raise ConfigError(f"Unknown inverse standard error variant {variant!r}")
    ctx = prepare(data, _replace(cfg, weights="uniform"))
    return _pointwise_inverse_se(ctx) if variant == "inverse_se" else _global_inverse_se(ctx)


def _replace(cfg: TestConfig, **changes) -> TestConfig:
    values = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    values.update(changes)
    return TestConfig(**values)


def gamma_functional(gvals, wvals, grid: EvalGrid, spec: LambdaSpec) -> float:
    """int Lambda_p(g(x)) w(x) dx on the grid"""
    gvals = np.asarray(gvals, dtype=float)
    wvals = np.asarray(wvals, dtype=float)
    if gvals.shape != (grid.size,) or wvals.shape != (grid.size,):
        raise ValueError(f"Expected vectors of length {grid.size}, got {gvals.shape} and {wvals.shape}")
    return grid.integrate(spec.apply(gvals) * wvals)


def _a_hat(ctx: TestContext, j: int) -> float:
    integral = ctx.grid.integrate(ctx.rho_power(j) * ctx.weights.values[:, j])
    return ctx.h ** (-ctx.data.d / 2.0) * integral * mean_lambda(ctx.spec)


def _sigma_hat(ctx: TestContext, j: int, k: int) -> Tuple[float, int]:
    valid = ctx.valid(j) & ctx.valid(k)
    q = np.zeros(ctx.grid.size)
    clamped = 0
    if j == k:
        q[valid] = ctx.q_one()
    elif np.any(valid):
        rho_sq = ctx.moments.rho_sq
        raw = ctx.moments.rho_cross[valid, j, k] / np.sqrt(rho_sq[valid, j] * rho_sq[valid, k])
        clamped = int(np.count_nonzero(np.abs(raw) > 1.0))
        q[valid] = q_profile(ctx.curve, ctx.quadrature, np.clip(raw, -1.0, 1.0))

    w = ctx.weights.values
    integrand = q * ctx.rho_power(j) * ctx.rho_power(k) * w[:, j] * w[:, k]
    return ctx.grid.integrate(integrand), clamped


def a_hat(data: Dataset, j: int, cfg: TestConfig) -> float:
    return _a_hat(prepare(data, cfg), j)


def sigma_hat(data: Dataset, j: int, k_idx: int, cfg: TestConfig) -> float:
    value, _ = _sigma_hat(prepare(data, cfg), j, k_idx)
    return value


def critical_value(alpha: float) -> float:
    """z_(1-alpha)"""
    return float(ndtri(1.0 - alpha))


def p_value(t_stat: float) -> float:
    """1 - Phi(T), the one-sided p-value under the standard normal null limit"""
    return float(ndtr(-t_stat))


def decide(t_stat: float, alpha: float) -> Tuple[float, bool]:
    """p-value and decision of the rule: reject iff T > z_(1-alpha)"""
    return p_value(t_stat), bool(t_stat > critical_value(alpha))


def run_test(data: Dataset, cfg: TestConfig) -> TestReport:
    """Compute T_hat, its components, the p-value and the decision"""
    if data.n < 2:
        raise ConfigError(f"The test needs at least 2 observations, got {data.n}")
    ctx = prepare(data, cfg)
    n, d, J, p = data.n, data.d, data.J, ctx.spec.p

    gamma = np.array([gamma_functional(ctx.moments.g[:, j], ctx.weights.values[:, j], ctx.grid, ctx.spec)
                      for j in range(J)])
    a_values = np.array([_a_hat(ctx, j) for j in range(J)])

    sigma = np.zeros((J, J))
    clamped = 0
    for j in range(J):
        for k in range(j, J):
            sigma[j, k], count = _sigma_hat(ctx, j, k)
            sigma[k, j] = sigma[j, k]
            clamped += count
    sigma_sq = float(np.sum(sigma))

    if not np.isfinite(sigma_sq) or sigma_sq <= cfg.variance_tol:
        raise DegenerateVarianceError(
            f"degenerate variance: sigma_hat^2 = {sigma_sq:.3e}. Likely causes: no observations within "
            f"h/2 of the domain (empty effective domain) or outcomes identically zero")

    scale = n ** (p / 2.0) * ctx.h ** ((p - 1.0) * d / 2.0)
    t_stat = float(np.sum(scale * gamma - a_values) / np.sqrt(sigma_sq))
    p_val, reject = decide(t_stat, cfg.alpha)

    degenerate = sum(int(np.count_nonzero(~ctx.valid(j))) for j in range(J))
    near_boundary = boundary_axes(data, ctx.grid.domain, ctx.h)
    if near_boundary:
        logger.warning(f"Domain is within h/2 of the covariate range on axes {near_boundary}; "
                       "kernel estimates there are boundary-affected")
    if clamped:
        logger.warning(f"Clamped {clamped} estimated correlation ratios to [-1, 1]")
    if ctx.weights.capped:
        logger.warning(f"Capped {ctx.weights.capped} inverse standard error weights at {cfg.weight_cap:g}")
    if not ctx.kernel.is_nonnegative:
        logger.warning(f"Kernel {ctx.kernel.name} is signed; size control is only established for K >= 0")

    diagnostics = {
        "bandwidth": ctx.h,
        "grid_size": ctx.grid.size,
        "clamped_correlations": clamped,
        "degenerate_cells": degenerate,
        "capped_weights": ctx.weights.capped,
        "weight_scheme": ctx.weights.scheme,
        "boundary_axes": near_boundary,
        "signed_kernel": not ctx.kernel.is_nonnegative,
    }
    metadata = {
        "version": VERSION,
        "config": cfg.to_dict(),
        "n": n,
        "d": d,
        "J": J,
        "shared_grid": True,
        "p_value_definition": "1 - Phi(T_hat)",
        "normal_functionals": ctx.curve.metadata(),
        "u_quadrature_nodes": int(ctx.quadrature.weights.size),
    }
    logger.info(f"T_hat={t_stat:.6g}, sigma_hat^2={sigma_sq:.6g}, reject={reject}")
    return TestReport(
        t_stat=t_stat,
        gamma=gamma.tolist(),
        a_hat=a_values.tolist(),
        sigma_hat_sq=sigma_sq,
        sigma_matrix=sigma.tolist(),
        p_value=p_val,
        reject=reject,
        alpha=cfg.alpha,
        critical_value=critical_value(cfg.alpha),
        diagnostics=diagnostics,
        metadata=metadata,
    )
