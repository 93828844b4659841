"""
Moments and covariances of one- and two-sided powers of standard normals

Lambda_p(v) = max{v, 0}^p (one-sided) or |v|^p (two-sided). This module provides
E Lambda_p(Z), the pair covariance

    c_p(t) = Cov(Lambda_p(sqrt(1 - t^2) Z1 + t Z2), Lambda_p(Z2))

and the u-integrated constants q_p, q-bar_p and q_jk,p(x) built from it.
Closed forms are used where they exist; everything else is simulated once on a
t-grid with common random numbers and interpolated monotonically.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import comb, gamma

from config import MC_CONFIG, ConfigError
from kernel_core import OverlapQuadrature, ProductKernel, overlap_quadrature

logger = logging.getLogger(__name__)

ONE_SIDED = "one_sided"
TWO_SIDED = "two_sided"
MODES = (ONE_SIDED, TWO_SIDED)

# Correlations this close outside [-1, 1] are floating error and get clamped
T_CLAMP_SLACK = 1e-9
MIN_MC_DRAWS = 10_000


@dataclass(frozen=True)
class LambdaSpec:
    """Exponent and sidedness of Lambda_p"""

    p: float
    mode: str = ONE_SIDED

    def __post_init__(self):
        if not np.isfinite(self.p) or self.p < 1:
            raise ConfigError(f"p must be a finite number >= 1, got {self.p}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "p", float(self.p))

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if self.mode == ONE_SIDED:
            return np.maximum(v, 0.0) ** self.p
        return np.abs(v) ** self.p

    @property
    def is_integer(self) -> bool:
        return float(self.p).is_integer()


@dataclass(frozen=True)
class McSettings:
    """Monte Carlo settings for the simulated normal functionals"""

    draws: int = MC_CONFIG["draws"]
    seed: int = MC_CONFIG["seed"]
    antithetic: bool = MC_CONFIG["antithetic"]

    def __post_init__(self):
        if int(self.draws) < MIN_MC_DRAWS:
            raise ConfigError(f"mc draws must be at least {MIN_MC_DRAWS}, got {self.draws}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError(f"mc seed must be a 64-bit unsigned integer, got {self.seed}")
        object.__setattr__(self, "draws", int(self.draws))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "antithetic", bool(self.antithetic))


def _abs_moment(p: float) -> float:
    """E|Z|^p for standard normal Z"""
    return float(2.0 ** (p / 2.0) * gamma((p + 1.0) / 2.0) / math.sqrt(math.pi))


def mean_lambda(spec: LambdaSpec) -> float:
    """E Lambda_p(Z); half-moments of |Z| in closed form for every p >= 1"""
    moment = _abs_moment(spec.p)
    return moment / 2.0 if spec.mode == ONE_SIDED else moment


def var_lambda(spec: LambdaSpec) -> float:
    """Var Lambda_p(Z), which is also c_p(1)"""
    second = _abs_moment(2.0 * spec.p)
    if spec.mode == ONE_SIDED:
        second /= 2.0
    return second - mean_lambda(spec) ** 2


def _cov_at_minus_one(spec: LambdaSpec) -> float:
    # X = -Z2: one-sided powers never overlap, two-sided ones coincide
    if spec.mode == ONE_SIDED:
        return -mean_lambda(spec) ** 2
    return var_lambda(spec)


def _check_t(t):
    arr = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(np.abs(arr) > 1.0 + T_CLAMP_SLACK):
        raise ValueError(f"Correlation t must lie in [-1, 1], got {t}")
    return np.clip(arr, -1.0, 1.0)


@lru_cache(maxsize=8)
def _normal_draws(mc: McSettings) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.Generator(np.random.Philox(mc.seed))
    size = mc.draws // 2 if mc.antithetic else mc.draws
    z1 = rng.standard_normal(size)
    z2 = rng.standard_normal(size)
    z1.setflags(write=False)
    z2.setflags(write=False)
    return z1, z2


def _paired_mean_and_se(values: np.ndarray, mirrored: Optional[np.ndarray]) -> Tuple[float, float]:
    units = values if mirrored is None else 0.5 * (values + mirrored)
    return float(np.mean(units)), float(np.std(units, ddof=1) / math.sqrt(units.size))


def mean_lambda_mc(spec: LambdaSpec, mc: Optional[McSettings] = None) -> Tuple[float, float]:
    """Simulated E Lambda_p(Z) and its Monte Carlo standard error"""
    mc = mc or McSettings()
    z1, _ = _normal_draws(mc)
    mirrored = spec.apply(-z1) if mc.antithetic else None
    return _paired_mean_and_se(spec.apply(z1), mirrored)


def cov_lambda_pair_mc(spec: LambdaSpec, t: float, mc: Optional[McSettings] = None) -> Tuple[float, float]:
    """Simulated c_p(t) and its delta-method standard error"""
    t = float(_check_t(t))
    mc = mc or McSettings()
    z1, z2 = _normal_draws(mc)
    x = math.sqrt(1.0 - t * t) * z1 + t * z2

    a, b = spec.apply(x), spec.apply(z2)
    if mc.antithetic:
        a_m, b_m = spec.apply(-x), spec.apply(-z2)
        mean_a = 0.5 * (a.mean() + a_m.mean())
        mean_b = 0.5 * (b.mean() + b_m.mean())
        mean_ab = 0.5 * ((a * b).mean() + (a_m * b_m).mean())
        psi = a * b - mean_b * a - mean_a * b
        psi_m = a_m * b_m - mean_b * a_m - mean_a * b_m
    else:
        mean_a, mean_b, mean_ab = a.mean(), b.mean(), (a * b).mean()
        psi, psi_m = a * b - mean_b * a - mean_a * b, None

    _, se = _paired_mean_and_se(psi, psi_m)
    return float(mean_ab - mean_a * mean_b), se


def _even_power_cov(p: int, t: np.ndarray) -> np.ndarray:
    """Cov(X^p, Y^p) for standard bivariate normals with correlation t, p even"""
    s = np.sqrt(1.0 - t * t)
    cross = np.zeros_like(t)
    for i in range(0, p + 1, 2):
        cross = cross + comb(p, i, exact=True) * s ** i * t ** (p - i) * _abs_moment(i) * _abs_moment(2 * p - i)
    return cross - _abs_moment(p) ** 2


def closed_form_cov(spec: LambdaSpec, t):
    """c_p(t) for the cases with a closed form, None otherwise"""
    t = _check_t(t)
    if spec.p == 1.0 and spec.mode == ONE_SIDED:
        return (t * (math.pi / 2.0 + np.arcsin(t)) + np.sqrt(1.0 - t * t) - 1.0) / (2.0 * math.pi)
    if spec.p == 1.0 and spec.mode == TWO_SIDED:
        return (2.0 / math.pi) * (np.sqrt(1.0 - t * t) + t * np.arcsin(t) - 1.0)
    if spec.mode == TWO_SIDED and spec.is_integer and int(spec.p) % 2 == 0:
        return _even_power_cov(int(spec.p), t)
    return None


class CovarianceCurve:
    """c_p(t) on [-1, 1]: exact where a closed form exists, otherwise a monotone
    cubic interpolant of grid values simulated with common random numbers."""

    def __init__(self, spec: LambdaSpec, mc: Optional[McSettings] = None, grid_size: int = 201):
        if grid_size < 3:
            raise ConfigError(f"t_grid_size must be at least 3, got {grid_size}")
        self.spec = spec
        self.mc = mc or McSettings()
        self.grid_size = int(grid_size)
        self.closed_form = closed_form_cov(spec, 0.0) is not None
        self._interpolant = None
        self.t_grid = None
        self.values = None
        self.standard_errors = None
        if not self.closed_form:
            self._build_grid()

    @property
    def even(self) -> bool:
        """|v|^p gives c_p(t) = c_p(-t); the curve then lives on [0, 1] and is read at |t|"""
        return self.spec.mode == TWO_SIDED

    def _build_grid(self):
        if self.even:
            # same node spacing as the full grid on [-1, 1]
            t_grid = np.linspace(0.0, 1.0, self.grid_size // 2 + 1)
        else:
            t_grid = np.linspace(-1.0, 1.0, self.grid_size)
            if self.grid_size % 2 == 1:
                t_grid[self.grid_size // 2] = 0.0

        values = np.empty_like(t_grid)
        errors = np.zeros_like(t_grid)
        for i, t in enumerate(t_grid):
            if t == 0.0:
                values[i] = 0.0
            elif t == 1.0:
                values[i] = var_lambda(self.spec)
            elif t == -1.0:
                values[i] = _cov_at_minus_one(self.spec)
            else:
                values[i], errors[i] = cov_lambda_pair_mc(self.spec, t, self.mc)

        self.t_grid, self.values, self.standard_errors = t_grid, values, errors
        self._interpolant = PchipInterpolator(t_grid, values)
        logger.debug(f"Simulated c_p grid for p={self.spec.p}, mode={self.spec.mode}: "
                     f"{self.grid_size} nodes, max MC se {errors.max():.2e}")

    def __call__(self, t):
        t = _check_t(t)
        if self.closed_form:
            return closed_form_cov(self.spec, t)
        return self._interpolant(np.abs(t) if self.even else t)

    def metadata(self) -> dict:
        return {
            "method": "closed_form" if self.closed_form else "mc_grid_pchip",
            "mc_draws": self.mc.draws,
            "mc_seed": self.mc.seed,
            "antithetic": self.mc.antithetic,
            "t_grid_size": self.grid_size,
            "even": self.even,
        }


@lru_cache(maxsize=32)
def covariance_curve(spec: LambdaSpec, mc: Optional[McSettings] = None, grid_size: int = 201) -> CovarianceCurve:
    """Memoized CovarianceCurve per (spec, mc, grid_size)"""
    return CovarianceCurve(spec, mc or McSettings(), grid_size)


def cov_lambda_pair(spec: LambdaSpec, t: float, mc: Optional[McSettings] = None, grid_size: int = 201) -> float:
    """The pair covariance c_p(t)"""
    t = float(_check_t(t))
    exact = closed_form_cov(spec, t)
    if exact is not None:
        return float(exact)
    if t == 0.0:
        return 0.0
    if t == 1.0:
        return var_lambda(spec)
    if t == -1.0:
        return _cov_at_minus_one(spec)
    return float(covariance_curve(spec, mc, grid_size)(t))


def q_profile(curve: CovarianceCurve, quadrature: OverlapQuadrature, ratios) -> np.ndarray:
    """int_{[-1,1]^d} c_p(r * t(u)) du for each correlation ratio r"""
    ratios = np.atleast_1d(_check_t(ratios))
    integrand = curve(ratios[:, None] * quadrature.overlap[None, :])
    return integrand @ quadrature.weights


def q_constant(spec: LambdaSpec, kernel: ProductKernel, t_scale: float = 1.0,
               mc: Optional[McSettings] = None, u_nodes: int = 41, grid_size: int = 201) -> float:
    """q_p (one-sided, t_scale=1), q-bar_p (two-sided) or one point of q_jk,p(x)"""
    curve = covariance_curve(spec, mc or McSettings(), grid_size)
    quadrature = overlap_quadrature(kernel, u_nodes)
    return float(q_profile(curve, quadrature, [t_scale])[0])
