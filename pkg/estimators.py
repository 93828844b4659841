"""
Kernel estimators used by the test statistic

    g_hat_j(x)       = (1/nh^d) sum_i Y_ji K((x - X_i)/h)
    rho_hat_j^2(x)   = (1/nh^d) sum_i Y_ji^2 K^2((x - X_i)/h)
    rho_hat_jk(x)    = (1/nh^d) sum_i Y_ji Y_ki K^2((x - X_i)/h)

plus the integration grid over the test domain and the population counterpart
rho_j^2(x) = E[Y_j^2 | X = x] f(x) int K^2 used as a simulation oracle.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np

from kernel_core import ProductKernel

if TYPE_CHECKING:
    from simulation import DGPSpec

logger = logging.getLogger(__name__)

DEFAULT_POINTS_1D = 512
DEFAULT_POINTS_PER_AXIS = 64

# Relative widening of the sorted-axis search window; the kernel itself decides membership
_WINDOW_SLACK = 1e-9


@dataclass
class Dataset:
    """n observations of (Y in R^J, X in R^d)"""

    x: np.ndarray
    y: np.ndarray
    column_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or y.ndim != 2:
            raise ValueError("x and y must be 1-D or 2-D arrays")
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
        if x.shape[0] < 1 or x.shape[1] < 1 or y.shape[1] < 1:
            raise ValueError(f"Dataset needs at least one row, covariate and outcome; got x{x.shape}, y{y.shape}")
        bad = ~(np.isfinite(x).all(axis=1) & np.isfinite(y).all(axis=1))
        if np.any(bad):
            rows = (np.flatnonzero(bad) + 1).tolist()
            raise ValueError(f"Non-finite values in rows {rows[:20]}{'...' if len(rows) > 20 else ''}")
        if self.column_names is not None:
            names = tuple(self.column_names)
            if len(names) != x.shape[1] + y.shape[1]:
                raise ValueError(f"Expected {x.shape[1] + y.shape[1]} column names, got {len(names)}")
            self.column_names = names
        self.x, self.y = x, y

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def J(self) -> int:
        return self.y.shape[1]

    def with_outcomes(self, y: np.ndarray) -> "Dataset":
        return Dataset(self.x.copy(), y, self.column_names)


@dataclass(frozen=True)
class EvalGrid:
    """Midpoint grid over the domain box; cell_weights are the cell volumes"""

    points: np.ndarray
    cell_weights: np.ndarray
    domain: Tuple[Tuple[float, float], ...]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.domain]))

    def integrate(self, values) -> float:
        """Cell-weighted sum; numpy's pairwise reduction keeps the order fixed"""
        return float(np.sum(np.asarray(values, dtype=float) * self.cell_weights))


def normalize_domain(domain) -> Tuple[Tuple[float, float], ...]:
    """Validate a box given as [[lo, hi], ...] (a single [lo, hi] pair is also accepted)"""
    arr = np.asarray(domain, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
        raise ValueError(f"Domain must be a list of (lo, hi) pairs, got {domain}")
    if not np.all(np.isfinite(arr)) or np.any(arr[:, 1] <= arr[:, 0]):
        raise ValueError(f"Domain bounds must be finite with lo < hi, got {arr.tolist()}")
    return tuple((float(lo), float(hi)) for lo, hi in arr)


def make_grid(domain, points_per_axis: Optional[int] = None) -> EvalGrid:
    """Tensor-product midpoint grid with points_per_axis cells per axis"""
    box = normalize_domain(domain)
    d = len(box)
    if points_per_axis is None:
        points_per_axis = DEFAULT_POINTS_1D if d == 1 else DEFAULT_POINTS_PER_AXIS
    if int(points_per_axis) < 1:
        raise ValueError(f"grid points per axis must be positive, got {points_per_axis}")
    m = int(points_per_axis)

    axes, widths = [], []
    for lo, hi in box:
        width = (hi - lo) / m
        axes.append(lo + width * (np.arange(m) + 0.5))
        widths.append(width)

    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([g.ravel() for g in mesh], axis=-1)
    cell_weights = np.full(points.shape[0], float(np.prod(widths)))
    return EvalGrid(points=points, cell_weights=cell_weights, domain=box)


@dataclass
class SmoothedMoments:
    """Estimator values on a grid: g (G, J), rho_sq (G, J), rho_cross (G, J, J)"""

    g: np.ndarray
    rho_sq: np.ndarray
    rho_cross: np.ndarray

    @property
    def rho(self) -> np.ndarray:
        return np.sqrt(self.rho_sq)


def _fsum_columns(terms: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(col) for col in terms.T])


class KernelSmoother:
    """Evaluates the kernel sums at arbitrary points.

    Observations are pre-sorted on the first covariate so each evaluation only
    touches the slice within h/2 on that axis. Sums are compensated (math.fsum),
    so the result does not depend on the observation order.
    """

    def __init__(self, data: Dataset, kernel: ProductKernel, h: float):
        if not np.isfinite(h) or h <= 0:
            raise ValueError(f"Bandwidth must be positive, got {h}")
        if kernel.d != data.d:
            raise ValueError(f"Kernel dimension {kernel.d} does not match covariate dimension {data.d}")
        self.data = data
        self.kernel = kernel
        self.h = float(h)
        self.scale = 1.0 / (data.n * self.h ** data.d)

        order = np.argsort(data.x[:, 0], kind="stable")
        self._x = data.x[order]
        self._y = data.y[order]
        self._first = self._x[:, 0]
        self._half = 0.5 * self.h * (1.0 + _WINDOW_SLACK)

    def _window(self, point: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        lo = np.searchsorted(self._first, point[0] - self._half, side="left")
        hi = np.searchsorted(self._first, point[0] + self._half, side="right")
        weights = self.kernel.eval((point[None, :] - self._x[lo:hi]) / self.h)
        return np.atleast_1d(weights), self._y[lo:hi]

    def moments_at(self, point) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        point = np.asarray(point, dtype=float).reshape(-1)
        if point.size != self.data.d:
            raise ValueError(f"Point of dimension {point.size} for data of dimension {self.data.d}")
        J = self.data.J
        k, y = self._window(point)
        if k.size == 0:
            return np.zeros(J), np.zeros(J), np.zeros((J, J))

        k2 = k * k
        g = _fsum_columns(y * k[:, None]) * self.scale
        rho_sq = _fsum_columns(y * y * k2[:, None]) * self.scale
        cross = np.empty((J, J))
        for j in range(J):
            cross[j, j] = rho_sq[j]
            for l in range(j + 1, J):
                cross[j, l] = cross[l, j] = math.fsum(y[:, j] * y[:, l] * k2) * self.scale
        return g, rho_sq, cross

    def _evaluate(self, points: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        return [self.moments_at(p) for p in points]

    def on_grid(self, grid: EvalGrid, workers: int = 1) -> SmoothedMoments:
        """Evaluate every grid point; chunks run in threads, results stay per point"""
        if workers > 1 and grid.size > workers:
            chunks = np.array_split(grid.points, workers)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = [r for part in pool.map(self._evaluate, chunks) for r in part]
        else:
            results = self._evaluate(grid.points)

        g = np.stack([r[0] for r in results])
        rho_sq = np.stack([r[1] for r in results])
        cross = np.stack([r[2] for r in results])
        return SmoothedMoments(g=g, rho_sq=rho_sq, rho_cross=cross)


def _check_index(data: Dataset, j: int) -> int:
    if not 0 <= j < data.J:
        raise IndexError(f"Outcome index {j} out of range for J={data.J}")
    return j


def g_hat(data: Dataset, j: int, kernel: ProductKernel, h: float, x) -> float:
    _check_index(data, j)
    g, _, _ = KernelSmoother(data, kernel, h).moments_at(x)
    return float(g[j])


def rho_hat_sq(data: Dataset, j: int, kernel: ProductKernel, h: float, x) -> float:
    _check_index(data, j)
    _, rho_sq, _ = KernelSmoother(data, kernel, h).moments_at(x)
    return float(rho_sq[j])


def rho_hat_cross(data: Dataset, j: int, k_idx: int, kernel: ProductKernel, h: float, x) -> float:
    _check_index(data, j)
    _check_index(data, k_idx)
    _, _, cross = KernelSmoother(data, kernel, h).moments_at(x)
    return float(cross[j, k_idx])


def pop_rho_sq(dgp: "DGPSpec", kernel: ProductKernel, x) -> np.ndarray:
    """E[Y^2 | X=x] f(x) int K^2 for a DGP with analytic moments"""
    try:
        second_moment = dgp.second_moment
        density = dgp.density
    except AttributeError as e:
        raise ValueError(f"DGP {getattr(dgp, 'name', dgp)!r} has no analytic moments") from e
    points = np.asarray(x, dtype=float)
    if points.ndim <= 1:
        points = points.reshape(-1, kernel.d)
    return second_moment(points) * density(points) * kernel.int_K2()


def boundary_axes(data: Dataset, domain: Sequence[Tuple[float, float]], h: float) -> List[int]:
    """Axes where the domain comes within h/2 of the edge of the observed covariates"""
    flagged = []
    for s, (lo, hi) in enumerate(domain):
        if data.x[:, s].min() > lo - h / 2 or data.x[:, s].max() < hi + h / 2:
            flagged.append(s)
    return flagged


def rule_bandwidth(c_h: float, s_x: float, n: int) -> float:
    """h = c_h * s_X * n^(-1/5)"""
    if not c_h > 0:
        raise ValueError(f"Bandwidth constant c_h must be positive, got {c_h}")
    if not s_x > 0:
        raise ValueError("Covariate has zero sample variance; the bandwidth rule is undefined")
    return float(c_h * s_x * n ** (-0.2))


def bandwidth_rule(c_h: float, data: Dataset) -> float:
    """Rule-of-thumb bandwidth from the sample standard deviation of the first covariate.

    Multi-dimensional covariates share the single h from the first axis.
    """
    if data.n < 2:
        raise ValueError("The bandwidth rule needs at least 2 observations")
    return rule_bandwidth(c_h, float(np.std(data.x[:, 0], ddof=1)), data.n)
