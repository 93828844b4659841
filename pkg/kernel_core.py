"""
Product kernels on [-1/2, 1/2]^d

Provides one-dimensional compactly supported kernels, their product over
covariate axes, the kernel moment int K^2(u) du and the overlap correlation

    t(u) = int K(x) K(x + u) dx / int K^2(x) dx

that drives the variance of the test statistic. Integrals use Gauss-Legendre
panels split at every kink of the integrand, so the polynomial kernels shipped
here are integrated to machine precision.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache, reduce
from typing import Callable, Dict, Sequence, Tuple

import numpy as np
from scipy.special import roots_legendre

logger = logging.getLogger(__name__)

SUPPORT_HALFWIDTH = 0.5
MOMENT_NODES = 64
NORMALIZATION_TOL = 1e-8


class KernelError(ValueError):
    """Invalid kernel or kernel argument"""


@lru_cache(maxsize=None)
def _legendre(n: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = roots_legendre(n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_legendre(a: float, b: float, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the n-point Gauss-Legendre rule on [a, b]"""
    nodes, weights = _legendre(n)
    half = 0.5 * (b - a)
    return half * nodes + 0.5 * (a + b), half * weights


def panel_integral(func: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                   breakpoints: Sequence[float] = (), n: int = MOMENT_NODES) -> float:
    """Integrate func over [a, b] with one Gauss-Legendre panel per smooth piece"""
    if b <= a:
        return 0.0
    edges = sorted({a, b, *(c for c in breakpoints if a < c < b)})
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre(lo, hi, n)
        total += float(np.dot(w, func(x)))
    return total


@dataclass(frozen=True)
class Kernel1D:
    """A kernel on the real line vanishing outside [-1/2, 1/2].

    ``func`` only needs to be correct on the support; ``eval`` masks the rest.
    ``breakpoints`` lists interior points where ``func`` is not smooth.
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    sup_norm: float
    breakpoints: Tuple[float, ...] = (0.0,)
    support_halfwidth: float = SUPPORT_HALFWIDTH
    is_nonnegative: bool = field(init=False, compare=False)

    def __post_init__(self):
        if not np.isfinite(self.sup_norm) or self.sup_norm <= 0:
            raise KernelError(f"Kernel '{self.name}': sup_norm must be positive and finite, got {self.sup_norm}")

        mass = panel_integral(self.eval, -SUPPORT_HALFWIDTH, SUPPORT_HALFWIDTH, self.breakpoints)
        if abs(mass - 1.0) > NORMALIZATION_TOL:
            raise KernelError(f"Kernel '{self.name}' integrates to {mass:.12g}, expected 1")

        samples = self.eval(np.linspace(-SUPPORT_HALFWIDTH, SUPPORT_HALFWIDTH, 4001))
        if np.max(np.abs(samples)) > self.sup_norm * (1 + 1e-12):
            raise KernelError(f"Kernel '{self.name}' exceeds its declared sup-norm {self.sup_norm}")

        object.__setattr__(self, "is_nonnegative", bool(np.min(samples) >= 0.0))

    def eval(self, u):
        """Evaluate K_s(u); exactly 0 for |u| > 1/2"""
        arr = np.asarray(u, dtype=float)
        flat = np.atleast_1d(arr)
        out = np.zeros_like(flat)
        inside = np.abs(flat) <= self.support_halfwidth
        if np.any(inside):
            out[inside] = self.func(flat[inside])
        return float(out[0]) if arr.ndim == 0 else out

    def square_integral(self) -> float:
        return panel_integral(lambda x: self.eval(x) ** 2,
                              -SUPPORT_HALFWIDTH, SUPPORT_HALFWIDTH, self.breakpoints)

    def overlap(self, u: float) -> float:
        """One-axis overlap correlation int K(x)K(x+u)dx / int K^2"""
        if abs(u) >= 2 * SUPPORT_HALFWIDTH:
            return 0.0
        lo = max(-SUPPORT_HALFWIDTH, -SUPPORT_HALFWIDTH - u)
        hi = min(SUPPORT_HALFWIDTH, SUPPORT_HALFWIDTH - u)
        kinks = list(self.breakpoints) + [b - u for b in self.breakpoints]
        cross = panel_integral(lambda x: self.eval(x) * self.eval(x + u), lo, hi, kinks)
        return cross / self.square_integral()


@dataclass(frozen=True)
class ProductKernel:
    """K(u) = prod_s K_s(u_s) on the box [-1/2, 1/2]^d"""

    factors: Tuple[Kernel1D, ...]

    def __post_init__(self):
        if len(self.factors) == 0:
            raise KernelError("ProductKernel needs at least one factor")
        object.__setattr__(self, "factors", tuple(self.factors))

    @property
    def d(self) -> int:
        return len(self.factors)

    @property
    def name(self) -> str:
        names = {k.name for k in self.factors}
        return self.factors[0].name if len(names) == 1 else "x".join(k.name for k in self.factors)

    @property
    def sup_norm(self) -> float:
        return float(np.prod([k.sup_norm for k in self.factors]))

    @property
    def is_nonnegative(self) -> bool:
        return all(k.is_nonnegative for k in self.factors)

    def _as_points(self, u) -> np.ndarray:
        arr = np.asarray(u, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.shape[-1] != self.d:
            raise KernelError(f"Kernel of dimension {self.d} evaluated at a point of dimension {arr.shape[-1]}")
        return arr

    def eval(self, u):
        """Product of factor evaluations; accepts one point (d,) or a stack (..., d)"""
        arr = self._as_points(u)
        out = self.factors[0].eval(arr[..., 0])
        for s in range(1, self.d):
            out = out * self.factors[s].eval(arr[..., s])
        return float(out) if np.ndim(out) == 0 else out

    def int_K2(self) -> float:
        return _int_k2(self)

    def overlap_t(self, u) -> float:
        arr = self._as_points(u)
        if arr.ndim != 1:
            raise KernelError("overlap_t takes a single shift vector")
        return float(np.prod([k.overlap(float(us)) for k, us in zip(self.factors, arr)]))


@lru_cache(maxsize=None)
def _int_k2(kernel: ProductKernel) -> float:
    return float(np.prod([k.square_integral() for k in kernel.factors]))


@dataclass(frozen=True)
class OverlapQuadrature:
    """Tensor-product rule over u in [-1, 1]^d with t(u) tabulated at its nodes"""

    nodes: np.ndarray     # (M, d)
    weights: np.ndarray   # (M,)
    overlap: np.ndarray   # (M,)


@lru_cache(maxsize=None)
def overlap_quadrature(kernel: ProductKernel, nodes_per_panel: int = 41) -> OverlapQuadrature:
    """Gauss-Legendre rule on [-1,0] and [0,1] per axis, overlap values precomputed"""
    axis_nodes, axis_weights, axis_overlap = [], [], []
    for factor in kernel.factors:
        left_x, left_w = gauss_legendre(-1.0, 0.0, nodes_per_panel)
        right_x, right_w = gauss_legendre(0.0, 1.0, nodes_per_panel)
        x = np.concatenate([left_x, right_x])
        axis_nodes.append(x)
        axis_weights.append(np.concatenate([left_w, right_w]))
        axis_overlap.append(np.array([factor.overlap(float(u)) for u in x]))

    grids = np.meshgrid(*axis_nodes, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = reduce(np.multiply.outer, axis_weights).ravel()
    overlap = reduce(np.multiply.outer, axis_overlap).ravel()

    for arr in (nodes, weights, overlap):
        arr.setflags(write=False)
    logger.debug(f"Overlap quadrature for {kernel.name} (d={kernel.d}): {weights.size} nodes")
    return OverlapQuadrature(nodes=nodes, weights=weights, overlap=overlap)


# Builtin kernels
def _quartic2u(u):
    return 1.5 * (1.0 - (2.0 * u) ** 2)


def _uniform(u):
    return np.ones_like(u)


def _triangular(u):
    return 2.0 * (1.0 - 2.0 * np.abs(u))


KERNELS: Dict[str, Kernel1D] = {
    "quartic2u": Kernel1D("quartic2u", _quartic2u, sup_norm=1.5),
    "uniform": Kernel1D("uniform", _uniform, sup_norm=1.0),
    "triangular": Kernel1D("triangular", _triangular, sup_norm=2.0),
}


def custom_kernel(func: Callable[[np.ndarray], np.ndarray], sup_norm: float, name: str = "custom",
                  breakpoints: Sequence[float] = (0.0,)) -> Kernel1D:
    """Wrap a user callable; normalization and sup-norm are checked here, once"""
    kernel = Kernel1D(name, func, sup_norm=sup_norm, breakpoints=tuple(breakpoints))
    if not kernel.is_nonnegative:
        logger.warning(f"Kernel '{name}' takes negative values; size control assumes a nonnegative kernel")
    return kernel


def get_kernel(kernel, d: int = 1) -> ProductKernel:
    """Build a d-dimensional product kernel from a registry name or a Kernel1D"""
    if isinstance(kernel, ProductKernel):
        if kernel.d != d:
            raise KernelError(f"Kernel has dimension {kernel.d}, data has {d}")
        return kernel
    if d < 1:
        raise KernelError(f"Dimension must be at least 1, got {d}")
    if isinstance(kernel, Kernel1D):
        factor = kernel
    else:
        try:
            factor = KERNELS[kernel]
        except KeyError as e:
            raise KernelError(f"Unknown kernel '{kernel}'. Options: {', '.join(KERNELS)}") from e
    return ProductKernel(tuple([factor] * d))
