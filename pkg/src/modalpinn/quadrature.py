"""Quadrature rules, stochastic collocation points and discrete integrals."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np
from scipy.special import erfc

from .errors import ConfigurationError, DomainError, ShapeError


@dataclass(frozen=True)
class QuadRule:
    nodes: np.ndarray
    weights: np.ndarray
    domain: tuple

    def integrate(self, f) -> float:
        return float(np.sum(self.weights * f(self.nodes)))


@dataclass(frozen=True)
class StochasticPoints:
    """Realizations ``points`` (n, d) with expectation weights summing to one."""

    points: np.ndarray
    weights: np.ndarray
    kind: str = "quadrature"

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 1 and np.ndim(self.points) == 1:
            pts = pts.T
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (pts.shape[0],):
            raise ShapeError(f"{pts.shape[0]} points but {w.shape} weights")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigurationError("stochastic weights must be nonnegative and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def _legendre(n: int, x):
    """P_n(x) and P_n'(x) by the three-term recurrence."""
    p0, p1 = np.ones_like(x), x
    if n == 0:
        return p0, np.zeros_like(x)
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = n * (x * p1 - p0) / (x * x - 1.0)
    return p1, dp


def gauss_legendre(n: int) -> QuadRule:
    """n-point Gauss-Legendre rule on [-1, 1], exact to degree 2n-1."""
    if not 1 <= int(n) <= 64:
        raise ConfigurationError(f"Gauss-Legendre order must be in [1, 64], got {n}")
    n = int(n)
    if n == 1:
        return QuadRule(np.array([0.0]), np.array([2.0]), (-1.0, 1.0))
    k = np.arange(1, n + 1)
    x = np.cos(np.pi * (k - 0.25) / (n + 0.5))
    for _ in range(100):
        p, dp = _legendre(n, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    p, dp = _legendre(n, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    x, w = x[order], w[order]
    # symmetrize to remove the last ulp of asymmetry
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return QuadRule(x, w, (-1.0, 1.0))


def map_rule(rule: QuadRule, a: float, b: float) -> QuadRule:
    if not a < b:
        raise ConfigurationError(f"need a < b, got [{a}, {b}]")
    lo, hi = rule.domain
    half = (b - a) / (hi - lo)
    nodes = a + (rule.nodes - lo) * half
    return QuadRule(nodes, rule.weights * half, (float(a), float(b)))


# Acklam's rational approximation to the normal quantile
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def inverse_normal_cdf(p):
    """Standard normal quantile, rational approximation plus one Halley step."""
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise DomainError("inverse_normal_cdf needs 0 < p < 1")
    x = np.empty_like(arr)
    lo = arr < _P_LOW
    hi = arr > 1.0 - _P_LOW
    mid = ~(lo | hi)

    q = arr[mid] - 0.5
    r = q * q
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    x[mid] = num / den

    def tail(pp):
        q = np.sqrt(-2.0 * np.log(pp))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        return num / den

    x[lo] = tail(arr[lo])
    x[hi] = -tail(1.0 - arr[hi])

    # Halley refinement against erfc; the upper tail is refined on 1-p
    # through symmetry to avoid cancellation.
    sgn = np.where(x > 0, -1.0, 1.0)
    pp = np.where(x > 0, 1.0 - arr, arr)
    z = sgn * x
    e = 0.5 * erfc(-z / np.sqrt(2.0)) - pp
    u = e * np.sqrt(2.0 * np.pi) * np.exp(0.5 * z * z)
    z = z - u / (1.0 + 0.5 * z * u)
    x = sgn * z
    return float(x) if np.ndim(p) == 0 else x


def normal_cdf(x):
    return 0.5 * erfc(-np.asarray(x, dtype=float) / np.sqrt(2.0))


def normal_quadrature(n: int, sigma: float) -> StochasticPoints:
    """Gauss-Legendre nodes on [0, 1] pushed through sigma * inverse normal CDF."""
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    rule = map_rule(gauss_legendre(n), 0.0, 1.0)
    pts = sigma * inverse_normal_cdf(rule.nodes)
    pts = 0.5 * (pts - pts[::-1])  # exact antisymmetry
    w = rule.weights / rule.weights.sum()
    return StochasticPoints(pts[:, None], w)


def uniform_quadrature(n: int) -> StochasticPoints:
    """Gauss-Legendre rule for a uniform(0, 1) variable."""
    rule = map_rule(gauss_legendre(n), 0.0, 1.0)
    return StochasticPoints(rule.nodes[:, None], rule.weights / rule.weights.sum())


def tensor_product(rules) -> StochasticPoints:
    rules = list(rules)
    if not rules:
        raise ConfigurationError("tensor_product needs at least one rule")
    pts, wts = [], []
    for combo in itertools.product(*[range(r.n) for r in rules]):
        pts.append(np.concatenate([r.points[i] for r, i in zip(rules, combo)]))
        wts.append(np.prod([r.weights[i] for r, i in zip(rules, combo)]))
    w = np.asarray(wts)
    return StochasticPoints(np.asarray(pts), w / w.sum(), "quadrature")


def spatial_grid(a: float, b: float, n: int) -> np.ndarray:
    if n < 2:
        raise ConfigurationError("a spatial grid needs at least two points")
    if not a < b:
        raise ConfigurationError(f"need a < b, got [{a}, {b}]")
    return np.linspace(a, b, int(n))


def trapezoid_weights(grid) -> np.ndarray:
    """Composite trapezoid weights for an ordered grid.

    On a periodic grid that repeats its first point at the end this is the
    rectangle rule, which is spectrally accurate for smooth periodic data.
    """
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 2:
        raise ShapeError("grid must be 1-D with at least two points")
    h = np.diff(g)
    w = np.zeros_like(g)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def _xp(*arrays):
    return jnp if any(isinstance(a, jax.Array) for a in arrays) else np


def inner_product(f_values, g_values, grid, axis: int = 0):
    """Trapezoid approximation of the integral of f*g over the grid."""
    w = trapezoid_weights(grid)
    xp = _xp(f_values, g_values)
    prod = xp.asarray(f_values) * xp.asarray(g_values)
    if prod.shape[axis] != w.size:
        raise ShapeError(f"values have {prod.shape[axis]} entries along axis {axis}, grid has {w.size}")
    return xp.tensordot(w, prod, axes=([0], [axis]))


def expectation(values, pts: StochasticPoints, axis: int = 0):
    xp = _xp(values)
    v = xp.asarray(values)
    if v.shape[axis] != pts.n:
        raise ShapeError(f"values have {v.shape[axis]} entries along axis {axis}, expected {pts.n}")
    return xp.tensordot(pts.weights, v, axes=([0], [axis]))


def sample_uniform_times(n: int, t0: float, T: float, seed: int) -> np.ndarray:
    """Sorted uniform draws on [t0, T], fixed once per training run."""
    if n < 1:
        raise ConfigurationError("need at least one time sample")
    if not t0 < T:
        raise ConfigurationError(f"need t0 < T, got [{t0}, {T}]")
    return np.sort(np.random.default_rng(seed).uniform(t0, T, size=int(n)))


def sample_mc(dim: int, n: int, seed: int, distribution: str = "normal") -> StochasticPoints:
    if n < 1 or dim < 1:
        raise ConfigurationError("need n >= 1 and dim >= 1")
    rng = np.random.default_rng(seed)
    if distribution == "normal":
        pts = rng.standard_normal((n, dim))
    elif distribution == "uniform":
        pts = rng.uniform(0.0, 1.0, (n, dim))
    else:
        raise ConfigurationError(f"unknown distribution {distribution!r}")
    return StochasticPoints(pts, np.full(n, 1.0 / n), "monte-carlo")


@dataclass(frozen=True)
class TrainingGrid:
    """Fixed collocation set: spatial grid, time samples, stochastic points."""

    x: np.ndarray
    t: np.ndarray
    xi: StochasticPoints

    @property
    def x_weights(self) -> np.ndarray:
        return trapezoid_weights(self.x)

    @property
    def shape(self) -> tuple:
        return (self.x.size, self.t.size, self.xi.n)
