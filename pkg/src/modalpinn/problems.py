"""Benchmark SPDEs packaged as operator, boundary, initial and exact data.

An operator has the signature ``operator(u, x, t, xi, params, aux)`` where
``u`` is a :class:`~modalpinn.nn.Jet`, ``x`` and ``t`` broadcast against
``u.value`` and ``xi`` carries one extra trailing axis of length ``d``.
It returns N_x[u] so that the residual is ``u_t - N_x[u]``.  Operators are
written for both numpy and jax arrays.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import jax.numpy as jnp
import numpy as np

from .errors import ConfigurationError, DataError, DomainError, ShapeError
from .modal import ICComponents, initial_components_from_field, AnalyticComponent, EnvelopedKernel, KernelSpec, KlBasis, ModalSolution, kl_decompose
from .quadrature import (StochasticPoints, normal_quadrature, sample_mc, spatial_grid,
                         tensor_product, uniform_quadrature)

SQRT_PI = float(np.sqrt(np.pi))
SQRT3 = float(np.sqrt(3.0))


def _xp(*arrays):
    return np if all(isinstance(a, (np.ndarray, float, int, np.generic)) for a in arrays) else jnp


# -- boundary and initial data -------------------------------------------

@dataclass(frozen=True)
class Periodic:
    length: float


@dataclass(frozen=True)
class Dirichlet:
    """u = h(x_b, t, xi) at the two end points."""

    h: Callable = lambda x, t, xi: 0.0 * x * t * xi[..., 0]


@dataclass(frozen=True)
class DeterministicIC:
    """u0(x) plus the orthonormal basis (x -> (nx, N)) and chaos (xi -> (n, N))."""

    u0: Callable
    basis: Callable
    chaos: Callable


@dataclass(frozen=True)
class StochasticIC:
    u0: Callable  # (x (nx,), xi (n, d)) -> (n, nx)


@dataclass(frozen=True)
class SensorData:
    """Noisy point values of the initial field replacing the analytic mean target."""

    locations: np.ndarray
    values: np.ndarray
    noise_sd: float


@dataclass(frozen=True)
class ObservationSet:
    """Mean observations E[u](x_j, t_j) = values_j."""

    x: np.ndarray
    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(a, dtype=float)) for a in (self.x, self.t, self.values)]
        if not (arrs[0].shape == arrs[1].shape == arrs[2].shape) or arrs[0].ndim != 1:
            raise ShapeError("observation x, t and values must be 1-D arrays of equal length")
        for name, a in zip(("x", "t", "values"), arrs):
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return self.x.size

    def check_inside(self, x_domain, t_domain) -> None:
        ok = ((self.x >= x_domain[0]) & (self.x <= x_domain[1])
              & (self.t >= t_domain[0]) & (self.t <= t_domain[1]))
        if not np.all(ok):
            raise DataError(f"observations {np.flatnonzero(~ok).tolist()} lie outside the domain")


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    operator: Callable
    x_domain: tuple
    t_domain: tuple
    bc: object
    ic: object
    xi_dim: int
    xi_distribution: str
    params: dict
    learnable: frozenset = frozenset()
    xi_sigma: float = 1.0
    exact: Optional[object] = None
    prepare_aux: Optional[Callable] = None
    sensors: Optional[SensorData] = None
    observations: Optional[ObservationSet] = None
    y_input_shift: Optional[tuple] = None
    y_input_scale: Optional[tuple] = None
    ic_reference_modes: Optional[Callable] = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.learnable) - set(self.params)
        if unknown:
            raise ConfigurationError(f"learnable parameters {sorted(unknown)} are not problem parameters")
        if self.learnable and (self.observations is None or len(self.observations) == 0):
            raise ConfigurationError("learnable parameters need observations")
        if self.observations is not None:
            self.observations.check_inside(self.x_domain, self.t_domain)

    @property
    def periodic(self) -> bool:
        return isinstance(self.bc, Periodic)

    def replace(self, **changes) -> "ProblemSpec":
        return dataclasses.replace(self, **changes)

    def with_time_domain(self, t0: float, t1: float) -> "ProblemSpec":
        if not t0 < t1:
            raise ConfigurationError(f"need t0 < t1, got [{t0}, {t1}]")
        return self.replace(t_domain=(float(t0), float(t1)))

    def spatial_grid(self, n: int) -> np.ndarray:
        return spatial_grid(self.x_domain[0], self.x_domain[1], n)

    def stochastic_points(self, n: int, seed: int = 0) -> StochasticPoints:
        """Training points in the random space.

        Normal: the transformed Gauss-Legendre rule.  Uniform: the n-point
        rule per dimension in tensor product.  ``mc``: n random samples.
        """
        if self.xi_distribution == "normal":
            return normal_quadrature(n, self.xi_sigma)
        if self.xi_distribution == "uniform":
            return tensor_product([uniform_quadrature(n)] * self.xi_dim)
        if self.xi_distribution == "mc-normal":
            return sample_mc(self.xi_dim, n, seed, "normal")
        raise ConfigurationError(f"unknown distribution {self.xi_distribution!r}")

    def residual(self, u, x, t, xi, params=None, aux=None):
        """r = u_t - N_x[u] on any broadcastable layout."""
        return u.d_dt - self.operator(u, x, t, xi, self.params if params is None else params, aux)


# -- linear stochastic advection -------------------------------------------

def _g(u):
    """(1 - exp(-u)) / u, smooth through u = 0."""
    xp = _xp(u)
    small = u < 1e-4
    safe = xp.where(small, 1.0, u)
    series = 1.0 - u / 2.0 + u * u / 6.0 - u ** 3 / 24.0
    return xp.where(small, series, -xp.expm1(-safe) / safe)


def _sinc(z):
    """sin(z)/z."""
    xp = _xp(z)
    return xp.sinc(z / np.pi)


class AdvectionExact:
    """u = -sin(x - xi t) with xi ~ N(0, sigma^2) and its modal decompositions.

    With ``points`` (a :class:`StochasticPoints`) the scaling factors are
    the discrete standard deviations under those weights, so the normalized
    Y_i have unit second moment under that rule at every t.
    """

    def __init__(self, sigma: float, points: Optional[StochasticPoints] = None):
        self.sigma = float(sigma)
        self.points = points

    def discretized(self, points: StochasticPoints) -> "AdvectionExact":
        return AdvectionExact(self.sigma, points)

    def solution(self, x, t, xi):
        xp = _xp(x, t, xi)
        return -xp.sin(x - xi * t)

    def mean(self, x, t):
        xp = _xp(x, t)
        return -xp.sin(x) * xp.exp(-0.5 * self.sigma ** 2 * t * t)

    def variance(self, x, t):
        xp = _xp(x, t)
        s2 = self.sigma ** 2
        return 0.5 * (1.0 - xp.cos(2.0 * x) * xp.exp(-2.0 * s2 * t * t)) - self.mean(x, t) ** 2

    def _scaled(self, t, xi):
        """Y_1^DO / t and Y_2^DO / t^2, finite at t = 0."""
        xp = _xp(t, xi)
        s2 = self.sigma ** 2
        y1 = -SQRT_PI * xi * _sinc(xi * t)
        y2 = 0.5 * SQRT_PI * (s2 * _g(0.5 * s2 * t * t) - xi * xi * _sinc(0.5 * xi * t) ** 2)
        return xp.stack([y1, y2], axis=-1)

    def _scaled_std(self, t):
        xp = _xp(t)
        s2 = self.sigma ** 2
        if self.points is None:
            return xp.stack([SQRT_PI * self.sigma * xp.sqrt(_g(2.0 * s2 * t * t)),
                             np.sqrt(np.pi / 2.0) * s2 * _g(s2 * t * t)], axis=-1)
        xi = self.points.points[:, 0]
        w = self.points.weights
        ys = self._scaled(t[..., None], xi if xp is np else jnp.asarray(xi))
        return xp.sqrt(xp.einsum("l,...li->...i", w if xp is np else jnp.asarray(w), ys * ys))

    def scaling(self, t):
        """a_i(t) = std of the unnormalized DO coefficients, shape t.shape + (2,)."""
        xp = _xp(t)
        return self._scaled_std(t) * xp.stack([t, t * t], axis=-1)

    def modes(self, x, t=None):
        xp = _xp(x)
        return xp.stack([-xp.cos(x), -xp.sin(x)], axis=-1) / SQRT_PI

    def coefficients(self, t, xi):
        """Unit-variance Y_i(t; xi); finite at t = 0 where they reduce to Hermite chaos."""
        return self._scaled(t, xi) / self._scaled_std(t)

    def do_components(self, x, t, xi):
        """Unnormalized (u_i^DO, Y_i^DO)."""
        xp = _xp(x, t, xi)
        Y = xp.stack([-SQRT_PI * xp.sin(xi * t),
                      SQRT_PI * (xp.cos(xi * t) - xp.exp(-0.5 * self.sigma ** 2 * t * t))], axis=-1)
        return self.modes(x), Y


def advection_exact_components(kind: str, t, x, xi, sigma: float = 0.8):
    """(mean, u_i, Y_i, a_i) in normalized form; DO and BO coincide here."""
    if kind.upper() not in ("DO", "BO"):
        raise ConfigurationError(f"kind must be DO or BO, got {kind!r}")
    if np.any(np.asarray(t) < 0):
        raise DomainError("t must be nonnegative")
    ex = AdvectionExact(sigma)
    x, t, xi = (np.asarray(v, dtype=float) for v in (x, t, xi))
    return ex.mean(x, t), ex.modes(x), ex.coefficients(t, xi), ex.scaling(t)


def bo_normalizers_by_quadrature(t, sigma: float, n: int = 80):
    """alpha_1, alpha_2 from E[sin^2(xi t)] and E[(cos(xi t) - exp(-sigma^2 t^2/2))^2].

    Uses Gauss-Hermite nodes, which converge geometrically for these entire
    integrands; the Gauss-Legendre/inverse-CDF rule only reaches ~1e-4 here.
    """
    nodes, weights = np.polynomial.hermite_e.hermegauss(n)
    xi = sigma * nodes
    w = weights / weights.sum()
    t = np.atleast_1d(np.asarray(t, dtype=float))
    s = np.sin(np.outer(t, xi))
    c = np.cos(np.outer(t, xi)) - np.exp(-0.5 * sigma ** 2 * t * t)[:, None]
    return np.sqrt(np.pi * (s * s) @ w), np.sqrt(np.pi * (c * c) @ w)


def advection_problem(sigma: float = 0.8) -> ProblemSpec:
    """u_t + xi u_x = 0 on [-pi, pi], periodic, u(x, 0) = -sin x."""
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    ex = AdvectionExact(sigma)

    def operator(u, x, t, xi, params, aux=None):
        return -xi[..., 0] * u.d_dx

    def chaos(xi):
        eta = np.asarray(xi, dtype=float)[:, 0] / sigma
        return np.stack([-eta, -(eta * eta - 1.0) / np.sqrt(2.0)], axis=1)

    ic = DeterministicIC(u0=lambda x: -np.sin(x), basis=lambda x: ex.modes(np.asarray(x, dtype=float)),
                         chaos=chaos)
    return ProblemSpec("advection", operator, (-np.pi, np.pi), (0.0, np.pi), Periodic(2 * np.pi), ic,
                       xi_dim=1, xi_distribution="normal", params={}, xi_sigma=float(sigma), exact=ex,
                       y_input_shift=(0.0,), y_input_scale=(float(sigma),))


# -- stochastic Burgers with manufactured solution -------------------------

class BurgersExact:
    """Manufactured u with two uniform(0, 1) inputs and its modal form."""

    def __init__(self, nu: float):
        self.nu = float(nu)

    @staticmethod
    def _parts(x, t, xi):
        xp = _xp(x, t, xi)
        th1, th2 = x - t, 2.0 * x - 3.0 * t
        A, B = 1.5 + xp.sin(t), 1.5 + xp.cos(3.0 * t)
        z1, z2 = 2.0 * xi[..., 0] - 1.0, 2.0 * xi[..., 1] - 1.0
        return xp, th1, th2, A, B, z1, z2

    def solution(self, x, t, xi):
        xp, th1, th2, A, B, z1, z2 = self._parts(x, t, xi)
        return -xp.sin(th1) - SQRT3 * A * z1 * xp.cos(th1) + SQRT3 * B * z2 * xp.cos(th2)

    def derivatives(self, x, t, xi):
        """(u_t, u_x, u_xx) of the manufactured solution."""
        xp, th1, th2, A, B, z1, z2 = self._parts(x, t, xi)
        c1, s1, c2, s2 = xp.cos(th1), xp.sin(th1), xp.cos(th2), xp.sin(th2)
        u_t = (c1 - SQRT3 * z1 * (xp.cos(t) * c1 + A * s1)
               + SQRT3 * z2 * (-3.0 * xp.sin(3.0 * t) * c2 + 3.0 * B * s2))
        u_x = -c1 + SQRT3 * A * z1 * s1 - 2.0 * SQRT3 * B * z2 * s2
        u_xx = s1 + SQRT3 * A * z1 * c1 - 4.0 * SQRT3 * B * z2 * c2
        return u_t, u_x, u_xx

    def forcing(self, x, t, xi):
        """f = u_t + u u_x - nu u_xx for the manufactured u."""
        u = self.solution(x, t, xi)
        u_t, u_x, u_xx = self.derivatives(x, t, xi)
        return u_t + u * u_x - self.nu * u_xx

    def mean(self, x, t):
        xp = _xp(x, t)
        return -xp.sin(x - t)

    def variance(self, x, t):
        xp = _xp(x, t)
        A, B = 1.5 + xp.sin(t), 1.5 + xp.cos(3.0 * t)
        return (A * xp.cos(x - t)) ** 2 + (B * xp.cos(2.0 * x - 3.0 * t)) ** 2

    def scaling(self, t):
        xp = _xp(t)
        return SQRT_PI * xp.stack([1.5 + xp.sin(t), 1.5 + xp.cos(3.0 * t)], axis=-1)

    def modes(self, x, t):
        xp = _xp(x, t)
        return xp.stack([-xp.cos(x - t), xp.cos(2.0 * x - 3.0 * t)], axis=-1) / SQRT_PI

    def coefficients(self, t, xi):
        return SQRT3 * (2.0 * xi - 1.0) + 0.0 * t[..., None]


def burgers_problem(nu: float = 0.1) -> ProblemSpec:
    """u_t + u u_x = nu u_xx + f on [-pi, pi], periodic, manufactured forcing."""
    if nu <= 0:
        raise ConfigurationError("nu must be positive")
    ex = BurgersExact(nu)

    def operator(u, x, t, xi, params, aux=None):
        f = ex.forcing(x, t, xi) if aux is None else aux
        return -u.value * u.d_dx + params["nu"] * u.d2_dx2 + f

    def u0(x, xi):
        x = np.asarray(x, dtype=float)
        return ex.solution(x[None, :], 0.0, np.asarray(xi, dtype=float)[:, None, :])

    return ProblemSpec("burgers", operator, (-np.pi, np.pi), (0.0, np.pi), Periodic(2 * np.pi),
                       StochasticIC(u0), xi_dim=2, xi_distribution="uniform", params={"nu": float(nu)},
                       exact=ex, prepare_aux=lambda x, t, xi: ex.forcing(x, t, xi),
                       ic_reference_modes=lambda x: ex.modes(np.asarray(x, dtype=float), 0.0),
                       y_input_shift=(0.5, 0.5), y_input_scale=(0.5, 0.5))


def burgers_eigenvalue_crossings(t_range, tol: float = 1e-10, samples_per_unit: int = 200):
    """Times in ``t_range`` where a_1(t) = a_2(t), i.e. sin t = cos 3t."""
    t0, t1 = (float(v) for v in t_range)
    if not t1 > t0:
        return []
    f = lambda t: np.sin(t) - np.cos(3.0 * t)
    grid = np.linspace(t0, t1, max(2, int(np.ceil((t1 - t0) * samples_per_unit)) + 1))
    vals = f(grid)
    roots = []
    for k in range(grid.size - 1):
        lo, hi, flo = grid[k], grid[k + 1], vals[k]
        if vals[k] == 0.0:
            roots.append(float(lo))
            continue
        if flo * vals[k + 1] >= 0.0:
            continue
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            fm = f(mid)
            if flo * fm <= 0.0:
                hi = mid
            else:
                lo, flo = mid, fm
        roots.append(0.5 * (lo + hi))
    if vals[-1] == 0.0:
        roots.append(float(grid[-1]))
    return roots


# -- nonlinear diffusion-reaction with random forcing ----------------------

class RandomForcing:
    """f(x; xi) = (1 - x^2) g(x; xi), g ~ GP(1, C), expanded directly in the KL
    modes of the covariance of f so the truncation counts energy of f."""

    def __init__(self, kernel: KernelSpec, n_kl: int, n_grid: int = 101):
        if n_kl < 1:
            raise ConfigurationError("n_kl must be at least 1")
        envelope = lambda x: 1.0 - np.asarray(x, dtype=float) ** 2
        self.kernel = kernel
        self.envelope = envelope
        full = kl_decompose(EnvelopedKernel(kernel, envelope), np.linspace(-1.0, 1.0, n_grid))
        if n_kl > full.n_modes:
            raise ConfigurationError(f"n_kl={n_kl} exceeds the {full.n_modes} grid modes")
        self.full = full
        self.basis: KlBasis = full.truncate(n_kl)
        self.n_kl = n_kl

    def mean(self, x):
        return self.envelope(x) * self.kernel.mean_fn(x)

    def __call__(self, x, xi):
        """Broadcasting evaluation; xi has a trailing axis of length >= n_kl."""
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)[..., :self.n_kl]
        phi = self.basis.evaluate(x) * np.sqrt(np.clip(self.basis.eigenvalues, 0.0, None))
        return self.mean(x) + np.sum(phi * xi, axis=-1)

    def modes(self, x):
        return self.basis.evaluate(np.asarray(x, dtype=float))


def diffusion_reaction_problem(a: float = 0.1, b: float = 0.5, kernel: Optional[KernelSpec] = None,
                               n_kl: int = 19, learnable=(), observations: Optional[ObservationSet] = None,
                               n_grid: int = 101, T: float = 1.0) -> ProblemSpec:
    """u_t = a u_xx + b u^2 + f(x; xi) on [-1, 1], u(+-1) = 0, u(x, 0) = -sin(pi x)."""
    kernel = KernelSpec(1.0, 0.1) if kernel is None else kernel
    forcing = RandomForcing(kernel, n_kl, n_grid)

    def operator(u, x, t, xi, params, aux=None):
        f = forcing(x, xi) if aux is None else aux
        return params["a"] * u.d2_dx2 + params["b"] * u.value ** 2 + f

    def basis(x):
        return forcing.modes(x)

    def chaos(xi):
        return np.asarray(xi, dtype=float)[:, :n_kl]

    ic = DeterministicIC(u0=lambda x: -np.sin(np.pi * np.asarray(x, dtype=float)), basis=basis, chaos=chaos)
    return ProblemSpec("diffusion-reaction", operator, (-1.0, 1.0), (0.0, float(T)), Dirichlet(), ic,
                       xi_dim=n_kl, xi_distribution="mc-normal", params={"a": float(a), "b": float(b)},
                       learnable=frozenset(learnable), observations=observations,
                       prepare_aux=lambda x, t, xi: forcing(x, xi), extras={"forcing": forcing})


def sensor_ic_variant(problem: ProblemSpec, n_sensors: int = 30, noise_sd: float = 0.1,
                      seed: int = 0) -> ProblemSpec:
    """Replace the analytic initial mean by noisy readings at uniform sensors."""
    if n_sensors < 2:
        raise ConfigurationError("need at least two sensors")
    if not isinstance(problem.ic, DeterministicIC):
        raise ConfigurationError("sensor variant needs a deterministic initial condition")
    x = np.linspace(problem.x_domain[0], problem.x_domain[1], int(n_sensors))
    noise = np.random.default_rng(seed).normal(0.0, noise_sd, x.size) if noise_sd > 0 else 0.0
    values = problem.ic.u0(x) + noise
    return problem.replace(sensors=SensorData(x, values, float(noise_sd)))


def initial_components(problem: ProblemSpec, x, pts: StochasticPoints, n_modes: int) -> ICComponents:
    """Modal targets at the start of the problem's time domain."""
    x = np.asarray(x, dtype=float)
    ic = problem.ic
    if isinstance(ic, DeterministicIC):
        basis = np.asarray(ic.basis(x), dtype=float)
        chaos = np.asarray(ic.chaos(pts.points), dtype=float)
        if basis.shape[1] < n_modes or chaos.shape[1] < n_modes:
            raise ConfigurationError(f"initial basis provides {basis.shape[1]} modes, {n_modes} requested")
        vals = np.broadcast_to(np.asarray(ic.u0(x), dtype=float), (pts.n, x.size))
        return initial_components_from_field(vals, pts, x, n_modes, basis=basis, chaos=chaos)
    if isinstance(ic, StochasticIC):
        ref = None if problem.ic_reference_modes is None else problem.ic_reference_modes(x)
        return initial_components_from_field(ic.u0, pts, x, n_modes, reference_modes=ref)
    raise ConfigurationError(f"unsupported initial condition {type(ic).__name__}")


# -- frozen exact solutions --------------------------------------------------

def exact_modal_solution(problem: ProblemSpec, points: Optional[StochasticPoints] = None) -> ModalSolution:
    """Modal solution whose four components are the closed-form normalized ones.

    ``points`` switches to normalizations that are exact under that rule
    where the problem supports it.
    """
    ex = problem.exact
    if ex is None or not hasattr(ex, "modes"):
        raise ConfigurationError(f"problem {problem.name!r} has no closed-form modal components")
    if points is not None and hasattr(ex, "discretized"):
        ex = ex.discretized(points)
    d = problem.xi_dim
    ubar = AnalyticComponent(lambda z: ex.mean(z[:, 0], z[:, 1])[:, None], 2, 1, "ubar")
    a = AnalyticComponent(lambda z: ex.scaling(z[:, 0]), 1, 2, "a")
    u = AnalyticComponent(lambda z: ex.modes(z[:, 0], z[:, 1]), 2, 2, "u")
    if d == 1:
        y = AnalyticComponent(lambda z: ex.coefficients(z[:, 1], z[:, 0]), 2, 2, "y")
    else:
        y = AnalyticComponent(lambda z: ex.coefficients(z[:, d], z[:, :d]), d + 1, 2, "y")
    return ModalSolution(ubar, [a], u, y, 2, problem.x_domain, problem.t_domain, d)
