"""Independent references: Monte Carlo finite differences and the classical
bi-orthogonal (BO) evolution equations with a Monte Carlo bootstrap."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, CrossingError, DivergenceError, ShapeError
from .nn import Jet
from .problems import DeterministicIC, ProblemSpec, StochasticIC
from .quadrature import StochasticPoints, trapezoid_weights


# -- grids and derivatives ---------------------------------------------------

def fd_grid(problem: ProblemSpec, n_x: int) -> np.ndarray:
    """Periodic problems drop the repeated end point; Dirichlet keeps both."""
    a, b = problem.x_domain
    if n_x < 3:
        raise ConfigurationError("finite differences need at least three points")
    if problem.periodic:
        return a + (b - a) * np.arange(n_x) / n_x
    return np.linspace(a, b, n_x)


def fd_weights(problem: ProblemSpec, x) -> np.ndarray:
    """Quadrature weights matching :func:`fd_grid` (rectangle rule when periodic)."""
    if problem.periodic:
        return np.full(x.size, (problem.x_domain[1] - problem.x_domain[0]) / x.size)
    return trapezoid_weights(x)


def fd_jet(u, dx: float, periodic: bool) -> Jet:
    """Second-order central differences along the last axis."""
    if periodic:
        up, um = np.roll(u, -1, axis=-1), np.roll(u, 1, axis=-1)
        return Jet(u, (up - um) / (2 * dx), (up - 2 * u + um) / dx ** 2)
    ux = np.empty_like(u)
    uxx = np.zeros_like(u)
    ux[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2 * dx)
    ux[..., 0] = (-3 * u[..., 0] + 4 * u[..., 1] - u[..., 2]) / (2 * dx)
    ux[..., -1] = (3 * u[..., -1] - 4 * u[..., -2] + u[..., -3]) / (2 * dx)
    uxx[..., 1:-1] = (u[..., 2:] - 2 * u[..., 1:-1] + u[..., :-2]) / dx ** 2
    return Jet(u, ux, uxx)


def _stable_dt(problem: ProblemSpec, dx: float, dt: float, xi) -> None:
    diff = float(problem.params.get("a", problem.params.get("nu", 0.0)))
    if diff > 0 and dt > 0.4 * dx * dx / diff:
        raise ConfigurationError(f"dt={dt} exceeds the diffusive bound 0.4*dx^2/a = {0.4 * dx * dx / diff:.3e}")
    if problem.name == "advection":
        speed = float(np.max(np.abs(xi))) if np.size(xi) else 0.0
        if speed * dt > 2.0 * dx:
            raise ConfigurationError(f"dt={dt} violates the advective bound for |xi| up to {speed:.3g}")


def sample_xi(problem: ProblemSpec, n: int, seed: int) -> StochasticPoints:
    """Monte Carlo samples of the problem's random inputs, weights 1/n."""
    rng = np.random.default_rng(seed)
    d = problem.xi_dim
    if problem.xi_distribution == "normal":
        pts = problem.xi_sigma * rng.standard_normal((n, d))
    elif problem.xi_distribution == "uniform":
        pts = rng.uniform(0.0, 1.0, (n, d))
    else:
        pts = rng.standard_normal((n, d))
    return StochasticPoints(pts, np.full(n, 1.0 / n), "monte-carlo")


class _Rhs:
    """du/dt = N_x[u] on an FD grid for a stack of realizations."""

    def __init__(self, problem: ProblemSpec, x, xi, params=None):
        self.problem = problem
        self.params = dict(problem.params if params is None else params)
        self.dx = float(x[1] - x[0])
        self.X = x[None, :]
        self.XI = np.asarray(xi, dtype=float)[:, None, :]
        self.periodic = problem.periodic
        self.aux = None
        if problem.name == "diffusion-reaction" and problem.prepare_aux is not None:
            self.aux = problem.prepare_aux(self.X, 0.0, self.XI)  # forcing is time-independent

    def __call__(self, u, t: float):
        jet = fd_jet(u, self.dx, self.periodic)
        out = np.asarray(self.problem.operator(jet, self.X, t, self.XI, self.params, self.aux), dtype=float)
        out = np.broadcast_to(out, u.shape).copy()
        if not self.periodic:
            out[..., 0] = 0.0
            out[..., -1] = 0.0
        return out


def _initial_field(problem: ProblemSpec, x, xi) -> np.ndarray:
    ic = problem.ic
    if isinstance(ic, DeterministicIC):
        return np.broadcast_to(np.asarray(ic.u0(x), dtype=float), (xi.shape[0], x.size)).copy()
    if isinstance(ic, StochasticIC):
        return np.asarray(ic.u0(x, xi), dtype=float)
    raise ConfigurationError(f"unsupported initial condition {type(ic).__name__}")


def _rk4(f, u, t, dt):
    k1 = f(u, t)
    k2 = f(u + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(u + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(u + dt * k3, t + dt)
    return u + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def _check_finite(u, t):
    bad = ~np.all(np.isfinite(u), axis=-1)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise DivergenceError(f"realization {idx} became non-finite at t={t:.6g}", sample_index=idx)


def _step_times(t0: float, T: float, dt: float, snapshots):
    n = int(round((T - t0) / dt))
    if n < 1 or not np.isclose(t0 + n * dt, T, rtol=0, atol=1e-9 * max(1.0, abs(T))):
        raise ConfigurationError(f"(T - t0) = {T - t0} must be a positive multiple of dt = {dt}")
    snaps = [T] if snapshots is None else sorted(float(s) for s in snapshots)
    idx = []
    for s in snaps:
        k = int(round((s - t0) / dt))
        if k < 0 or k > n or not np.isclose(t0 + k * dt, s, atol=1e-9 * max(1.0, abs(s))):
            raise ConfigurationError(f"snapshot time {s} is not on the time grid")
        idx.append(k)
    return n, snaps, idx


# -- Monte Carlo ---------------------------------------------------------------

@dataclass
class McEnsemble:
    x: np.ndarray
    times: np.ndarray
    mean: np.ndarray       # (n_times, n_x)
    variance: np.ndarray   # (n_times, n_x)
    n_samples: int
    final: Optional[np.ndarray] = None
    pts: Optional[StochasticPoints] = None
    period: Optional[float] = None

    def at(self, t: float):
        k = int(np.argmin(np.abs(self.times - t)))
        if not np.isclose(self.times[k], t):
            raise ConfigurationError(f"no snapshot at t={t}")
        return self.mean[k], self.variance[k]

    def mean_at(self, x, t: float):
        """Mean at arbitrary x by linear (periodic-aware) interpolation."""
        m, _ = self.at(t)
        return _interp(x, self.x, m, self.period)

    def variance_at(self, x, t: float):
        _, v = self.at(t)
        return _interp(x, self.x, v, self.period)


def _interp(xq, x, f, period):
    xq = np.asarray(xq, dtype=float)
    if period is None:
        return np.interp(xq, x, f)
    return np.interp(xq, x, f, period=period)


def _statistics(u, pts: StochasticPoints):
    # shifted by the first realization so identical samples give exactly zero variance
    w = pts.weights
    d0 = u - u[:1]
    shift = w @ d0
    mean = u[0] + shift
    d = d0 - shift
    var = w @ (d * d)
    if pts.kind == "monte-carlo" and pts.n > 1:
        var = var * pts.n / (pts.n - 1)
    return mean, var


def mc_solve(problem: ProblemSpec, n_samples: int, n_x: int, dt: float, T: Optional[float] = None,
             seed: int = 0, pts: Optional[StochasticPoints] = None, snapshot_times=None,
             keep_final: bool = False, params=None) -> McEnsemble:
    """Integrate every realization with central differences and RK4.

    ``pts`` overrides the random samples (e.g. a quadrature rule, whose
    weights are then used for the statistics).
    """
    t0 = float(problem.t_domain[0])
    T = float(problem.t_domain[1] if T is None else T)
    pts = sample_xi(problem, n_samples, seed) if pts is None else pts
    if pts.dim != problem.xi_dim:
        raise ShapeError(f"samples have dimension {pts.dim}, problem needs {problem.xi_dim}")
    x = fd_grid(problem, n_x)
    _stable_dt(problem, float(x[1] - x[0]), dt, pts.points)
    n, snaps, idx = _step_times(t0, T, dt, snapshot_times)
    f = _Rhs(problem, x, pts.points, params)
    u = _initial_field(problem, x, pts.points)
    means, variances = {}, {}
    if 0 in idx:
        means[0], variances[0] = _statistics(u, pts)
    for k in range(1, n + 1):
        u = _rk4(f, u, t0 + (k - 1) * dt, dt)
        if k % 100 == 0 or k == n or k in idx:
            _check_finite(u, t0 + k * dt)
        if k in idx:
            means[k], variances[k] = _statistics(u, pts)
    period = (problem.x_domain[1] - problem.x_domain[0]) if problem.periodic else None
    return McEnsemble(x, np.array(snaps), np.stack([means[k] for k in idx]),
                      np.stack([variances[k] for k in idx]), pts.n, u if keep_final else None, pts, period)


def mc_evolve(problem: ProblemSpec, x, pts: StochasticPoints, dt: float, t_end: float, params=None):
    """Realizations on the FD grid at ``t_end`` (used for the BO bootstrap)."""
    t0 = float(problem.t_domain[0])
    f = _Rhs(problem, x, pts.points, params)
    u = _initial_field(problem, x, pts.points)
    n = int(round((t_end - t0) / dt))
    for k in range(n):
        u = _rk4(f, u, t0 + k * dt, dt)
    _check_finite(u, t0 + n * dt)
    return u


# -- classical BO ----------------------------------------------------------------

@dataclass
class BoState:
    t: float
    ubar: np.ndarray      # (n_x,)
    modes: np.ndarray     # (n_x, N) scaled modes carrying sqrt(lambda)
    Y: np.ndarray         # (n_s, N)

    def eigenvalues(self, w) -> np.ndarray:
        return w @ (self.modes * self.modes)


@dataclass
class BoTrajectory:
    x: np.ndarray
    weights: np.ndarray
    pts: StochasticPoints
    snapshots: list                 # BoState at snapshot times
    times: np.ndarray               # every step
    eigenvalues: np.ndarray         # (n_steps + 1, N)
    s_diagonal: np.ndarray          # (n_steps + 1, N)
    orthogonality: dict = field(default_factory=dict)

    def at(self, t: float) -> BoState:
        for s in self.snapshots:
            if np.isclose(s.t, t):
                return s
        raise ConfigurationError(f"no BO snapshot at t={t}")

    def mean_variance(self, t: float):
        s = self.at(t)
        C = (self.pts.weights[:, None] * s.Y).T @ s.Y
        return s.ubar, np.einsum("ki,ij,kj->k", s.modes, C, s.modes)


def compute_G_M_S(state: BoState, problem: ProblemSpec, x, pts: StochasticPoints, params=None,
                  tol_cross: float = 1e-8, rhs: Optional[_Rhs] = None, nonlinear=None):
    """(G, M, S) of the closed-form BO system; raises on near-equal eigenvalues."""
    w = fd_weights(problem, x)
    lam = state.eigenvalues(w)
    if nonlinear is None:
        rhs = _Rhs(problem, x, pts.points, params) if rhs is None else rhs
        u = state.ubar[None, :] + state.Y @ state.modes.T
        nonlinear = rhs(u, state.t)
    ENY = (pts.weights[:, None] * nonlinear).T @ state.Y          # (n_x, N): E[N Y_j]
    G = state.modes.T @ (w[:, None] * ENY)                       # G_ij = <E[N Y_j], u_i>
    N = lam.size
    gap = lam[None, :] - lam[:, None]
    scale = max(float(np.max(np.abs(lam))), 1e-300)
    off = ~np.eye(N, dtype=bool)
    if N > 1 and np.min(np.abs(gap[off])) <= tol_cross * scale:
        i, j = np.unravel_index(np.argmin(np.where(off, np.abs(gap), np.inf)), gap.shape)
        raise CrossingError(f"eigenvalues {i + 1} and {j + 1} meet at t={state.t:.6g}",
                            time=state.t, pair=(int(i), int(j)))
    M = np.zeros((N, N))
    M[off] = ((G + G.T)[off]) / gap[off]
    S = G + lam[:, None] * M
    S[np.diag_indices(N)] = np.diag(G)
    return G, M, S


def _bo_rhs(state: BoState, problem, x, w, pts, rhs, tol_cross):
    u = state.ubar[None, :] + state.Y @ state.modes.T
    Nu = rhs(u, state.t)
    G, M, S = compute_G_M_S(state, problem, x, pts, tol_cross=tol_cross, nonlinear=Nu)
    lam = state.eigenvalues(w)
    EN = pts.weights @ Nu
    ENY = (pts.weights[:, None] * Nu).T @ state.Y
    proj = (Nu - EN[None, :]) @ (w[:, None] * state.modes)      # <N - E[N], u_i>
    dY = (proj - state.Y @ S.T) / lam[None, :]
    dU = ENY - state.modes @ M.T
    return EN, dU, dY, S


def bootstrap_state(problem: ProblemSpec, N: int, x, pts: StochasticPoints, dt: float,
                    bootstrap_t: float, params=None) -> BoState:
    """Monte Carlo until ``bootstrap_t`` then a KL split of the ensemble."""
    t0 = float(problem.t_domain[0])
    u = _initial_field(problem, x, pts.points) if bootstrap_t <= t0 else \
        mc_evolve(problem, x, pts, dt, bootstrap_t, params)
    w = fd_weights(problem, x)
    mean = pts.weights @ u
    d = u - mean
    cov = (d * pts.weights[:, None]).T @ d
    sw = np.sqrt(w)
    lam, vec = np.linalg.eigh(sw[:, None] * cov * sw[None, :])
    order = np.argsort(lam)[::-1][:N]
    lam, phi = lam[order], vec[:, order] / sw[:, None]
    if np.any(lam <= 0):
        raise ConfigurationError(f"ensemble carries fewer than {N} energetic modes at t={bootstrap_t}")
    proj = d @ (w[:, None] * phi)
    Y = proj / np.sqrt(lam)[None, :]
    return BoState(max(bootstrap_t, t0), mean, phi * np.sqrt(lam)[None, :], Y)


def bo_classical_solve(problem: ProblemSpec, N: int, n_x: int, dt: float, T: Optional[float] = None,
                       bootstrap_t: float = 0.01, n_samples: int = 1000, seed: int = 0,
                       pts: Optional[StochasticPoints] = None, snapshot_times=None,
                       tol_cross: float = 1e-8, params=None) -> BoTrajectory:
    """Classical BO evolution, AB3 in time with RK4 start-up steps.

    Raises :class:`CrossingError` when two eigenvalues meet or swap order.
    """
    T = float(problem.t_domain[1] if T is None else T)
    pts = sample_xi(problem, n_samples, seed) if pts is None else pts
    x = fd_grid(problem, n_x)
    w = fd_weights(problem, x)
    _stable_dt(problem, float(x[1] - x[0]), dt, pts.points)
    state = bootstrap_state(problem, N, x, pts, dt, bootstrap_t, params)
    t_start = state.t
    n, snaps, idx = _step_times(t_start, T, dt, snapshot_times)
    rhs = _Rhs(problem, x, pts.points, params)

    def F(s: BoState):
        EN, dU, dY, S = _bo_rhs(s, problem, x, w, pts, rhs, tol_cross)
        return (EN, dU, dY), np.diag(S).copy()

    def add(s: BoState, incs, t):
        return BoState(t, s.ubar + incs[0], s.modes + incs[1], s.Y + incs[2])

    def scaled(k, h):
        return tuple(h * v for v in k)

    lam_hist = [state.eigenvalues(w)]
    snaps_out = [state] if 0 in idx else []
    history = []
    k0, s0 = F(state)
    sdiag = [s0]
    max_offdiag_Y, max_offdiag_U = 0.0, 0.0
    for step in range(1, n + 1):
        t = state.t
        if step <= 2:
            k1 = k0
            k2, _ = F(add(state, scaled(k1, 0.5 * dt), t + 0.5 * dt))
            k3, _ = F(add(state, scaled(k2, 0.5 * dt), t + 0.5 * dt))
            k4, _ = F(add(state, scaled(k3, dt), t + dt))
            inc = tuple(dt * (a + 2 * b + 2 * c + d) / 6.0 for a, b, c, d in zip(k1, k2, k3, k4))
        else:
            fm1, fm2 = history[-1], history[-2]
            inc = tuple(dt * (23 * a - 16 * b + 5 * c) / 12.0 for a, b, c in zip(k0, fm1, fm2))
        history.append(k0)
        state = add(state, inc, t_start + step * dt)
        lam = state.eigenvalues(w)
        if not np.all(np.isfinite(lam)) or not np.all(np.isfinite(state.Y)):
            raise DivergenceError(f"BO system became non-finite at t={state.t:.6g}")
        prev = lam_hist[-1]
        swapped = np.flatnonzero(np.diff(lam) > 0)
        if swapped.size and not np.any(np.diff(prev)[swapped] > 0):
            i = int(swapped[0])
            raise CrossingError(f"eigenvalues {i + 1} and {i + 2} crossed near t={state.t:.6g}",
                                time=state.t, pair=(i, i + 1))
        lam_hist.append(lam)
        k0, s_d = F(state)
        sdiag.append(s_d)
        C = (pts.weights[:, None] * state.Y).T @ state.Y
        max_offdiag_Y = max(max_offdiag_Y, float(np.max(np.abs(C - np.diag(np.diag(C))))))
        Gm = state.modes.T @ (w[:, None] * state.modes)
        nrm = np.sqrt(np.outer(np.diag(Gm), np.diag(Gm)))
        max_offdiag_U = max(max_offdiag_U, float(np.max(np.abs(Gm / nrm - np.eye(N)))))
        if step in idx:
            snaps_out.append(state)
        if len(history) > 3:
            history.pop(0)
    times = t_start + dt * np.arange(n + 1)
    return BoTrajectory(x, w, pts, snaps_out, times, np.array(lam_hist), np.array(sdiag),
                        {"max_offdiag_Y": max_offdiag_Y, "max_offdiag_u": max_offdiag_U})


# -- tables ----------------------------------------------------------------------

def write_table(path, header: Sequence[str], columns: Sequence) -> None:
    """Comma-separated columns with a header row and 17 significant digits."""
    cols = [np.ravel(np.asarray(c, dtype=float)) for c in columns]
    if len({c.size for c in cols}) != 1:
        raise ShapeError("table columns differ in length")
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def read_table(path) -> dict:
    """Column name -> numpy array."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, j] for j, name in enumerate(header)}


def write_statistics(path, x, times, mean, variance) -> None:
    """Long-format (x, t, mean, variance) rows."""
    X, Tm = np.meshgrid(np.asarray(x), np.asarray(times))
    write_table(path, ("x", "t", "mean", "variance"), (X, Tm, mean, variance))


def read_statistics(path):
    """(x, times, mean (n_t, n_x), variance) from :func:`write_statistics` output."""
    tab = read_table(path)
    times = np.unique(tab["t"])
    x = tab["x"][tab["t"] == times[0]]
    shape = (times.size, x.size)
    return x, times, tab["mean"].reshape(shape), tab["variance"].reshape(shape)


def write_bo_tables(prefix, traj: BoTrajectory) -> list:
    """Eigenvalue, mode and coefficient tables of every BO snapshot; returns the paths."""
    prefix = str(prefix)
    N = traj.eigenvalues.shape[1]
    t_idx = np.repeat(traj.times, N)
    i_idx = np.tile(np.arange(1, N + 1), traj.times.size)
    paths = [prefix + "-eigenvalues.csv", prefix + "-modes.csv", prefix + "-coefficients.csv",
             prefix + "-statistics.csv"]
    write_table(paths[0], ("t", "i", "lambda"), (t_idx, i_idx, traj.eigenvalues))
    rows_m, rows_y = [], []
    for s in traj.snapshots:
        nx, ns = traj.x.size, s.Y.shape[0]
        for i in range(N):
            rows_m.append(np.column_stack([traj.x, np.full(nx, s.t), np.full(nx, i + 1), s.modes[:, i]]))
            rows_y.append(np.column_stack([np.arange(ns), np.full(ns, s.t), np.full(ns, i + 1), s.Y[:, i]]))
    m, y = np.vstack(rows_m), np.vstack(rows_y)
    write_table(paths[1], ("x", "t", "i", "mode"), m.T)
    write_table(paths[2], ("sample", "t", "i", "Y"), y.T)
    times = [s.t for s in traj.snapshots]
    mv = [traj.mean_variance(t) for t in times]
    write_statistics(paths[3], traj.x, times, np.stack([a for a, _ in mv]), np.stack([b for _, b in mv]))
    return paths
