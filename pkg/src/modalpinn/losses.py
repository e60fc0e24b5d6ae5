"""Weak-form residuals, penalty terms and the weighted total loss.

Every term is computed from the component jets on the fixed training tensor
(x_k, t_s, xi_l).  Spatial integrals use trapezoid weights on the x grid,
expectations use the stochastic point weights.  The public ``mse_*``
helpers evaluate a single term; :func:`make_loss` shares one field
evaluation across all terms for training.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np

from .errors import ConfigurationError, ShapeError
from .modal import ICComponents, ModalFields, ModalSolution, modal_fields, tensor_jet
from .problems import Dirichlet, ObservationSet, ProblemSpec, SensorData
from .quadrature import StochasticPoints, TrainingGrid, trapezoid_weights

DEFAULT_WEIGHTS = (1.0, 100.0, 0.1)
OBSERVATION_WEIGHT = 100.0
CONSTRAINTS = ("DO", "BO")


@jax.tree_util.register_dataclass
@dataclass
class LossBreakdown:
    mse_w: jnp.ndarray
    mse_ic: jnp.ndarray
    mse_bc: jnp.ndarray
    mse_constraint: jnp.ndarray
    mse_0: jnp.ndarray
    mse_obs: jnp.ndarray
    total: jnp.ndarray
    constraint_kind: str = field(default="DO", metadata=dict(static=True))
    weights: tuple = field(default=DEFAULT_WEIGHTS, metadata=dict(static=True))

    FIELDS = ("total", "mse_w", "mse_ic", "mse_bc", "mse_constraint", "mse_0", "mse_obs")

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in self.FIELDS}


def _check_kind(kind: str) -> str:
    kind = str(kind).upper()
    if kind not in CONSTRAINTS:
        raise ConfigurationError(f"constraint kind must be DO or BO, got {kind!r}")
    return kind


def total_loss(mse_w=0.0, mse_ic=0.0, mse_bc=0.0, mse_do=None, mse_bo=None, mse_0=0.0,
               mse_obs=0.0, constraint_kind: Optional[str] = None, weights=DEFAULT_WEIGHTS,
               obs_weight: float = OBSERVATION_WEIGHT) -> LossBreakdown:
    """LOSS = w_w MSE_w + w_icbc (MSE_IC + MSE_BC + MSE_DO/BO) + w_reg MSE_0 (+ data)."""
    if mse_do is not None and mse_bo is not None:
        raise ConfigurationError("a loss breakdown holds either a DO or a BO constraint term, not both")
    if constraint_kind is None:
        constraint_kind = "BO" if mse_bo is not None else "DO"
    kind = _check_kind(constraint_kind)
    if (kind == "DO" and mse_bo is not None) or (kind == "BO" and mse_do is not None):
        raise ConfigurationError(f"constraint term does not match constraint kind {kind}")
    mse_c = mse_bo if kind == "BO" else mse_do
    mse_c = 0.0 if mse_c is None else mse_c
    w_w, w_icbc, w_reg = weights
    total = w_w * mse_w + w_icbc * (mse_ic + mse_bc + mse_c) + w_reg * mse_0 + obs_weight * mse_obs
    a = lambda v: jnp.asarray(v, dtype=jnp.float64)
    return LossBreakdown(a(mse_w), a(mse_ic), a(mse_bc), a(mse_c), a(mse_0), a(mse_obs), a(total),
                         kind, tuple(float(w) for w in weights))


# -- term kernels on precomputed fields ----------------------------------------

def _broadcast_points(x, t, xi):
    return (jnp.asarray(x)[:, None, None], jnp.asarray(t)[None, :, None],
            jnp.asarray(xi)[None, None, :, :])


def residual_field(fields: ModalFields, problem: ProblemSpec, x, t, xi, params=None, aux=None):
    """r = u_t - N_x[u] on the (nx, nt, n_xi) tensor."""
    u = tensor_jet(fields)
    if u.d_dt is None or u.d_dx is None:
        raise ConfigurationError("residual needs the time and space derivative jets")
    X, T, XI = _broadcast_points(x, t, xi)
    params = problem.params if params is None else params
    return u.d_dt - problem.operator(u, X, T, XI, params, aux)


def _weak_from_r(r, fields: ModalFields, wx, wxi):
    e1 = jnp.einsum("l,ksl->ks", wxi, r)
    if fields.U is None:
        return e1, None, None
    e2 = jnp.einsum("k,ksl,ksi->sli", wx, r, fields.U.value)
    e3 = jnp.einsum("l,ksl,sli->ksi", wxi, r, fields.Y.value)
    return e1, e2, e3


def mse_weak(e1, e2=None, e3=None):
    """(1/(nx nt)) sum e1^2 + (1/(N nt n_xi)) sum e2^2 + (1/(N nx nt)) sum e3^2."""
    out = jnp.mean(e1 ** 2)
    if e2 is not None:
        out = out + jnp.mean(e2 ** 2) + jnp.mean(e3 ** 2)
    return out


def _mse_ic(ms: ModalSolution, ic: ICComponents, x, pts_xi, t0: float,
            sensors: Optional[SensorData] = None):
    x = jnp.asarray(x)
    f0 = modal_fields(ms, x, jnp.array([t0]), pts_xi, derivatives=False)
    if sensors is not None:
        xs = jnp.asarray(sensors.locations)
        ub = ms.ubar(jnp.stack([xs, jnp.full_like(xs, t0)], axis=-1))[:, 0]
        out = jnp.mean((ub - jnp.asarray(sensors.values)) ** 2)
    else:
        out = jnp.mean((f0.ubar.value[:, 0] - jnp.asarray(ic.ubar)) ** 2)
    if ms.n_modes == 0:
        return out
    out = out + jnp.mean((f0.U.value[:, 0, :] - jnp.asarray(ic.modes)) ** 2)
    out = out + jnp.mean((f0.A.value[0] - jnp.asarray(ic.a)) ** 2)
    out = out + jnp.mean((f0.Y.value[0] - jnp.asarray(ic.Y)) ** 2)
    return out


def _cov_Y(Yv, wxi):
    return jnp.einsum("l,sli,slj->sij", wxi, Yv, Yv)


def _mse_bc(fields: ModalFields, problem: ProblemSpec, x, t, xi, wxi):
    if not isinstance(problem.bc, Dirichlet):
        raise ConfigurationError("boundary penalty applies to Dirichlet problems; periodicity is "
                                 "built into the network embedding")
    x = np.asarray(x)
    if not (np.isclose(x[0], problem.x_domain[0]) and np.isclose(x[-1], problem.x_domain[1])):
        raise ConfigurationError("training grid must include both boundary points")
    t = jnp.asarray(t)
    xi = jnp.asarray(xi)
    C = None if fields.U is None else _cov_Y(fields.Y.value, wxi)
    out = 0.0
    for k in (0, -1):
        h = problem.bc.h(jnp.asarray(x[k]), t[:, None], xi[None, :, :])  # (nt, n)
        h = jnp.broadcast_to(h, (t.shape[0], xi.shape[0]))
        out = out + jnp.mean((fields.ubar.value[k] - h @ wxi) ** 2)
        if fields.U is not None:
            AU = fields.A.value * fields.U.value[k]  # (nt, N)
            lhs = jnp.einsum("sij,sj->si", C, AU)
            rhs = jnp.einsum("l,sl,sli->si", wxi, h, fields.Y.value)
            out = out + jnp.mean((lhs - rhs) ** 2)
    return out


def _mse_constraint(fields: ModalFields, kind: str, wx, wxi):
    if fields.U is None:
        return jnp.asarray(0.0)
    U, Y = fields.U, fields.Y
    if U.d_dt is None or Y.d_dt is None:
        raise ConfigurationError("constraint terms need time derivatives of U and Y")
    mean_Y = jnp.einsum("l,sli->si", wxi, Y.value)
    P = jnp.einsum("k,ksi,ksj->sij", wx, U.d_dt, U.value)   # <dU_i/dt, U_j>
    Q = jnp.einsum("l,sli,slj->sij", wxi, Y.value, Y.d_dt)   # E[Y_i dY_j/dt]
    out = jnp.mean(mean_Y ** 2)
    if kind == "DO":
        return out + jnp.mean(P ** 2) + jnp.mean(jnp.diagonal(Q, axis1=1, axis2=2) ** 2)
    sym = lambda M: M + jnp.swapaxes(M, 1, 2)
    # the stochastic term carries 1/(N n_t) although it sums over i and j
    return out + jnp.mean(sym(P) ** 2) + Q.shape[-1] * jnp.mean(sym(Q) ** 2)


def _mse_obs(ms: ModalSolution, obs: Optional[ObservationSet]):
    if obs is None:
        return jnp.asarray(0.0)
    pred = ms.ubar(jnp.stack([jnp.asarray(obs.x), jnp.asarray(obs.t)], axis=-1))[:, 0]
    return jnp.mean((pred - jnp.asarray(obs.values)) ** 2)


# -- public single-term helpers -------------------------------------------

def _aux(problem, grid: TrainingGrid):
    if problem.prepare_aux is None:
        return None
    X, T, XI = _broadcast_points(grid.x, grid.t, grid.xi.points)
    return problem.prepare_aux(np.asarray(X), np.asarray(T), np.asarray(XI))


def weak_residuals(ms: ModalSolution, problem: ProblemSpec, grid: TrainingGrid, params=None):
    """(e1[k, s], e2[s, l, i], e3[k, s, i]); e2/e3 are None when N = 0."""
    f = modal_fields(ms, grid.x, grid.t, grid.xi.points)
    r = residual_field(f, problem, grid.x, grid.t, grid.xi.points, params, _aux(problem, grid))
    return _weak_from_r(r, f, jnp.asarray(grid.x_weights), jnp.asarray(grid.xi.weights))


def mse_regularization(ms: ModalSolution, problem: ProblemSpec, grid: TrainingGrid, params=None):
    f = modal_fields(ms, grid.x, grid.t, grid.xi.points)
    r = residual_field(f, problem, grid.x, grid.t, grid.xi.points, params, _aux(problem, grid))
    return jnp.mean(r ** 2)


def mse_ic(ms: ModalSolution, ic: ICComponents, x, pts: StochasticPoints, t0: float,
           sensors: Optional[SensorData] = None):
    return _mse_ic(ms, ic, x, jnp.asarray(pts.points), t0, sensors)


def mse_bc(ms: ModalSolution, problem: ProblemSpec, x, pts: StochasticPoints, times):
    if not isinstance(problem.bc, Dirichlet):
        raise ConfigurationError("boundary penalty applies to Dirichlet problems; periodicity is "
                                 "built into the network embedding")
    xb = np.array([problem.x_domain[0], problem.x_domain[1]])
    f = modal_fields(ms, xb, times, pts.points, derivatives=False)
    return _mse_bc(f, problem, xb, times, pts.points, jnp.asarray(pts.weights))


def mse_do(ms: ModalSolution, x, pts: StochasticPoints, times):
    f = modal_fields(ms, x, times, pts.points, second=False)
    return _mse_constraint(f, "DO", jnp.asarray(trapezoid_weights(x)), jnp.asarray(pts.weights))


def mse_bo(ms: ModalSolution, x, pts: StochasticPoints, times):
    f = modal_fields(ms, x, times, pts.points, second=False)
    return _mse_constraint(f, "BO", jnp.asarray(trapezoid_weights(x)), jnp.asarray(pts.weights))


# -- combined loss for training ------------------------------------------------

def make_loss(problem: ProblemSpec, grid: TrainingGrid, ic: ICComponents, constraint_kind: str,
              weights=DEFAULT_WEIGHTS, obs_weight: float = OBSERVATION_WEIGHT):
    """Return ``loss(ms, params) -> LossBreakdown`` sharing one field evaluation.

    ``params`` maps problem parameter names to (possibly traced) values; it
    overrides ``problem.params`` entry by entry.
    """
    kind = _check_kind(constraint_kind)
    x, t = np.asarray(grid.x), np.asarray(grid.t)
    xi = jnp.asarray(grid.xi.points)
    wx, wxi = jnp.asarray(grid.x_weights), jnp.asarray(grid.xi.weights)
    if ic.ubar.shape != x.shape:
        raise ShapeError(f"initial mean target has shape {ic.ubar.shape}, grid has {x.shape}")
    aux = _aux(problem, grid)
    aux = None if aux is None else jnp.asarray(aux)
    t0 = float(problem.t_domain[0])
    dirichlet = isinstance(problem.bc, Dirichlet)

    def loss(ms: ModalSolution, params: Optional[dict] = None) -> LossBreakdown:
        p = dict(problem.params)
        if params:
            p.update(params)
        f = modal_fields(ms, x, t, xi)
        r = residual_field(f, problem, x, t, xi, p, aux)
        e1, e2, e3 = _weak_from_r(r, f, wx, wxi)
        m_w = mse_weak(e1, e2, e3)
        m_ic = _mse_ic(ms, ic, x, xi, t0, problem.sensors)
        m_bc = _mse_bc(f, problem, x, t, xi, wxi) if dirichlet else 0.0
        m_c = _mse_constraint(f, kind, wx, wxi)
        m_0 = jnp.mean(r ** 2)
        m_obs = _mse_obs(ms, problem.observations)
        terms = dict(mse_do=m_c) if kind == "DO" else dict(mse_bo=m_c)
        return total_loss(m_w, m_ic, m_bc, mse_0=m_0, mse_obs=m_obs, constraint_kind=kind,
                          weights=weights, obs_weight=obs_weight, **terms)

    return loss


# -- loss-history log ----------------------------------------------------------

LOG_COLUMNS = ("epoch",) + LossBreakdown.FIELDS


def write_loss_log(path, history, params_history=None) -> None:
    """CSV with one row per epoch; ``history`` rows are dicts of LossBreakdown fields."""
    extra = sorted(params_history[0]) if params_history else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(LOG_COLUMNS) + extra)
        for k, row in enumerate(history):
            vals = [k + 1] + [f"{row[c]:.17g}" for c in LossBreakdown.FIELDS]
            vals += [f"{params_history[k][name]:.17g}" for name in extra]
            w.writerow(vals)


def read_loss_log(path) -> dict:
    """Column name -> numpy array."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return {name: data[:, j] for j, name in enumerate(header)}
