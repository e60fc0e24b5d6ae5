"""Compare trained modal solutions with closed-form or reference data."""
from __future__ import annotations

import numpy as np

from .metrics import field_errors, modal_errors
from .modal import ModalSolution, mean_field, modal_components, variance_field
from .problems import ProblemSpec
from .quadrature import StochasticPoints


def candidate_fields(ms: ModalSolution, x, t: float, pts: StochasticPoints) -> dict:
    ub, a, U, Y = modal_components(ms, x, t, pts)
    return dict(mean=np.asarray(ub), variance=np.asarray(variance_field(ms, x, t, pts)),
                a=np.asarray(a), modes=np.asarray(U), Y=np.asarray(Y))


def exact_fields(problem: ProblemSpec, x, t: float, pts: StochasticPoints) -> dict:
    """Closed-form statistics and normalized components at time t."""
    ex = problem.exact
    x = np.asarray(x, dtype=float)
    tt = np.full_like(x, t)
    out = dict(mean=ex.mean(x, tt), variance=ex.variance(x, tt))
    if hasattr(ex, "modes"):
        ts = np.array(float(t))
        xi = pts.points[:, 0] if problem.xi_dim == 1 else pts.points
        out.update(a=np.asarray(ex.scaling(ts)), modes=ex.modes(x, tt),
                   Y=np.asarray(ex.coefficients(np.full(pts.n, float(t)), xi)))
    return out


def compare_with_exact(ms, problem: ProblemSpec, t: float, pts: StochasticPoints,
                       n_grid: int = 201) -> dict:
    x = np.linspace(problem.x_domain[0], problem.x_domain[1], n_grid)
    piece = ms.piece_at(t) if hasattr(ms, "piece_at") else ms
    return modal_errors(candidate_fields(piece, x, t, pts), exact_fields(problem, x, t, pts), x, pts)


def compare_statistics(ms, x, t: float, pts: StochasticPoints, mean_ref, var_ref) -> dict:
    """Mean and variance errors against reference arrays on ``x``."""
    piece = ms.piece_at(t) if hasattr(ms, "piece_at") else ms
    return {"mean": field_errors(np.asarray(mean_field(piece, x, t)), mean_ref, x),
            "variance": field_errors(np.asarray(variance_field(piece, x, t, pts)), var_ref, x)}
