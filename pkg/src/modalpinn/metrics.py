"""Error norms between candidate and reference fields on a common grid."""
from __future__ import annotations

import numpy as np

from .errors import DegenerateReferenceError, ShapeError
from .modal import match_modes
from .quadrature import StochasticPoints, trapezoid_weights


def l2_norm(values, grid) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.sqrt(trapezoid_weights(grid) @ (v * v)))


def l2_error(candidate, reference, grid) -> float:
    c, r = np.asarray(candidate, dtype=float), np.asarray(reference, dtype=float)
    if c.shape != r.shape:
        raise ShapeError(f"candidate {c.shape} and reference {r.shape} differ")
    return l2_norm(c - r, grid)


def relative_l2_error(candidate, reference, grid) -> float:
    ref = l2_norm(reference, grid)
    if ref == 0.0:
        raise DegenerateReferenceError("reference field is identically zero")
    return l2_error(candidate, reference, grid) / ref


def rmse(candidate, reference, weights=None) -> float:
    """Root mean square over sample points (optionally weighted)."""
    c, r = np.asarray(candidate, dtype=float), np.asarray(reference, dtype=float)
    if c.shape != r.shape:
        raise ShapeError(f"candidate {c.shape} and reference {r.shape} differ")
    d2 = (c - r) ** 2
    if weights is None:
        return float(np.sqrt(np.mean(d2)))
    return float(np.sqrt(np.asarray(weights) @ d2))


def field_errors(candidate, reference, grid) -> dict:
    """L2 and relative L2 of one field on the grid."""
    out = {"l2": l2_error(candidate, reference, grid)}
    try:
        out["rel_l2"] = relative_l2_error(candidate, reference, grid)
    except DegenerateReferenceError:
        out["rel_l2"] = float("nan")
    return out


def modal_errors(cand: dict, ref: dict, grid, pts: StochasticPoints) -> dict:
    """Errors of mean, variance, a_i, u_i, Y_i after mode matching.

    Dicts carry ``mean`` (nx,), ``variance`` (nx,), ``a`` (N,), ``modes``
    (nx, N) and ``Y`` (n_xi, N).  Candidate modes are permuted and
    sign-flipped (with their Y) to best match the reference.
    """
    out = {"mean": field_errors(cand["mean"], ref["mean"], grid),
           "variance": field_errors(cand["variance"], ref["variance"], grid)}
    if "modes" not in ref or ref["modes"] is None:
        return out
    perm, signs = match_modes(cand["modes"], ref["modes"], grid)
    modes = np.asarray(cand["modes"])[:, perm] * signs
    Y = np.asarray(cand["Y"])[:, perm] * signs
    a = np.asarray(cand["a"])[perm]
    for i in range(modes.shape[1]):
        out[f"a{i + 1}"] = {"abs": float(abs(a[i] - ref["a"][i])),
                            "rel": float(abs(a[i] - ref["a"][i]) / abs(ref["a"][i])) if ref["a"][i] else float("nan")}
        out[f"u{i + 1}"] = field_errors(modes[:, i], ref["modes"][:, i], grid)
        out[f"Y{i + 1}"] = {"rmse": rmse(Y[:, i], ref["Y"][:, i], pts.weights)}
    return out
