"""Four-network modal representation u = ubar + sum_i a_i u_i Y_i.

Also hosts the Karhunen-Loeve tools (Nystrom eigen-decomposition of a
covariance kernel, Gaussian random field sampling) and the construction of
initial modal components from an initial field.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from .errors import ConfigurationError, DataError, DegenerateModeError, ShapeError
from .nn import Jet, Mlp, mlp_from_record, mlp_to_record
from .quadrature import StochasticPoints, trapezoid_weights


@jax.tree_util.register_static
class AnalyticComponent:
    """Closed-form stand-in for a network, ``fn(inputs (n, d)) -> (n, m)``.

    Jets come from forward-mode differentiation of ``fn``; used to freeze a
    modal solution to exact components.
    """

    def __init__(self, fn: Callable, input_dim: int, output_dim: int, name: str = ""):
        self.fn = fn
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.name = name

    def __call__(self, inputs):
        inputs = jnp.asarray(inputs, dtype=jnp.float64)
        if inputs.shape[-1] != self.input_dim:
            raise ShapeError(f"{self.name or 'component'} expects {self.input_dim} inputs")
        return self.fn(inputs)

    def jet(self, inputs: Jet) -> Jet:
        v = inputs.value
        fn = self.__call__
        out = fn(v)
        d_dx = d2 = d_dt = None
        if inputs.d_dx is not None:
            first = lambda z: jax.jvp(fn, (z,), (inputs.d_dx,))[1]
            d_dx = first(v)
            if inputs.d2_dx2 is not None:
                d2 = jax.jvp(first, (v,), (inputs.d_dx,))[1] + jax.jvp(fn, (v,), (inputs.d2_dx2,))[1]
        if inputs.d_dt is not None:
            d_dt = jax.jvp(fn, (v,), (inputs.d_dt,))[1]
        return Jet(out, d_dx, d2, d_dt)


@jax.tree_util.register_dataclass
@dataclass
class ModalSolution:
    """ubar_net(x, t) -> 1, a_nets(t) -> N (concatenated), u_net(x, t) -> N,
    y_net(xi_1..xi_d, t) -> N.  With ``n_modes == 0`` only ``ubar`` is used."""

    ubar: object
    a_nets: list
    u_net: object
    y_net: object
    n_modes: int = field(metadata=dict(static=True))
    x_domain: tuple = field(default=(-1.0, 1.0), metadata=dict(static=True))
    t_domain: tuple = field(default=(0.0, 1.0), metadata=dict(static=True))
    xi_dim: int = field(default=1, metadata=dict(static=True))


def _pairs(x, t):
    """Inputs (len(x)*len(t), 2) ordered x-major."""
    X, T = jnp.meshgrid(jnp.asarray(x, dtype=jnp.float64), jnp.asarray(t, dtype=jnp.float64), indexing="ij")
    return jnp.stack([X.ravel(), T.ravel()], axis=-1)


def _xi_t(t, xi):
    """Inputs (len(t)*n_xi, d+1) ordered t-major, time in the last column."""
    t = jnp.asarray(t, dtype=jnp.float64)
    xi = jnp.asarray(xi, dtype=jnp.float64)
    nt, n = t.shape[0], xi.shape[0]
    return jnp.concatenate([jnp.tile(xi, (nt, 1)), jnp.repeat(t, n)[:, None]], axis=-1)


def _reshape(jet: Jet, shape) -> Jet:
    return Jet(*(None if a is None else a.reshape(shape) for a in
                 (jet.value, jet.d_dx, jet.d2_dx2, jet.d_dt)))


def _a_jet(ms: ModalSolution, t, derivative: bool = True) -> Jet:
    inp = Jet.seed(jnp.asarray(t, dtype=jnp.float64)[:, None], None, 0 if derivative else None)
    jets = [net.jet(inp) for net in ms.a_nets]
    if len(jets) == 1:
        return jets[0]
    cat = lambda attr: (None if getattr(jets[0], attr) is None
                        else jnp.concatenate([getattr(j, attr) for j in jets], axis=-1))
    return Jet(cat("value"), None, None, cat("d_dt"))


@jax.tree_util.register_dataclass
@dataclass
class ModalFields:
    """Component jets on a training grid.

    ubar: (nx, nt); U: (nx, nt, N); A: (nt, N); Y: (nt, n_xi, N).
    """

    ubar: Jet
    U: Optional[Jet]
    A: Optional[Jet]
    Y: Optional[Jet]


def modal_fields(ms: ModalSolution, x, t, xi, second: bool = True,
                 derivatives: bool = True) -> ModalFields:
    x = jnp.asarray(x, dtype=jnp.float64)
    t = jnp.asarray(t, dtype=jnp.float64)
    xi = jnp.asarray(xi, dtype=jnp.float64)
    if xi.ndim != 2 or xi.shape[1] != ms.xi_dim:
        raise ShapeError(f"xi must have shape (n, {ms.xi_dim}), got {xi.shape}")
    nx, nt, n = x.shape[0], t.shape[0], xi.shape[0]
    xt = _pairs(x, t)
    seed_xt = Jet.seed(xt, 0, 1, second=second) if derivatives else Jet(xt)
    ubar = _reshape(ms.ubar.jet(seed_xt), (nx, nt))
    if ms.n_modes == 0:
        return ModalFields(ubar, None, None, None)
    N = ms.n_modes
    U = _reshape(ms.u_net.jet(seed_xt), (nx, nt, N))
    A = _a_jet(ms, t, derivatives)
    yin = _xi_t(t, xi)
    Y = _reshape(ms.y_net.jet(Jet.seed(yin, None, yin.shape[1] - 1) if derivatives else Jet(yin)),
                 (nt, n, N))
    return ModalFields(ubar, U, A, Y)


def tensor_jet(f: ModalFields) -> Jet:
    """Reconstructed u and its derivatives on the (nx, nt, n_xi) tensor."""
    ub = f.ubar
    ext = lambda a: None if a is None else a[:, :, None]
    if f.U is None:
        return Jet(ext(ub.value), ext(ub.d_dx), ext(ub.d2_dx2), ext(ub.d_dt))
    A, U, Y = f.A, f.U, f.Y
    contract = lambda P, Q: jnp.einsum("ksi,sli->ksl", P, Q)
    AU = A.value[None] * U.value
    value = ub.value[:, :, None] + contract(AU, Y.value)
    d_dx = d2 = d_dt = None
    if U.d_dx is not None:
        d_dx = ub.d_dx[:, :, None] + contract(A.value[None] * U.d_dx, Y.value)
    if U.d2_dx2 is not None:
        d2 = ub.d2_dx2[:, :, None] + contract(A.value[None] * U.d2_dx2, Y.value)
    if U.d_dt is not None:
        P = A.d_dt[None] * U.value + A.value[None] * U.d_dt
        d_dt = ub.d_dt[:, :, None] + contract(P, Y.value) + contract(AU, Y.d_dt)
    return Jet(value, d_dx, d2, d_dt)


def _point_components(ms, x, t, xi, derivatives):
    x = jnp.atleast_1d(jnp.asarray(x, dtype=jnp.float64))
    t = jnp.atleast_1d(jnp.asarray(t, dtype=jnp.float64))
    xi = jnp.asarray(xi, dtype=jnp.float64).reshape(-1, ms.xi_dim)
    x, t = jnp.broadcast_arrays(x, t)
    if xi.shape[0] == 1:
        xi = jnp.broadcast_to(xi, (x.shape[0], ms.xi_dim))
    if xi.shape[0] != x.shape[0]:
        raise ShapeError("x, t and xi must describe the same number of points")
    xt = jnp.stack([x, t], axis=-1)
    s = Jet.seed(xt, 0, 1) if derivatives else Jet(xt)
    ub = ms.ubar.jet(s)
    if ms.n_modes == 0:
        return ub, None, None, None
    U = ms.u_net.jet(s)
    A = _a_jet(ms, t, derivatives)
    yin = jnp.concatenate([xi, t[:, None]], axis=-1)
    Y = ms.y_net.jet(Jet.seed(yin, None, ms.xi_dim) if derivatives else Jet(yin))
    return ub, U, A, Y


def reconstruct(ms: ModalSolution, x, t, xi):
    """u_nn at matching arrays of points; xi has shape (n, d) or (d,)."""
    ub, U, A, Y = _point_components(ms, x, t, xi, derivatives=False)
    if U is None:
        return ub.value[:, 0]
    return ub.value[:, 0] + jnp.sum(A.value * U.value * Y.value, axis=-1)


def reconstruct_jet(ms: ModalSolution, x, t, xi) -> Jet:
    """Pointwise reconstruction with u_x, u_xx, u_t by the product rule."""
    ub, U, A, Y = _point_components(ms, x, t, xi, derivatives=True)
    if U is None:
        return ub[:, 0]
    s = lambda a: jnp.sum(a, axis=-1)
    value = ub.value[:, 0] + s(A.value * U.value * Y.value)
    d_dx = ub.d_dx[:, 0] + s(A.value * U.d_dx * Y.value)
    d2 = ub.d2_dx2[:, 0] + s(A.value * U.d2_dx2 * Y.value)
    d_dt = ub.d_dt[:, 0] + s(A.d_dt * U.value * Y.value + A.value * U.d_dt * Y.value
                             + A.value * U.value * Y.d_dt)
    return Jet(value, d_dx, d2, d_dt)


def mean_field(ms: ModalSolution, x, t):
    x = jnp.atleast_1d(jnp.asarray(x, dtype=jnp.float64))
    t = jnp.atleast_1d(jnp.asarray(t, dtype=jnp.float64))
    x, t = jnp.broadcast_arrays(x, t)
    return ms.ubar(jnp.stack([x, t], axis=-1))[:, 0]


def covariance_Y(ms: ModalSolution, t: float, pts: StochasticPoints):
    """E[Y_i Y_j] at time t under the weights of ``pts``."""
    yin = _xi_t(jnp.atleast_1d(jnp.asarray(t, dtype=jnp.float64)), pts.points)
    Y = ms.y_net(yin)
    C = jnp.einsum("l,li,lj->ij", jnp.asarray(pts.weights), Y, Y)
    return 0.5 * (C + C.T)


def modal_components(ms: ModalSolution, x, t: float, pts: StochasticPoints):
    """(ubar(x), a (N,), U (nx, N), Y (n_xi, N)) at one time."""
    x = jnp.atleast_1d(jnp.asarray(x, dtype=jnp.float64))
    tt = jnp.full_like(x, t)
    xt = jnp.stack([x, tt], axis=-1)
    ub = ms.ubar(xt)[:, 0]
    if ms.n_modes == 0:
        return ub, jnp.zeros(0), jnp.zeros((x.size, 0)), jnp.zeros((pts.n, 0))
    a = _a_jet(ms, jnp.array([t]), False).value[0]
    U = ms.u_net(xt)
    Y = ms.y_net(_xi_t(jnp.array([t]), pts.points))
    return ub, a, U, Y


def variance_field(ms: ModalSolution, x, t: float, pts: StochasticPoints):
    """sum_ij a_i u_i E[Y_i Y_j] u_j a_j on the points x at time t."""
    _, a, U, _ = modal_components(ms, x, t, pts)
    if ms.n_modes == 0:
        return jnp.zeros(jnp.atleast_1d(x).shape)
    C = covariance_Y(ms, t, pts)
    aU = U * a[None, :]
    return jnp.einsum("ki,ij,kj->k", aU, C, aU)


# -- checkpoints ----------------------------------------------------------

def save_modal(path, ms: ModalSolution, extra: Optional[dict] = None) -> None:
    """Bundle the four network records plus metadata into one ``.npz``."""
    nets = [("ubar.", ms.ubar)] + ([("u.", ms.u_net), ("y.", ms.y_net)] if ms.n_modes else [])
    nets += [(f"a{k}.", n) for k, n in enumerate(ms.a_nets or [])]
    rec = {}
    for prefix, net in nets:
        if not isinstance(net, Mlp):
            raise ConfigurationError("only network-backed modal solutions can be checkpointed")
        rec.update(mlp_to_record(net, prefix))
    meta = dict(n_modes=ms.n_modes, x_domain=list(ms.x_domain), t_domain=list(ms.t_domain),
                xi_dim=ms.xi_dim, n_a=len(ms.a_nets or []), extra=extra or {})
    rec["modal_meta"] = np.array(json.dumps(meta))
    with open(path, "wb") as fh:
        np.savez(fh, **rec)


def load_modal(path) -> ModalSolution:
    with np.load(path) as rec:
        meta = json.loads(str(rec["modal_meta"]))
        N = meta["n_modes"]
        ubar = mlp_from_record(rec, "ubar.")
        a_nets = [mlp_from_record(rec, f"a{k}.") for k in range(meta["n_a"])]
        u_net = mlp_from_record(rec, "u.") if N else None
        y_net = mlp_from_record(rec, "y.") if N else None
    return ModalSolution(ubar, a_nets, u_net, y_net, N, tuple(meta["x_domain"]),
                         tuple(meta["t_domain"]), meta["xi_dim"])


def load_modal_meta(path) -> dict:
    with np.load(path) as rec:
        return json.loads(str(rec["modal_meta"]))


# -- Karhunen-Loeve -------------------------------------------------------

@dataclass(frozen=True)
class KernelSpec:
    """Squared-exponential covariance sigma_g^2 exp(-(x1-x2)^2 / l_c^2)."""

    variance: float
    length: float
    mean_fn: Callable = lambda x: np.ones_like(np.asarray(x, dtype=float))

    def __post_init__(self):
        if self.variance <= 0 or self.length <= 0:
            raise ConfigurationError("kernel variance and correlation length must be positive")

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.variance))

    def __call__(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        return self.variance * np.exp(-((x1[:, None] - x2[None, :]) ** 2) / self.length ** 2)


@dataclass(frozen=True)
class KlBasis:
    """Eigenpairs on ``grid``; eigenfunctions are grid-orthonormal columns."""

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    grid: np.ndarray
    kernel: Optional[Callable] = None

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    def truncate(self, k: int) -> "KlBasis":
        return KlBasis(self.eigenvalues[:k], self.eigenfunctions[:, :k], self.grid, self.kernel)

    def modes_for_energy(self, fraction: float) -> int:
        """Smallest K whose leading eigenvalues hold ``fraction`` of the total."""
        lam = np.clip(self.eigenvalues, 0.0, None)
        return int(np.searchsorted(np.cumsum(lam) / lam.sum(), fraction - 1e-15) + 1)

    def evaluate(self, x):
        """Eigenfunctions at arbitrary x via the Nystrom extension.

        Falls back to linear interpolation when no kernel is attached.
        Returns shape x.shape + (n_modes,).
        """
        x = np.asarray(x, dtype=float)
        if self.kernel is None:
            cols = [np.interp(x.ravel(), self.grid, self.eigenfunctions[:, k])
                    for k in range(self.n_modes)]
            return np.stack(cols, axis=-1).reshape(x.shape + (self.n_modes,))
        w = trapezoid_weights(self.grid)
        C = self.kernel(x.ravel(), self.grid)
        vals = (C * w[None, :]) @ self.eigenfunctions / self.eigenvalues[None, :]
        return vals.reshape(x.shape + (self.n_modes,))


def kl_decompose(kernel, grid, n_modes: Optional[int] = None) -> KlBasis:
    """Nystrom eigen-decomposition of W^1/2 C W^1/2 with trapezoid weights W.

    ``kernel`` is a covariance callable ``k(x1, x2) -> matrix`` (such as a
    :class:`KernelSpec`) or a covariance matrix on ``grid``.  Callables are
    kept on the basis for Nystrom evaluation off the grid.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ShapeError("grid must be 1-D with at least two points")
    C = np.asarray(kernel(grid, grid) if callable(kernel) else kernel, dtype=float)
    if C.shape != (grid.size, grid.size):
        raise ShapeError(f"covariance must be {grid.size}x{grid.size}, got {C.shape}")
    scale = max(np.max(np.abs(C)), 1e-300)
    if np.max(np.abs(C - C.T)) > 1e-10 * scale:
        raise DataError("covariance matrix is not symmetric")
    C = 0.5 * (C + C.T)
    w = trapezoid_weights(grid)
    sw = np.sqrt(w)
    lam, vec = np.linalg.eigh(sw[:, None] * C * sw[None, :])
    order = np.argsort(lam)[::-1]
    lam, vec = lam[order], vec[:, order]
    phi = vec / sw[:, None]
    # sign gauge: largest-magnitude entry positive
    idx = np.argmax(np.abs(phi), axis=0)
    phi = phi * np.sign(phi[idx, np.arange(phi.shape[1])])[None, :]
    if n_modes is not None:
        lam, phi = lam[:n_modes], phi[:, :n_modes]
    return KlBasis(lam, phi, grid, kernel if callable(kernel) else None)


def grf_sample(basis: KlBasis, mean_fn: Callable, xi, x=None):
    """mean + sum_k sqrt(lambda_k) phi_k xi_k on the basis grid (or on ``x``).

    ``xi`` has shape (K,) or (n_samples, K); the result has shape
    (n_x,) or (n_samples, n_x).
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != basis.n_modes:
        raise ShapeError(f"xi needs {basis.n_modes} entries, got {xi.shape[-1]}")
    xs = basis.grid if x is None else np.asarray(x, dtype=float)
    phi = basis.eigenfunctions if x is None else basis.evaluate(xs)
    scaled = phi * np.sqrt(np.clip(basis.eigenvalues, 0.0, None))[None, :]
    return mean_fn(xs) + xi @ scaled.T


@dataclass(frozen=True)
class EnvelopedKernel:
    """Covariance of e(x) g(x) for a field g with covariance ``base``."""

    base: Callable
    envelope: Callable

    def __call__(self, x1, x2):
        e1 = self.envelope(np.asarray(x1, dtype=float))
        e2 = self.envelope(np.asarray(x2, dtype=float))
        return e1[:, None] * self.base(x1, x2) * e2[None, :]


# -- initial components ---------------------------------------------------

@dataclass
class ICComponents:
    """Targets at t0: ubar (nx,), modes (nx, N), a (N,), Y (n_xi, N)."""

    ubar: np.ndarray
    modes: np.ndarray
    a: np.ndarray
    Y: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.a.size


def initial_components_from_field(u0, pts: StochasticPoints, grid, n_modes: int,
                                  basis=None, chaos=None, reference_modes=None,
                                  tol: float = 1e-14) -> ICComponents:
    """Modal targets at t0 from an initial field.

    ``u0`` is either a callable ``u0(x (nx,), xi (n, d)) -> (n, nx)`` or the
    array of values itself.  A random field is KL-decomposed; a
    deterministic one needs ``basis`` (nx, N) and ``chaos`` (n, N) and gets
    a_i = 0, with the chaos rescaled to unit second moment under ``pts``.
    ``reference_modes`` (nx, N) reorders and sign-aligns the KL modes to a
    preferred labelling; otherwise they come in decreasing energy.
    """
    grid = np.asarray(grid, dtype=float)
    vals = np.asarray(u0(grid, pts.points) if callable(u0) else u0, dtype=float)
    if vals.shape != (pts.n, grid.size):
        raise ShapeError(f"u0 values must have shape ({pts.n}, {grid.size}), got {vals.shape}")
    w = pts.weights
    ubar = w @ vals
    fluct = vals - ubar[None, :]
    cov = (fluct * w[:, None]).T @ fluct
    scale = max(1.0, float(np.max(np.abs(ubar))) if ubar.size else 1.0)
    if np.max(np.abs(cov)) <= tol * scale ** 2:
        if basis is None or chaos is None:
            raise DegenerateModeError("deterministic initial field: supply an orthonormal basis and chaos")
        basis = np.asarray(basis, dtype=float)[:, :n_modes]
        chaos = np.asarray(chaos, dtype=float)[:, :n_modes]
        chaos = chaos / np.sqrt(w @ chaos ** 2)[None, :]
        return ICComponents(ubar, basis, np.zeros(n_modes), chaos)
    kl = kl_decompose(cov, grid, n_modes)
    modes = kl.eigenfunctions
    if reference_modes is not None:
        ref = np.asarray(reference_modes, dtype=float)[:, :n_modes]
        perm, signs = match_modes(modes, ref, grid)
        modes = modes[:, perm] * signs[None, :]
    proj = fluct @ (modes * trapezoid_weights(grid)[:, None])
    a = np.sqrt(w @ proj ** 2)
    if np.any(a <= tol * scale):
        raise DegenerateModeError(f"mode energies {a} include zeros; use the deterministic branch")
    return ICComponents(ubar, modes, a, proj / a[None, :])


def match_modes(candidate, reference, grid):
    """Greedy matching by largest |<cand_i, ref_j>|.

    Returns ``(perm, signs)`` with ``candidate[:, perm] * signs`` aligned to
    the reference columns.
    """
    w = trapezoid_weights(grid)
    cand = np.asarray(candidate, dtype=float)
    ref = np.asarray(reference, dtype=float)
    nc = np.sqrt(w @ cand ** 2)
    nr = np.sqrt(w @ ref ** 2)
    corr = (cand * w[:, None]).T @ ref / np.outer(np.where(nc > 0, nc, 1.0), np.where(nr > 0, nr, 1.0))
    n = ref.shape[1]
    perm = np.full(n, -1)
    signs = np.ones(n)
    used_c, used_r = set(), set()
    order = np.dstack(np.unravel_index(np.argsort(-np.abs(corr), axis=None), corr.shape))[0]
    for i, j in order:
        if i in used_c or j in used_r:
            continue
        perm[j] = i
        signs[j] = 1.0 if corr[i, j] >= 0 else -1.0
        used_c.add(i)
        used_r.add(j)
        if len(used_r) == n:
            break
    if np.any(perm < 0):
        raise ShapeError("fewer candidate modes than reference modes")
    return perm, signs


def orthonormal_columns(values, grid) -> np.ndarray:
    """Gram-Schmidt under the trapezoid inner product."""
    w = trapezoid_weights(grid)
    out = []
    for col in np.asarray(values, dtype=float).T:
        v = col.copy()
        for q in out:
            v -= (w @ (v * q)) * q
        out.append(v / np.sqrt(w @ (v * v)))
    return np.stack(out, axis=1)


def network_modal_solution(ubar: Mlp, a_nets: Sequence[Mlp], u_net: Mlp, y_net: Mlp, n_modes: int,
                           x_domain, t_domain, xi_dim: int) -> ModalSolution:
    total = sum(n.output_dim for n in a_nets)
    if n_modes and (total != n_modes or u_net.output_dim != n_modes or y_net.output_dim != n_modes):
        raise ConfigurationError("a, u and y networks must all produce N outputs")
    return ModalSolution(ubar, list(a_nets), u_net, y_net, n_modes, tuple(x_domain),
                         tuple(t_domain), xi_dim)
