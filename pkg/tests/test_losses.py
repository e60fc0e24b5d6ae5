import jax
import jax.flatten_util
import jax.numpy as jnp
import numpy as np
import pytest

from modalpinn.errors import ConfigurationError
from modalpinn.losses import (LossBreakdown, make_loss, mse_bc, mse_bo, mse_do, mse_ic, mse_regularization,
                              mse_weak, read_loss_log, residual_field, total_loss, weak_residuals,
                              write_loss_log)
from modalpinn.modal import AnalyticComponent, ICComponents, ModalSolution, modal_fields
from modalpinn.problems import (advection_problem, burgers_problem, diffusion_reaction_problem,
                                exact_modal_solution, initial_components)
from modalpinn.quadrature import TrainingGrid, sample_uniform_times, trapezoid_weights
from modalpinn.training import TrainConfig, build_modal_solution, training_grid

SMALL = {"ubar": (8, 8), "a": (4,), "u": (8, 8), "y": (8, 8)}
TINY = {"ubar": (4,), "a": (3,), "u": (4,), "y": (4,)}


@pytest.fixture(scope="module")
def adv():
    return advection_problem(0.8)


@pytest.fixture(scope="module")
def adv_grid(adv):
    return training_grid(adv, TrainConfig())


def net_solution(problem, n_modes=2, seed=0, widths=SMALL):
    return build_modal_solution(problem, TrainConfig(n_modes=n_modes, networks=widths, seed=seed))


def small_grid(problem, n_x=9, n_t=5, n_xi=6):
    return training_grid(problem, TrainConfig(n_x=n_x, n_t=n_t, n_xi=n_xi))


# -- total_loss --------------------------------------------------------------

def test_total_loss_examples():
    assert float(total_loss().total) == 0.0
    assert float(total_loss(mse_w=0.1).total) == pytest.approx(0.1, abs=1e-17)
    assert float(total_loss(mse_ic=1e-4, mse_bo=1e-5).total) == pytest.approx(1.1e-2, rel=1e-14)
    assert total_loss(mse_bo=1e-5).constraint_kind == "BO"


def test_total_loss_exact_weighting():
    b = total_loss(0.3, 0.02, 0.01, mse_do=0.004, mse_0=0.5, mse_obs=0.007)
    assert float(b.total) == 1.0 * 0.3 + 100.0 * (0.02 + 0.01 + 0.004) + 0.1 * 0.5 + 100.0 * 0.007
    custom = total_loss(1.0, 1.0, mse_0=1.0, weights=(2.0, 3.0, 4.0))
    assert float(custom.total) == 2.0 + 3.0 + 4.0


def test_total_loss_rejects_mixed_constraints():
    with pytest.raises(ConfigurationError):
        total_loss(mse_do=1.0, mse_bo=1.0)
    with pytest.raises(ConfigurationError):
        total_loss(mse_do=1.0, constraint_kind="BO")
    with pytest.raises(ConfigurationError):
        total_loss(constraint_kind="KL")


# -- mse_weak ------------------------------------------------------------------

def test_mse_weak_single_entry():
    e1 = np.zeros((7, 5))
    e1[3, 2] = 0.4
    assert float(mse_weak(e1)) == pytest.approx(0.16 / 35, rel=1e-15)
    assert float(mse_weak(np.zeros((7, 5)), np.zeros((5, 4, 2)), np.zeros((7, 5, 2)))) == 0.0


def test_mse_weak_reassociation():
    rng = np.random.default_rng(0)
    e1, e2, e3 = rng.normal(size=(6, 5)), rng.normal(size=(5, 4, 3)), rng.normal(size=(6, 5, 3))
    brute = 0.0
    for k in range(6):
        for s in range(5):
            brute += e1[k, s] ** 2 / 30
    for i in range(3):
        for l in range(4):
            for s in range(5):
                brute += e2[s, l, i] ** 2 / (3 * 5 * 4)
        for s in range(5):
            for k in range(6):
                brute += e3[k, s, i] ** 2 / (3 * 6 * 5)
    assert float(mse_weak(e1, e2, e3)) == pytest.approx(brute, rel=1e-15, abs=1e-15)


# -- weak residuals ------------------------------------------------------------

def test_weak_residuals_of_exact_advection(adv, adv_grid):
    ms = exact_modal_solution(adv, adv_grid.xi)
    e1, e2, e3 = weak_residuals(ms, adv, adv_grid)
    assert max(float(jnp.max(jnp.abs(e))) for e in (e1, e2, e3)) <= 1e-4


def test_zero_operator_time_constant_nets_give_zero_residuals(adv):
    grid = small_grid(adv)
    ms = net_solution(adv)
    flat = jax.tree_util.tree_map(jnp.zeros_like, ms)
    zero_op = adv.replace(operator=lambda u, x, t, xi, p, aux: 0.0 * u.value)
    for e in weak_residuals(flat, zero_op, grid):
        assert float(jnp.max(jnp.abs(e))) == 0.0


def test_e3_with_unit_coefficient_equals_e1(adv):
    grid = small_grid(adv)
    ms = net_solution(adv, seed=5)
    ones = AnalyticComponent(lambda z: jnp.ones((z.shape[0], 2)), 2, 2, "y")
    ms1 = ModalSolution(ms.ubar, ms.a_nets, ms.u_net, ones, 2, ms.x_domain, ms.t_domain, 1)
    e1, _, e3 = weak_residuals(ms1, adv, grid)
    for i in range(2):
        assert float(jnp.max(jnp.abs(e3[..., i] - e1))) <= 1e-14


def test_residual_needs_derivatives(adv):
    grid = small_grid(adv)
    ms = net_solution(adv)
    f = modal_fields(ms, grid.x, grid.t, grid.xi.points, derivatives=False)
    with pytest.raises(ConfigurationError):
        residual_field(f, adv, grid.x, grid.t, grid.xi.points)


# -- regularization ----------------------------------------------------------

def test_regularization_of_exact_solution(adv, adv_grid):
    ms = exact_modal_solution(adv, adv_grid.xi)
    assert float(mse_regularization(ms, adv, adv_grid)) <= 1e-8


def test_regularization_is_mean_square_residual(adv):
    grid = small_grid(adv)
    ms = net_solution(adv, seed=2)
    f = modal_fields(ms, grid.x, grid.t, grid.xi.points)
    r = np.asarray(residual_field(f, adv, grid.x, grid.t, grid.xi.points))
    assert float(mse_regularization(ms, adv, grid)) == pytest.approx(np.mean(r ** 2), rel=1e-15)


def test_constant_residual(adv):
    grid = small_grid(adv)
    flat = jax.tree_util.tree_map(jnp.zeros_like, net_solution(adv))
    const = adv.replace(operator=lambda u, x, t, xi, p, aux: 0.0 * u.value - 0.3)
    assert float(mse_regularization(flat, const, grid)) == pytest.approx(0.09, rel=1e-14)


# -- initial condition ---------------------------------------------------------

def _ic_oracle(ms, ic, x, pts, t0):
    """Straight loops over every point with the four normalizations."""
    N, nx, nxi = ms.n_modes, len(x), pts.n
    f = modal_fields(ms, x, np.array([t0]), pts.points, derivatives=False)
    ub, U = np.asarray(f.ubar.value)[:, 0], np.asarray(f.U.value)[:, 0, :]
    A, Y = np.asarray(f.A.value)[0], np.asarray(f.Y.value)[0]
    s = sum((ub[k] - ic.ubar[k]) ** 2 for k in range(nx)) / nx
    s += sum((U[k, i] - ic.modes[k, i]) ** 2 for k in range(nx) for i in range(N)) / (N * nx)
    s += sum((A[i] - ic.a[i]) ** 2 for i in range(N)) / N
    s += sum((Y[l, i] - ic.Y[l, i]) ** 2 for l in range(nxi) for i in range(N)) / (N * nxi)
    return s


def _fields_as_ic(ms, x, pts, t0):
    f = modal_fields(ms, x, np.array([t0]), pts.points, derivatives=False)
    return ICComponents(np.asarray(f.ubar.value)[:, 0], np.asarray(f.U.value)[:, 0, :],
                        np.asarray(f.A.value)[0], np.asarray(f.Y.value)[0])


def test_ic_zero_when_targets_match(adv):
    grid = small_grid(adv)
    ms = net_solution(adv, seed=3)
    ic = _fields_as_ic(ms, grid.x, grid.xi, 0.0)
    assert float(mse_ic(ms, ic, grid.x, grid.xi, 0.0)) == 0.0


def test_ic_constant_scaling_offset(adv):
    grid = small_grid(adv)
    ms = net_solution(adv, seed=3)
    ic = _fields_as_ic(ms, grid.x, grid.xi, 0.0)
    shifted = ICComponents(ic.ubar, ic.modes, ic.a + 0.25, ic.Y)
    assert float(mse_ic(ms, shifted, grid.x, grid.xi, 0.0)) == pytest.approx(0.0625, rel=1e-13)


def test_ic_matches_loop_oracle(adv):
    grid = small_grid(adv)
    ic = initial_components(adv, grid.x, grid.xi, 2)
    for seed in range(3):
        ms = net_solution(adv, seed=seed)
        got = float(mse_ic(ms, ic, grid.x, grid.xi, 0.0))
        assert got == pytest.approx(_ic_oracle(ms, ic, grid.x, grid.xi, 0.0), rel=1e-14)


# -- boundary ------------------------------------------------------------------

@pytest.fixture(scope="module")
def dr():
    return diffusion_reaction_problem(n_kl=3)


def _bc_oracle(ms, problem, pts, times):
    xb = np.array(problem.x_domain)
    f = modal_fields(ms, xb, times, pts.points, derivatives=False)
    ub, U = np.asarray(f.ubar.value), np.asarray(f.U.value)
    A, Y, w = np.asarray(f.A.value), np.asarray(f.Y.value), pts.weights
    N, nt = ms.n_modes, len(times)
    out = 0.0
    for k in range(2):
        out += sum(ub[k, s] ** 2 for s in range(nt)) / nt
        acc = 0.0
        for s in range(nt):
            C = sum(w[l] * np.outer(Y[s, l], Y[s, l]) for l in range(pts.n))
            for i in range(N):
                acc += sum(C[i, j] * A[s, j] * U[k, s, j] for j in range(N)) ** 2
        out += acc / (N * nt)
    return out


def test_bc_matches_loop_oracle(dr):
    grid = small_grid(dr)
    for seed in range(2):
        ms = net_solution(dr, seed=seed)
        got = float(mse_bc(ms, dr, grid.x, grid.xi, grid.t))
        assert got == pytest.approx(_bc_oracle(ms, dr, grid.xi, grid.t), rel=1e-13)


def test_bc_zero_for_vanishing_networks(dr):
    grid = small_grid(dr)
    flat = jax.tree_util.tree_map(jnp.zeros_like, net_solution(dr))
    assert float(mse_bc(flat, dr, grid.x, grid.xi, grid.t)) == 0.0


def test_bc_rejects_periodic_problem(adv):
    grid = small_grid(adv)
    with pytest.raises(ConfigurationError):
        mse_bc(net_solution(adv), adv, grid.x, grid.xi, grid.t)


# -- DO / BO constraints -----------------------------------------------------

def _constraint_oracle(ms, x, pts, times, kind):
    f = modal_fields(ms, x, times, pts.points, second=False)
    U, Ut = np.asarray(f.U.value), np.asarray(f.U.d_dt)
    Y, Yt = np.asarray(f.Y.value), np.asarray(f.Y.d_dt)
    wx, wxi, N, nt = trapezoid_weights(x), pts.weights, ms.n_modes, len(times)
    mean_sq = sum((wxi @ Y[s, :, i]) ** 2 for s in range(nt) for i in range(N)) / (N * nt)
    P = np.array([[[wx @ (Ut[:, s, i] * U[:, s, j]) for j in range(N)] for i in range(N)]
                  for s in range(nt)])
    Q = np.array([[[wxi @ (Y[s, :, i] * Yt[s, :, j]) for j in range(N)] for i in range(N)]
                  for s in range(nt)])
    if kind == "DO":
        return (mean_sq + np.sum(P ** 2) / (N * N * nt)
                + sum(Q[s, i, i] ** 2 for s in range(nt) for i in range(N)) / (N * nt))
    Ps, Qs = P + P.transpose(0, 2, 1), Q + Q.transpose(0, 2, 1)
    return mean_sq + np.sum(Ps ** 2) / (N * N * nt) + np.sum(Qs ** 2) / (N * nt)


@pytest.mark.parametrize("kind", ["DO", "BO"])
def test_constraint_matches_loop_oracle(adv, kind):
    grid = small_grid(adv)
    fn = mse_do if kind == "DO" else mse_bo
    for seed in range(2):
        ms = net_solution(adv, seed=seed)
        got = float(fn(ms, grid.x, grid.xi, grid.t))
        assert got == pytest.approx(_constraint_oracle(ms, grid.x, grid.xi, grid.t, kind), rel=1e-13)


def test_exact_advection_do_spatial_term(adv, adv_grid):
    ms = exact_modal_solution(adv, adv_grid.xi)
    f = modal_fields(ms, adv_grid.x, adv_grid.t, adv_grid.xi.points, second=False)
    P = jnp.einsum("k,ksi,ksj->sij", jnp.asarray(adv_grid.x_weights), f.U.d_dt, f.U.value)
    assert float(jnp.mean(P ** 2)) <= 1e-12


def test_exact_burgers_bo_terms():
    bur = burgers_problem(0.1)
    grid = training_grid(bur, TrainConfig(n_x=50, n_t=50, n_xi=64))
    ms = exact_modal_solution(bur)
    f = modal_fields(ms, grid.x, grid.t, grid.xi.points, second=False)
    wx, wxi = jnp.asarray(grid.x_weights), jnp.asarray(grid.xi.weights)
    Q = jnp.einsum("l,sli,slj->sij", wxi, f.Y.value, f.Y.d_dt)
    assert float(jnp.max(jnp.abs(Q))) == 0.0
    P = jnp.einsum("k,ksi,ksj->sij", wx, f.U.d_dt, f.U.value)
    S = P + jnp.swapaxes(P, 1, 2)
    assert float(jnp.max(jnp.abs(S[:, 0, 1]))) <= 1e-10


def test_time_constant_components_satisfy_do(adv):
    grid = small_grid(adv)
    ms = net_solution(adv)
    frozen = _freeze_time(ms)
    f = modal_fields(frozen, grid.x, grid.t, grid.xi.points, second=False)
    assert float(jnp.max(jnp.abs(f.U.d_dt))) == 0.0 and float(jnp.max(jnp.abs(f.Y.d_dt))) == 0.0
    # only the mean term can remain
    wxi = jnp.asarray(grid.xi.weights)
    mean_sq = float(jnp.mean(jnp.einsum("l,sli->si", wxi, f.Y.value) ** 2))
    assert float(mse_do(frozen, grid.x, grid.xi, grid.t)) == pytest.approx(mean_sq, rel=1e-14)
    assert float(mse_bo(frozen, grid.x, grid.xi, grid.t)) == pytest.approx(mean_sq, rel=1e-14)


def _freeze_time(ms):
    """Zero the time-input column of the first weight matrix in the U and Y networks."""
    def strip(net, col):
        w0 = net.weights[0].at[:, col].set(0.0)
        return net.__class__([w0] + list(net.weights[1:]), list(net.biases), net.layer_widths,
                             net.activation, net.embed, net.input_shift, net.input_scale)
    # time is the last raw input of both networks
    return ModalSolution(ms.ubar, ms.a_nets, strip(ms.u_net, -1), strip(ms.y_net, -1),
                         ms.n_modes, ms.x_domain, ms.t_domain, ms.xi_dim)


def test_time_dependent_y_scaling_breaks_do(adv):
    grid = small_grid(adv)
    frozen = _freeze_time(net_solution(adv, seed=1))
    base = float(mse_do(frozen, grid.x, grid.xi, grid.t))
    y = frozen.y_net
    scaled = AnalyticComponent(lambda z: (1.0 + z[:, -1:]) * y(z), 2, frozen.n_modes, "y")
    ms2 = ModalSolution(frozen.ubar, frozen.a_nets, frozen.u_net, scaled, frozen.n_modes,
                        frozen.x_domain, frozen.t_domain, 1)
    assert float(mse_do(ms2, grid.x, grid.xi, grid.t)) > base


# -- total loss on exact components and gradients -----------------------------------

def test_exact_advection_total_loss(adv, adv_grid):
    ic = initial_components(adv, adv_grid.x, adv_grid.xi, 2)
    ms = exact_modal_solution(adv, adv_grid.xi)
    # the DO and BO components coincide for this problem
    for kind in ("DO", "BO"):
        b = make_loss(adv, adv_grid, ic, kind)(ms)
        assert float(b.total) <= 1e-3, (kind, b.as_dict())


def test_components_nonnegative(adv, dr):
    for problem in (adv, dr):
        grid = small_grid(problem)
        ic = initial_components(problem, grid.x, grid.xi, 2)
        for seed in range(3):
            b = make_loss(problem, grid, ic, "BO")(net_solution(problem, seed=seed))
            assert all(v >= 0 for v in b.as_dict().values())


def test_make_loss_is_bit_reproducible(adv):
    grid = small_grid(adv)
    ic = initial_components(adv, grid.x, grid.xi, 2)
    loss = make_loss(adv, grid, ic, "DO")
    ms = net_solution(adv, seed=4)
    assert loss(ms).as_dict() == loss(ms).as_dict()


def test_total_loss_gradient_matches_finite_differences(dr):
    grid = small_grid(dr, n_x=7, n_t=4, n_xi=5)
    ic = initial_components(dr, grid.x, grid.xi, 1)
    loss = make_loss(dr, grid, ic, "BO")
    ms = net_solution(dr, n_modes=1, seed=6, widths=TINY)
    flat, unravel = jax.flatten_util.ravel_pytree(ms)
    f = jax.jit(lambda v: loss(unravel(v)).total)
    g = np.asarray(jax.grad(f)(flat))
    rng = np.random.default_rng(0)
    idx = rng.choice(flat.size, size=min(40, flat.size), replace=False)
    h = 1e-6
    worst = 0.0
    for j in idx:
        e = jnp.zeros_like(flat).at[j].set(h)
        fd = (float(f(flat + e)) - float(f(flat - e))) / (2 * h)
        worst = max(worst, abs(fd - g[j]) / max(abs(g[j]), 1e-3))
    assert worst <= 1e-4


# -- loss log ------------------------------------------------------------------

def test_loss_log_round_trip(tmp_path):
    rows = [{k: 0.1 * (e + 1) + j for j, k in enumerate(LossBreakdown.FIELDS)} for e in range(3)]
    path = tmp_path / "loss.csv"
    write_loss_log(path, rows, [{"a": 0.1}, {"a": 0.2}, {"a": 0.3}])
    back = read_loss_log(path)
    assert back["epoch"].tolist() == [1, 2, 3]
    assert back["mse_w"].tolist() == [r["mse_w"] for r in rows]
    assert back["a"].tolist() == [0.1, 0.2, 0.3]
