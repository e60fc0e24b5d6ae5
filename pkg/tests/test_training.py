import jax
import jax.flatten_util
import jax.numpy as jnp
import numpy as np
import pytest

from modalpinn.errors import ConfigurationError, DataError, DegenerateReferenceError, DivergenceError, ShapeError
from modalpinn.evaluation import compare_with_exact
from modalpinn.metrics import field_errors, l2_error, l2_norm, modal_errors, relative_l2_error, rmse
from modalpinn.modal import load_modal, mean_field, modal_components
from modalpinn.problems import ObservationSet, advection_problem, burgers_problem, diffusion_reaction_problem
from modalpinn.quadrature import normal_quadrature, spatial_grid
from modalpinn.training import (RunReport, TrainConfig, build_modal_solution, check_subdomains,
                                handoff_components, infer_parameters, interface_jumps, save_run,
                                split_interval, train, train_subdomains, training_grid)

SMALL = {"ubar": (8, 8), "a": (4,), "u": (8, 8), "y": (8, 8)}


def cfg(**kw):
    base = dict(networks=SMALL, n_x=8, n_t=6, n_xi=6, epochs=10, chunk=5, lr=1e-3)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def adv():
    return advection_problem(0.8)


# -- configuration ---------------------------------------------------------------

@pytest.mark.parametrize("bad", [dict(epochs=0), dict(constraint="KL"), dict(n_modes=-1), dict(lr=0.0),
                                 dict(n_x=1), dict(networks={"ubar": (4,)})])
def test_config_errors(bad):
    with pytest.raises(ConfigurationError):
        cfg(**bad)


def test_config_round_trip():
    c = cfg(constraint="bo", subdomains=[[0, 1], [1, 2]])
    assert c.constraint == "BO" and c.subdomains == [(0.0, 1.0), (1.0, 2.0)]
    assert TrainConfig(**c.to_dict()) == c


# -- training ------------------------------------------------------------------

def test_single_epoch_is_one_adam_step(adv):
    c = cfg(epochs=1, lr=1e-3)
    ms, rep = train(adv, c)
    before = jax.flatten_util.ravel_pytree(build_modal_solution(adv, c))[0]
    after = jax.flatten_util.ravel_pytree(ms)[0]
    delta = np.abs(np.asarray(after - before))
    assert rep.history["total"].size == 1
    assert delta.max() <= 1e-3 * (1 + 1e-9) and delta.max() > 0.5e-3


def test_identical_seeds_are_bit_identical(adv):
    a_ms, a = train(adv, cfg())
    b_ms, b = train(adv, cfg())
    for k in a.history:
        assert np.array_equal(a.history[k], b.history[k])
    assert np.array_equal(jax.flatten_util.ravel_pytree(a_ms)[0], jax.flatten_util.ravel_pytree(b_ms)[0])


def test_loss_decreases_on_short_run(adv):
    _, rep = train(adv, cfg(epochs=200, chunk=100, lr=3e-3))
    assert rep.history["total"][-1] < 0.5 * rep.history["total"][0]


def test_chunking_does_not_change_result(adv):
    _, a = train(adv, cfg(epochs=12, chunk=5))
    _, b = train(adv, cfg(epochs=12, chunk=12))
    assert np.allclose(a.history["total"], b.history["total"], rtol=1e-12, atol=0)


def test_nan_loss_raises_with_checkpoint(adv):
    broken = adv.replace(operator=lambda u, x, t, xi, p, aux: u.value * jnp.nan)
    with pytest.raises(DivergenceError) as err:
        train(broken, cfg())
    assert err.value.checkpoint is not None


def test_mode_count_mismatch(adv):
    grid = training_grid(adv, cfg())
    from modalpinn.problems import initial_components
    ic = initial_components(adv, grid.x, grid.xi, 1)
    with pytest.raises(ConfigurationError):
        train(adv, cfg(n_modes=2), ic=ic)


def test_trend_violations_counts_block_increases():
    total = np.concatenate([np.full(1000, 3.0), np.full(1000, 2.0), np.full(1000, 2.5), np.full(999, 1.0)])
    rep = RunReport({"total": total}, {}, 0.0, {}, "x")
    assert rep.trend_violations() == 1
    assert RunReport({"total": np.ones(10)}, {}, 0.0, {}, "x").trend_violations() == 0


# -- subdomains ----------------------------------------------------------------

def test_split_interval_burgers_layout():
    subs = split_interval(0.0, 10 * np.pi, 10)
    assert len(subs) == 10
    assert np.allclose([b - a for a, b in subs], np.pi, atol=1e-14)
    with pytest.raises(ConfigurationError):
        split_interval(0.0, 1.0, 0)


@pytest.mark.parametrize("subs", [[(0.0, 1.0), (1.5, 2.0)], [(0.0, 1.2), (1.0, 2.0)], [(0.5, 2.0)],
                                  [(0.0, 1.0), (1.0, 1.0)]])
def test_subdomain_gaps_and_overlaps(subs):
    with pytest.raises(ConfigurationError):
        check_subdomains(subs, (0.0, 2.0))


def test_single_subdomain_equals_train(adv):
    ms, rep = train(adv, cfg())
    st, rep1 = train_subdomains(adv, cfg(subdomains=[(0.0, np.pi)]))
    assert len(st.pieces) == 1
    for k in rep.history:
        assert np.array_equal(rep.history[k], rep1.history[k])
    assert np.array_equal(jax.flatten_util.ravel_pytree(ms)[0], jax.flatten_util.ravel_pytree(st.pieces[0])[0])


def test_two_subdomains_hand_off(adv):
    c = cfg(subdomains=split_interval(0.0, np.pi, 2), epochs=20)
    st, rep = train_subdomains(adv, c)
    assert len(st.pieces) == 2 and rep.history["total"].size == 40
    assert [s["t_start"] for s in rep.segments] == [0.0, np.pi / 2]
    # the second interval starts from targets taken from the first at its end time
    grid = training_grid(adv.with_time_domain(0.0, np.pi / 2), c)
    ic = handoff_components(st.pieces[0], np.pi / 2, grid.x, grid.xi)
    ub, a, U, Y = modal_components(st.pieces[0], grid.x, np.pi / 2, grid.xi)
    assert np.array_equal(ic.ubar, np.asarray(ub)) and np.array_equal(ic.Y, np.asarray(Y))
    jumps = interface_jumps(st, grid.x)
    assert len(jumps) == 1 and jumps[0] >= 0
    assert st.piece_at(0.1) is st.pieces[0] and st.piece_at(3.0) is st.pieces[1]
    x = grid.x
    assert np.array_equal(np.asarray(st.mean(x, 3.0)), np.asarray(mean_field(st.pieces[1], x, 3.0)))


# -- inverse problems ------------------------------------------------------------

def _inverse(observations, learnable=("a", "b")):
    return diffusion_reaction_problem(n_kl=2, learnable=learnable, observations=observations)


def test_infer_parameters_tracks_trajectory():
    obs = ObservationSet([-0.5, 0.0, 0.5], [0.5, 0.5, 0.5], [-0.5, 0.0, 0.5])
    c = cfg(epochs=10, initial_params={"a": 1.0, "b": 1.0})
    ms, est, traj, rep = infer_parameters(_inverse(obs), c)
    assert set(est) == {"a", "b"} and traj["a"].size == 10
    assert traj["a"][-1] == est["a"] and est["a"] != 1.0
    assert rep.history["mse_obs"][0] > 0


def test_infer_parameters_errors():
    with pytest.raises(ConfigurationError):
        infer_parameters(diffusion_reaction_problem(n_kl=2), cfg())
    empty = ObservationSet(np.zeros(0), np.zeros(0), np.zeros(0))
    with pytest.raises(ConfigurationError):
        _inverse(ObservationSet([0.0], [0.5], [0.0])).replace(observations=empty)
    with pytest.raises(DataError):
        _inverse(ObservationSet([0.0], [2.0], [0.0]))


# -- metrics -----------------------------------------------------------------

def test_metric_examples():
    x = np.linspace(0.0, 1.0, 11)
    ref = np.sin(3 * x)
    assert l2_error(ref, ref, x) == 0.0
    assert l2_error(ref + 0.01, ref, x) == pytest.approx(0.01, rel=1e-12)
    x2 = np.linspace(-1.0, 1.0, 21)
    assert l2_error(np.full(21, 0.01), np.zeros(21), x2) == pytest.approx(0.01 * np.sqrt(2), rel=1e-12)
    assert relative_l2_error(2 * ref, ref, x) == pytest.approx(1.0, rel=1e-14)
    assert l2_norm(np.ones(11), x) == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(DegenerateReferenceError):
        relative_l2_error(ref, np.zeros(11), x)
    assert np.isnan(field_errors(ref, np.zeros(11), x)["rel_l2"])
    assert rmse([1.0, 2.0], [1.0, 4.0]) == pytest.approx(np.sqrt(2.0))
    assert rmse([1.0, 2.0], [1.0, 4.0], [0.75, 0.25]) == pytest.approx(1.0)
    with pytest.raises(ShapeError):
        l2_error(np.zeros(3), np.zeros(4), np.linspace(0, 1, 3))


def test_modal_errors_align_sign_and_order():
    x = spatial_grid(-np.pi, np.pi, 101)
    pts = normal_quadrature(20, 0.8)
    modes = np.stack([np.cos(x), np.sin(x)], axis=-1) / np.sqrt(np.pi)
    Y = np.stack([pts.points[:, 0], pts.points[:, 0] ** 2 - 1], axis=-1)
    ref = dict(mean=np.sin(x), variance=np.cos(x) ** 2, a=np.array([2.0, 1.0]), modes=modes, Y=Y)
    cand = dict(ref, a=ref["a"][::-1], modes=-modes[:, ::-1], Y=-Y[:, ::-1])
    errs = modal_errors(cand, ref, x, pts)
    assert errs["mean"]["l2"] == 0.0
    for i in (1, 2):
        assert errs[f"a{i}"]["abs"] == 0.0 and errs[f"u{i}"]["l2"] == 0.0 and errs[f"Y{i}"]["rmse"] == 0.0


def test_metrics_reproducible_from_checkpoint(adv, tmp_path):
    ms, rep = train(adv, cfg())
    save_run(tmp_path / "run.npz", ms, rep)
    back = load_modal(tmp_path / "run.npz")
    pts = normal_quadrature(20, 0.8)
    e1, e2 = compare_with_exact(ms, adv, np.pi, pts), compare_with_exact(back, adv, np.pi, pts)
    for q in ("mean", "variance", "u1", "u2"):
        assert abs(e1[q]["l2"] - e2[q]["l2"]) <= 1e-12
