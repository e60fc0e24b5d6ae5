import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modalpinn.errors import ConfigurationError, ShapeError, StateError
from modalpinn.nn import (AdamState, GradTape, Jet, Mlp, PeriodicEmbed, adam_step, backward, load_mlp,
                          mlp_forward, mlp_forward_jet, mlp_init, save_mlp)


def plain_forward(net, x):
    # independent re-implementation with np.tanh
    h = np.asarray(x, dtype=float)
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ np.asarray(w).T + np.asarray(b)
        if k < len(net.weights) - 1:
            h = np.tanh(h)
    return h


def linear_net(w, b=0.0):
    return Mlp([jnp.array([[w]])], [jnp.array([b])], (1, 1))


# -- init ----------------------------------------------------------------------

def test_init_single_weight_glorot_bound():
    net = mlp_init([1, 1], seed=3)
    assert abs(float(net.weights[0][0, 0])) <= np.sqrt(6.0) / np.sqrt(2.0)
    assert float(net.biases[0][0]) == 0.0


def test_init_deterministic():
    a, b = mlp_init([2, 8, 3], 5), mlp_init([2, 8, 3], 5)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)


def test_param_count():
    widths = [2, 32, 32, 32, 1]
    by_formula = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    assert by_formula == 2241
    assert mlp_init(widths, 0).num_params() == by_formula


@pytest.mark.parametrize("widths", [[], [3], [2, 0, 1]])
def test_init_rejects_bad_widths(widths):
    with pytest.raises(ConfigurationError):
        mlp_init(widths, 0)


# -- forward -------------------------------------------------------------------

def test_zero_weights_give_bias():
    net = Mlp([jnp.zeros((4, 2)), jnp.zeros((1, 4))], [jnp.zeros(4), jnp.array([0.7])], (2, 4, 1))
    assert float(mlp_forward(net, np.array([0.3, -2.0]))[0]) == 0.7


def test_linear_net():
    assert float(mlp_forward(linear_net(2.5), np.array([1.2]))[0]) == pytest.approx(3.0, abs=1e-15)


def test_forward_matches_reimplementation():
    net = mlp_init([3, 7, 5, 2], 11)
    x = np.random.default_rng(0).normal(size=(20, 3))
    assert np.max(np.abs(np.asarray(mlp_forward(net, x)) - plain_forward(net, x))) < 1e-14


def test_shape_error():
    with pytest.raises(ShapeError):
        mlp_forward(mlp_init([2, 4, 1], 0), np.zeros((5, 3)))


def test_periodic_embedding_matches_at_ends():
    net = mlp_init([3, 8, 1], 2, embed=PeriodicEmbed(2 * np.pi, 0))
    lo = mlp_forward(net, np.array([[-np.pi, 0.4]]))
    hi = mlp_forward(net, np.array([[np.pi, 0.4]]))
    assert abs(float(lo[0, 0] - hi[0, 0])) <= 1e-12


# -- jets ----------------------------------------------------------------------

def test_linear_jet():
    out = mlp_forward_jet(linear_net(1.7), Jet.seed(np.array([[0.3]]), x_index=0))
    assert float(out.d_dx[0, 0]) == pytest.approx(1.7)
    assert float(out.d2_dx2[0, 0]) == 0.0


def test_tanh_jet_at_zero():
    net = Mlp([jnp.ones((1, 1)), jnp.ones((1, 1))], [jnp.zeros(1), jnp.zeros(1)], (1, 1, 1))
    out = mlp_forward_jet(net, Jet.seed(np.zeros((1, 1)), x_index=0))
    assert float(out.value[0, 0]) == 0.0
    assert float(out.d_dx[0, 0]) == pytest.approx(1.0, abs=1e-15)
    assert float(out.d2_dx2[0, 0]) == pytest.approx(0.0, abs=1e-15)


def test_cubic_polynomial_features():
    # a linear net over (x, x^2, x^3) features seeded with their exact jets
    c = np.array([0.3, -1.2, 0.5])
    net = Mlp([jnp.asarray(c[None, :])], [jnp.array([0.25])], (3, 1))
    x = np.linspace(-2, 2, 9)[:, None]
    feats = Jet(jnp.hstack([x, x ** 2, x ** 3]), jnp.hstack([np.ones_like(x), 2 * x, 3 * x ** 2]),
                jnp.hstack([np.zeros_like(x), 2 * np.ones_like(x), 6 * x]))
    out = mlp_forward_jet(net, feats)
    xv = x[:, 0]
    assert np.allclose(out.d_dx[:, 0], c[0] + 2 * c[1] * xv + 3 * c[2] * xv ** 2, atol=1e-12)
    assert np.allclose(out.d2_dx2[:, 0], 2 * c[1] + 6 * c[2] * xv, atol=1e-12)


@pytest.mark.parametrize("embed", [None, PeriodicEmbed(2 * np.pi, 0)])
def test_jet_matches_finite_differences(embed):
    net = mlp_init([3 if embed else 2, 16, 16, 2], 4, embed=embed)
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1, 1, (10, 2))
    jet = mlp_forward_jet(net, Jet.seed(pts, x_index=0, t_index=1))
    assert np.allclose(jet.value, mlp_forward(net, pts), atol=1e-14, rtol=0)
    h = 1e-4
    ex, et = np.array([h, 0.0]), np.array([0.0, h])
    f = lambda p: np.asarray(mlp_forward(net, p))
    dx = (f(pts + ex) - f(pts - ex)) / (2 * h)
    dxx = (f(pts + ex) - 2 * f(pts) + f(pts - ex)) / h ** 2
    dt = (f(pts + et) - f(pts - et)) / (2 * h)
    rel = lambda a, b: np.max(np.abs(a - b)) / np.max(np.abs(b))
    assert rel(np.asarray(jet.d_dx), dx) < 1e-5
    assert rel(np.asarray(jet.d_dt), dt) < 1e-5
    assert rel(np.asarray(jet.d2_dx2), dxx) < 1e-5


# -- reverse mode --------------------------------------------------------------

def test_hand_chain_rule():
    tape = GradTape(lambda w: (w * 2.0 - 0.0) ** 2)
    tape.forward(jnp.array(1.0))
    assert float(backward(tape)) == 8.0


def test_backward_before_forward():
    with pytest.raises(StateError):
        GradTape(lambda p: p).backward()


def test_unused_bias_has_zero_gradient():
    net = mlp_init([1, 4, 1], 0)
    loss = lambda n: jnp.sum(n.weights[0])
    tape = GradTape(loss)
    tape.forward(net)
    g = tape.backward()
    assert np.all(np.asarray(g.biases[1]) == 0.0)


def _jet_loss(pts):
    def loss(net):
        jet = mlp_forward_jet(net, Jet.seed(pts, x_index=0, t_index=1))
        return jnp.mean((jet.d_dt - 0.3 * jet.d2_dx2 + jet.value * jet.d_dx) ** 2) + jnp.mean(jet.value ** 2)
    return loss


def _fd_gradient_error(net, loss, n_checks, rng, h=1e-6):
    tape = GradTape(loss)
    tape.forward(net)
    grads = tape.backward()
    leaves, tree = jax.tree_util.tree_flatten(net)
    gleaves = jax.tree_util.tree_leaves(grads)
    worst = 0.0
    for _ in range(n_checks):
        k = int(rng.integers(len(leaves)))
        idx = tuple(int(rng.integers(s)) for s in leaves[k].shape)
        bumped = []
        for sgn in (1.0, -1.0):
            new = list(leaves)
            new[k] = leaves[k].at[idx].add(sgn * h)
            bumped.append(float(loss(jax.tree_util.tree_unflatten(tree, new))))
        fd = (bumped[0] - bumped[1]) / (2 * h)
        ad = float(gleaves[k][idx])
        worst = max(worst, abs(ad - fd) / max(abs(fd), 1e-3))
    return worst


def test_gradient_check_twenty_random_nets():
    rng = np.random.default_rng(7)
    worst = 0.0
    for s in range(20):
        widths = [2] + [int(w) for w in rng.integers(2, 9, size=2)] + [1]
        net = mlp_init(widths, s)
        pts = rng.uniform(-1, 1, (6, 2))
        worst = max(worst, _fd_gradient_error(net, _jet_loss(pts), 5, rng))
    assert worst <= 1e-4


# -- Adam ----------------------------------------------------------------------

def test_adam_zero_gradient():
    p = {"w": jnp.array([1.0, -2.0])}
    st0 = AdamState.zeros_like(p)
    p1, st1 = adam_step(p, {"w": jnp.zeros(2)}, st0)
    assert np.array_equal(p1["w"], p["w"])
    assert int(st1.step) == 1


@given(g=st.floats(min_value=1e-3, max_value=1e3) | st.floats(min_value=-1e3, max_value=-1e-3))
@settings(max_examples=30, deadline=None)
def test_adam_first_step_is_sign(g):
    p = jnp.array(0.5)
    p1, _ = adam_step(p, jnp.array(g), AdamState.zeros_like(p), lr=1e-3)
    expected = -1e-3 * np.sign(g) / (1.0 + 1e-8 / abs(g))
    assert float(p1 - p) == pytest.approx(expected, rel=1e-10)


def test_adam_quadratic_bowl():
    step = jax.jit(lambda p, s: adam_step(p, 2 * (p - 3.0), s, lr=0.01))
    p, state = jnp.array(0.0), AdamState.zeros_like(jnp.array(0.0))
    for _ in range(5000):
        p, state = step(p, state)
    assert abs(float(p) - 3.0) < 1e-3


def test_adam_shape_mismatch():
    p = {"w": jnp.zeros(2)}
    with pytest.raises(ShapeError):
        adam_step(p, {"w": jnp.zeros(3)}, AdamState.zeros_like(p))


def test_adam_deterministic_trajectory():
    def run():
        net = mlp_init([2, 8, 1], 3)
        state = AdamState.zeros_like(net)
        loss = _jet_loss(np.random.default_rng(0).uniform(-1, 1, (5, 2)))
        step = jax.jit(lambda n, s: adam_step(n, jax.grad(loss)(n), s))
        for _ in range(100):
            net, state = step(net, state)
        return net
    a, b = run(), run()
    assert all(np.array_equal(x, y) for x, y in zip(jax.tree_util.tree_leaves(a), jax.tree_util.tree_leaves(b)))


# -- checkpoints ---------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    net = mlp_init([3, 6, 2], 9, embed=PeriodicEmbed(2.0, 0), input_shift=(0.5, 0.5), input_scale=(0.5, 2.0))
    save_mlp(tmp_path / "n.npz", net)
    back = load_mlp(tmp_path / "n.npz")
    assert back.layer_widths == net.layer_widths and back.embed == net.embed
    assert back.input_shift == net.input_shift and back.input_scale == net.input_scale
    x = np.random.default_rng(2).normal(size=(4, 2))
    assert np.array_equal(mlp_forward(net, x), mlp_forward(back, x))
