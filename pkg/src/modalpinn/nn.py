"""Dense tanh networks with forward jets for input derivatives.

Input derivatives (u, u_x, u_xx, u_t) are propagated analytically layer by
layer; parameter gradients of any loss assembled from those jets come from
reverse mode (``jax.vjp``) over the jet-extended computation.  Everything
runs in float64.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from .errors import ConfigurationError, ShapeError, StateError

jax.config.update("jax_enable_x64", True)


def _tanh(z):
    # XLA's float64 tanh is ~10x slower than exp on CPU; absolute error stays
    # at rounding level and exp overflow to inf still yields +-1.
    s = 1.0 - 2.0 / (jnp.exp(2.0 * z) + 1.0)
    d1 = 1.0 - s * s
    return s, d1, -2.0 * s * d1


def _sin(z):
    s = jnp.sin(z)
    return s, jnp.cos(z), -s


# name -> callable returning (f, f', f'') evaluated at z
ACTIVATIONS: dict[str, Callable] = {"tanh": _tanh, "sin": _sin}


@dataclass(frozen=True)
class PeriodicEmbed:
    """Replace raw input column ``index`` by (sin(2*pi*x/L), cos(2*pi*x/L))."""

    length: float
    index: int = 0


@jax.tree_util.register_dataclass
@dataclass
class Jet:
    """Value plus first/second x-derivative and first t-derivative.

    A ``None`` slot is a structural zero and is skipped during propagation.
    All populated slots share the shape of ``value``.
    """

    value: jnp.ndarray
    d_dx: Optional[jnp.ndarray] = None
    d2_dx2: Optional[jnp.ndarray] = None
    d_dt: Optional[jnp.ndarray] = None

    @classmethod
    def seed(cls, inputs, x_index: Optional[int] = None, t_index: Optional[int] = None,
             second: bool = True) -> "Jet":
        """Seed jets for raw inputs of shape (n, d).

        ``x_index``/``t_index`` mark the spatial and time columns; ``second``
        requests the second x-derivative slot.
        """
        inputs = jnp.asarray(inputs, dtype=jnp.float64)
        d = inputs.shape[-1]
        d_dx = d2 = d_dt = None
        if x_index is not None:
            d_dx = jnp.broadcast_to(jnp.eye(d)[x_index], inputs.shape)
            if second:
                d2 = jnp.zeros_like(inputs)
        if t_index is not None:
            d_dt = jnp.broadcast_to(jnp.eye(d)[t_index], inputs.shape)
        return cls(inputs, d_dx, d2, d_dt)

    def __getitem__(self, idx) -> "Jet":
        return Jet(*(None if a is None else a[idx] for a in
                     (self.value, self.d_dx, self.d2_dx2, self.d_dt)))


def _chain(jet: Jet, f, f1, f2) -> Jet:
    """Apply a scalar function with values f, f', f'' at ``jet.value``."""
    d_dx = d2 = d_dt = None
    if jet.d_dx is not None:
        d_dx = f1 * jet.d_dx
        if jet.d2_dx2 is not None:
            d2 = f2 * jet.d_dx * jet.d_dx + f1 * jet.d2_dx2
    if jet.d_dt is not None:
        d_dt = f1 * jet.d_dt
    return Jet(f, d_dx, d2, d_dt)


def _affine(jet: Jet, weight, bias) -> Jet:
    lin = lambda a: None if a is None else a @ weight.T
    return Jet(jet.value @ weight.T + bias, lin(jet.d_dx), lin(jet.d2_dx2), lin(jet.d_dt))


@jax.tree_util.register_dataclass
@dataclass
class Mlp:
    """Feed-forward network; the last layer is linear.

    ``layer_widths[0]`` is the width seen by the first affine layer, i.e.
    after the periodic embedding (which turns one raw column into two).
    ``input_shift``/``input_scale`` normalize the non-embedded raw columns.
    """

    weights: list
    biases: list
    layer_widths: tuple = field(metadata=dict(static=True))
    activation: str = field(default="tanh", metadata=dict(static=True))
    embed: Optional[PeriodicEmbed] = field(default=None, metadata=dict(static=True))
    input_shift: Optional[tuple] = field(default=None, metadata=dict(static=True))
    input_scale: Optional[tuple] = field(default=None, metadata=dict(static=True))

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0] - (1 if self.embed is not None else 0)

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    def num_params(self) -> int:
        return sum(int(np.size(w)) + int(np.size(b)) for w, b in zip(self.weights, self.biases))

    def __call__(self, inputs):
        return mlp_forward(self, inputs)

    def jet(self, inputs: Jet) -> Jet:
        return mlp_forward_jet(self, inputs)


def mlp_init(layer_widths: Sequence[int], seed: int, activation: str = "tanh",
             embed: Optional[PeriodicEmbed] = None, input_shift=None, input_scale=None) -> Mlp:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    widths = tuple(int(w) for w in layer_widths)
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ConfigurationError(f"need at least two positive widths, got {list(layer_widths)}")
    if activation not in ACTIVATIONS:
        raise ConfigurationError(f"unknown activation {activation!r}")
    if embed is not None and widths[0] < 2:
        raise ConfigurationError("periodic embedding needs first width >= 2")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(jnp.asarray(rng.uniform(-bound, bound, size=(fan_out, fan_in))))
        biases.append(jnp.zeros(fan_out))
    raw = widths[0] - (1 if embed is not None else 0)
    for name, vec in (("input_shift", input_shift), ("input_scale", input_scale)):
        if vec is not None and len(vec) != raw:
            raise ConfigurationError(f"{name} needs {raw} entries, got {len(vec)}")
    return Mlp(weights, biases, widths, activation, embed,
               None if input_shift is None else tuple(float(v) for v in input_shift),
               None if input_scale is None else tuple(float(v) for v in input_scale))


def _check_inputs(net: Mlp, shape) -> None:
    if shape[-1] != net.input_dim:
        raise ShapeError(f"network expects {net.input_dim} inputs, got {shape[-1]}")


def _features(net: Mlp, jet: Jet) -> Jet:
    """Input normalization and periodic embedding, applied column by column."""
    cols = []
    for j in range(net.input_dim):
        col = jet[..., j:j + 1]
        if net.embed is not None and j == net.embed.index:
            k = 2.0 * np.pi / net.embed.length
            s, c = jnp.sin(k * col.value), jnp.cos(k * col.value)
            cols.append(_chain(col, s, k * c, -k * k * s))
            cols.append(_chain(col, c, -k * s, -k * k * c))
            continue
        shift = 0.0 if net.input_shift is None else net.input_shift[j]
        scale = 1.0 if net.input_scale is None else net.input_scale[j]
        if shift != 0.0 or scale != 1.0:
            col = _chain(col, (col.value - shift) / scale, 1.0 / scale, 0.0)
        cols.append(col)
    cat = lambda attr: (None if getattr(cols[0], attr) is None
                        else jnp.concatenate([getattr(c, attr) for c in cols], axis=-1))
    return Jet(cat("value"), cat("d_dx"), cat("d2_dx2"), cat("d_dt"))


def mlp_forward_jet(net: Mlp, inputs: Jet) -> Jet:
    """Propagate input jets of shape (..., input_dim) through the network."""
    _check_inputs(net, inputs.value.shape)
    act = ACTIVATIONS[net.activation]
    h = _features(net, inputs)
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = _affine(h, w, b)
        if k < last:
            h = _chain(h, *act(h.value))
    return h


def mlp_forward(net: Mlp, inputs) -> jnp.ndarray:
    """Plain evaluation; accepts a single vector or a batch of shape (n, d)."""
    x = jnp.asarray(inputs, dtype=jnp.float64)
    _check_inputs(net, x.shape)
    h = _features(net, Jet(x)).value
    act = ACTIVATIONS[net.activation]
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if k < last:
            h = act(h)[0]
    return h


class GradTape:
    """Records ``loss_fn(params)`` for a later reverse sweep.

    >>> tape = GradTape(loss_fn)
    >>> loss = tape.forward(params)
    >>> grads = tape.backward()
    """

    def __init__(self, loss_fn: Callable):
        self.loss_fn = loss_fn
        self._pullback = None
        self.loss = None

    def forward(self, params):
        loss, pullback = jax.vjp(self.loss_fn, params)
        if jnp.ndim(loss) != 0:
            raise ShapeError(f"tape root must be a scalar, got shape {jnp.shape(loss)}")
        self.loss, self._pullback = loss, pullback
        return loss

    def backward(self):
        if self._pullback is None:
            raise StateError("backward() called before forward()")
        (grads,) = self._pullback(jnp.ones((), dtype=jnp.asarray(self.loss).dtype))
        return grads


def backward(tape: GradTape):
    return tape.backward()


@jax.tree_util.register_dataclass
@dataclass
class AdamState:
    m: object
    v: object
    step: jnp.ndarray

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
        return cls(zeros, jax.tree_util.tree_map(jnp.zeros_like, params), jnp.zeros((), jnp.int64))


def _same_layout(a, b) -> bool:
    la, ta = jax.tree_util.tree_flatten(a)
    lb, tb = jax.tree_util.tree_flatten(b)
    return ta == tb and all(jnp.shape(x) == jnp.shape(y) for x, y in zip(la, lb))


def adam_step(params, grads, state: AdamState, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns ``(params, state)``."""
    if not (_same_layout(params, grads) and _same_layout(params, state.m)):
        raise ShapeError("params, grads and Adam moments must share one tree layout")
    step = state.step + 1
    m = jax.tree_util.tree_map(lambda m, g: beta1 * m + (1.0 - beta1) * g, state.m, grads)
    v = jax.tree_util.tree_map(lambda v, g: beta2 * v + (1.0 - beta2) * g * g, state.v, grads)
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    new = jax.tree_util.tree_map(
        lambda p, m, v: p - lr * (m / bc1) / (jnp.sqrt(v / bc2) + eps), params, m, v)
    return new, AdamState(m, v, step)


# -- checkpoints ----------------------------------------------------------

def mlp_to_record(net: Mlp, prefix: str = "") -> dict:
    meta = dict(layer_widths=list(net.layer_widths), activation=net.activation,
                embed=None if net.embed is None else [net.embed.length, net.embed.index],
                input_shift=net.input_shift, input_scale=net.input_scale)
    rec = {prefix + "meta": np.array(json.dumps(meta))}
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        rec[f"{prefix}W{k}"] = np.asarray(w)
        rec[f"{prefix}b{k}"] = np.asarray(b)
    return rec


def mlp_from_record(rec, prefix: str = "") -> Mlp:
    meta = json.loads(str(rec[prefix + "meta"]))
    n = len(meta["layer_widths"]) - 1
    embed = None if meta["embed"] is None else PeriodicEmbed(float(meta["embed"][0]), int(meta["embed"][1]))
    tup = lambda v: None if v is None else tuple(v)
    return Mlp([jnp.asarray(rec[f"{prefix}W{k}"]) for k in range(n)],
               [jnp.asarray(rec[f"{prefix}b{k}"]) for k in range(n)],
               tuple(meta["layer_widths"]), meta["activation"], embed,
               tup(meta["input_shift"]), tup(meta["input_scale"]))


def save_mlp(path, net: Mlp) -> None:
    """Write a self-describing ``.npz`` record (row-major float64 arrays)."""
    with open(path, "wb") as fh:
        np.savez(fh, **mlp_to_record(net))


def load_mlp(path) -> Mlp:
    with np.load(path) as rec:
        return mlp_from_record(rec)
