"""Full-batch Adam training of the four networks, time-domain decomposition
and inverse-parameter inference."""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from .errors import ConfigurationError, DivergenceError
from .losses import DEFAULT_WEIGHTS, OBSERVATION_WEIGHT, LossBreakdown, make_loss
from .modal import (ICComponents, ModalSolution, modal_components, network_modal_solution,
                    reconstruct, save_modal, variance_field, mean_field)
from .nn import AdamState, PeriodicEmbed, adam_step, mlp_init
from .problems import ProblemSpec, initial_components
from .quadrature import StochasticPoints, TrainingGrid, sample_uniform_times

NET_NAMES = ("ubar", "a", "u", "y")
LOSS_NORMALIZATION = ("weak residuals e2, e3 and the DO/BO mode terms are averaged over the mode "
                      "index i as well (an extra 1/N)")


@dataclass
class TrainConfig:
    """Everything a training run needs besides the problem.

    ``networks`` maps ubar/a/u/y to hidden-layer widths.  ``separate_a``
    builds one scalar network per mode instead of a joint one.
    ``subdomains`` is a list of (t_start, t_end); empty means one domain.
    """

    constraint: str = "DO"
    n_modes: int = 2
    epochs: int = 1000
    lr: float = 1e-3
    weights: tuple = DEFAULT_WEIGHTS
    obs_weight: float = OBSERVATION_WEIGHT
    n_x: int = 50
    n_t: int = 50
    n_xi: int = 50
    seed: int = 0
    time_seed: int = 1
    xi_seed: int = 2
    networks: dict = field(default_factory=lambda: {"ubar": (32, 32, 32), "a": (16, 16, 16),
                                                      "u": (32, 32, 32), "y": (64, 64, 64, 64)})
    separate_a: bool = False
    activation: str = "tanh"
    subdomains: list = field(default_factory=list)
    warm_start: bool = True
    initial_params: dict = field(default_factory=dict)
    chunk: int = 100

    def __post_init__(self):
        self.constraint = str(self.constraint).upper()
        if self.constraint not in ("DO", "BO"):
            raise ConfigurationError(f"constraint must be DO or BO, got {self.constraint!r}")
        if int(self.epochs) < 1:
            raise ConfigurationError("epochs must be at least 1")
        if self.n_modes < 0:
            raise ConfigurationError("n_modes must be nonnegative")
        if min(self.n_x, self.n_t, self.n_xi) < 1 or self.n_x < 2:
            raise ConfigurationError("training point counts must be positive (n_x >= 2)")
        if self.lr <= 0:
            raise ConfigurationError("learning rate must be positive")
        missing = set(NET_NAMES) - set(self.networks)
        if missing:
            raise ConfigurationError(f"network sizes missing for {sorted(missing)}")
        self.networks = {k: tuple(int(w) for w in v) for k, v in self.networks.items()}
        self.weights = tuple(float(w) for w in self.weights)
        self.subdomains = [tuple(float(v) for v in s) for s in self.subdomains]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["networks"] = {k: list(v) for k, v in self.networks.items()}
        d["weights"] = list(self.weights)
        d["subdomains"] = [list(s) for s in self.subdomains]
        return d

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class RunReport:
    history: dict
    params_history: dict
    wall_clock: float
    config: dict
    problem: str
    metrics: dict = field(default_factory=dict)
    final_params: dict = field(default_factory=dict)
    segments: list = field(default_factory=list)

    def final_loss(self) -> dict:
        return {k: float(v[-1]) for k, v in self.history.items()}

    def trend_violations(self, window: int = 1000) -> int:
        """Number of increases between consecutive ``window``-epoch block means."""
        total = np.asarray(self.history["total"])
        n = total.size // window
        if n < 2:
            return 0
        means = total[: n * window].reshape(n, window).mean(axis=1)
        return int(np.sum(np.diff(means) > 0))

    def to_json(self) -> dict:
        return dict(problem=self.problem, config=self.config, wall_clock=self.wall_clock,
                    metrics=self.metrics, final_params=self.final_params,
                    final_loss=self.final_loss(), epochs=int(len(self.history["total"])),
                    trend_violations=self.trend_violations(), segments=self.segments,
                    loss_normalization=LOSS_NORMALIZATION)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)


# -- network construction ------------------------------------------------

def build_modal_solution(problem: ProblemSpec, config: TrainConfig,
                         t_domain: Optional[tuple] = None) -> ModalSolution:
    """Fresh networks with inputs normalized to [-1, 1] on the given time domain."""
    t0, t1 = problem.t_domain if t_domain is None else t_domain
    tc, th = 0.5 * (t0 + t1), 0.5 * (t1 - t0)
    x0, x1 = problem.x_domain
    xc, xh = 0.5 * (x0 + x1), 0.5 * (x1 - x0)
    N, d = config.n_modes, problem.xi_dim
    embed = PeriodicEmbed(problem.bc.length) if problem.periodic else None
    first = 3 if embed is not None else 2
    act = config.activation
    seed = config.seed * 1000
    H = config.networks

    def xt_net(hidden, out, k):
        return mlp_init((first,) + hidden + (out,), seed + k, act, embed, (xc, tc), (xh, th))

    ubar = xt_net(H["ubar"], 1, 0)
    if N == 0:
        return network_modal_solution(ubar, [], None, None, 0, problem.x_domain, (t0, t1), d)
    if config.separate_a:
        a_nets = [mlp_init((1,) + H["a"] + (1,), seed + 10 + i, act, None, (tc,), (th,)) for i in range(N)]
    else:
        a_nets = [mlp_init((1,) + H["a"] + (N,), seed + 1, act, None, (tc,), (th,))]
    u_net = xt_net(H["u"], N, 2)
    shift = tuple(problem.y_input_shift or (0.0,) * d) + (tc,)
    scale = tuple(problem.y_input_scale or (1.0,) * d) + (th,)
    y_net = mlp_init((d + 1,) + H["y"] + (N,), seed + 3, act, None, shift, scale)
    return network_modal_solution(ubar, a_nets, u_net, y_net, N, problem.x_domain, (t0, t1), d)


def _retime(src: ModalSolution, template: ModalSolution) -> ModalSolution:
    """Copy weights of ``src`` into the static layout (time normalization) of ``template``."""
    def copy(a, b):
        return None if b is None else dataclasses.replace(b, weights=list(a.weights), biases=list(a.biases))
    return dataclasses.replace(template, ubar=copy(src.ubar, template.ubar),
                               a_nets=[copy(p, q) for p, q in zip(src.a_nets, template.a_nets)],
                               u_net=copy(src.u_net, template.u_net), y_net=copy(src.y_net, template.y_net))


# -- training ---------------------------------------------------------------

def training_grid(problem: ProblemSpec, config: TrainConfig, t_domain=None) -> TrainingGrid:
    t0, t1 = problem.t_domain if t_domain is None else t_domain
    x = problem.spatial_grid(config.n_x)
    t = sample_uniform_times(config.n_t, t0, t1, config.time_seed)
    pts = problem.stochastic_points(config.n_xi, config.xi_seed)
    return TrainingGrid(x, t, pts)


def _learnable_init(problem: ProblemSpec, config: TrainConfig) -> dict:
    out = {}
    for name in sorted(problem.learnable):
        out[name] = jnp.asarray(float(config.initial_params.get(name, problem.params[name])))
    return out


def _fit(problem: ProblemSpec, config: TrainConfig, grid: TrainingGrid, ic: ICComponents,
         ms: ModalSolution, learn: dict, progress=None):
    loss_fn = make_loss(problem, grid, ic, config.constraint, config.weights, config.obs_weight)

    def objective(tr):
        br = loss_fn(tr[0], tr[1])
        return br.total, br

    grad_fn = jax.value_and_grad(objective, has_aux=True)
    lr = config.lr

    def one(carry, _):
        tr, opt = carry
        (_, br), g = grad_fn(tr)
        tr, opt = adam_step(tr, g, opt, lr)
        rec = {k: getattr(br, k) for k in LossBreakdown.FIELDS}
        return (tr, opt), (rec, tr[1])

    @jax.jit
    def run_chunk(tr, opt, n_dummy):
        return jax.lax.scan(one, (tr, opt), n_dummy)

    tr = (ms, learn)
    opt = AdamState.zeros_like(tr)
    epochs, chunk = int(config.epochs), max(1, int(config.chunk))
    hist = {k: [] for k in LossBreakdown.FIELDS}
    phist = {k: [] for k in learn}
    done = 0
    while done < epochs:
        n = min(chunk, epochs - done)
        (new_tr, new_opt), (rec, ptraj) = run_chunk(tr, opt, jnp.zeros(n))
        rec = {k: np.asarray(v) for k, v in rec.items()}
        if not np.all(np.isfinite(rec["total"])):
            bad = done + int(np.argmin(np.isfinite(rec["total"])))
            raise DivergenceError(f"non-finite loss at epoch {bad + 1}", checkpoint=tr[0])
        for k in hist:
            hist[k].append(rec[k])
        for k in phist:
            phist[k].append(np.asarray(ptraj[k]))
        tr, opt = new_tr, new_opt
        done += n
        if progress is not None:
            progress(done, {k: float(v[-1]) for k, v in rec.items()})
    hist = {k: np.concatenate(v) for k, v in hist.items()}
    phist = {k: np.concatenate(v) for k, v in phist.items()}
    return tr[0], {k: float(v) for k, v in tr[1].items()}, hist, phist


def train(problem: ProblemSpec, config: TrainConfig, ic: Optional[ICComponents] = None,
          init: Optional[ModalSolution] = None, progress=None):
    """Train on the problem's whole time domain; returns ``(ModalSolution, RunReport)``."""
    if problem.learnable and problem.observations is None:
        raise ConfigurationError("learnable parameters need observations")
    start = time.perf_counter()
    grid = training_grid(problem, config)
    if ic is None:
        ic = initial_components(problem, grid.x, grid.xi, config.n_modes)
    if ic.n_modes != config.n_modes:
        raise ConfigurationError(f"initial components carry {ic.n_modes} modes, config asks for {config.n_modes}")
    ms = build_modal_solution(problem, config)
    if init is not None:
        ms = _retime(init, ms)
    learn = _learnable_init(problem, config)
    ms, params, hist, phist = _fit(problem, config, grid, ic, ms, learn, progress)
    report = RunReport(hist, phist, time.perf_counter() - start, config.to_dict(), problem.name,
                       final_params=params)
    return ms, report


# -- time-domain decomposition ---------------------------------------------

@dataclass
class StitchedSolution:
    """Sequence of modal solutions on contiguous time intervals."""

    pieces: list  # list of ModalSolution

    @property
    def t_domain(self):
        return (self.pieces[0].t_domain[0], self.pieces[-1].t_domain[1])

    def piece_at(self, t: float) -> ModalSolution:
        for ms in self.pieces:
            if t <= ms.t_domain[1] + 1e-12:
                return ms
        return self.pieces[-1]

    def mean(self, x, t: float):
        return mean_field(self.piece_at(t), x, t)

    def variance(self, x, t: float, pts: StochasticPoints):
        return variance_field(self.piece_at(t), x, t, pts)

    def reconstruct(self, x, t: float, xi):
        return reconstruct(self.piece_at(t), x, t, xi)


def split_interval(t0: float, t1: float, k: int) -> list:
    if k < 1:
        raise ConfigurationError("need at least one subdomain")
    edges = np.linspace(t0, t1, k + 1)
    return [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]


def check_subdomains(subdomains: Sequence, t_domain) -> list:
    subs = [tuple(float(v) for v in s) for s in subdomains] or [tuple(t_domain)]
    if not np.isclose(subs[0][0], t_domain[0]):
        raise ConfigurationError(f"subdomains start at {subs[0][0]}, problem starts at {t_domain[0]}")
    for (a, b), (c, _) in zip(subs[:-1], subs[1:]):
        if not a < b:
            raise ConfigurationError(f"empty subdomain [{a}, {b}]")
        if not np.isclose(b, c, rtol=0.0, atol=1e-12):
            raise ConfigurationError(f"gap or overlap between subdomains at t={b} and t={c}")
    if not subs[-1][0] < subs[-1][1]:
        raise ConfigurationError(f"empty subdomain {subs[-1]}")
    return subs


def handoff_components(ms: ModalSolution, t: float, x, pts: StochasticPoints) -> ICComponents:
    """Networks evaluated at time t as initial targets for the next interval."""
    ub, a, U, Y = modal_components(ms, x, t, pts)
    return ICComponents(np.asarray(ub), np.asarray(U), np.asarray(a), np.asarray(Y))


def train_subdomains(problem: ProblemSpec, config: TrainConfig, progress=None):
    """Train intervals in order, each initialized from the previous end time."""
    subs = check_subdomains(config.subdomains, problem.t_domain)
    pieces, reports = [], []
    ic, prev = None, None
    start = time.perf_counter()
    for j, (a, b) in enumerate(subs):
        sub = problem.with_time_domain(a, b)
        ms, rep = train(sub, config, ic=ic, init=prev if config.warm_start else None,
                        progress=None if progress is None else (lambda d, r, j=j: progress(j, d, r)))
        pieces.append(ms)
        reports.append(rep)
        grid = training_grid(sub, config)
        ic = handoff_components(ms, b, grid.x, grid.xi)
        prev = ms
    hist = {k: np.concatenate([r.history[k] for r in reports]) for k in reports[0].history}
    phist = {k: np.concatenate([r.params_history[k] for r in reports]) for k in reports[0].params_history}
    seg = [dict(t_start=a, t_end=b, final_loss=r.final_loss(), wall_clock=r.wall_clock)
           for (a, b), r in zip(subs, reports)]
    report = RunReport(hist, phist, time.perf_counter() - start, config.to_dict(), problem.name,
                       final_params=reports[-1].final_params, segments=seg)
    return StitchedSolution(pieces), report


def interface_jumps(stitched: StitchedSolution, x) -> list:
    """max |ubar_{j+1} - ubar_j| at each interface time."""
    out = []
    for p, q in zip(stitched.pieces[:-1], stitched.pieces[1:]):
        t = p.t_domain[1]
        out.append(float(np.max(np.abs(np.asarray(mean_field(q, x, t) - mean_field(p, x, t))))))
    return out


# -- inverse problems ---------------------------------------------------------

def infer_parameters(problem: ProblemSpec, config: TrainConfig, progress=None):
    """Train with learnable physical parameters; returns (ms, estimates, trajectory, report)."""
    if not problem.learnable:
        raise ConfigurationError("problem declares no learnable parameters")
    if problem.observations is None or len(problem.observations) == 0:
        raise ConfigurationError("inverse runs need at least one observation")
    problem.observations.check_inside(problem.x_domain, problem.t_domain)
    ms, report = train(problem, config, progress=progress)
    return ms, dict(report.final_params), report.params_history, report


# -- checkpoints ---------------------------------------------------------------

def save_run(path, ms, report: RunReport) -> None:
    extra = dict(problem=report.problem, config=report.config, final_params=report.final_params)
    if isinstance(ms, StitchedSolution):
        for j, piece in enumerate(ms.pieces):
            save_modal(f"{path}.part{j}.npz" if not str(path).endswith(".npz")
                       else str(path)[:-4] + f".part{j}.npz", piece, extra)
        return
    save_modal(path, ms, extra)
