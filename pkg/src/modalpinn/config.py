"""INI run configuration and the named presets.

Sections: ``[problem]``, ``[networks]``, ``[training]``, ``[points]`` and
``[output]``.  A ``preset`` key in ``[problem]`` starts from a named preset
and every other key overrides it.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .modal import KernelSpec
from .problems import (ObservationSet, ProblemSpec, advection_problem, burgers_problem,
                       diffusion_reaction_problem, sensor_ic_variant)
from .training import TrainConfig, split_interval

ADVECTION_NETS = {"ubar": (32, 32, 32), "a": (16, 16, 16), "u": (32, 32, 32), "y": (64, 64, 64, 64)}
BURGERS_NETS = {"ubar": (32, 32, 32), "a": (32, 32, 32), "u": (64, 64, 64), "y": (32, 32, 32)}
DR_NETS = {"ubar": (32, 32, 32), "a": (4, 4, 4), "u": (64, 64, 64), "y": (64, 64, 64)}
DR_NETS_DESK = {"ubar": (32, 32, 32), "a": (4, 4, 4), "u": (32, 32, 32), "y": (32, 32, 32)}

INVERSE_OBS_X = (-0.5, 0.0, 0.5)
INVERSE_OBS_T = (0.1, 0.9)


@dataclass
class ProblemConfig:
    """Key-value description of a problem, enough to rebuild the ProblemSpec."""

    name: str
    params: dict = field(default_factory=dict)
    learnable: tuple = ()
    observations: Optional[list] = None  # [(x, t, value), ...]
    sensors: Optional[dict] = None       # n_sensors, noise_sd, seed

    def build(self) -> ProblemSpec:
        p = dict(self.params)
        obs = None
        if self.observations:
            arr = np.asarray(self.observations, dtype=float).reshape(-1, 3)
            obs = ObservationSet(arr[:, 0], arr[:, 1], arr[:, 2])
        if self.name == "advection":
            prob = advection_problem(p.get("sigma", 0.8))
            if "T" in p:
                prob = prob.with_time_domain(0.0, p["T"])
        elif self.name == "burgers":
            prob = burgers_problem(p.get("nu", 0.1))
            if "T" in p:
                prob = prob.with_time_domain(0.0, p["T"])
        elif self.name == "diffusion-reaction":
            kernel = KernelSpec(p.get("sigma_g", 1.0) ** 2, p.get("l_c", 0.1))
            prob = diffusion_reaction_problem(p.get("a", 0.1), p.get("b", 0.5), kernel,
                                              int(p.get("n_kl", 19)), self.learnable, obs,
                                              T=p.get("T", 1.0))
        else:
            raise ConfigurationError(f"unknown problem {self.name!r}")
        if self.name != "diffusion-reaction" and (self.learnable or obs is not None):
            raise ConfigurationError(f"problem {self.name!r} has no learnable parameters")
        if self.sensors:
            s = self.sensors
            prob = sensor_ic_variant(prob, int(s.get("n_sensors", 30)), float(s.get("noise_sd", 0.1)),
                                     int(s.get("seed", 0)))
        return prob

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunConfig:
    problem: ProblemConfig
    train: TrainConfig
    output: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(problem=self.problem.to_dict(), train=self.train.to_dict(), output=dict(self.output))

    def digest(self) -> str:
        """Stable short hash of everything that affects a training result."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, default=float)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


# -- presets ---------------------------------------------------------------

def dr_observations(values) -> list:
    """The six (x, t) inverse-problem sites paired with mean values."""
    sites = [(x, t) for t in INVERSE_OBS_T for x in INVERSE_OBS_X]
    if len(values) != len(sites):
        raise ConfigurationError(f"need {len(sites)} observation values, got {len(values)}")
    return [(x, t, float(v)) for (x, t), v in zip(sites, values)]


def preset(name: str) -> RunConfig:
    """Named configurations; ``*-paper`` entries follow the published sizes and epochs."""
    P, T = ProblemConfig, TrainConfig
    if name in ("advection-do", "advection-bo", "advection-do-paper", "advection-bo-paper"):
        kind = "DO" if "-do" in name else "BO"
        epochs = 300_000 if name.endswith("paper") else 100_000
        return RunConfig(P("advection", {"sigma": 0.8}),
                         T(constraint=kind, n_modes=2, epochs=epochs, n_x=50, n_t=50, n_xi=50,
                           networks=ADVECTION_NETS))
    if name in ("burgers", "burgers-full"):
        T_end = np.pi if name == "burgers" else 10 * np.pi
        k = 1 if name == "burgers" else 10
        return RunConfig(P("burgers", {"nu": 0.1, "T": float(T_end)}),
                         T(constraint="BO", n_modes=2, epochs=50_000, n_x=50, n_t=30, n_xi=8,
                           networks=BURGERS_NETS, subdomains=split_interval(0.0, T_end, k)))
    if name == "dr-forward-paper":
        return RunConfig(P("diffusion-reaction", {"a": 0.1, "b": 0.5, "sigma_g": 1.0, "l_c": 0.1, "n_kl": 19}),
                         T(constraint="BO", n_modes=6, epochs=300_000, n_x=51, n_t=50, n_xi=1000,
                           networks=DR_NETS, separate_a=True))
    if name == "dr-forward":
        return RunConfig(P("diffusion-reaction", {"a": 0.1, "b": 0.5, "sigma_g": 1.0, "l_c": 0.1, "n_kl": 19}),
                         T(constraint="BO", n_modes=4, epochs=100_000, n_x=51, n_t=20, n_xi=500,
                           networks=DR_NETS_DESK, separate_a=True))
    if name in ("dr-inverse", "dr-inverse-paper"):
        paper = name.endswith("paper")
        return RunConfig(P("diffusion-reaction", {"a": 0.5, "b": 0.3, "sigma_g": 1.0, "l_c": 0.4, "n_kl": 5},
                           learnable=("a", "b")),
                         T(constraint="BO", n_modes=4, epochs=300_000 if paper else 100_000, n_x=51,
                           n_t=50 if paper else 20, n_xi=1000 if paper else 500,
                           networks=DR_NETS if paper else DR_NETS_DESK, separate_a=True,
                           initial_params={"a": 1.0, "b": 1.0}))
    raise ConfigurationError(f"unknown preset {name!r}; choose from {PRESETS}")


PRESETS = ("advection-do", "advection-bo", "advection-do-paper", "advection-bo-paper", "burgers",
           "burgers-full", "dr-forward", "dr-forward-paper", "dr-inverse", "dr-inverse-paper")


# -- INI parsing ---------------------------------------------------------------

def _ints(text: str) -> tuple:
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"expected a boolean, got {text!r}")


_TRAIN_INT = ("n_modes", "epochs", "seed", "chunk")
_POINT_INT = ("n_x", "n_t", "n_xi", "time_seed", "xi_seed")
_PROBLEM_FLOATS = ("sigma", "nu", "a", "b", "sigma_g", "l_c", "n_kl", "T")


def parse_config(text: str, base_dir: Optional[Path] = None) -> RunConfig:
    """Parse INI text into a RunConfig; unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep the final-time key ``T`` distinct from ``t``
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc
    allowed = {"problem", "networks", "training", "points", "output"}
    extra = set(cp.sections()) - allowed
    if extra:
        raise ConfigurationError(f"unknown config sections {sorted(extra)}")
    if not cp.has_section("problem"):
        raise ConfigurationError("config needs a [problem] section")
    prob = dict(cp["problem"])
    if "preset" in prob:
        rc = preset(prob.pop("preset"))
        pc, tc = rc.problem, rc.train
    else:
        if "name" not in prob:
            raise ConfigurationError("[problem] needs name or preset")
        pc, tc = ProblemConfig(prob["name"]), TrainConfig()
    pc = dataclasses.replace(pc, params=dict(pc.params))
    if "name" in prob:
        pc.name = prob.pop("name")
    for key, val in prob.items():
        if key in _PROBLEM_FLOATS:
            pc.params[key] = float(val)
        elif key == "learnable":
            pc.learnable = tuple(v.strip() for v in val.split(",") if v.strip())
        elif key == "observations":
            pc.observations = [tuple(float(v) for v in item.split(":")) for item in val.split(";") if item.strip()]
            if any(len(o) != 3 for o in pc.observations):
                raise ConfigurationError("observations are x:t:value items separated by ';'")
        elif key in ("n_sensors", "noise_sd", "sensor_seed"):
            pc.sensors = dict(pc.sensors or {})
            pc.sensors[key.replace("sensor_", "")] = float(val)
        else:
            raise ConfigurationError(f"unknown [problem] key {key!r}")
    changes, init = {}, dict(tc.initial_params)
    nets = dict(tc.networks)
    if cp.has_section("networks"):
        for key, val in cp["networks"].items():
            if key in ("ubar", "a", "u", "y"):
                nets[key] = _ints(val)
            elif key == "separate_a":
                changes["separate_a"] = _bool(val)
            elif key == "activation":
                changes["activation"] = val.strip()
            else:
                raise ConfigurationError(f"unknown [networks] key {key!r}")
    changes["networks"] = nets
    for section, ints in (("training", _TRAIN_INT), ("points", _POINT_INT)):
        if not cp.has_section(section):
            continue
        for key, val in cp[section].items():
            if key in ints:
                changes[key] = int(val)
            elif section == "training" and key == "constraint":
                changes["constraint"] = val.strip().upper()
            elif section == "training" and key in ("lr", "obs_weight"):
                changes[key] = float(val)
            elif section == "training" and key == "weights":
                changes["weights"] = _floats(val)
            elif section == "training" and key == "warm_start":
                changes["warm_start"] = _bool(val)
            elif section == "training" and key == "subdomains":
                changes["subdomains"] = int(val)
            elif section == "training" and key.startswith("initial_"):
                init[key[len("initial_"):]] = float(val)
            else:
                raise ConfigurationError(f"unknown [{section}] key {key!r}")
    changes["initial_params"] = init
    k = changes.pop("subdomains", None)
    tc = tc.replace(**changes)
    if k is not None:
        t_end = pc.params.get("T") or pc.build().t_domain[1]
        tc = tc.replace(subdomains=split_interval(0.0, float(t_end), k))
    output = dict(cp["output"]) if cp.has_section("output") else {}
    if base_dir is not None and "directory" in output:
        output["directory"] = str((Path(base_dir) / output["directory"]).resolve())
    return RunConfig(pc, tc, output)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.parent)


def format_config(rc: RunConfig) -> str:
    """INI text that parses back to ``rc``."""
    p, t = rc.problem, rc.train
    lines = ["[problem]", f"name = {p.name}"]
    lines += [f"{k} = {v!r}" for k, v in sorted(p.params.items())]
    if p.learnable:
        lines.append("learnable = " + ",".join(p.learnable))
    if p.observations:
        lines.append("observations = " + ";".join(f"{x!r}:{tt!r}:{v!r}" for x, tt, v in p.observations))
    if p.sensors:
        for k, v in sorted(p.sensors.items()):
            lines.append(f"{'sensor_seed' if k == 'seed' else k} = {v!r}")
    lines += ["", "[networks]"]
    lines += [f"{k} = " + ",".join(str(w) for w in t.networks[k]) for k in ("ubar", "a", "u", "y")]
    lines += [f"separate_a = {t.separate_a}", f"activation = {t.activation}", "", "[training]",
              f"constraint = {t.constraint}", f"n_modes = {t.n_modes}", f"epochs = {t.epochs}",
              f"lr = {t.lr!r}", "weights = " + ",".join(repr(w) for w in t.weights),
              f"obs_weight = {t.obs_weight!r}", f"seed = {t.seed}", f"chunk = {t.chunk}",
              f"warm_start = {t.warm_start}"]
    if t.subdomains:
        lines.append(f"subdomains = {len(t.subdomains)}")
    lines += [f"initial_{k} = {v!r}" for k, v in sorted(t.initial_params.items())]
    lines += ["", "[points]"] + [f"{k} = {getattr(t, k)}" for k in _POINT_INT]
    if rc.output:
        lines += ["", "[output]"] + [f"{k} = {v}" for k, v in sorted(rc.output.items())]
    return "\n".join(lines) + "\n"
