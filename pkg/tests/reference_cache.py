"""Cached Monte Carlo and classical-BO references shared by the acceptance tests."""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from modalpinn.config import INVERSE_OBS_T, INVERSE_OBS_X, ProblemConfig
from modalpinn.reference import bo_classical_solve, mc_solve

CACHE = Path(__file__).resolve().parent.parent / ".cache" / "reference"


def _fresh() -> bool:
    return os.environ.get("MODALPINN_FRESH", "") not in ("", "0")


def _load_or(name: str, make):
    CACHE.mkdir(parents=True, exist_ok=True)
    path = CACHE / f"{name}.npz"
    if path.exists() and not _fresh():
        with np.load(path) as z:
            return {k: z[k] for k in z.files}
    out = make()
    np.savez(path, **out)
    return out


def inverse_truth_problem():
    return ProblemConfig("diffusion-reaction", {"a": 0.5, "b": 0.3, "sigma_g": 1.0, "l_c": 0.4,
                                                "n_kl": 5}).build()


def inverse_observations(n_samples: int = 10_000, n_x: int = 101, dt: float = 2e-4) -> list:
    """E[u] at the six sites from Monte Carlo under the hidden (a, b) = (0.5, 0.3)."""
    def make():
        prob = inverse_truth_problem().with_time_domain(0.0, max(INVERSE_OBS_T))
        ens = mc_solve(prob, n_samples, n_x, dt, seed=11, snapshot_times=INVERSE_OBS_T)
        vals = [float(ens.mean_at(np.array([x]), t)[0]) for t in INVERSE_OBS_T for x in INVERSE_OBS_X]
        ses = [float(np.sqrt(ens.variance_at(np.array([x]), t)[0] / n_samples))
               for t in INVERSE_OBS_T for x in INVERSE_OBS_X]
        return {"values": np.array(vals), "std_err": np.array(ses)}
    name = f"inverse-obs-{n_samples}-{n_x}-{dt:g}"
    return _load_or(name, make)["values"].tolist()


def dr_forward_mc(n_samples: int = 5_000, n_x: int = 101, dt: float = 1e-3):
    """MC mean and variance of the forward diffusion-reaction problem at t = 0.1, 0.5, 1."""
    def make():
        prob = ProblemConfig("diffusion-reaction", {"a": 0.1, "b": 0.5, "n_kl": 19}).build()
        ens = mc_solve(prob, n_samples, n_x, dt, seed=7, snapshot_times=[0.1, 0.5, 1.0])
        return {"x": ens.x, "times": ens.times, "mean": ens.mean, "variance": ens.variance}
    return _load_or(f"dr-mc-{n_samples}-{n_x}-{dt:g}", make)


def dr_forward_bo(N: int = 4, n_x: int = 101, dt: float = 1e-3, n_samples: int = 1000):
    """Classical BO statistics of the forward diffusion-reaction problem."""
    def make():
        prob = ProblemConfig("diffusion-reaction", {"a": 0.1, "b": 0.5, "n_kl": 19}).build()
        tr = bo_classical_solve(prob, N, n_x, dt, bootstrap_t=0.01, n_samples=n_samples, seed=3,
                                snapshot_times=[0.1, 0.5, 1.0])
        out = {"x": tr.x, "times": np.array([0.1, 0.5, 1.0]), "eigenvalues": tr.eigenvalues,
               "step_times": tr.times, "orthogonality": np.array(json.dumps(tr.orthogonality))}
        mv = [tr.mean_variance(t) for t in (0.1, 0.5, 1.0)]
        out["mean"] = np.stack([m for m, _ in mv])
        out["variance"] = np.stack([v for _, v in mv])
        return out
    return _load_or(f"dr-bo-{N}-{n_x}-{dt:g}-{n_samples}", make)


if __name__ == "__main__":
    print("inverse observations", inverse_observations(), flush=True)
    print("forward MC", dr_forward_mc()["variance"][-1][::10], flush=True)
    print("forward BO", dr_forward_bo()["variance"][-1][::10], flush=True)
