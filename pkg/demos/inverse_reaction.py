"""Recover the diffusion and reaction coefficients from six mean observations.

Observations of E[u] at x = -0.5, 0, 0.5 and t = 0.1, 0.9 come from a Monte
Carlo run with (a, b) = (0.5, 0.3); training starts from a = b = 1.
"""
import argparse

import numpy as np

from modalpinn.config import INVERSE_OBS_T, INVERSE_OBS_X, ProblemConfig, dr_observations, preset
from modalpinn.reference import mc_solve
from modalpinn.training import infer_parameters


def observations(n_samples):
    truth = ProblemConfig("diffusion-reaction", {"a": 0.5, "b": 0.3, "sigma_g": 1.0, "l_c": 0.4,
                                                 "n_kl": 5}).build().with_time_domain(0.0, 0.9)
    ens = mc_solve(truth, n_samples, 101, 2e-4, seed=11, snapshot_times=INVERSE_OBS_T)
    return [float(ens.mean_at(np.array([x]), t)[0]) for t in INVERSE_OBS_T for x in INVERSE_OBS_X]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=5000)
    ap.add_argument("--mc-samples", type=int, default=2000)
    args = ap.parse_args()

    rc = preset("dr-inverse")
    rc.problem.observations = dr_observations(observations(args.mc_samples))
    prob = rc.problem.build()

    def progress(done, rec):
        if done % 1000 == 0:
            print(f"epoch {done:6d} total {rec['total']:.3e}", flush=True)

    _, est, traj, _ = infer_parameters(prob, rc.train.replace(epochs=args.epochs), progress=progress)
    print(f"a = {est['a']:.4f} (true 0.5), b = {est['b']:.4f} (true 0.3)")


if __name__ == "__main__":
    main()
