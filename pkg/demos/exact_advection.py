"""Closed-form advection components against the loss and a Monte Carlo run.

Freezes the four components to the exact normalized DO/BO expansion, prints
every loss term, then compares a Monte Carlo ensemble with the closed-form
mean and variance at t = pi.
"""
import numpy as np

from modalpinn.losses import make_loss
from modalpinn.problems import advection_problem, exact_modal_solution, initial_components
from modalpinn.reference import mc_solve
from modalpinn.training import TrainConfig, training_grid


def main():
    prob = advection_problem(0.8)
    grid = training_grid(prob, TrainConfig(n_x=50, n_t=50, n_xi=50))
    ic = initial_components(prob, grid.x, grid.xi, 2)
    ms = exact_modal_solution(prob, grid.xi)
    for kind in ("DO", "BO"):
        terms = make_loss(prob, grid, ic, kind)(ms).as_dict()
        print(kind, " ".join(f"{k}={v:.3e}" for k, v in terms.items()))

    ens = mc_solve(prob, 2000, 128, np.pi / 200, seed=5)
    mean, var = ens.at(np.pi)
    err_m = np.max(np.abs(mean - prob.exact.mean(ens.x, np.pi)))
    err_v = np.max(np.abs(var - prob.exact.variance(ens.x, np.pi)))
    print(f"MC (2000 samples) at t=pi: max |mean error| {err_m:.4f}, max |variance error| {err_v:.4f}")


if __name__ == "__main__":
    main()
