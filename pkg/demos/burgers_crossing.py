"""Eigenvalue crossings stop the classical BO solver on the Burgers benchmark.

Lists the analytic crossing times of a_1(t) = a_2(t) on [0, pi] and runs
the closed-form BO system until it raises at the first one.
"""
import numpy as np

from modalpinn.errors import CrossingError
from modalpinn.problems import burgers_eigenvalue_crossings, burgers_problem
from modalpinn.reference import bo_classical_solve


def main():
    roots = burgers_eigenvalue_crossings((0.0, np.pi))
    print("analytic crossings on [0, pi]:", ", ".join(f"{r:.4f}" for r in roots))
    prob = burgers_problem(0.1)
    try:
        bo_classical_solve(prob, 2, 128, 1e-3, T=1.0, bootstrap_t=0.0, pts=prob.stochastic_points(8))
        print("classical BO finished without a crossing")
    except CrossingError as exc:
        print(f"classical BO stopped: {exc} (first analytic root {roots[0]:.4f})")


if __name__ == "__main__":
    main()
