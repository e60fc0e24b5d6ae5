"""Train NN-DO or NN-BO on stochastic advection and report errors at t = pi.

    python demos/train_advection.py --constraint BO --epochs 2000

The paper-sized networks are used; 100 000 epochs take roughly two hours on
one CPU core.
"""
import argparse

import numpy as np

from modalpinn.config import preset
from modalpinn.evaluation import compare_with_exact
from modalpinn.training import train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--constraint", choices=("DO", "BO"), default="DO")
    ap.add_argument("--epochs", type=int, default=2000)
    args = ap.parse_args()

    rc = preset("advection-do" if args.constraint == "DO" else "advection-bo")
    cfg = rc.train.replace(epochs=args.epochs)
    prob = rc.problem.build()

    def progress(done, rec):
        if done % 1000 == 0:
            print(f"epoch {done:6d} total {rec['total']:.3e}", flush=True)

    ms, report = train(prob, cfg, progress=progress)
    errs = compare_with_exact(ms, prob, np.pi, prob.stochastic_points(50))
    print(f"relative L2 at t=pi: mean {100 * errs['mean']['rel_l2']:.2f}%, "
          f"variance {100 * errs['variance']['rel_l2']:.2f}% ({report.wall_clock:.0f}s)")


if __name__ == "__main__":
    main()
