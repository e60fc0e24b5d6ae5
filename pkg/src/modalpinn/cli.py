"""Command-line entry point: ``modalpinn <subcommand> ...``.

Exit status 0 on success, 1 when a run fails with a package error, 2 for
usage errors (unknown subcommands or flags, malformed arguments).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import PRESETS, ProblemConfig, RunConfig, load_config, preset
from .errors import ModalPinnError
from .evaluation import candidate_fields, exact_fields
from .losses import read_loss_log, write_loss_log
from .metrics import field_errors
from .modal import load_modal, load_modal_meta
from .reference import (bo_classical_solve, mc_solve, read_statistics, read_table,
                        write_bo_tables, write_statistics, write_table)
from .training import StitchedSolution, infer_parameters, save_run, train, train_subdomains


class UsageError(Exception):
    """Argument combinations argparse cannot check by itself."""


def _times(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _param(text):
    key, sep, val = str(text).partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key.strip(), float(val)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"parameter {key!r} needs a number") from exc


def _add_problem_args(p):
    g = p.add_argument_group("problem selection (one of)")
    g.add_argument("--config", help="INI run configuration")
    g.add_argument("--preset", choices=PRESETS, help="named configuration")
    g.add_argument("--problem", choices=("advection", "burgers", "diffusion-reaction"))
    p.add_argument("--param", action="append", type=_param, default=[], metavar="KEY=VALUE",
                   help="problem parameter override, repeatable")


def _run_config(args) -> RunConfig:
    chosen = [v for v in (args.config, args.preset, args.problem) if v]
    if len(chosen) != 1:
        raise UsageError("give exactly one of --config, --preset, --problem")
    if args.config:
        rc = load_config(args.config)
    elif args.preset:
        rc = preset(args.preset)
    else:
        rc = RunConfig(ProblemConfig(args.problem), preset("advection-do").train)
    if args.param:
        rc.problem.params = {**rc.problem.params, **dict(args.param)}
    return rc


def _problem_from_meta(path):
    extra = load_modal_meta(path).get("extra", {})
    if "problem_config" not in extra:
        return None
    d = extra["problem_config"]
    return ProblemConfig(d["name"], d.get("params", {}), tuple(d.get("learnable", ())),
                         d.get("observations"), d.get("sensors")).build()


def _emit(summary: dict, out_dir, name="summary.json"):
    text = json.dumps(summary, indent=2, sort_keys=True, default=float)
    if out_dir is not None:
        (Path(out_dir) / name).write_text(text + "\n")
    print(text)


def _out_dir(path) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


# -- subcommands ---------------------------------------------------------------

def cmd_solve(args):
    rc = _run_config(args)
    if args.epochs is not None:
        rc.train = rc.train.replace(epochs=args.epochs)
    out = _out_dir(args.output or rc.output.get("directory", "run"))
    problem = rc.problem.build()
    progress = None
    if args.verbose:
        def progress(done, rec, *rest):
            if rest:
                done, rec = rec, rest[0]
            if done % 1000 == 0:
                print(f"epoch {done} total={rec['total']:.4e}", file=sys.stderr, flush=True)
    if rc.train.subdomains:
        ms, report = train_subdomains(problem, rc.train, progress=progress)
    elif problem.learnable:
        ms, _, _, report = infer_parameters(problem, rc.train, progress=progress)
    else:
        ms, report = train(problem, rc.train, progress=progress)
    report.config = rc.to_dict()
    ckpt = out / "checkpoint.npz"
    save_run(ckpt, ms, report)
    _tag_checkpoints(out, ms, rc)
    report.save(out / "report.json")
    n = len(report.history["total"])
    rows = [{k: report.history[k][e] for k in report.history} for e in range(n)]
    prows = [{k: float(v[e]) for k, v in report.params_history.items()} for e in range(n)] \
        if report.params_history else None
    write_loss_log(out / "loss.csv", rows, prows)
    _emit({"command": "solve", "digest": rc.digest(), "checkpoint": str(ckpt), "report": str(out / "report.json"),
           "loss_log": str(out / "loss.csv"), "epochs": n, "final_loss": report.final_loss(),
           "final_params": report.final_params, "wall_clock": report.wall_clock,
           "pieces": len(ms.pieces) if isinstance(ms, StitchedSolution) else 1}, out)


def _tag_checkpoints(out: Path, ms, rc: RunConfig):
    """Re-save with the problem config so ``compare`` can rebuild the problem."""
    from .modal import save_modal
    extra = {"problem_config": rc.problem.to_dict(), "train_config": rc.train.to_dict()}
    if isinstance(ms, StitchedSolution):
        for j, piece in enumerate(ms.pieces):
            save_modal(out / f"checkpoint.part{j}.npz", piece, extra)
    else:
        save_modal(out / "checkpoint.npz", ms, extra)


def cmd_reference_mc(args):
    rc = _run_config(args)
    problem = rc.problem.build()
    if problem.learnable:
        problem = rc.problem.__class__(rc.problem.name, rc.problem.params).build()
    T = args.T if args.T is not None else problem.t_domain[1]
    times = args.times or [T]
    ens = mc_solve(problem, args.n_samples, args.n_x, args.dt, T=T, seed=args.seed, snapshot_times=times)
    out = _out_dir(args.output)
    write_statistics(out / "statistics.csv", ens.x, ens.times, ens.mean, ens.variance)
    _emit({"command": "reference-mc", "problem": problem.name, "n_samples": ens.n_samples,
           "n_x": args.n_x, "dt": args.dt, "times": list(map(float, ens.times)),
           "table": str(out / "statistics.csv")}, out)


def cmd_reference_bo(args):
    rc = _run_config(args)
    problem = rc.problem.build()
    T = args.T if args.T is not None else problem.t_domain[1]
    times = args.times or [T]
    pts = problem.stochastic_points(args.n_samples, args.seed) if args.training_points else None
    traj = bo_classical_solve(problem, args.modes, args.n_x, args.dt, T=T, bootstrap_t=args.bootstrap_t,
                              n_samples=args.n_samples, seed=args.seed, pts=pts, snapshot_times=times)
    out = _out_dir(args.output)
    paths = write_bo_tables(out / "bo", traj)
    _emit({"command": "reference-bo", "problem": problem.name, "modes": args.modes,
           "final_eigenvalues": traj.eigenvalues[-1].tolist(), "orthogonality": traj.orthogonality,
           "tables": paths}, out)


def _candidate_statistics(path, args):
    """(x, times, mean, variance) from a statistics table or a checkpoint."""
    path = Path(path)
    if path.suffix == ".csv":
        return read_statistics(path)
    problem = _problem_from_meta(path)
    if problem is None:
        if not any((args.config, args.preset, args.problem)):
            raise UsageError(f"{path} carries no problem description; pass --config/--preset/--problem")
        problem = _run_config(args).problem.build()
    ms = load_modal(path)
    times = args.times or [ms.t_domain[1]]
    x = np.linspace(problem.x_domain[0], problem.x_domain[1], args.n_x)
    pts = problem.stochastic_points(args.n_xi, args.seed)
    fields = [candidate_fields(ms, x, t, pts) for t in times]
    return x, np.array(times), np.stack([f["mean"] for f in fields]), np.stack([f["variance"] for f in fields])


def cmd_compare(args):
    cx, ct, cm, cv = _candidate_statistics(args.candidate, args)
    rx, rt, rm, rv = _candidate_statistics(args.reference, args)
    if args.times:
        keep_c = [int(np.argmin(abs(ct - t))) for t in args.times]
        keep_r = [int(np.argmin(abs(rt - t))) for t in args.times]
        ct, cm, cv = ct[keep_c], cm[keep_c], cv[keep_c]
        rt, rm, rv = rt[keep_r], rm[keep_r], rv[keep_r]
    if ct.size != rt.size or not np.allclose(ct, rt, atol=1e-9):
        raise UsageError(f"candidate times {ct.tolist()} and reference times {rt.tolist()} differ")
    if cx.size != rx.size or not np.allclose(cx, rx, atol=1e-12):
        period = (rx[-1] - rx[0]) + (rx[1] - rx[0]) if args.periodic else None
        cm = np.stack([np.interp(rx, cx, m, period=period) for m in cm])
        cv = np.stack([np.interp(rx, cx, v, period=period) for v in cv])
    rows, summary = [], {}
    for k, t in enumerate(rt):
        for name, c, r in (("mean", cm[k], rm[k]), ("variance", cv[k], rv[k])):
            e = field_errors(c, r, rx)
            rows.append((t, 0 if name == "mean" else 1, e["l2"], e["rel_l2"]))
            summary[f"{name}@{t:.6g}"] = e
    out = _out_dir(args.output)
    arr = np.array(rows, dtype=float).T
    write_table(out / "metrics.csv", ("t", "quantity", "l2", "rel_l2"), arr)
    _emit({"command": "compare", "candidate": str(args.candidate), "reference": str(args.reference),
           "quantity_codes": {"0": "mean", "1": "variance"}, "errors": summary,
           "table": str(out / "metrics.csv")}, out)


def cmd_emit_exact(args):
    rc = _run_config(args)
    problem = rc.problem.build()
    if problem.exact is None or not hasattr(problem.exact, "modes"):
        raise UsageError(f"problem {problem.name!r} has no closed-form solution")
    x = np.linspace(problem.x_domain[0], problem.x_domain[1], args.n_x)
    times = args.times or [problem.t_domain[1]]
    pts = problem.stochastic_points(args.n_xi, args.seed)
    fields = [exact_fields(problem, x, t, pts) for t in times]
    out = _out_dir(args.output)
    write_statistics(out / "statistics.csv", x, times, np.stack([f["mean"] for f in fields]),
                     np.stack([f["variance"] for f in fields]))
    N = fields[0]["a"].shape[-1]
    tt = np.repeat(times, N)
    ii = np.tile(np.arange(1, N + 1), len(times))
    write_table(out / "scaling.csv", ("t", "i", "a"), (tt, ii, np.concatenate([f["a"] for f in fields])))
    m = [np.column_stack([x, np.full(x.size, t), np.full(x.size, i + 1), f["modes"][:, i]])
         for t, f in zip(times, fields) for i in range(N)]
    write_table(out / "modes.csv", ("x", "t", "i", "mode"), np.vstack(m).T)
    y = [np.column_stack([np.arange(pts.n), np.full(pts.n, t), np.full(pts.n, i + 1), f["Y"][:, i]])
         for t, f in zip(times, fields) for i in range(N)]
    write_table(out / "coefficients.csv", ("sample", "t", "i", "Y"), np.vstack(y).T)
    _emit({"command": "emit-exact", "problem": problem.name, "times": list(map(float, times)),
           "tables": [str(out / n) for n in ("statistics.csv", "scaling.csv", "modes.csv", "coefficients.csv")]},
          out)


def cmd_loss_history(args):
    src = Path(args.run)
    if src.is_dir():
        src = src / "loss.csv"
    log = read_loss_log(src)
    epochs = log["epoch"].astype(int)
    keep = (epochs % args.every == 0) | (epochs == 1) | (epochs == epochs[-1])
    cols = args.columns.split(",") if args.columns else [c for c in log if c != "epoch"]
    unknown = [c for c in cols if c not in log]
    if unknown:
        raise UsageError(f"unknown loss columns {unknown}; available {sorted(log)}")
    target = Path(args.output) if args.output else None
    data = [log["epoch"][keep]] + [log[c][keep] for c in cols]
    if target is None:
        print(",".join(["epoch"] + cols))
        for row in np.column_stack(data):
            print(",".join([str(int(row[0]))] + [f"{v:.17g}" for v in row[1:]]))
        return
    target.parent.mkdir(parents=True, exist_ok=True)
    write_table(target, ["epoch"] + cols, data)
    print(json.dumps({"command": "loss-history", "rows": int(keep.sum()), "table": str(target),
                      "final": {c: float(log[c][-1]) for c in cols}}, indent=2, sort_keys=True))


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="modalpinn", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("solve", help="train from a configuration, write checkpoint and report")
    _add_problem_args(p)
    p.add_argument("--output", help="run directory (default: [output] directory or ./run)")
    p.add_argument("--epochs", type=int, help="override the configured epoch count")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("reference-mc", help="Monte Carlo mean and variance tables")
    _add_problem_args(p)
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--n-x", type=int, default=128)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--T", type=float)
    p.add_argument("--times", type=_times, help="snapshot times, comma-separated")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default="reference-mc")
    p.set_defaults(func=cmd_reference_mc)

    p = sub.add_parser("reference-bo", help="classical BO solution tables")
    _add_problem_args(p)
    p.add_argument("--modes", type=int, default=4)
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--training-points", action="store_true",
                   help="use the problem's training rule in random space instead of MC samples")
    p.add_argument("--n-x", type=int, default=101)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--T", type=float)
    p.add_argument("--bootstrap-t", type=float, default=0.01)
    p.add_argument("--times", type=_times)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default="reference-bo")
    p.set_defaults(func=cmd_reference_bo)

    p = sub.add_parser("compare", help="mean and variance errors between two sources")
    p.add_argument("candidate", help="statistics .csv or checkpoint .npz")
    p.add_argument("reference", help="statistics .csv or checkpoint .npz")
    _add_problem_args(p)
    p.add_argument("--times", type=_times)
    p.add_argument("--n-x", type=int, default=201)
    p.add_argument("--n-xi", type=int, default=50)
    p.add_argument("--seed", type=int, default=2)
    p.add_argument("--periodic", action="store_true", help="interpolate periodically onto the reference grid")
    p.add_argument("--output", default="compare")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("emit-exact", help="closed-form statistics and modal components")
    _add_problem_args(p)
    p.add_argument("--times", type=_times)
    p.add_argument("--n-x", type=int, default=201)
    p.add_argument("--n-xi", type=int, default=50)
    p.add_argument("--seed", type=int, default=2)
    p.add_argument("--output", default="exact")
    p.set_defaults(func=cmd_emit_exact)

    p = sub.add_parser("loss-history", help="extract the per-epoch loss log")
    p.add_argument("run", help="run directory or loss.csv")
    p.add_argument("--every", type=int, default=1)
    p.add_argument("--columns", help="comma-separated subset of columns")
    p.add_argument("--output", help="write a table instead of printing")
    p.set_defaults(func=cmd_loss_history)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"modalpinn {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (ModalPinnError, OSError, KeyError, ValueError) as exc:
        print(f"modalpinn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
