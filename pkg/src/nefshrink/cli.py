"""Command-line interface: fit a matrix, run an experiment, read off rates."""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from .estimators import FIT_MODES, fit
from .families import DataMatrix, default_tau, make_family
from .harness import (
    ExperimentConfig,
    aggregate_records,
    fit_rate,
    read_records_csv,
    run_experiment,
    write_records_csv,
)
from .optimize import SolverOptions

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nefshrink",
        description="Shrinkage estimation for exponential families with "
        "quadratic variance functions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit shrinkage weights to a data matrix")
    p_fit.add_argument("matrix", help="comma-separated data matrix, no header")
    p_fit.add_argument("--family", required=True, help="family token")
    p_fit.add_argument("--lambda", dest="lam", type=float, default=None,
                       help="gamma shape parameter")
    p_fit.add_argument("--N", dest="trials", type=int, default=None,
                       help="trial count for (neg)multinomial rows")
    p_fit.add_argument("--tau", default=None,
                       help="comma-separated tau matrix (default: family canonical)")
    p_fit.add_argument("--mode", choices=FIT_MODES, default="location")
    p_fit.add_argument("--max-iter", type=int, default=200)
    p_fit.add_argument("--tol", type=float, default=1e-10)
    p_fit.add_argument("--out", required=True, help="path for the estimate matrix")

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    p_sim.add_argument("--config", required=True, help="flat key = value config file")
    p_sim.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_sim.add_argument("--out", required=True, help="path for the records CSV")
    p_sim.add_argument("--workers", type=int, default=1)

    p_rates = sub.add_parser("rates", help="log-log rate diagnostics from a records CSV")
    p_rates.add_argument("records", help="records CSV produced by simulate")
    p_rates.add_argument("--y", choices=("mean_sup_gap", "mean_excess_loss"),
                         default="mean_sup_gap")
    p_rates.add_argument("--estimator", default="fit")
    p_rates.add_argument("--reference", default="oracle_loss",
                         help="baseline estimator for mean_excess_loss")
    return parser


def _format_vector(values: np.ndarray) -> str:
    return ",".join(f"{v:.17g}" for v in np.asarray(values).reshape(-1))


def _cmd_fit(args) -> int:
    y = np.loadtxt(args.matrix, delimiter=",", ndmin=2)
    spec = make_family(args.family, shape=args.lam, trials=args.trials)
    if args.tau is not None:
        tau = np.loadtxt(args.tau, delimiter=",", ndmin=2)
    else:
        tau = default_tau(spec, y.shape[0], y.shape[1])
    data = DataMatrix(y=y, tau=tau)
    opts = SolverOptions(max_outer_iterations=args.max_iter, tolerance=args.tol)
    result, estimate = fit(data, spec, args.mode, opts)
    print(f"b: {_format_vector(result.b)}")
    target_label = "ybar" if result.target_kind == "grand_mean" else "mu"
    print(f"{target_label}: {_format_vector(result.mu)}")
    print(f"objective: {result.objective:.17g}")
    print(f"iterations: {result.iterations}")
    print(f"converged: {result.converged}")
    np.savetxt(args.out, estimate.theta_hat, delimiter=",", fmt="%.17g")
    return 0


def _cmd_simulate(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    result = run_experiment(config, workers=args.workers)
    write_records_csv(result, args.out)
    print(f"wrote {len(result.records)} records to {args.out}")
    return 0


def _cmd_rates(args) -> int:
    records, _ = read_records_csv(args.records)
    rate = fit_rate(
        aggregate_records(records),
        y=args.y,
        estimator=args.estimator,
        reference=args.reference,
    )
    print(f"points: {rate.n_points}")
    print(f"slope: {rate.slope:.17g}")
    print(f"intercept: {rate.intercept:.17g}")
    print(f"stderr: {rate.stderr:.17g}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"fit": _cmd_fit, "simulate": _cmd_simulate, "rates": _cmd_rates}
    try:
        return handlers[args.command](args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
