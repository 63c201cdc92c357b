"""
netglm command-line interface.

Subcommands:
- gen-graph: lattice or random regular graph with Ising weights
- simulate: covariates and Gibbs-sampled responses on a graph
- fit: penalized pseudolikelihood estimate on a greedy independent half
- infer: debiased CI and test for c^T theta or theta^T theta
- test: simultaneous coordinate tests (BH-type or Bonferroni)
- run: one Monte Carlo experiment from a JSON config
- reproduce: a coverage table grid

Usage: python -m app.cli <subcommand> --help
"""

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from app import config
from app.errors import ArgumentError, NetGlmError
from app.graph import (
    check_assumptions,
    from_ising,
    greedy_strong_independent_set,
    lattice2d,
    random_order,
    random_regular,
    split_independent_set,
)
from app.harness import (
    load_config,
    normality_check,
    records_frame,
    render_table_report,
    reproduce_table,
    run_experiment,
)
from app.inference import (
    PipelineConfig,
    baseline_pipeline,
    infer_coordinates,
    infer_linear_pipeline,
    infer_quadratic_pipeline,
    multiple_test,
)
from app.mple import MpleOptions, fit_mple, lambda_default
from app.mrf import CovariateSpec, ModelSpec, simulate_dataset, sparse_theta
from app.storage import (
    load_dataset,
    load_graph,
    save_dataset,
    save_fit,
    save_graph,
    save_report,
    to_jsonable,
    write_table,
)
from app.utils import make_rng, parse_indices

logger = logging.getLogger(__name__)


def _emit(report, out: Optional[str]) -> None:
    """Write a JSON report to out, or print it."""
    if out:
        save_report(report, out)
    else:
        print(json.dumps(to_jsonable(report), indent=2))


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    return PipelineConfig(
        lambda_c=args.lambda_c,
        greedy_order=args.greedy_order,
        null_value=getattr(args, "null_value", 0.0),
        mple=MpleOptions(standardize=args.standardize),
    )


# =============================================================================
# Handlers
# =============================================================================

def cmd_gen_graph(args: argparse.Namespace) -> None:
    if args.kind == "lattice":
        h = lattice2d(args.rows, args.cols)
        norm = 0.25
    else:
        if args.n is None or args.delta is None:
            raise ArgumentError("--kind regular needs --n and --delta")
        h = random_regular(args.n, args.delta, make_rng(args.seed), method=args.method)
        norm = 1.0 / args.delta if args.delta else 1.0
    if args.beta is not None:
        h = from_ising(h, args.beta, norm)
    report = check_assumptions(h)
    logger.info(f"🔍 Max neighbors {report.max_neighbors}, max field sum {report.max_field_sum:.3f}")
    save_graph(h, args.out)


def cmd_simulate(args: argparse.Namespace) -> None:
    h = load_graph(args.graph)
    theta = sparse_theta(args.d, args.theta_sparse, args.theta_value)
    data = simulate_dataset(ModelSpec(h, theta), CovariateSpec(args.d, rho=args.rho), args.sweeps, make_rng(args.seed))
    logger.info(f"✅ Simulated n={data.n}, d={data.d}, mean response {data.y.mean():+.3f}")
    save_dataset(data, args.out)


def cmd_fit(args: argparse.Namespace) -> None:
    h = load_graph(args.graph)
    data = load_dataset(args.data)
    rng = make_rng(args.seed)
    order = random_order(h.n, rng) if args.greedy_order == "random" else None
    split = split_independent_set(greedy_strong_independent_set(h, order), rng)
    lam = lambda_default(data.n, data.d, args.lambda_c)
    fit = fit_mple(data, h, split.s1, lam, MpleOptions(standardize=args.standardize))
    logger.info(
        f"✅ MPLE on |S1|={len(split.s1)}: {np.count_nonzero(fit.theta_tilde)} nonzero, "
        f"{fit.iterations} iterations"
    )
    save_fit(fit, split.s1, args.out)


def _read_functional(path: str, d: int) -> np.ndarray:
    c = pd.read_csv(path, header=None).to_numpy(dtype=float).reshape(-1)
    if c.shape[0] != d:
        raise ArgumentError(f"{path}: functional has {c.shape[0]} entries, data has d={d}")
    return c


def cmd_infer(args: argparse.Namespace) -> None:
    data = load_dataset(args.data)
    cfg = _pipeline_config(args)
    rng = make_rng(args.seed)

    if args.quadratic:
        if args.baseline:
            raise ArgumentError("--baseline is only available for linear functionals")
        h = load_graph(args.graph)
        result = infer_quadratic_pipeline(data, h, np.eye(data.d), args.alpha, cfg, rng)
        logger.info(f"✅ Q_hat = {result.q_hat:.4f}, CI [{result.ci_lo:.4f}, {result.ci_hi:.4f}]")
        _emit(result.to_report(), args.out)
        return

    if args.c_index is not None:
        if not 0 <= args.c_index < data.d:
            raise ArgumentError(f"--c-index {args.c_index} outside [0, {data.d})")
        c = np.zeros(data.d)
        c[args.c_index] = 1.0
    else:
        c = _read_functional(args.c_file, data.d)

    if args.baseline:
        result = baseline_pipeline(data, c, args.alpha, cfg, rng)
    else:
        result = infer_linear_pipeline(data, load_graph(args.graph), c, args.alpha, cfg, rng)
    logger.info(f"✅ {result.functional}: {result.estimate:.4f}, CI [{result.ci_lo:.4f}, {result.ci_hi:.4f}]")
    _emit(result.to_report(), args.out)


def cmd_test(args: argparse.Namespace) -> None:
    data = load_dataset(args.data)
    h = load_graph(args.graph)
    indices = parse_indices(args.indices) if args.indices else list(range(data.d))
    results = infer_coordinates(data, h, indices, args.alpha, _pipeline_config(args), make_rng(args.seed))
    test = multiple_test([r.t_stat for r in results], args.alpha, args.method)
    rejected = [indices[k] for k in test.rejected]
    logger.info(f"✅ {test.method}: threshold {test.threshold:.4f}, {len(rejected)} of {len(indices)} rejected")
    _emit(
        {
            "method": test.method,
            "threshold": test.threshold,
            "alpha": test.alpha,
            "fallback": test.fallback,
            "rejected": rejected,
            "tests": [{"index": j, "estimate": r.estimate, "t_stat": r.t_stat, "p_value": r.p_value}
                      for j, r in zip(indices, results)],
        },
        args.out,
    )


def cmd_run(args: argparse.Namespace) -> None:
    cfg = load_config(args.config)
    result = run_experiment(cfg, args.workers)
    records_frame(result.records).to_csv(args.out, index=False)
    logger.info(f"💾 {len(result.records)} record(s) written to {args.out} in {result.runtime:.1f}s")
    print(result.summary().to_string(index=False))
    if cfg.target == "coordinate" and "proposed" in cfg.methods:
        try:
            logger.info(f"🔍 KS normality p-value: {normality_check(result.records):.3f}")
        except NetGlmError as e:
            logger.warning(f"⚠️ Normality check skipped: {e}")


def cmd_reproduce(args: argparse.Namespace) -> None:
    rows = reproduce_table(args.table, args.scale, args.seed, args.reps, args.sweeps, args.workers)
    frame = write_table(rows, args.out)
    if args.report:
        render_table_report(rows, args.report)
    print(frame.to_string(index=False))


# =============================================================================
# Parser
# =============================================================================

def _add_pipeline_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="Seed for the greedy order and the S1/S2 split")
    p.add_argument("--lambda-c", type=float, default=config.LAMBDA_C, help="lambda = C sqrt(log d / n)")
    p.add_argument("--greedy-order", choices=["ascending", "random"], default="ascending")
    p.add_argument("--standardize", action="store_true", help="Fit on standardized covariates")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netglm", description="Debiased logistic regression under network dependence")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-graph", help="Generate a lattice or random regular graph")
    p.add_argument("--kind", choices=["lattice", "regular"], required=True)
    p.add_argument("--rows", type=int, default=40)
    p.add_argument("--cols", type=int, default=40)
    p.add_argument("--n", type=int)
    p.add_argument("--delta", type=int)
    p.add_argument("--method", choices=["rejection", "pairing"], default="rejection")
    p.add_argument("--beta", type=float, help="Apply Ising weights 2 beta / degree")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_gen_graph)

    p = sub.add_parser("simulate", help="Simulate covariates and responses on a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--theta-sparse", type=int, default=5, help="Number of leading nonzero coefficients")
    p.add_argument("--theta-value", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=0.2, help="AR(rho) covariate correlation")
    p.add_argument("--sweeps", type=int, default=config.GIBBS_SWEEPS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("fit", help="Penalized pseudolikelihood fit")
    p.add_argument("--data", required=True)
    p.add_argument("--graph", required=True)
    _add_pipeline_options(p)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("infer", help="Debiased inference for one functional")
    p.add_argument("--data", required=True)
    p.add_argument("--graph", help="Required unless --baseline")
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--c-index", type=int, help="c = e_j (0-based)")
    target.add_argument("--c-file", help="CSV with the d entries of c")
    target.add_argument("--quadratic", choices=["identity"], help="theta^T M theta with M = I")
    p.add_argument("--alpha", type=float, default=config.ALPHA)
    p.add_argument("--null-value", type=float, default=0.0)
    p.add_argument("--baseline", action="store_true", help="Ignore network dependence")
    _add_pipeline_options(p)
    p.add_argument("--out", help="Report JSON (stdout when omitted)")
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("test", help="Simultaneous coordinate tests")
    p.add_argument("--data", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--indices", help="e.g. '0-9,20' (default: all coordinates)")
    p.add_argument("--method", choices=["bh", "bonferroni"], default="bh")
    p.add_argument("--alpha", type=float, default=config.ALPHA)
    _add_pipeline_options(p)
    p.add_argument("--out", help="Report JSON (stdout when omitted)")
    p.set_defaults(handler=cmd_test)

    p = sub.add_parser("run", help="Run one experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="Per-replicate records CSV")
    p.add_argument("--workers", type=int, help=f"Worker processes (default NETGLM_THREADS={config.THREADS})")
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("reproduce", help="Reproduce a coverage table")
    p.add_argument("--table", type=int, choices=[1, 2, 3], required=True)
    p.add_argument("--scale", choices=["full", "desk"], default="full")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--sweeps", type=int, default=config.GIBBS_SWEEPS)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True, help="Table CSV")
    p.add_argument("--report", help="Optional Markdown report")
    p.set_defaults(handler=cmd_reproduce)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    if args.command == "infer" and not args.baseline and not args.graph:
        parser.error("infer needs --graph unless --baseline is given")

    try:
        logger.info(f"🚀 netglm {args.command}")
        args.handler(args)
    except (NetGlmError, OSError) as e:
        logger.error(f"❌ {args.command} failed: {e}")
        return 1
    except Exception as e:
        logger.error(f"❌ {args.command} failed: {e}", exc_info=True)
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
