"""
Command-line entry point. Each command loads the run config, runs one operation,
writes its artifacts under the output directory and prints a one-line summary.
Failures print `error: <category>: <message>` and exit with status 1; usage
errors exit with status 2.
"""

import argparse
import logging
import math
import os
import sys
from typing import Callable

import numpy as np
import polars as pl
from dotenv import load_dotenv

from brownian_billiards.billiard import (
    empirical_mfp,
    lyapunov_exponent,
    lyapunov_separation,
    mean_free_path,
    orbit_frame,
)
from brownian_billiards.config import RunConfig, load_config
from brownian_billiards.dynamics import ObservationPlan, SimParams, evolve, sample_initial_state
from brownian_billiards.errors import BilliardError, FiniteHorizonViolation
from brownian_billiards.geometry import TorusTable, check_finite_horizon
from brownian_billiards.harness import (
    CompareThresholds,
    compare_ensembles,
    early_time_report,
    isotropic_report,
    run_thm1,
    run_thm2,
    run_thm3,
    sigma_along_path,
    summarize,
    summarize_limit,
    thm1_limit_report,
)
from brownian_billiards.io import read_ensemble, read_meta, write_frame, write_report
from brownian_billiards.limit_models import (
    GridSigma,
    LimitParams,
    isotropic_sigma,
    simulate_limit,
)
from brownian_billiards.transport import (
    build_sigma_grid,
    correlation_decay,
    green_kubo,
    lag0_closed_form,
    nonsingularity_check,
    scan_sigma,
    sigma_pieces,
    small_r_asymptote,
)

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = "configs/default.json"


def _rng(config: RunConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.seed, stream]))


def _fmt(x: float) -> str:
    return format(x, ".17g")


def _matrix(m: np.ndarray) -> str:
    return "[" + ",".join("[" + ",".join(_fmt(v) for v in row) + "]" for row in np.asarray(m)) + "]"


def _point(args: argparse.Namespace, config: RunConfig) -> tuple[float, float]:
    return tuple(args.Q) if args.Q is not None else config.sim.Q0


# --- commands ---


def cmd_simulate(args: argparse.Namespace, config: RunConfig, table: TorusTable) -> str:
    sim = config.sim
    params = SimParams(
        M=sim.M,
        r=sim.r,
        delta0=sim.delta0,
        mode=sim.mode,
        horizon_time=sim.horizon_time,
        max_collisions=sim.max_collisions,
        seed=config.seed,
    )
    state = sample_initial_state(table, sim.Q0, sim.V0, params, _rng(config, 0))
    trajectory = evolve(state, params, table, ObservationPlan(record_collisions=True))
    final = trajectory.final
    result = {
        "stop_reason": trajectory.stop_reason,
        "t": final.t,
        "n_collisions": final.n_collisions,
        "counts": trajectory.counts,
        "n_ties": trajectory.n_ties,
        "frozen": final.frozen,
        "final_Q": final.Q,
        "final_V": final.V,
        "max_energy_error": trajectory.max_energy_error,
        "max_momentum_error": trajectory.max_momentum_error,
    }
    write_frame("trajectory", "trajectory", trajectory.to_frame(), config, {"M": sim.M, "r": sim.r})
    write_report("trajectory", "trajectory", result, config)
    return (
        f"simulate: stop_reason={trajectory.stop_reason} n_collisions={final.n_collisions} "
        f"t={_fmt(final.t)} max_energy_error={_fmt(trajectory.max_energy_error)}"
    )


def cmd_greenkubo(args: argparse.Namespace, config: RunConfig, table: TorusTable) -> str:
    gk = config.greenkubo
    Q = _point(args, config)
    r = config.sim.r
    n = args.n if args.n is not None else gk.n_collisions
    J = args.J if args.J is not None else gk.J
    dm = green_kubo(Q, table, r, n, J, _rng(config, 0), gk.n_batches, gk.method)
    try:
        decay = correlation_decay(dm).model_dump()
    except ValueError as exc:
        logger.info("No decay fit: %s", exc)
        decay = None
    pieces = sigma_pieces(dm, table, r, (0.0, 0.0), 1.0)
    result = {
        "Q": Q,
        "r_disk": r,
        "n_collisions": n,
        "sigma_bar2": dm.to_dict(),
        "sigma2_per_time": pieces.sigma2.m,
        "sigma2_per_time_stderr": pieces.sigma2.stderr,
        "lag0_closed_form": lag0_closed_form(table, r),
        "small_r_asymptote": small_r_asymptote(table, r).m,
        "mean_free_path": mean_free_path(table, r),
        "psd_within_3se": dm.is_psd_within_noise(),
        "decay": decay,
        "nonsingularity": nonsingularity_check(Q, table, r),
    }
    write_report("greenkubo", "greenkubo", result, config)
    return f"greenkubo: sigma_bar2={_matrix(dm.m)} J={dm.lags_used} psd={dm.is_psd_within_noise()}"


def cmd_scan_sigma(args: argparse.Namespace, config: RunConfig, table: TorusTable) -> str:
    scan = config.scan
    report = scan_sigma(
        scan.origin,
        scan.h,
        scan.nx,
        scan.ny,
        table,
        config.sim.r,
        scan.n_collisions,
        config.greenkubo.J,
        config.sim.delta0,
        config.seed,
        config.workers,
    )
    frame = pl.DataFrame(
        {
            "Qx": [p.a[0] for p in report.pairs],
            "Qy": [p.a[1] for p in report.pairs],
            "neighbor_Qx": [p.b[0] for p in report.pairs],
            "neighbor_Qy": [p.b[1] for p in report.pairs],
            "h": [p.h for p in report.pairs],
            "ratio": [p.ratio for p in report.pairs],
            "inconclusive": [p.inconclusive for p in report.pairs],
        },
        schema={
            "Qx": pl.Float64,
            "Qy": pl.Float64,
            "neighbor_Qx": pl.Float64,
            "neighbor_Qy": pl.Float64,
            "h": pl.Float64,
            "ratio": pl.Float64,
            "inconclusive": pl.Boolean,
        },
    )
    write_frame("scan", "scan", frame, config, scan.model_dump())
    write_report("scan", "scan", report, config)
    max_ratio = "none" if report.max_ratio is None else _fmt(report.max_ratio)
    return f"scan-sigma: max_ratio={max_ratio} inconclusive={report.n_inconclusive}/{len(report.pairs)}"


def cmd_lyapunov(args: argparse.Namespace, config: RunConfig, table: TorusTable) -> str:
    ly = config.lyapunov
    Q = _point(args, config)
    r = config.sim.r
    cocycle = lyapunov_exponent(Q, table, r, ly.n, _rng(config, 0))
    separation = lyapunov_separation(Q, table, r, ly.n, _rng(config, 1), ly.offset)
    mfp = empirical_mfp(Q, table, r, ly.n, _rng(config, 2))
    gap = abs(cocycle.chi - separation.chi) / abs(cocycle.chi) if cocycle.chi else math.inf
    result = {
        "Q": Q,
        "r_disk": r,
        "cocycle": cocycle,
        "separation": separation,
        "relative_gap": gap,
        "mean_free_path": mfp,
    }
    if ly.orbit_dump:
        write_frame("orbit", "orbit", orbit_frame(Q, table, r, ly.orbit_dump, _rng(config, 3)), config, {"Q": Q})
    write_report("lyapunov", "lyapunov", result, config)
    return (
        f"lyapunov: chi={_fmt(cocycle.chi)} separation={_fmt(separation.chi)} "
        f"lower_bound={_fmt(cocycle.lower_bound)} relative_gap={_fmt(gap)}"
    )


def cmd_check_horizon(args: argparse.Namespace, config: RunConfig, table: TorusTable) -> str:
    report = check_finite_horizon(table)
    write_report("horizon", "horizon", report, config)
    if not report.passed:
        raise FiniteHorizonViolation(
            f"ray from {report.offending_origin} along {report.offending_direction} escapes l_max = {report.l_max}"
        )
    return f"horizon: pass worst_free_path={_fmt(report.worst_free_path)}"


def _limit_params(regime: str, config: RunConfig, table: TorusTable, N: int) -> LimitParams:
    exp = config.experiment
    sim = config.sim
    common = {
        "regime": regime,
        "Q0": sim.Q0,
        "h": config.sde.h,
        "N": N,
        "n_checkpoints": exp.n_checkpoints,
        "seed": config.seed,
    }
    if regime == "thm1":
        t1 = exp.thm1
        sigma = sigma_along_path(
            table,
            sim.r,
            sim.Q0,
            t1.chi,
            t1.u0,
            t1.c,
            config.sde.n_collisions,
            config.greenkubo.J,
            t1.sigma_nodes,
            config.seed,
            config.workers,
        )
        return LimitParams(c=t1.c, sigma_field=sigma, chi=t1.chi, u0=t1.u0, **common)
    if regime == "thm2":
        grid = build_sigma_grid(
            table, sim.r, config.sde.grid, config.sde.n_collisions, config.greenkubo.J, config.seed, config.workers
        )
        return LimitParams(
            c=exp.thm2.c,
            sigma_field=GridSigma.from_grid(grid),
            stop_clearance=sim.r + sim.delta0,
            table=table,
            **common,
        )
    return LimitParams(
        c=exp.thm3.c, sigma_field=isotropic_sigma(table), stop_clearance=sim.delta0, table=table, **common
    )


def cmd_sde(args: argparse.Namespace, config: RunConfig, table: TorusTable) -> str:
    regime = args.regime or config.experiment.regime
    params = _limit_params(regime, config, table, config.sde.N)
    ensemble = simulate_limit(params)
    summary = summarize_limit(ensemble)
    meta = {"regime": regime, "source": "limit", "n_steps": params.n_steps, "c": params.c}
    write_frame(f"sde_{regime}", "limit_ensemble", ensemble.to_frame(), config, meta)
    write_report(f"sde_{regime}", "limit_summary", summary, config)
    return f"sde: regime={regime} N={summary.n_paths} steps={params.n_steps} stopped={summary.n_stopped}"


def cmd_experiment(args: argparse.Namespace, config: RunConfig, table: TorusTable) -> str:
    regime = args.regime
    exp = config.experiment
    sim = config.sim
    M = config.ensemble_M
    common = {"seed": config.seed, "workers": config.workers, "n_checkpoints": exp.n_checkpoints}
    comparison = None
    if regime == "thm1":
        t1 = exp.thm1
        summary = run_thm1(M, t1.chi, t1.u0, t1.c, exp.N, table, sim.r, sim.Q0, **common)
        report = thm1_limit_report(summary, _limit_params("thm1", config, table, exp.N))
        c = t1.c
    elif regime == "thm2":
        c = exp.thm2.c
        summary = run_thm2(M, c, exp.N, sim.delta0, table, sim.r, sim.Q0, **common)
        gk = config.greenkubo
        dm = green_kubo(sim.Q0, table, sim.r, gk.n_collisions, gk.J, _rng(config, 1), gk.n_batches, gk.method)
        report = early_time_report(summary, dm.m / mean_free_path(table, sim.r))
        if args.with_sde:
            limit = simulate_limit(_limit_params("thm2", config, table, exp.N))
            comparison = compare_ensembles(summary, limit)
    else:
        t3 = exp.thm3
        c = t3.c
        summary = run_thm3(M, t3.r_disk, c, exp.N, sim.delta0, table, sim.Q0, **common)
        report = isotropic_report(summary, table)
        limit = simulate_limit(_limit_params("thm3", config, table, exp.N))
        comparison = compare_ensembles(summary, limit)

    meta = {"regime": regime, "source": "billiard", "M": M, "c": c}
    write_frame(f"{regime}_ensemble", "billiard_ensemble", summary.to_frame(), config, meta)
    write_report(
        f"{regime}_summary",
        "experiment",
        {"summary": summary, "report": report, "comparison": comparison},
        config,
    )
    passed = report.passed and (comparison is None or comparison.passed)
    return f"experiment {regime}: passed={passed} N={summary.n_paths} stopped={summary.n_stopped}"


def cmd_compare(args: argparse.Namespace, config: RunConfig, table: TorusTable) -> str:
    summaries = []
    for path in (args.a, args.b):
        regime, tau, V, Q, frozen = read_ensemble(path)
        source = read_meta(path).get("params", {}).get("source", "billiard")
        source = source if source in ("billiard", "limit") else "billiard"
        summaries.append(summarize(regime, source, tau, V, Q, frozen, frozen[:, -1]))
    report = compare_ensembles(summaries[0], summaries[1], CompareThresholds(alpha=args.alpha))
    write_report("compare", "compare", {"a": args.a, "b": args.b, "report": report}, config)
    return (
        f"compare: {'pass' if report.passed else 'fail'} mean_max_z={_fmt(report.mean_max_z)} "
        f"cov_max_z={_fmt(report.cov_max_z)} ks_min_pvalue={_fmt(report.ks_min_pvalue)}"
    )


COMMANDS: dict[str, Callable[[argparse.Namespace, RunConfig, TorusTable], str]] = {
    "simulate": cmd_simulate,
    "greenkubo": cmd_greenkubo,
    "scan-sigma": cmd_scan_sigma,
    "lyapunov": cmd_lyapunov,
    "check-horizon": cmd_check_horizon,
    "sde": cmd_sde,
    "experiment": cmd_experiment,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", type=str, default=DEFAULT_CONFIG, help="Path to the JSON run config")
    common.add_argument("--seed", "-s", type=int, default=None, help="Master seed (overrides the config)")
    common.add_argument("--out", "-o", type=str, default=None, help="Output directory (overrides the config)")
    common.add_argument("--workers", "-w", type=int, default=None, help="Worker processes for ensembles and grids")
    common.add_argument(
        "--log-level",
        type=str,
        default=None,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default from BBM_LOG_LEVEL, else WARNING)",
    )

    parser = argparse.ArgumentParser(
        prog="brownian-billiards",
        description="Heavy disk and light particle on a periodic dispersing billiard table",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="Run one trajectory of the coupled system")
    gk = sub.add_parser("greenkubo", parents=[common], help="Green-Kubo matrix of the frozen-disk billiard")
    gk.add_argument("--Q", type=float, nargs=2, default=None, help="Disk position (default sim.Q0)")
    gk.add_argument("--n", type=int, default=None, help="Collisions (default greenkubo.n_collisions)")
    gk.add_argument("--J", type=int, default=None, help="Lag cutoff (default greenkubo.J)")
    sub.add_parser("scan-sigma", parents=[common], help="Regularity scan of σ_Q over a grid of disk positions")
    ly = sub.add_parser("lyapunov", parents=[common], help="Lyapunov exponent of the frozen-disk billiard")
    ly.add_argument("--Q", type=float, nargs=2, default=None, help="Disk position (default sim.Q0)")
    sub.add_parser("check-horizon", parents=[common], help="Full finite-horizon sweep of the table")
    sde = sub.add_parser("sde", parents=[common], help="Simulate a limit process ensemble")
    sde.add_argument("--regime", choices=["thm1", "thm2", "thm3"], default=None)
    ex = sub.add_parser("experiment", parents=[common], help="Billiard ensemble under one of the three scalings")
    ex.add_argument("regime", choices=["thm1", "thm2", "thm3"])
    ex.add_argument("--with-sde", action="store_true", help="thm2: also compare with the σ-grid SDE ensemble")
    cmp = sub.add_parser("compare", parents=[common], help="Compare two ensemble CSV files")
    cmp.add_argument("a", type=str)
    cmp.add_argument("b", type=str)
    cmp.add_argument("--alpha", type=float, default=0.01, help="Family-wise level of each test family")
    return parser


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    level = args.log_level or os.environ.get("BBM_LOG_LEVEL", "WARNING")
    logging.basicConfig(level=level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        config = load_config(args.config, seed=args.seed, out_dir=args.out, workers=args.workers)
        table = config.table.build()
        line = COMMANDS[args.command](args, config, table)
    except BilliardError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    print(line)
    return 0
