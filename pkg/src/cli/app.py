"""
Command-line interface for BranchLab.

    branchlab simulate    [--config PATH] [--seed U64] [--workers N] [--out DIR] [-v]
    branchlab reference   ...
    branchlab convergence ...
    branchlab check       ...
    branchlab value       ...
    branchlab distance A.csv B.csv [--witness] ...

Exit status: 0 on success, 1 when a requested check fails, 2 on errors.
"""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from src import __version__
from src.core.battery import run_check_battery
from src.core.branching import (
    NumericsError,
    PopulationExplosionError,
    mass_statistics,
    simulate_branching,
)
from src.core.coefficients import CoefficientError
from src.core.exporter import ArtifactError, ArtifactExporter, Provenance
from src.core.functionals import ContractError, LiftedSolver, flow_constancy_check, functional_from_dict, value_function_U
from src.core.harness import (
    ReferenceSettings,
    ReplicaPolicy,
    StudyError,
    fit_rate,
    initial_error_study,
    run_parallel,
    weak_error_study,
)
from src.core.lifted import WeightedEnsemble, picard_solve, project_T_star, simulate_lifted_self
from src.core.measure import mass
from src.core.metrics import (
    MetricSizeError,
    MetricSolverError,
    bounded_lipschitz_witness,
    certified_bounded_lipschitz,
    extended_w1,
)
from src.core.rng import STREAM_REFERENCE, STREAM_SIMULATE, STREAM_VALUE, derive_generator, derive_seed
from src.core.scenario import build_coefficients
from src.core.settings import (
    ConfigError,
    EnvironmentDefaults,
    RunConfig,
    config_hash,
    load_environment,
    load_run_config,
)

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("simulate", "reference", "distance", "convergence", "check", "value")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2

HANDLED_ERRORS = (
    ConfigError,
    ArtifactError,
    StudyError,
    ContractError,
    CoefficientError,
    PopulationExplosionError,
    NumericsError,
    MetricSizeError,
    MetricSolverError,
    OSError,
    ValueError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="branchlab",
        description="Monte Carlo lab for interacting branching diffusions and their mean-field limit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON run config (defaults apply when omitted)")
    common.add_argument("--seed", type=int, default=None, help="master seed, overrides the config file")
    common.add_argument("--workers", type=int, default=None, help="worker threads (results do not depend on it)")
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate interacting branching populations")
    sub.add_parser("reference", parents=[common], help="compute the lifted reference flow")
    distance = sub.add_parser("distance", parents=[common], help="distances between two measure CSVs")
    distance.add_argument("first", type=Path, help="measure CSV (x1,...,xd,weight)")
    distance.add_argument("second", type=Path, help="measure CSV (x1,...,xd,weight)")
    distance.add_argument("--witness", action="store_true", help="write the optimal dual test function")
    sub.add_parser("convergence", parents=[common], help="weak-error study and rate fit")
    sub.add_parser("check", parents=[common], help="run the structural check battery")
    sub.add_parser("value", parents=[common], help="estimate the value function U(t, mu)")
    return parser


def _configure_logging(verbose: int, env_level: Optional[str]) -> None:
    if verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = getattr(logging, (env_level or "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level, format="[%(module)-12s] %(message)s", force=True)


class Session:
    """Effective config, worker count and output folder of one invocation."""

    def __init__(self, config: RunConfig, workers: int, out: Path):
        self.config = config
        self.workers = max(int(workers), 1)
        self.out = out
        self.provenance = Provenance(config_hash(config), config.seed)

    @property
    def coeffs(self):
        return build_coefficients(self.config.scenario)


def make_session(args: argparse.Namespace, env: EnvironmentDefaults) -> Session:
    """Config file, then environment defaults, then command-line flags."""
    config = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 1 << 64:
            raise ConfigError(f"--seed must lie in [0, 2^64), got {args.seed}", key="seed")
        config = dataclasses.replace(config, seed=args.seed)
    workers = args.workers if args.workers is not None else (env.workers or 1)
    out = args.out or (Path(env.output_dir) if env.output_dir else Path(config.output_dir))
    return Session(config, workers, out)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(session: Session, args: argparse.Namespace) -> int:
    config = session.config
    sim = config.simulate
    coeffs = session.coeffs

    def run(r: int):
        return simulate_branching(
            sim.N, coeffs, config.initial, config.grid, derive_seed(config.seed, STREAM_SIMULATE, r),
            max_particles=sim.max_particles, record=sim.record, keep_events=sim.keep_events,
        )

    ensemble = run_parallel(run, range(sim.runs), session.workers)
    for r, traj in enumerate(ensemble):
        ArtifactExporter.export_trajectory(traj, session.out, session.provenance, prefix=f"run_{r:04d}")
    stats = mass_statistics(ensemble)
    ArtifactExporter.write_table(
        session.out / "mass_statistics.csv",
        ["time", "mean_count", "variance", "stderr"],
        zip(stats.times, stats.mean, stats.variance, stats.stderr),
        session.provenance,
    )
    print(f"[OK] {sim.runs} run(s) of N={sim.N}: final mean count {stats.mean[-1]:.6g} -> {session.out}")
    return EXIT_OK


def cmd_reference(session: Session, args: argparse.Namespace) -> int:
    config = session.config
    ref = config.reference
    seed = derive_seed(config.seed, STREAM_REFERENCE, 0)
    if ref.method == "picard":
        flow = picard_solve(ref.ensemble_size, session.coeffs, config.initial, config.grid, ref.iterations, seed, ref.gap_radius)
    elif ref.method == "self-interaction":
        flow = simulate_lifted_self(ref.ensemble_size, session.coeffs, config.initial, config.grid, seed)
    else:
        raise ConfigError(f"Unknown reference method: {ref.method}. Available: ['self-interaction', 'picard']",
                          key="reference.method")
    ArtifactExporter.export_flow(flow, session.out, session.provenance)
    print(f"[OK] {flow.method} flow, Mp={flow.ensemble_size}: final mass {mass(flow.final_measure):.6g} -> {session.out}")
    if flow.weight_violations:
        print(f"[FAIL] weight sandwich violated {flow.weight_violations} times")
        return EXIT_FAILED
    return EXIT_OK


def cmd_distance(session: Session, args: argparse.Namespace) -> int:
    options = session.config.distance
    mu = ArtifactExporter.read_measure(args.first)
    nu = ArtifactExporter.read_measure(args.second)
    result = {"first": str(args.first), "second": str(args.second)}
    if options.coarsen_radius > 0:
        certified = certified_bounded_lipschitz(mu, nu, options.coarsen_radius)
        result.update(bounded_lipschitz=certified.value, error_bound=certified.error_bound)
    else:
        witness = bounded_lipschitz_witness(mu, nu)
        result.update(bounded_lipschitz=witness.value, error_bound=0.0)
        if args.witness or options.witness:
            ArtifactExporter.write_witness(session.out / "witness.csv", witness, session.provenance)
    result["extended_w1"] = extended_w1(mu, nu, options.anchor)
    ArtifactExporter.write_json(session.out / "distance.json", result, session.provenance)
    print(f"[OK] d = {result['bounded_lipschitz']!r}  W1_ext = {result['extended_w1']!r}")
    return EXIT_OK


def cmd_convergence(session: Session, args: argparse.Namespace) -> int:
    config = session.config
    study = config.study
    G = functional_from_dict(config.functional)
    policy = ReplicaPolicy(
        base=study.replicas_base,
        base_N=study.replicas_base_N,
        cap=study.replicas_cap,
        minimum=study.replicas_min,
        fixed=study.replicas_fixed,
    )
    reference = ReferenceSettings(
        ensemble_size=config.reference.ensemble_size,
        replicas=config.reference.replicas,
        method=config.reference.method,
        iterations=config.reference.iterations,
    )
    table = weak_error_study(
        session.coeffs, config.initial, G, config.grid, study.N_list, policy, reference,
        seed=config.seed, workers=session.workers, max_particles=study.max_particles,
    )
    fit = fit_rate(table)
    ArtifactExporter.export_weak_error(table, fit, session.out, session.provenance)

    if study.initial_error_replicas > 0:
        solver = LiftedSolver(
            session.coeffs, config.grid.horizon, config.grid.dt, config.reference.ensemble_size,
            config.seed, config.reference.replicas, config.reference.method, config.reference.iterations,
            session.workers,
        )
        rows = initial_error_study(config.initial, G, study.N_list, study.initial_error_replicas, solver)
        ArtifactExporter.export_initial_error(rows, session.out, session.provenance)

    for row in table.rows:
        flag = " (noise-dominated)" if row.noise_dominated else ""
        print(f"     N={row.N:<6d} R={row.replicas:<7d} |bias|={row.bias:.4g} +- {row.stderr:.2g}{flag}")
    if fit.conclusive:
        low, high = fit.interval
        print(f"[OK] slope {fit.slope:.4f}, 95% CI [{low:.4f}, {high:.4f}] from {fit.points} rows")
    else:
        print(f"[OK] rate fit inconclusive: {'; '.join(fit.diagnostics)}")
    return EXIT_OK


def cmd_check(session: Session, args: argparse.Namespace) -> int:
    report = run_check_battery(session.config, workers=session.workers)
    ArtifactExporter.export_check_report(report, session.out, session.provenance)
    for item in report.items:
        tag = "[OK]  " if item.passed else "[FAIL]"
        print(f"{tag} {item.name}: {item.value:.4g} (threshold {item.threshold:.4g}) {item.detail}")
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_value(session: Session, args: argparse.Namespace) -> int:
    config = session.config
    options = config.value
    G = functional_from_dict(config.functional)
    solver = LiftedSolver(
        session.coeffs, config.grid.horizon, config.grid.dt, options.ensemble_size,
        derive_seed(config.seed, STREAM_VALUE, 0), options.replicas, options.method, options.iterations,
        session.workers,
    )
    # an ensemble_size-atom sample of the initial environment measure
    rng = derive_generator(config.seed, STREAM_VALUE, 1)
    y, z = config.initial.sample_lifted(options.ensemble_size, rng)
    mu0 = project_T_star(WeightedEnsemble(y, z))

    times = sorted(set([0.0] + [float(t) for t in options.times]))
    # keys past the ones flow_constancy_check uses; U(0) shares the baseline stream
    offset = len(options.times) + 2
    estimates = [
        value_function_U(t, mu0, G, solver, restart_key=offset + k if t > 0 else 0)
        for k, t in enumerate(times)
    ]
    constancy = flow_constancy_check(G, mu0, options.times, solver) if options.constancy else None
    ArtifactExporter.export_values(estimates, session.out, session.provenance, constancy)

    for estimate in estimates:
        print(f"     U({estimate.time:.4g}, mu0) = {estimate.value:.6g} +- {estimate.stderr:.2g}")
    if constancy is None:
        print(f"[OK] {len(estimates)} value estimates -> {session.out}")
        return EXIT_OK
    if constancy.passed():
        print(f"[OK] U constant along the flow: max deviation {constancy.max_deviation:.4g}")
        return EXIT_OK
    print(f"[FAIL] U varies along the flow: max deviation {constancy.max_deviation:.4g}")
    return EXIT_FAILED


COMMANDS = {
    "simulate": cmd_simulate,
    "reference": cmd_reference,
    "distance": cmd_distance,
    "convergence": cmd_convergence,
    "check": cmd_check,
    "value": cmd_value,
}


def run(command: str, session: Session, args: argparse.Namespace) -> int:
    """Run one subcommand and return its exit status."""
    if command not in COMMANDS:
        raise ConfigError(f"Unknown subcommand: {command}. Available: {list(SUBCOMMANDS)}")
    session.out.mkdir(parents=True, exist_ok=True)
    logger.info("%s: config %s, seed %d, %d worker(s)", command, session.provenance.config_hash,
                session.config.seed, session.workers)
    return COMMANDS[command](session, args)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        env = load_environment()
        _configure_logging(args.verbose, env.log_level)
        session = make_session(args, env)
        return run(args.command, session, args)
    except HANDLED_ERRORS as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_ERROR
    except np.linalg.LinAlgError as e:
        print(f"[ERROR] linear algebra failure: {e}", file=sys.stderr)
        return EXIT_ERROR
