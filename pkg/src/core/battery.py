"""
Structural check battery.

Runs every property check that has an oracle independent of the weak-error
rate: declared bounds, Fokker-Planck and Ito residuals, mass growth, time
continuity, the metric sandwich and the weight sandwich.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np

from .branching import NumericsError, PopulationExplosionError, mass_statistics, simulate_branching
from .coefficients import CoefficientError, SamplingPlan, validate_assumptions
from .functionals import (
    ContractError,
    fp_martingale_stderr,
    fp_residual,
    functional_from_dict,
    ito_residual_empirical,
    residual_statistics,
)
from .harness import ensemble_mean_measures, mass_growth_check, run_parallel, time_continuity_check
from .lifted import simulate_lifted_self
from .measure import PointMeasure
from .metrics import MetricSizeError, MetricSolverError, bounded_lipschitz, extended_w1
from .rng import STREAM_CHECK, derive_generator, derive_seed
from .scenario import build_coefficients
from .settings import RunConfig
from .testfunctions import SpaceTimeFunction

logger = logging.getLogger(__name__)


@dataclass
class CheckItem:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""


@dataclass
class CheckReport:
    items: List[CheckItem] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(item.passed for item in self.items)

    @property
    def failures(self) -> List[CheckItem]:
        return [item for item in self.items if not item.passed]


def random_measure_pair(rng: np.random.Generator, dimension: int, max_atoms: int = 4) -> tuple:
    """Two random measures with 1..max_atoms atoms, weights in (0, 2], locations in [-2, 2]^d."""

    def draw() -> PointMeasure:
        n = int(rng.integers(1, max_atoms + 1))
        return PointMeasure(rng.uniform(-2.0, 2.0, size=(n, dimension)), rng.uniform(0.05, 2.0, size=n))

    return draw(), draw()


def metric_sandwich(pairs: int, dimension: int, seed: int) -> CheckItem:
    """1/2 d <= extended W_1 <= 2 d on random measure pairs."""
    rng = derive_generator(seed, STREAM_CHECK, 5)
    violations = 0
    worst = 0.0
    for _ in range(pairs):
        mu, nu = random_measure_pair(rng, dimension)
        d = bounded_lipschitz(mu, nu)
        w = extended_w1(mu, nu)
        if w < 0.5 * d - 1e-9 or w > 2.0 * d + 1e-9:
            violations += 1
        if d > 0:
            worst = max(worst, w / d, d / max(w, 1e-300) / 4.0)
    return CheckItem(
        "metric sandwich", violations == 0, float(violations), 0.0,
        f"{pairs} random pairs, largest ratio max(W/d, d/(4W)) = {worst:.4g}",
    )


def _guarded(name: str, build: Callable[[], List[CheckItem]]) -> List[CheckItem]:
    try:
        return build()
    except (
        NumericsError,
        PopulationExplosionError,
        MetricSizeError,
        MetricSolverError,
        ContractError,
        CoefficientError,
    ) as e:
        logger.warning("Check '%s' could not run: %s", name, e)
        return [CheckItem(name, False, float("nan"), float("nan"), f"error: {e}")]


def run_check_battery(config: RunConfig, workers: int = 1) -> CheckReport:
    """
    Run the structural battery for one config.

    The branching ensemble (check.runs runs of check.N populations) feeds the
    Ito, mass growth and ensemble continuity items; one lifted flow of
    check.ensemble_size particles feeds the Fokker-Planck, flow continuity
    and weight sandwich items.
    """
    check = config.check
    coeffs = build_coefficients(config.scenario)
    grid = config.grid
    dt = grid.dt
    report = CheckReport()

    def assumptions() -> List[CheckItem]:
        plan = SamplingPlan(points=check.sample_points, horizon=grid.horizon, seed=derive_seed(config.seed, STREAM_CHECK, 1))
        result = validate_assumptions(coeffs, plan)
        return [CheckItem(
            "assumptions", result.passed, float(len(result.violations)), 0.0,
            "; ".join(result.violations) or f"{result.samples} samples within declared bounds",
        )]

    report.items += _guarded("assumptions", assumptions)

    def flow_items() -> List[CheckItem]:
        flow = simulate_lifted_self(
            check.ensemble_size, coeffs, config.initial, grid, derive_seed(config.seed, STREAM_CHECK, 2)
        )
        items = []
        scale = max(1.0, max(float(np.sum(mu.weights)) for mu in flow.measures))
        for spec in config.test_functions:
            f = SpaceTimeFunction.from_dict(spec)
            residual = fp_residual(f, flow, coeffs)
            stderr = fp_martingale_stderr(f, flow, coeffs)
            threshold = check.slack * stderr + check.dt_tolerance * dt * scale
            items.append(CheckItem(
                f"fokker-planck {f.spatial.name}", abs(residual) <= threshold, abs(residual), threshold,
                f"residual {residual:.4g}, noise stderr {stderr:.3g}",
            ))
        items.append(CheckItem(
            "weight sandwich", flow.weight_violations == 0, float(flow.weight_violations), 0.0,
            f"{flow.ensemble_size} weights over {grid.steps} steps",
        ))
        continuity = time_continuity_check(
            flow.measures, grid, factor=check.continuity_factor, radius_scale=check.continuity_radius
        )
        items.append(CheckItem(
            "continuity (reference flow)", continuity.bounded,
            continuity.quotients[-1] if continuity.quotients else 0.0,
            check.continuity_factor * (continuity.quotients[0] if continuity.quotients else 0.0),
            "quotients " + ", ".join(f"{lag:.4g}: {q:.4g}" for lag, q in zip(continuity.lags, continuity.quotients)),
        ))
        return items

    report.items += _guarded("reference flow", flow_items)

    def ensemble_items() -> List[CheckItem]:
        def run(r: int):
            return simulate_branching(
                check.N, coeffs, config.initial, grid, derive_seed(config.seed, STREAM_CHECK, 3, r),
                record="measures", keep_events=True,
            )

        ensemble = run_parallel(run, range(check.runs), workers)
        items = []
        for spec in config.battery:
            F = functional_from_dict(spec)
            results = [ito_residual_empirical(F, traj, coeffs) for traj in ensemble]
            stats = residual_statistics([r.residual for r in results])
            scale = max(1.0, float(np.mean([abs(r.increment) for r in results])))
            allowance = check.dt_tolerance * dt * scale
            threshold = check.slack * stats.stderr + allowance
            items.append(CheckItem(
                f"ito {F.name or 'functional'}", stats.within(check.slack, allowance), abs(stats.mean), threshold,
                f"mean residual {stats.mean:.4g} +- {stats.stderr:.3g} over {stats.runs} runs",
            ))

        growth = mass_growth_check(mass_statistics(ensemble), coeffs.bounds.gamma_bar, coeffs.bounds.M, check.slack)
        items.append(CheckItem(
            "mass growth", growth.passed, float(len(growth.violations)), 0.0,
            f"smallest margin {growth.min_margin:.4g}",
        ))
        continuity = time_continuity_check(
            ensemble_mean_measures(ensemble), grid,
            factor=check.continuity_factor, radius_scale=check.continuity_radius,
        )
        items.append(CheckItem(
            "continuity (branching ensemble)", continuity.bounded,
            continuity.quotients[-1] if continuity.quotients else 0.0,
            check.continuity_factor * (continuity.quotients[0] if continuity.quotients else 0.0),
            "quotients " + ", ".join(f"{lag:.4g}: {q:.4g}" for lag, q in zip(continuity.lags, continuity.quotients)),
        ))
        return items

    report.items += _guarded("branching ensemble", ensemble_items)
    report.items += _guarded(
        "metric sandwich",
        lambda: [metric_sandwich(check.sandwich_pairs, coeffs.dimension, config.seed)],
    )

    for item in report.items:
        logger.info("[%s] %s: %.4g (threshold %.4g)", "OK" if item.passed else "FAIL", item.name, item.value, item.threshold)
    return report
