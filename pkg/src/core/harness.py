"""
Studies and checks built on the simulators.

weak_error_study measures |G(mu_T) - E[G(mu_T^N)]| against one shared
reference value from replicated lifted flows; fit_rate turns the table into a
log-log slope. The remaining checks are structural properties of the flows
(mass growth, Holder-1/2 time continuity, initial-condition error).
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .branching import BranchingTrajectory, MassStatistics, SimGrid, simulate_branching
from .coefficients import CoefficientSet
from .functionals import CylinderFunctional, LiftedSolver, eval_G, run_parallel, value_function_U
from .lifted import picard_solve, simulate_lifted_self
from .measure import PointMeasure
from .metrics import bounded_lipschitz, coarsen
from .rng import STREAM_REFERENCE, STREAM_STUDY, derive_generator, derive_seed
from .scenario import InitialCondition

logger = logging.getLogger(__name__)

DEFAULT_N_LIST = (8, 16, 32, 64, 128, 256)
REFERENCE_FACTOR = 16


class StudyError(ValueError):
    """Raised when study settings violate the error budget."""
    pass


# ---------------------------------------------------------------------------
# Weak error study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplicaPolicy:
    """R(N) = base (N / base_N)^2, clamped to [minimum, cap]; or a fixed count."""
    base: int = 16
    base_N: int = 8
    cap: int = 100_000
    minimum: int = 2
    fixed: Optional[int] = None

    def replicas(self, N: int) -> int:
        if self.fixed is not None:
            return int(self.fixed)
        scaled = int(np.ceil(self.base * (N / self.base_N) ** 2))
        return int(min(max(scaled, self.minimum), self.cap))


@dataclass(frozen=True)
class ReferenceSettings:
    """Lifted reference: `replicas` independent flows of `ensemble_size` particles."""
    ensemble_size: int = 4096
    replicas: int = 4
    method: str = "self-interaction"
    iterations: int = 3


@dataclass(frozen=True)
class ReferenceValue:
    value: float
    stderr: float
    replicas: int
    ensemble_size: int


@dataclass
class WeakErrorRow:
    N: int
    replicas: int
    mean: float
    stderr: float
    reference: float
    reference_stderr: float

    @property
    def signed_bias(self) -> float:
        return self.reference - self.mean

    @property
    def bias(self) -> float:
        return abs(self.signed_bias)

    @property
    def noise_dominated(self) -> bool:
        return self.bias <= 3.0 * self.stderr


@dataclass
class WeakErrorTable:
    """Rows sorted by N ascending."""
    rows: List[WeakErrorRow]
    reference: float = 0.0
    reference_stderr: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda row: row.N)

    @property
    def signal_rows(self) -> List[WeakErrorRow]:
        return [row for row in self.rows if not row.noise_dominated]


def reference_value(
    G: CylinderFunctional,
    coeffs: CoefficientSet,
    init: InitialCondition,
    grid: SimGrid,
    settings: ReferenceSettings,
    seed: int,
    workers: int = 1,
) -> ReferenceValue:
    """G(mu~_T) averaged over independent lifted flows, with its standard error."""

    def flow_value(r: int) -> float:
        run_seed = derive_seed(seed, STREAM_REFERENCE, r)
        if settings.method == "picard":
            flow = picard_solve(settings.ensemble_size, coeffs, init, grid, settings.iterations, run_seed)
        else:
            flow = simulate_lifted_self(settings.ensemble_size, coeffs, init, grid, run_seed)
        return eval_G(G, flow.final_measure)

    values = np.asarray(run_parallel(flow_value, range(settings.replicas), workers), dtype=float)
    stderr = float(np.std(values, ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return ReferenceValue(float(np.mean(values)), stderr, int(values.size), settings.ensemble_size)


def weak_error_study(
    coeffs: CoefficientSet,
    init: InitialCondition,
    G: CylinderFunctional,
    grid: SimGrid,
    N_list: Sequence[int] = DEFAULT_N_LIST,
    policy: Optional[ReplicaPolicy] = None,
    reference: Optional[ReferenceSettings] = None,
    seed: int = 0,
    workers: int = 1,
    max_particles: int = 1_000_000,
) -> WeakErrorTable:
    """
    Weak error of the particle system against the lifted reference.

    For every N, R(N) independent interacting runs are simulated on `grid`,
    G is evaluated at each final empirical measure and averaged. The reference
    uses the same grid, so time-discretization bias is shared.

    Raises:
        StudyError: the reference ensemble is smaller than 16 max(N_list)
    """
    policy = policy or ReplicaPolicy()
    reference = reference or ReferenceSettings()
    N_list = sorted(int(N) for N in N_list)
    if not N_list:
        raise StudyError("N_list must not be empty")
    if reference.ensemble_size < REFERENCE_FACTOR * N_list[-1]:
        raise StudyError(
            f"Reference ensemble {reference.ensemble_size} is below {REFERENCE_FACTOR} x max N = "
            f"{REFERENCE_FACTOR * N_list[-1]}"
        )

    ref = reference_value(G, coeffs, init, grid, reference, seed, workers)
    logger.info("Reference G(mu_T) = %.6g +- %.2g (%d flows)", ref.value, ref.stderr, ref.replicas)

    jobs: List[Tuple[int, int]] = [(N, r) for N in N_list for r in range(policy.replicas(N))]

    def run(job: Tuple[int, int]) -> float:
        N, r = job
        traj = simulate_branching(
            N, coeffs, init, grid, derive_seed(seed, STREAM_STUDY, N, r),
            max_particles=max_particles, record="final", keep_events=False,
        )
        return eval_G(G, traj.final_measure)

    values = run_parallel(run, jobs, workers)

    rows = []
    for N in N_list:
        samples = np.asarray([v for (n, _), v in zip(jobs, values) if n == N], dtype=float)
        stderr = float(np.std(samples, ddof=1) / np.sqrt(samples.size)) if samples.size > 1 else 0.0
        row = WeakErrorRow(N, int(samples.size), float(np.mean(samples)), stderr, ref.value, ref.stderr)
        rows.append(row)
        if row.noise_dominated:
            logger.warning("N=%d: bias %.3g is within 3 stderr (%.3g), row is noise-dominated", N, row.bias, stderr)
        else:
            logger.info("N=%d: R=%d, mean %.6g, bias %.3g +- %.2g", N, row.replicas, row.mean, row.bias, stderr)
    return WeakErrorTable(rows, ref.value, ref.stderr, seed)


@dataclass
class RateFit:
    """Least-squares slope of log|bias| against log N."""
    slope: float
    intercept: float
    half_width: float
    points: int
    conclusive: bool
    diagnostics: List[str] = field(default_factory=list)

    @property
    def interval(self) -> Tuple[float, float]:
        return self.slope - self.half_width, self.slope + self.half_width


def fit_rate(table: WeakErrorTable, confidence: float = 0.95, budget: float = 1.0 / 3.0) -> RateFit:
    """
    Fit log|bias| = intercept + slope log N on the signal-dominated rows.

    Fewer than three signal rows give an inconclusive fit with NaN slope. A
    reference stderr above budget * (smallest signal bias) keeps the slope
    but marks the fit inconclusive.
    """
    signal = table.signal_rows
    diagnostics = [
        f"N={row.N}: bias {row.bias:.3g} within 3 stderr {row.stderr:.3g}"
        for row in table.rows if row.noise_dominated
    ]
    if len(signal) < 3:
        diagnostics.append(f"only {len(signal)} signal-dominated rows, need 3")
        logger.warning("Rate fit inconclusive: %s", diagnostics[-1])
        return RateFit(float("nan"), float("nan"), float("nan"), len(signal), False, diagnostics)

    x = np.log([row.N for row in signal])
    y = np.log([row.bias for row in signal])
    result = stats.linregress(x, y)
    df = len(signal) - 2
    half_width = float(stats.t.ppf(0.5 + confidence / 2.0, df) * result.stderr) if df > 0 else float("inf")

    conclusive = True
    smallest = min(row.bias for row in signal)
    if table.reference_stderr > budget * smallest:
        conclusive = False
        diagnostics.append(
            f"reference stderr {table.reference_stderr:.3g} exceeds {budget:.3g} x smallest signal bias {smallest:.3g}"
        )
        logger.warning("Rate fit inconclusive: %s", diagnostics[-1])
    return RateFit(float(result.slope), float(result.intercept), half_width, len(signal), conclusive, diagnostics)


# ---------------------------------------------------------------------------
# Time continuity
# ---------------------------------------------------------------------------

def ensemble_mean_measures(ensemble: Sequence[BranchingTrajectory]) -> List[PointMeasure]:
    """Average of the recorded empirical measures over runs, per recorded grid index."""
    if not ensemble:
        raise ValueError("Ensemble must not be empty")
    runs = len(ensemble)
    means = []
    for k in range(len(ensemble[0].measures)):
        combined = ensemble[0].measures[k].scaled(1.0 / runs)
        for traj in ensemble[1:]:
            combined = combined.combined(traj.measures[k].scaled(1.0 / runs))
        means.append(combined)
    return means


def holder_quotient(first: PointMeasure, second: PointMeasure, lag: float, radius: float = 0.0) -> float:
    """d(mu_s, mu_t) / sqrt(|s - t|) on coarsened supports, with 0/0 taken as 0."""
    if lag == 0:
        return 0.0
    distance = bounded_lipschitz(coarsen(first, radius), coarsen(second, radius))
    return distance / np.sqrt(abs(lag))


@dataclass
class ContinuityReport:
    """Max Holder-1/2 quotient per lag, largest lag first."""
    lags: List[float]
    quotients: List[float]
    factor: float

    @property
    def max_quotient(self) -> float:
        return max(self.quotients) if self.quotients else 0.0

    @property
    def bounded(self) -> bool:
        if len(self.quotients) < 2:
            return True
        return self.quotients[-1] <= self.factor * self.quotients[0] + 1e-9


def time_continuity_check(
    measures: Sequence[PointMeasure],
    grid: SimGrid,
    lag_fractions: Sequence[float] = (1 / 4, 1 / 16, 1 / 64),
    factor: float = 4.0,
    radius_scale: float = 0.05,
) -> ContinuityReport:
    """
    Holder-1/2 quotients d(mu_s, mu_t) / sqrt(s - t) of a measure flow.

    For each lag T * fraction that is a whole number of steps, the flow is
    compared at (t, t + lag) for t = start, start + lag, ...; supports are
    coarsened with radius radius_scale * sqrt(lag). The quotient stays
    bounded if the smallest lag's maximum is at most `factor` times the
    largest lag's.
    """
    if len(measures) != grid.steps + 1:
        raise ValueError(f"Got {len(measures)} measures for {grid.steps + 1} grid times")
    span = grid.horizon - grid.start
    lags, quotients = [], []
    for fraction in sorted(lag_fractions, reverse=True):
        lag = span * fraction
        steps = int(round(lag / grid.dt))
        if steps < 1 or abs(steps * grid.dt - lag) > 1e-9:
            logger.debug("Lag %.4g is not a whole number of steps; skipped", lag)
            continue
        radius = radius_scale * np.sqrt(lag)
        worst = max(
            holder_quotient(measures[j], measures[j + steps], lag, radius)
            for j in range(0, grid.steps - steps + 1, steps)
        )
        lags.append(float(lag))
        quotients.append(float(worst))
        logger.debug("lag %.4g: max quotient %.4g", lag, worst)
    return ContinuityReport(lags, quotients, factor)


# ---------------------------------------------------------------------------
# Mass growth
# ---------------------------------------------------------------------------

@dataclass
class GrowthReport:
    passed: bool
    min_margin: float
    violations: List[Tuple[float, float, float]]


def mass_growth_check(statistics: MassStatistics, gamma_bar: float, M: float, slack: float = 3.0) -> GrowthReport:
    """mean(s) <= mean(t) exp(gamma_bar M (s - t)) + slack stderr(s) for all grid pairs t < s."""
    margins = statistics.growth_margins(gamma_bar, M, slack)
    finite = margins[np.isfinite(margins)]
    violations = statistics.growth_violations(gamma_bar, M, slack)
    for t, s, margin in violations[:5]:
        logger.warning("Mass growth bound broken between t=%.4g and s=%.4g (margin %.4g)", t, s, margin)
    return GrowthReport(not violations, float(finite.min()) if finite.size else float("inf"), violations)


# ---------------------------------------------------------------------------
# Initial-condition error
# ---------------------------------------------------------------------------

@dataclass
class InitialErrorRow:
    N: int
    replicas: int
    mean: float
    stderr: float
    reference: float
    reference_stderr: float

    @property
    def bias(self) -> float:
        return abs(self.reference - self.mean)


def initial_error_study(
    init: InitialCondition,
    G: CylinderFunctional,
    N_list: Sequence[int],
    replicas: int,
    solver: LiftedSolver,
) -> List[InitialErrorRow]:
    """
    |U(0, mu_0) - E U(0, mu_0^N)| per N, with mu_0^N the empirical initial measure.

    U(0, mu_0) runs the lifted flow from the matched lifted initial law;
    U(0, mu_0^N) runs it from the lift of each sampled empirical measure.
    """
    grid = solver.grid

    def reference_flow(r: int) -> float:
        return eval_G(G, solver.run(init, grid, derive_seed(solver.seed, STREAM_REFERENCE, r)).final_measure)

    ref_values = np.asarray(run_parallel(reference_flow, range(solver.replicas), solver.workers), dtype=float)
    ref = float(np.mean(ref_values))
    ref_se = float(np.std(ref_values, ddof=1) / np.sqrt(ref_values.size)) if ref_values.size > 1 else 0.0

    inner = dataclasses.replace(solver, replicas=1, workers=1)
    rows = []
    for N in sorted(int(N) for N in N_list):

        def sample(r: int, N: int = N) -> float:
            rng = derive_generator(solver.seed, STREAM_STUDY, N, r)
            mu0 = init.sample_measure(N, rng)
            nested = dataclasses.replace(inner, seed=derive_seed(solver.seed, STREAM_STUDY, N, r, 1))
            return value_function_U(0.0, mu0, G, nested).value

        values = np.asarray(run_parallel(sample, range(replicas), solver.workers), dtype=float)
        stderr = float(np.std(values, ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
        rows.append(InitialErrorRow(N, int(values.size), float(np.mean(values)), stderr, ref, ref_se))
        logger.info("Initial error N=%d: %.3g +- %.2g", N, rows[-1].bias, stderr)
    return rows
