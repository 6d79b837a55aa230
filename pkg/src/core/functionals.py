"""
Cylinder functionals, Ito and Fokker-Planck residuals, and the value function.

A cylinder functional is
    F(t, mu) = exp(alpha t) phi(<f_1, mu>, ..., <f_m, mu>) + beta t
so every flat and intrinsic derivative has a closed form through the
pairing vector u = (<f_j, mu>)_j.
"""

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, List, Sequence, Union

import numpy as np

from .branching import BranchingTrajectory, SimGrid
from .coefficients import CoefficientSet
from .lifted import ReferenceFlow, lift_Phi, picard_solve, simulate_lifted_self
from .measure import PointMeasure, pair
from .rng import STREAM_VALUE, derive_seed
from .testfunctions import (
    OuterFunction,
    SmoothFunction,
    SpaceTimeFunction,
    build_outer_function,
    build_test_function,
)

logger = logging.getLogger(__name__)


class ContractError(TypeError):
    """Raised when an input lacks the data an operation needs."""
    pass


def run_parallel(job: Callable, items: Sequence, workers: int = 1) -> List:
    """Map job over items on up to `workers` threads; results keep the item order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [job(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, items))


class CylinderFunctional:
    """F(t, mu) = exp(time_growth t) phi(<f, mu>) + time_drift t."""

    def __init__(
        self,
        inner: Sequence[SmoothFunction],
        outer: OuterFunction,
        time_growth: float = 0.0,
        time_drift: float = 0.0,
        name: str = "",
    ):
        self.inner = list(inner)
        if len(self.inner) != outer.arity:
            raise ValueError(f"Outer function takes {outer.arity} pairings, got {len(self.inner)} inner functions")
        self.outer = outer
        self.time_growth = float(time_growth)
        self.time_drift = float(time_drift)
        self.name = name

    @property
    def arity(self) -> int:
        return len(self.inner)

    @property
    def is_bounded(self) -> bool:
        """Whether every inner function declares finite C^2 bounds."""
        return all(
            np.isfinite(f.sup_bound) and np.isfinite(f.lipschitz_bound) and np.isfinite(f.hessian_bound)
            for f in self.inner
        )

    def factor(self, t: float) -> float:
        return float(np.exp(self.time_growth * t))

    def pairings(self, mu: PointMeasure) -> np.ndarray:
        return np.array([pair(f, mu) for f in self.inner])

    def inner_values(self, x: np.ndarray) -> np.ndarray:
        """(n, m) inner function values."""
        x = np.atleast_2d(x)
        return np.stack([f(x) for f in self.inner], axis=1)

    def inner_gradients(self, x: np.ndarray) -> np.ndarray:
        """(n, m, d) inner gradients."""
        x = np.atleast_2d(x)
        return np.stack([f.gradient(x) for f in self.inner], axis=1)

    def inner_hessians(self, x: np.ndarray) -> np.ndarray:
        """(n, m, d, d) inner Hessians."""
        x = np.atleast_2d(x)
        return np.stack([f.hessian(x) for f in self.inner], axis=1)

    def value(self, mu: PointMeasure, t: float = 0.0) -> float:
        return self.value_at(self.pairings(mu), t)

    def value_at(self, u: np.ndarray, t: float = 0.0) -> Any:
        """F as a function of the pairing vector; u may be batched (..., m)."""
        return self.factor(t) * self.outer.value(u) + self.time_drift * t

    def time_derivative(self, mu: PointMeasure, t: float = 0.0) -> float:
        u = self.pairings(mu)
        return self.time_growth * self.factor(t) * float(self.outer.value(u)) + self.time_drift

    def flat_derivative(self, mu: PointMeasure, x: np.ndarray, t: float = 0.0) -> np.ndarray:
        """dF/dmu(t, mu, x) = exp(alpha t) sum_j d_j phi(u) f_j(x), one value per row of x."""
        u = self.pairings(mu)
        return self.factor(t) * (self.inner_values(x) @ self.outer.gradient(u))

    def second_flat_derivative(self, mu: PointMeasure, x: np.ndarray, y: np.ndarray, t: float = 0.0) -> np.ndarray:
        """sum_{jk} d_j d_k phi(u) f_j(x) f_k(y), rows of x and y paired."""
        u = self.pairings(mu)
        hess = self.outer.hessian(u)
        return self.factor(t) * np.einsum("nj,jk,nk->n", self.inner_values(x), hess, self.inner_values(y))

    def intrinsic_derivative(self, mu: PointMeasure, x: np.ndarray, t: float = 0.0) -> np.ndarray:
        """D_mu F(t, mu, x) = gradient in x of the flat derivative, (n, d)."""
        u = self.pairings(mu)
        return self.factor(t) * np.einsum("j,njd->nd", self.outer.gradient(u), self.inner_gradients(x))

    def intrinsic_hessian(self, mu: PointMeasure, x: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Gradient in x of D_mu F, (n, d, d)."""
        u = self.pairings(mu)
        return self.factor(t) * np.einsum("j,njab->nab", self.outer.gradient(u), self.inner_hessians(x))

    def second_intrinsic_derivative(
        self, mu: PointMeasure, x: np.ndarray, y: np.ndarray, t: float = 0.0
    ) -> np.ndarray:
        """D^2_mu F(t, mu, x, y) = sum_{jk} d_j d_k phi grad f_j(x) grad f_k(y)^T, (n, d, d)."""
        u = self.pairings(mu)
        hess = self.outer.hessian(u)
        return self.factor(t) * np.einsum(
            "jk,nja,nkb->nab", hess, self.inner_gradients(x), self.inner_gradients(y)
        )

    def to_dict(self) -> dict:
        return {
            "inner": [f.to_dict() for f in self.inner],
            "outer": self.outer.to_dict(),
            "time_growth": self.time_growth,
            "time_drift": self.time_drift,
        } | ({"name": self.name} if self.name else {})


def functional_from_dict(data: dict) -> CylinderFunctional:
    """Build a cylinder functional from its config form."""
    unknown = set(data) - {"inner", "outer", "time_growth", "time_drift", "name"}
    if unknown:
        raise ValueError(f"Unknown functional keys: {sorted(unknown)}")
    if "inner" not in data or "outer" not in data:
        raise ValueError("A functional needs 'inner' and 'outer'")
    return CylinderFunctional(
        [build_test_function(spec) for spec in data["inner"]],
        build_outer_function(data["outer"]),
        time_growth=float(data.get("time_growth", 0.0)),
        time_drift=float(data.get("time_drift", 0.0)),
        name=str(data.get("name", "")),
    )


def eval_G(G: CylinderFunctional, mu: PointMeasure, t: float = 0.0) -> float:
    """G(mu) = phi(<f_1, mu>, ..., <f_m, mu>)."""
    return float(G.value(mu, t))


def flat_derivative_G(G: CylinderFunctional, mu: PointMeasure, x: Sequence[float]) -> float:
    point = np.asarray(x, dtype=float).reshape(1, -1)
    return float(G.flat_derivative(mu, point)[0])


def second_flat_derivative_G(G: CylinderFunctional, mu: PointMeasure, x: Sequence[float], y: Sequence[float]) -> float:
    first = np.asarray(x, dtype=float).reshape(1, -1)
    second = np.asarray(y, dtype=float).reshape(1, -1)
    return float(G.second_flat_derivative(mu, first, second)[0])


def intrinsic_derivative_G(G: CylinderFunctional, mu: PointMeasure, x: Sequence[float]) -> np.ndarray:
    point = np.asarray(x, dtype=float).reshape(1, -1)
    return G.intrinsic_derivative(mu, point)[0]


# ---------------------------------------------------------------------------
# Fokker-Planck and Ito residuals
# ---------------------------------------------------------------------------

def _as_space_time(f: Any) -> SpaceTimeFunction:
    if isinstance(f, SpaceTimeFunction):
        return f
    if isinstance(f, SmoothFunction):
        return SpaceTimeFunction(f)
    for attribute in ("time_derivative", "gradient", "hessian"):
        if not callable(getattr(f, attribute, None)):
            raise ContractError(f"Test function {f!r} has no {attribute}")
    return f


def fp_residual(
    f: Union[SmoothFunction, SpaceTimeFunction],
    flow: ReferenceFlow,
    coeffs: CoefficientSet,
) -> float:
    """
    Weak Fokker-Planck residual of a reference flow against one test function.

    <f_T, mu_T> - <f_0, mu_0> - sum_j dt <d_t f + L f + c f, mu_{t_j}>
    with L f = b . grad f + 1/2 tr(Hess f sigma sigma^T), coefficients frozen
    against mu_{t_j} (left Riemann sum).

    Raises:
        ContractError: f has no time derivative, gradient or Hessian
    """
    f = _as_space_time(f)
    times = flow.grid.times
    measures = flow.measures
    if len(measures) != times.shape[0]:
        raise ContractError(f"Flow has {len(measures)} measures for {times.shape[0]} grid times")

    integral = 0.0
    for j in range(flow.grid.steps):
        t = float(times[j])
        mu = measures[j]
        if mu.size == 0:
            continue
        x = mu.locations
        frozen = coeffs.freeze(mu)
        generator = (
            f.time_derivative(t, x)
            + np.einsum("nd,nd->n", frozen.drift(t, x), f.gradient(t, x))
            + 0.5 * np.einsum("nab,nab->n", f.hessian(t, x), frozen.covariance(t, x))
            + frozen.net_growth(t, x) * f(t, x)
        )
        integral += (times[j + 1] - t) * float(mu.weights @ generator)

    def pairing(index: int) -> float:
        mu = measures[index]
        if mu.size == 0:
            return 0.0
        return float(mu.weights @ f(float(times[index]), mu.locations))

    return pairing(len(measures) - 1) - pairing(0) - integral


def fp_martingale_stderr(
    f: Union[SmoothFunction, SpaceTimeFunction],
    flow: ReferenceFlow,
    coeffs: CoefficientSet,
) -> float:
    """
    Standard deviation of the Brownian part of fp_residual for a particle flow:
    sqrt(sum_j dt sum_i w_i^2 |sigma^T grad f|^2) at the atoms of mu_{t_j}.
    """
    f = _as_space_time(f)
    times = flow.grid.times
    variance = 0.0
    for j in range(flow.grid.steps):
        mu = flow.measures[j]
        if mu.size == 0:
            continue
        t = float(times[j])
        sigma = coeffs.freeze(mu).diffusion(t, mu.locations)
        loading = np.einsum("nij,ni->nj", sigma, f.gradient(t, mu.locations))
        variance += (times[j + 1] - t) * float(mu.weights ** 2 @ np.sum(loading ** 2, axis=1))
    return float(np.sqrt(variance))


def _diffusion_part(F: CylinderFunctional, t: float, mu: PointMeasure, coeffs: CoefficientSet) -> np.ndarray:
    """Per-atom b . D_mu F + 1/2 tr(grad D_mu F a)."""
    x = mu.locations
    frozen = coeffs.freeze(mu)
    return (
        np.einsum("nd,nd->n", frozen.drift(t, x), F.intrinsic_derivative(mu, x, t))
        + 0.5 * np.einsum("nab,nab->n", F.intrinsic_hessian(mu, x, t), frozen.covariance(t, x))
    )


def ito_drift_environment(F: CylinderFunctional, t: float, mu: PointMeasure, coeffs: CoefficientSet) -> float:
    """
    Time derivative of F along the environment flow through (t, mu):
    d_t F + <L dF/dmu + c dF/dmu, mu>.
    """
    value = F.time_derivative(mu, t)
    if mu.size == 0:
        return value
    x = mu.locations
    growth = coeffs.freeze(mu).net_growth(t, x) * F.flat_derivative(mu, x, t)
    return value + float(mu.weights @ (_diffusion_part(F, t, mu, coeffs) + growth))


def environment_ito_residual(F: CylinderFunctional, flow: ReferenceFlow, coeffs: CoefficientSet) -> float:
    """F(T, mu_T) - F(0, mu_0) - sum_j dt ito_drift_environment along a reference flow."""
    times = flow.grid.times
    integral = sum(
        (times[j + 1] - times[j]) * ito_drift_environment(F, float(times[j]), flow.measures[j], coeffs)
        for j in range(flow.grid.steps)
    )
    return F.value(flow.measures[-1], float(times[-1])) - F.value(flow.measures[0], float(times[0])) - integral


def _exact_jump(F: CylinderFunctional, t: float, mu: PointMeasure, coeffs: CoefficientSet, N: int) -> np.ndarray:
    """
    Per-atom N gamma sum_l p_l (F(mu + ((l - 1) / N) delta_x) - F(mu)).
    Summed against mu this is the exact branching compensator.
    """
    x = mu.locations
    frozen = coeffs.freeze(mu)
    u = F.pairings(mu)
    base = F.value_at(u, t)
    fx = F.inner_values(x)  # (n, m)
    progeny = frozen.progeny(t, x)  # (n, L + 1)
    shifts = (coeffs.litter_sizes - 1.0) / N  # (L + 1,)
    shifted = u[None, None, :] + shifts[None, :, None] * fx[:, None, :]  # (n, L + 1, m)
    increments = F.value_at(shifted, t) - base
    return N * frozen.death_rate(t, x) * np.sum(progeny * increments, axis=1)


def _trace_part(F: CylinderFunctional, t: float, mu: PointMeasure, coeffs: CoefficientSet) -> np.ndarray:
    """Per-atom tr(D^2_mu F(t, mu, x, x) sigma sigma^T)."""
    x = mu.locations
    covariance = coeffs.freeze(mu).covariance(t, x)
    return np.einsum("nab,nab->n", F.second_intrinsic_derivative(mu, x, x, t), covariance)


@dataclass
class ItoResidual:
    """One run of the empirical Ito formula: increment minus integrated generator."""
    residual: float
    increment: float
    diffusion_integral: float
    trace_integral: float
    jump_integral: float
    events: int


def _require_path(traj: BranchingTrajectory) -> None:
    if traj.event_log is None:
        raise ContractError("Trajectory has no event log; simulate with keep_events=True")
    if not traj.has_all_measures:
        raise ContractError("Trajectory lacks measures at some grid times; simulate with record='all' or 'measures'")
    births = np.zeros(traj.grid.steps + 1, dtype=np.int64)
    for event in traj.event_log:
        births[min(int(np.ceil((event.time - traj.grid.start) / traj.grid.dt - 1e-9)), traj.grid.steps)] += (
            event.litter - 1
        )
    expected = traj.counts[0] + np.cumsum(births)
    if not np.array_equal(expected, traj.counts):
        raise ContractError("Event log does not reproduce the recorded particle counts")


def ito_residual_empirical(F: CylinderFunctional, traj: BranchingTrajectory, coeffs: CoefficientSet) -> ItoResidual:
    """
    Empirical Ito residual of one interacting run.

    F(T, mu^N_T) - F(0, mu^N_0) minus the left-Riemann integral of
        d_t F + <b . D_mu F + 1/2 tr(grad D_mu F a), mu^N>
        + (1/2N) <tr(D^2_mu F(x, x) a), mu^N>
        + N <gamma sum_l p_l (F(mu^N + ((l - 1)/N) delta_x) - F(mu^N)), mu^N>.
    What remains estimates the martingale increment, so its ensemble mean is
    zero up to Monte Carlo error and O(dt) bias.

    Raises:
        ContractError: no event log, missing measures, or an event log that
            does not match the particle counts
    """
    _require_path(traj)
    N = traj.replicas
    times = traj.grid.times
    diffusion = trace = jump = 0.0
    for j in range(traj.grid.steps):
        t = float(times[j])
        h = float(times[j + 1] - t)
        mu = traj.measures[j]
        diffusion += h * F.time_derivative(mu, t)
        if mu.size == 0:
            continue
        diffusion += h * float(mu.weights @ _diffusion_part(F, t, mu, coeffs))
        trace += h * float(mu.weights @ _trace_part(F, t, mu, coeffs)) / (2.0 * N)
        jump += h * float(mu.weights @ _exact_jump(F, t, mu, coeffs, N))

    increment = F.value(traj.measures[-1], float(times[-1])) - F.value(traj.measures[0], float(times[0]))
    return ItoResidual(
        residual=increment - diffusion - trace - jump,
        increment=increment,
        diffusion_integral=diffusion,
        trace_integral=trace,
        jump_integral=jump,
        events=len(traj.event_log),
    )


@dataclass
class ResidualStatistics:
    """Ensemble mean and standard error of per-run residuals."""
    residuals: np.ndarray
    mean: float
    stderr: float

    @property
    def runs(self) -> int:
        return int(self.residuals.shape[0])

    def within(self, slack: float = 3.0, allowance: float = 0.0) -> bool:
        return abs(self.mean) <= slack * self.stderr + allowance


def residual_statistics(values: Sequence[float]) -> ResidualStatistics:
    residuals = np.asarray(values, dtype=float)
    if residuals.size == 0:
        raise ValueError("No residuals to summarize")
    stderr = float(np.std(residuals, ddof=1) / np.sqrt(residuals.size)) if residuals.size > 1 else 0.0
    return ResidualStatistics(residuals, float(np.mean(residuals)), stderr)


def ito_residual_statistics(
    F: CylinderFunctional,
    ensemble: Sequence[BranchingTrajectory],
    coeffs: CoefficientSet,
) -> ResidualStatistics:
    """ito_residual_empirical over an ensemble of independent runs."""
    return residual_statistics([ito_residual_empirical(F, traj, coeffs).residual for traj in ensemble])


@dataclass
class JumpDecomposition:
    """
    Branching compensator split at every grid time.

    exact = first_order + remainder, where first_order = <c dF/dmu, mu^N>.
    remainder and trace are the second-order terms of size O(1/N).
    """
    times: np.ndarray
    exact: np.ndarray
    first_order: np.ndarray
    remainder: np.ndarray
    trace: np.ndarray
    replicas: int


def jump_taylor_decomposition(
    F: CylinderFunctional,
    traj: BranchingTrajectory,
    coeffs: CoefficientSet,
) -> JumpDecomposition:
    """Compare the exact jump compensator with its first-order Taylor part along one run."""
    if not traj.has_all_measures:
        raise ContractError("Trajectory lacks measures at some grid times")
    N = traj.replicas
    times = traj.grid.times
    exact = np.zeros(times.shape[0])
    first = np.zeros(times.shape[0])
    trace = np.zeros(times.shape[0])
    for j, t in enumerate(times):
        mu = traj.measures[j]
        if mu.size == 0:
            continue
        x = mu.locations
        t = float(t)
        exact[j] = float(mu.weights @ _exact_jump(F, t, mu, coeffs, N))
        first[j] = float(mu.weights @ (coeffs.freeze(mu).net_growth(t, x) * F.flat_derivative(mu, x, t)))
        trace[j] = float(mu.weights @ _trace_part(F, t, mu, coeffs)) / (2.0 * N)
    return JumpDecomposition(times, exact, first, exact - first, trace, N)


# ---------------------------------------------------------------------------
# Value function by nested simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LiftedSolver:
    """Settings for the nested lifted simulations behind U(t, mu)."""
    coeffs: CoefficientSet
    horizon: float = 1.0
    dt: float = 1.0 / 64
    ensemble_size: int = 512
    seed: int = 0
    replicas: int = 8
    method: str = "self-interaction"  # "self-interaction" | "picard"
    iterations: int = 3
    workers: int = 1

    def __post_init__(self):
        if self.method not in ("self-interaction", "picard"):
            raise ValueError(f"Unknown lifted method: {self.method}. Available: ['self-interaction', 'picard']")
        if self.replicas < 1:
            raise ValueError(f"Need at least one replica, got {self.replicas}")

    @property
    def grid(self) -> SimGrid:
        return SimGrid(self.horizon, self.dt)

    def run(self, init: Any, grid: SimGrid, seed: int) -> ReferenceFlow:
        if self.method == "picard":
            return picard_solve(self.ensemble_size, self.coeffs, init, grid, self.iterations, seed)
        return simulate_lifted_self(self.ensemble_size, self.coeffs, init, grid, seed)

    def map(self, job, items: Sequence) -> List:
        """Apply job to items, in order, on up to `workers` threads."""
        return run_parallel(job, items, self.workers)


@dataclass
class ValueEstimate:
    """Monte Carlo estimate of U(t, mu)."""
    time: float
    value: float
    stderr: float
    replicas: int
    samples: np.ndarray = field(default_factory=lambda: np.zeros(0))


def value_function_U(
    t: float,
    mu: PointMeasure,
    G: CylinderFunctional,
    solver: LiftedSolver,
    restart_key: int = 0,
) -> ValueEstimate:
    """
    U(t, mu) = G(mu~_T) for the lifted flow started from the lift of mu at time t.

    Each replica samples a fresh ensemble from lift_Phi(mu) and runs it on the
    tail of the solver grid. restart_key separates the random streams of
    different restarts that share a solver seed.
    """
    horizon = solver.horizon
    if t >= horizon - 1e-12:
        return ValueEstimate(float(t), eval_G(G, mu), 0.0, 0)
    if float(np.sum(mu.weights)) == 0:
        # the zero measure stays zero under the flow
        return ValueEstimate(float(t), eval_G(G, mu), 0.0, 0)

    grid = solver.grid.tail(t)
    lift = lift_Phi(mu)

    def replica(r: int) -> float:
        seed = derive_seed(solver.seed, STREAM_VALUE, restart_key, r)
        return eval_G(G, solver.run(lift, grid, seed).final_measure)

    samples = np.asarray(solver.map(replica, list(range(solver.replicas))), dtype=float)
    stats = residual_statistics(samples)
    logger.debug("U(%.4g) = %.6g +- %.2g over %d replicas", t, stats.mean, stats.stderr, samples.size)
    return ValueEstimate(float(t), stats.mean, stats.stderr, int(samples.size), samples)


@dataclass
class FlowConstancyReport:
    """U(s, mu~_s) against U(0, mu_0) along one reference flow."""
    times: List[float]
    values: List[float]
    stderrs: List[float]
    baseline: float
    baseline_stderr: float
    flow_spread: float
    deviations: List[float]
    combined_stderrs: List[float]

    @property
    def max_deviation(self) -> float:
        return max(self.deviations) if self.deviations else 0.0

    def passed(self, slack: float = 3.0) -> bool:
        return all(dev <= slack * se + 1e-12 for dev, se in zip(self.deviations, self.combined_stderrs))


def flow_constancy_check(
    G: CylinderFunctional,
    mu0: PointMeasure,
    times: Sequence[float],
    solver: LiftedSolver,
) -> FlowConstancyReport:
    """
    Check that U is constant along the flow it generates.

    One reference flow runs from (0, mu0). For every s in times, U(s, mu~_s)
    is estimated by restarted nested simulation and compared with U(0, mu0).
    The combined standard error adds the restart stderr, the baseline stderr
    and the spread of G over single flows, which bounds the error carried by
    the one flow that supplies mu~_s.
    """
    grid = solver.grid
    for s in times:
        if s < 0 or s > grid.horizon + 1e-12:
            raise ValueError(f"Time {s} lies outside [0, {grid.horizon}]")
        grid.index_of(s)

    baseline = value_function_U(0.0, mu0, G, solver, restart_key=0)
    spread = baseline.stderr * np.sqrt(max(baseline.replicas, 1))
    flow = solver.run(lift_Phi(mu0), grid, derive_seed(solver.seed, STREAM_VALUE, len(times) + 1))

    # restarts run side by side; each one samples its replicas serially
    serial = dataclasses.replace(solver, workers=1)

    def restart(item) -> ValueEstimate:
        k, s = item
        if s == 0:
            return baseline
        return value_function_U(s, flow.measures[grid.index_of(s)], G, serial, restart_key=k + 1)

    estimates = run_parallel(restart, list(enumerate(times)), solver.workers)
    deviations, combined = [], []
    for s, estimate in zip(times, estimates):
        if s == 0:
            deviations.append(0.0)
            combined.append(baseline.stderr)
            continue
        deviations.append(abs(estimate.value - baseline.value))
        combined.append(float(np.sqrt(estimate.stderr ** 2 + baseline.stderr ** 2 + spread ** 2)))
        logger.info("U(%.4g, flow) = %.6g +- %.2g (baseline %.6g)", s, estimate.value, estimate.stderr, baseline.value)

    return FlowConstancyReport(
        times=[float(s) for s in times],
        values=[e.value for e in estimates],
        stderrs=[e.stderr for e in estimates],
        baseline=baseline.value,
        baseline_stderr=baseline.stderr,
        flow_spread=float(spread),
        deviations=deviations,
        combined_stderrs=combined,
    )
