"""
Lifted (Y, Z) system and the reference flow.

The lifted system has no branching: each particle carries a position y and a
weight z that grows at the net rate c. Its projection T*rho (atoms at y with
weight z / Mp) solves the same nonlinear Fokker-Planck equation as the
branching environment measure, so it serves as the reference flow.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol, Tuple

import numpy as np

from .branching import NumericsError, SimGrid
from .coefficients import CoefficientSet
from .measure import PointMeasure
from .metrics import bounded_lipschitz, coarsen
from .rng import STREAM_LIFTED, derive_generator

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class WeightedEnsemble:
    """Particles (y_i, z_i) of the lifted system at one time."""
    positions: np.ndarray  # (Mp, d)
    weights: np.ndarray  # (Mp,)
    time: float = 0.0

    def __post_init__(self):
        positions = np.array(self.positions, dtype=float)
        if positions.ndim == 1:
            positions = positions.reshape(-1, 1)
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if positions.shape[0] != weights.shape[0]:
            raise ValueError(f"Got {positions.shape[0]} positions but {weights.shape[0]} weights")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValueError("Ensemble weights must be finite and non-negative")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])


def project_T_star(ens: WeightedEnsemble, scale: Optional[float] = None) -> PointMeasure:
    """
    Projection T*: atom at each y with weight scale * z.

    Args:
        ens: Weighted ensemble
        scale: Weight per particle; defaults to 1 / ensemble size

    Returns:
        The projected point measure
    """
    if scale is None:
        scale = 1.0 / max(ens.size, 1)
    if scale <= 0:
        raise ValueError(f"Scale must be positive, got {scale}")
    return PointMeasure(ens.positions, ens.weights * scale)


class LiftedInitial(Protocol):
    """Anything that can draw an initial lifted ensemble."""

    @property
    def dimension(self) -> int: ...

    def sample_lifted(self, size: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]: ...


@dataclass(frozen=True, eq=False)
class LiftDescriptor:
    """Phi(mu) = (normalized mu) x delta_{mu(R^d)}, delta_0 x delta_0 for the zero measure."""
    locations: np.ndarray
    probabilities: np.ndarray
    total_mass: float

    @property
    def dimension(self) -> int:
        return int(self.locations.shape[1])

    def sample_lifted(self, size: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        if self.total_mass == 0:
            return np.zeros((size, self.dimension)), np.zeros(size)
        index = rng.choice(self.locations.shape[0], size=size, p=self.probabilities)
        return self.locations[index].copy(), np.full(size, self.total_mass)

    def sample(self, size: int, rng: np.random.Generator) -> WeightedEnsemble:
        y, z = self.sample_lifted(size, rng)
        return WeightedEnsemble(y, z)


def lift_Phi(mu: PointMeasure) -> LiftDescriptor:
    """Sampling descriptor of the lift of mu."""
    total = float(np.sum(mu.weights))
    if total == 0:
        return LiftDescriptor(np.zeros((1, mu.dimension)), np.ones(1), 0.0)
    support = mu.without_zero_atoms()
    probabilities = support.weights / np.sum(support.weights)
    return LiftDescriptor(np.array(support.locations), probabilities, total)


@dataclass
class ReferenceFlow:
    """Projected lifted flow on a grid."""
    grid: SimGrid
    measures: List[PointMeasure]
    method: str  # "self-interaction" | "picard"
    ensemble_size: int
    seed: int
    iterations: Optional[int] = None
    iteration_gaps: List[float] = field(default_factory=list)
    weight_violations: int = 0
    final_ensemble: Optional[WeightedEnsemble] = None

    @property
    def final_measure(self) -> PointMeasure:
        return self.measures[-1]


MeasureSource = Callable[[int, np.ndarray, np.ndarray], PointMeasure]


def _integrate(
    Mp: int,
    coeffs: CoefficientSet,
    y: np.ndarray,
    z: np.ndarray,
    grid: SimGrid,
    rng: np.random.Generator,
    measure_for_step: MeasureSource,
) -> Tuple[List[PointMeasure], WeightedEnsemble, int]:
    """Euler-Maruyama for y, exponential update z <- z exp(c dt) for the weight."""
    d = coeffs.dimension
    times = grid.times
    z0 = z.copy()
    growth_cap = coeffs.bounds.gamma_bar * coeffs.bounds.M
    violations = 0
    measures = [PointMeasure(y, z / Mp)]

    for j in range(grid.steps):
        t = times[j]
        h = times[j + 1] - t
        frozen = coeffs.freeze(measure_for_step(j, y, z))
        drift = frozen.drift(t, y)
        sigma = frozen.diffusion(t, y)
        growth = frozen.net_growth(t, y)
        noise = rng.standard_normal((Mp, d))
        y = y + drift * h + np.einsum("nij,nj->ni", sigma, noise) * np.sqrt(h)
        z = z * np.exp(growth * h)
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            raise NumericsError(f"Non-finite lifted state at t={times[j + 1]:.6g}", time=float(times[j + 1]))

        elapsed = times[j + 1] - grid.start
        upper = z0 * np.exp(growth_cap * elapsed) * (1.0 + 1e-12)
        lower = z0 * np.exp(-growth_cap * elapsed) * (1.0 - 1e-12)
        violations += int(np.count_nonzero((z > upper) | (z < lower)))
        measures.append(PointMeasure(y, z / Mp))

    if violations:
        logger.warning("Weight sandwich violated %d times (|c| exceeds gamma_bar * M)", violations)
    return measures, WeightedEnsemble(y, z, float(times[-1])), violations


def _initial_state(Mp: int, init: LiftedInitial, seed: int) -> Tuple[np.random.Generator, np.ndarray, np.ndarray]:
    rng = derive_generator(seed, STREAM_LIFTED)
    y, z = init.sample_lifted(Mp, rng)
    y = np.array(y, dtype=float).reshape(Mp, init.dimension)
    z = np.array(z, dtype=float).reshape(Mp)
    return rng, y, z


def simulate_lifted_self(
    Mp: int,
    coeffs: CoefficientSet,
    init: LiftedInitial,
    grid: SimGrid,
    seed: int,
) -> ReferenceFlow:
    """
    Self-interacting weighted-particle approximation of the reference flow.

    At every step the coefficients are frozen against the current projection
    T*rho (weight z / Mp per particle).

    Args:
        Mp: Ensemble size (>= 2)
        coeffs: Coefficient set
        init: Lifted initial law (InitialCondition or a LiftDescriptor)
        grid: Time grid
        seed: Master seed

    Returns:
        ReferenceFlow with one measure per grid time
    """
    if Mp < 2:
        raise ValueError(f"Ensemble size must be >= 2, got {Mp}")
    rng, y, z = _initial_state(Mp, init, seed)
    measures, ensemble, violations = _integrate(
        Mp, coeffs, y, z, grid, rng, lambda j, ys, zs: PointMeasure(ys, zs / Mp)
    )
    return ReferenceFlow(
        grid=grid,
        measures=measures,
        method="self-interaction",
        ensemble_size=Mp,
        seed=seed,
        weight_violations=violations,
        final_ensemble=ensemble,
    )


def flow_gap(
    first: List[PointMeasure],
    second: List[PointMeasure],
    radius: float = 0.02,
    stride: int = 1,
) -> float:
    """Sup over grid times of the bounded-Lipschitz distance, on coarsened supports."""
    if len(first) != len(second):
        raise ValueError(f"Flows have {len(first)} and {len(second)} time points")
    indices = sorted(set(range(0, len(first), max(stride, 1))) | {len(first) - 1})
    return max(
        bounded_lipschitz(coarsen(first[j], radius), coarsen(second[j], radius))
        for j in indices
    )


def picard_solve(
    Mp: int,
    coeffs: CoefficientSet,
    init: LiftedInitial,
    grid: SimGrid,
    iterations: int,
    seed: int,
    gap_radius: float = 0.02,
    gap_stride: int = 1,
) -> ReferenceFlow:
    """
    Picard iteration on the measure flow.

    Iteration 0 is the initial projection held constant in time. Iteration
    k + 1 runs the ensemble with coefficients frozen against iteration k's
    flow. The random stream is replayed from the seed every iteration, so all
    iterations share the same initial sample and Brownian increments.

    Args:
        Mp: Ensemble size (>= 2)
        coeffs: Coefficient set
        init: Lifted initial law
        grid: Time grid
        iterations: Number of iterations (>= 1)
        seed: Master seed
        gap_radius: Coarsening radius used when measuring iteration gaps
        gap_stride: Evaluate gaps every gap_stride grid times (plus the last)

    Returns:
        The last iteration's flow, with the sup-over-time gap of each iteration
    """
    if iterations < 1:
        raise ValueError(f"Need at least one Picard iteration, got {iterations}")
    if Mp < 2:
        raise ValueError(f"Ensemble size must be >= 2, got {Mp}")

    _, y, z = _initial_state(Mp, init, seed)
    previous = [PointMeasure(y, z / Mp)] * (grid.steps + 1)
    gaps: List[float] = []
    violations = 0
    ensemble = None

    for k in range(1, iterations + 1):
        rng, y, z = _initial_state(Mp, init, seed)
        measures, ensemble, violations = _integrate(
            Mp, coeffs, y, z, grid, rng, lambda j, ys, zs, frozen_flow=previous: frozen_flow[j]
        )
        gap = flow_gap(measures, previous, gap_radius, gap_stride)
        gaps.append(gap)
        logger.info("Picard iteration %d: sup gap %.4e", k, gap)
        previous = measures

    return ReferenceFlow(
        grid=grid,
        measures=previous,
        method="picard",
        ensemble_size=Mp,
        seed=seed,
        iterations=iterations,
        iteration_gaps=gaps,
        weight_violations=violations,
        final_ensemble=ensemble,
    )


@dataclass
class LiftingLipschitzReport:
    """d(T*rho1, T*rho2) against the bound (C + 1) W_1(rho1, rho2)."""
    distance: float
    coupling_cost: float
    weight_cap: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.distance <= self.bound + 1e-9


def lipschitz_lifting_check(first: WeightedEnsemble, second: WeightedEnsemble) -> LiftingLipschitzReport:
    """
    Compare the projections of two equal-size ensembles.

    The index coupling gives W_1(rho1, rho2) <= mean(|y1 - y2| + |z1 - z2|),
    and for weights bounded by C the projection is (C + 1)-Lipschitz.
    """
    if first.size != second.size:
        raise ValueError(f"Ensembles have sizes {first.size} and {second.size}")
    distance = bounded_lipschitz(project_T_star(first), project_T_star(second))
    coupling = float(np.mean(
        np.linalg.norm(first.positions - second.positions, axis=1) + np.abs(first.weights - second.weights)
    ))
    cap = float(max(np.max(first.weights), np.max(second.weights))) if first.size else 0.0
    return LiftingLipschitzReport(distance, coupling, cap, (cap + 1.0) * coupling)
