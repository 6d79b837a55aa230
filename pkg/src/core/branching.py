"""
Finite-population interacting branching particle system.

N i.i.d. initial populations evolve together: every particle diffuses with
coefficients evaluated against the empirical measure mu^N (weight 1/N per
particle) and branches at the accepted points of a rate gamma_bar candidate
clock. Only the diffusion is discretized (Euler-Maruyama on the grid, split at
candidate times); the branching times are exact in the candidate process.

Population i is sampled from the stream (i,) of the run seed and each of its
particles then draws from the stream (i, *label) of its own lineage.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Literal, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .coefficients import CoefficientSet, FrozenCoefficients, sample_progeny_rows
from .measure import Label, Particle, PointMeasure, Population, child_label, population_to_measure
from .rng import STREAM_BRANCHING, derive_generator
from .scenario import InitialCondition

logger = logging.getLogger(__name__)

DEFAULT_MAX_PARTICLES = 1_000_000

RecordMode = Literal["all", "measures", "final"]


class PopulationExplosionError(RuntimeError):
    """Raised when a run exceeds its particle cap."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class NumericsError(RuntimeError):
    """Raised when a simulated state becomes non-finite."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class ShapeError(ValueError):
    """Raised when trajectories on different grids are combined."""
    pass


@dataclass(frozen=True)
class SimGrid:
    """Uniform time grid start, start + dt, ..., horizon."""
    horizon: float
    dt: float
    start: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"Time step must be positive, got {self.dt}")
        span = self.horizon - self.start
        if span < 0:
            raise ValueError(f"Grid start {self.start} lies after horizon {self.horizon}")
        steps = round(span / self.dt)
        if abs(steps * self.dt - span) > 1e-12 * max(1.0, abs(self.horizon)):
            raise ValueError(f"dt={self.dt} does not divide the interval [{self.start}, {self.horizon}]")

    @property
    def steps(self) -> int:
        return int(round((self.horizon - self.start) / self.dt))

    @property
    def times(self) -> np.ndarray:
        times = self.start + self.dt * np.arange(self.steps + 1)
        times[-1] = self.horizon
        return times

    def index_of(self, t: float) -> int:
        """Grid index of a grid time."""
        j = int(round((t - self.start) / self.dt))
        if j < 0 or j > self.steps or abs(self.start + j * self.dt - t) > 1e-9:
            raise ValueError(f"Time {t} is not on the grid (start={self.start}, dt={self.dt})")
        return j

    def tail(self, start: float) -> "SimGrid":
        """Grid from a grid time to the same horizon."""
        self.index_of(start)
        return SimGrid(self.horizon, self.dt, float(start))

    def refined(self, factor: int = 2) -> "SimGrid":
        return SimGrid(self.horizon, self.dt / factor, self.start)

    def to_dict(self) -> Dict[str, Any]:
        return {"horizon": self.horizon, "dt": self.dt}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SimGrid":
        return cls(horizon=float(data.get("horizon", 1.0)), dt=float(data.get("dt", 1.0 / 64)))


class EventRecord(NamedTuple):
    """One accepted branching event."""
    time: float
    replica: int  # population index i in 0..N-1
    parent_label: Label
    litter: int


@dataclass
class BranchingTrajectory:
    """Recorded output of one interacting run of N populations."""
    grid: SimGrid
    replicas: int
    seed: int
    recorded: List[int]  # grid indices with a stored measure
    measures: List[PointMeasure]
    counts: np.ndarray  # total particle count at every grid time
    populations: Optional[List[List[Population]]] = None
    event_log: Optional[List[EventRecord]] = None

    def measure_at(self, index: int) -> PointMeasure:
        """Stored measure at a grid index."""
        try:
            return self.measures[self.recorded.index(index)]
        except ValueError:
            raise ValueError(f"No measure recorded at grid index {index}")

    @property
    def final_measure(self) -> PointMeasure:
        return self.measures[-1]

    @property
    def has_all_measures(self) -> bool:
        return len(self.recorded) == self.grid.steps + 1


class _ParticleSystem:
    """
    Working state of one run: flat arrays over all particles of all populations.

    Each particle draws its clocks, acceptance and litter variates and its
    Euler noise from its own lineage stream keyed by (replica, label), so the
    draws of one lineage never depend on the order of events elsewhere.
    """

    def __init__(self, coeffs: CoefficientSet, replicas: int, seed: int):
        self.coeffs = coeffs
        self.replicas = replicas
        self.seed = seed
        self.gamma_bar = coeffs.bounds.gamma_bar
        d = coeffs.dimension
        self.positions = np.zeros((0, d))
        self.owner = np.zeros(0, dtype=np.int64)
        self.births = np.zeros(0)
        self.clocks = np.zeros(0)
        self.noise = np.zeros((0, d))  # standard normal of the current Euler step
        self.origin = np.zeros(0)  # start of the current Euler step
        self.labels: List[Label] = []
        self.streams: List[np.random.Generator] = []

    @property
    def count(self) -> int:
        return len(self.labels)

    def lineage_stream(self, replica: int, label: Label) -> np.random.Generator:
        return derive_generator(self.seed, STREAM_BRANCHING, replica, *label)

    def next_clock(self, stream: np.random.Generator, start: float) -> float:
        if self.gamma_bar <= 0:
            return np.inf
        return start + stream.exponential(1.0 / self.gamma_bar)

    def seed_populations(self, pops: Sequence[Population]) -> None:
        positions, owner, labels = [], [], []
        for index, pop in enumerate(pops):
            for particle in pop.particles:
                positions.append(particle.position)
                owner.append(index)
                labels.append(particle.label)
        d = self.coeffs.dimension
        self.positions = np.array(positions, dtype=float).reshape(-1, d)
        self.owner = np.array(owner, dtype=np.int64)
        self.births = np.zeros(len(labels))
        self.labels = labels
        self.streams = [self.lineage_stream(i, label) for i, label in zip(owner, labels)]
        self.clocks = np.array([self.next_clock(g, 0.0) for g in self.streams], dtype=float)
        self.noise = np.zeros((len(labels), d))
        self.origin = np.zeros(len(labels))

    def begin_step(self, t: float) -> None:
        """Draw every particle's Euler noise for the step starting at t."""
        d = self.coeffs.dimension
        self.noise = np.array([g.standard_normal(d) for g in self.streams], dtype=float).reshape(-1, d)
        self.origin = np.full(self.count, float(t))

    def measure(self) -> PointMeasure:
        return PointMeasure(self.positions, np.full(self.count, 1.0 / self.replicas))

    def populations(self) -> List[Population]:
        grouped: List[List[Particle]] = [[] for _ in range(self.replicas)]
        for k, label in enumerate(self.labels):
            grouped[self.owner[k]].append(
                Particle(label=label, position=tuple(self.positions[k]), birth_time=self.births[k])
            )
        return [Population(tuple(particles)) for particles in grouped]

    def advance(self, frozen: FrozenCoefficients, a: float, b: float) -> None:
        """
        Euler-Maruyama piece [a, b] with coefficients frozen at a. The noise
        a particle has accumulated at time s of its step is sigma xi sqrt(s - origin).
        """
        h = b - a
        if h <= 0 or self.count == 0:
            return
        drift = frozen.drift(a, self.positions)
        sigma = frozen.diffusion(a, self.positions)
        scale = np.sqrt(np.maximum(b - self.origin, 0.0)) - np.sqrt(np.maximum(a - self.origin, 0.0))
        self.positions = (
            self.positions + drift * h + np.einsum("nij,nj->ni", sigma, self.noise) * scale[:, None]
        )

    def branch(self, k: int, time: float, litter: int) -> Tuple[int, Label]:
        """Replace particle k by litter children at its position."""
        parent = self.labels.pop(k)
        self.streams.pop(k)
        replica = int(self.owner[k])
        position = self.positions[k].copy()
        self.positions = np.delete(self.positions, k, axis=0)
        self.owner = np.delete(self.owner, k)
        self.births = np.delete(self.births, k)
        self.clocks = np.delete(self.clocks, k)
        self.noise = np.delete(self.noise, k, axis=0)
        self.origin = np.delete(self.origin, k)
        if litter > 0:
            d = self.coeffs.dimension
            children = [child_label(parent, i) for i in range(1, litter + 1)]
            streams = [self.lineage_stream(replica, label) for label in children]
            clocks = [self.next_clock(g, time) for g in streams]
            noise = np.array([g.standard_normal(d) for g in streams], dtype=float).reshape(-1, d)
            self.positions = np.vstack([self.positions, np.repeat(position[None, :], litter, axis=0)])
            self.owner = np.concatenate([self.owner, np.full(litter, replica, dtype=np.int64)])
            self.births = np.concatenate([self.births, np.full(litter, time)])
            self.clocks = np.concatenate([self.clocks, clocks])
            self.noise = np.vstack([self.noise, noise])
            self.origin = np.concatenate([self.origin, np.full(litter, time)])
            self.labels.extend(children)
            self.streams.extend(streams)
        return replica, parent


def simulate_branching(
    N: int,
    coeffs: CoefficientSet,
    init: InitialCondition,
    grid: SimGrid,
    seed: int,
    max_particles: int = DEFAULT_MAX_PARTICLES,
    record: RecordMode = "all",
    keep_events: bool = True,
) -> BranchingTrajectory:
    """
    Simulate N interacting branching populations on a grid.

    Within a grid cell the cell is split at every candidate clock ring. Each
    piece is an Euler-Maruyama step with coefficients frozen against the
    empirical measure at the start of the piece (the left limit mu^N_{s-}).
    At a ring at time s the particle branches with probability
    gamma(s, x, mu)/gamma_bar, and its litter size is drawn from the
    offspring partition at (s, x, mu).

    Args:
        N: Number of populations (>= 1)
        coeffs: Coefficient set
        init: Initial population sampler
        grid: Time grid
        seed: Master seed of the run
        max_particles: Particle cap over all populations
        record: "all" keeps measures and populations at every grid time,
            "measures" keeps measures only, "final" keeps times 0 and T
        keep_events: Keep the event log

    Returns:
        The recorded trajectory

    Raises:
        PopulationExplosionError: the particle cap was exceeded
        NumericsError: a position became non-finite
    """
    if N < 1:
        raise ValueError(f"Need at least one population, got N={N}")
    if init.dimension != coeffs.dimension:
        raise ValueError(f"Initial condition has dimension {init.dimension}, coefficients {coeffs.dimension}")

    system = _ParticleSystem(coeffs, N, seed)
    system.seed_populations(
        [init.sample_population(derive_generator(seed, STREAM_BRANCHING, i)) for i in range(N)]
    )

    times = grid.times
    steps = grid.steps
    counts = np.zeros(steps + 1, dtype=np.int64)
    recorded: List[int] = []
    measures: List[PointMeasure] = []
    populations: Optional[List[List[Population]]] = [] if record == "all" else None
    events: List[EventRecord] = []

    def store(index: int) -> None:
        counts[index] = system.count
        if record == "final" and index not in (0, steps):
            return
        recorded.append(index)
        if populations is not None:
            pops = system.populations()
            populations.append(pops)
            measures.append(population_to_measure(pops, 1.0 / N, dimension=coeffs.dimension))
        else:
            measures.append(system.measure())

    store(0)
    for j in range(steps):
        t0, t1 = times[j], times[j + 1]
        system.begin_step(t0)
        segment_start = t0
        frozen = coeffs.freeze(system.measure())
        candidates = 0

        while True:
            due = np.flatnonzero(system.clocks < t1)
            if due.size == 0:
                break
            k = int(due[np.argmin(system.clocks[due])])
            s = float(system.clocks[k])
            system.advance(frozen, segment_start, s)
            segment_start = s
            candidates += 1

            point = system.positions[k:k + 1]
            rate = float(frozen.death_rate(s, point)[0])
            stream = system.streams[k]
            if stream.random() * system.gamma_bar < rate:
                cumulative = frozen.cumulative(s, point)
                litter = int(sample_progeny_rows(np.array([stream.random()]), cumulative)[0])
                replica, parent = system.branch(k, s, litter)
                if keep_events:
                    events.append(EventRecord(s, replica, parent, litter))
                if system.count > max_particles:
                    raise PopulationExplosionError(
                        f"Particle count {system.count} exceeded cap {max_particles} at t={s:.6g}", time=s
                    )
            else:
                system.clocks[k] = system.next_clock(stream, s)

            if coeffs.measure_dependent:
                frozen = coeffs.freeze(system.measure())

        system.advance(frozen, segment_start, t1)
        if not np.all(np.isfinite(system.positions)):
            raise NumericsError(f"Non-finite particle position at t={t1:.6g}", time=float(t1))
        store(j + 1)
        logger.debug("step %d: %d particles, %d candidate rings", j, system.count, candidates)

    return BranchingTrajectory(
        grid=grid,
        replicas=N,
        seed=seed,
        recorded=recorded,
        measures=measures,
        counts=counts,
        populations=populations,
        event_log=events if keep_events else None,
    )


@dataclass
class MassStatistics:
    """Per-grid-time statistics of the total particle count over an ensemble."""
    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    stderr: np.ndarray
    runs: int

    def growth_margins(self, gamma_bar: float, M: float, slack: float = 3.0) -> np.ndarray:
        """
        margins[i, j] = mean[i] exp(gamma_bar M (t_j - t_i)) + slack stderr[j] - mean[j]
        for i < j; NaN elsewhere.
        """
        lag = self.times[None, :] - self.times[:, None]
        bound = self.mean[:, None] * np.exp(gamma_bar * M * lag) + slack * self.stderr[None, :]
        margins = bound - self.mean[None, :]
        upper = np.triu(np.ones_like(margins, dtype=bool), k=1)
        return np.where(upper, margins, np.nan)

    def growth_violations(self, gamma_bar: float, M: float, slack: float = 3.0) -> List[Tuple[float, float, float]]:
        """(t, s, margin) for every pair t < s breaking the growth bound."""
        margins = self.growth_margins(gamma_bar, M, slack)
        scale = max(1.0, float(np.max(np.abs(self.mean)))) if self.mean.size else 1.0
        rows, cols = np.nonzero(margins < -1e-12 * scale)
        return [(float(self.times[i]), float(self.times[j]), float(margins[i, j])) for i, j in zip(rows, cols)]


def mass_statistics(ensemble: Sequence[BranchingTrajectory]) -> MassStatistics:
    """
    Sample mean and variance of the total particle count at every grid time.

    Raises:
        ShapeError: the trajectories do not share one grid
    """
    if not ensemble:
        raise ValueError("Ensemble must not be empty")
    grid = ensemble[0].grid
    for traj in ensemble[1:]:
        if traj.grid != grid:
            raise ShapeError(f"Mismatched grids: {traj.grid} vs {grid}")
    counts = np.vstack([traj.counts for traj in ensemble]).astype(float)
    runs = counts.shape[0]
    mean = counts.mean(axis=0)
    variance = counts.var(axis=0, ddof=1) if runs > 1 else np.zeros_like(mean)
    stderr = np.sqrt(variance / runs)
    return MassStatistics(times=grid.times, mean=mean, variance=variance, stderr=stderr, runs=runs)
