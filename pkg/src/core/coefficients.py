"""
Coefficient sets (b, sigma, gamma, p) of a branching McKean-Vlasov diffusion.

Mean-field dependence enters only through a finite vector of pairings
<psi_j, mu> (the "features" of a measure), so a coefficient set is frozen
against a measure once and then evaluated on whole particle arrays.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, asdict
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit
from typing_extensions import override

from .measure import DomainError, PointMeasure, pair
from .rng import STREAM_ASSUMPTIONS, derive_generator

logger = logging.getLogger(__name__)


class CoefficientError(ValueError):
    """Raised when coefficients or their declared bounds are malformed."""
    pass


@dataclass(frozen=True)
class CoefficientBounds:
    """Declared bounds: sup-norm M, Lipschitz L, rate cap, ellipticity floor, max litter."""
    M: float
    L: float
    gamma_bar: float
    epsilon0: float = 0.0
    max_litter: int = 2

    def __post_init__(self):
        for name in ("M", "L", "gamma_bar", "epsilon0"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise CoefficientError(f"Bound {name} must be finite and non-negative, got {value}")
        if int(self.max_litter) != self.max_litter or self.max_litter < 0:
            raise CoefficientError(f"max_litter must be a non-negative integer, got {self.max_litter}")
        object.__setattr__(self, "max_litter", int(self.max_litter))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CoefficientBounds":
        return cls(
            M=float(data["M"]),
            L=float(data["L"]),
            gamma_bar=float(data["gamma_bar"]),
            epsilon0=float(data.get("epsilon0", 0.0)),
            max_litter=int(data.get("max_litter", 2)),
        )


# ---------------------------------------------------------------------------
# Offspring law
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OffspringPartition:
    """Partition of [0, 1) into intervals I_l = [cumulative[l], cumulative[l+1])."""
    cumulative: np.ndarray

    def __post_init__(self):
        cumulative = np.array(self.cumulative, dtype=float).reshape(-1)
        if cumulative.shape[0] < 2:
            raise CoefficientError("Partition needs at least two boundaries")
        if cumulative[0] != 0.0 or cumulative[-1] != 1.0:
            raise CoefficientError("Partition must start at 0 and end at 1")
        if np.any(np.diff(cumulative) < 0):
            raise CoefficientError("Partition boundaries must be non-decreasing")
        cumulative.flags.writeable = False
        object.__setattr__(self, "cumulative", cumulative)

    @classmethod
    def from_probabilities(cls, probabilities: Sequence[float]) -> "OffspringPartition":
        return cls(cumulative_from_probabilities(np.asarray(probabilities, dtype=float)[None, :])[0])

    @property
    def max_litter(self) -> int:
        return int(self.cumulative.shape[0] - 2)

    def interval(self, litter: int) -> Tuple[float, float]:
        return float(self.cumulative[litter]), float(self.cumulative[litter + 1])

    def probabilities(self) -> np.ndarray:
        return np.diff(self.cumulative)


def cumulative_from_probabilities(progeny: np.ndarray) -> np.ndarray:
    """
    Row-wise partition boundaries for an (n, L+1) array of offspring laws.

    Raises:
        CoefficientError: a row is negative or does not sum to one
    """
    progeny = np.atleast_2d(np.asarray(progeny, dtype=float))
    if np.any(progeny < 0) or not np.all(np.isfinite(progeny)):
        raise CoefficientError("Offspring probabilities must be finite and non-negative")
    totals = progeny.sum(axis=1)
    if np.any(np.abs(totals - 1.0) > 1e-9):
        raise CoefficientError(f"Offspring probabilities must sum to 1, got {totals.tolist()}")
    cumulative = np.zeros((progeny.shape[0], progeny.shape[1] + 1))
    np.cumsum(progeny, axis=1, out=cumulative[:, 1:])
    cumulative = np.minimum(cumulative, 1.0)
    cumulative[:, -1] = 1.0
    return cumulative


def sample_progeny(u: float, part: OffspringPartition) -> int:
    """
    Litter size l with u in I_l.

    Raises:
        DomainError: u outside [0, 1)
    """
    if not 0.0 <= u < 1.0:
        raise DomainError(f"Uniform variate must lie in [0, 1), got {u}")
    litter = int(np.searchsorted(part.cumulative[1:], u, side="right"))
    return min(litter, part.max_litter)


def sample_progeny_rows(u: np.ndarray, cumulative: np.ndarray) -> np.ndarray:
    """Vectorized sample_progeny over rows of an (n, L+2) boundary array."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if np.any(u < 0.0) or np.any(u >= 1.0):
        raise DomainError("Uniform variates must lie in [0, 1)")
    litters = np.sum(cumulative[:, 1:] <= u[:, None], axis=1)
    return np.minimum(litters, cumulative.shape[1] - 2)


# ---------------------------------------------------------------------------
# Coefficient sets
# ---------------------------------------------------------------------------

def _as_points(x: Any, dimension: int) -> Tuple[np.ndarray, bool]:
    points = np.asarray(x, dtype=float)
    single = points.ndim == 1
    points = points.reshape(-1, dimension)
    return points, single


class CoefficientSet(ABC):
    """
    Abstract coefficient tuple (b, sigma, gamma, p) with declared bounds.

    Subclasses implement the feature-level methods, which receive an (n, d)
    array of positions and the feature vector of the frozen measure.
    """

    family: str = "custom"
    measure_dependent: bool = True

    def __init__(self, dimension: int, bounds: CoefficientBounds):
        if dimension < 1:
            raise CoefficientError(f"Dimension must be >= 1, got {dimension}")
        self.dimension = int(dimension)
        self.bounds = bounds

    @property
    def litter_sizes(self) -> np.ndarray:
        return np.arange(self.bounds.max_litter + 1, dtype=float)

    def features(self, mu: PointMeasure) -> np.ndarray:
        """Pairings through which the coefficients see the measure."""
        return np.zeros(0)

    @abstractmethod
    def drift_at(self, t: float, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        """(n, d) drift."""

    @abstractmethod
    def diffusion_at(self, t: float, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        """(n, d, d) diffusion matrices."""

    @abstractmethod
    def death_rate_at(self, t: float, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        """(n,) branching rates in [0, gamma_bar]."""

    @abstractmethod
    def progeny_at(self, t: float, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        """(n, max_litter + 1) offspring laws."""

    def freeze(self, mu: PointMeasure) -> "FrozenCoefficients":
        """Evaluate the measure features once; the result is used on particle arrays."""
        return FrozenCoefficients(self, self.features(mu))

    # Single-point conveniences with the measure passed directly

    def drift(self, t: float, x: Any, mu: PointMeasure) -> np.ndarray:
        points, single = _as_points(x, self.dimension)
        value = self.freeze(mu).drift(t, points)
        return value[0] if single else value

    def diffusion(self, t: float, x: Any, mu: PointMeasure) -> np.ndarray:
        points, single = _as_points(x, self.dimension)
        value = self.freeze(mu).diffusion(t, points)
        return value[0] if single else value

    def death_rate(self, t: float, x: Any, mu: PointMeasure) -> Any:
        points, single = _as_points(x, self.dimension)
        value = self.freeze(mu).death_rate(t, points)
        return float(value[0]) if single else value

    def progeny(self, t: float, x: Any, mu: PointMeasure) -> np.ndarray:
        points, single = _as_points(x, self.dimension)
        value = self.freeze(mu).progeny(t, points)
        return value[0] if single else value

    def partition(self, t: float, x: Any, mu: PointMeasure) -> OffspringPartition:
        return OffspringPartition.from_probabilities(self.progeny(t, np.asarray(x, float).reshape(-1), mu))


class FrozenCoefficients:
    """Coefficients with the measure argument fixed to one feature vector."""

    def __init__(self, coeffs: CoefficientSet, features: np.ndarray):
        self.coeffs = coeffs
        self.features = np.asarray(features, dtype=float)

    def drift(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.coeffs.drift_at(t, x, self.features)

    def diffusion(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.coeffs.diffusion_at(t, x, self.features)

    def covariance(self, t: float, x: np.ndarray) -> np.ndarray:
        sigma = self.diffusion(t, x)
        return np.einsum("nij,nkj->nik", sigma, sigma)

    def death_rate(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.coeffs.death_rate_at(t, x, self.features)

    def progeny(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.coeffs.progeny_at(t, x, self.features)

    def mean_offspring(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.progeny(t, x) @ self.coeffs.litter_sizes

    def net_growth(self, t: float, x: np.ndarray) -> np.ndarray:
        """c = gamma * (sum_l l p_l - 1)."""
        return self.death_rate(t, x) * (self.mean_offspring(t, x) - 1.0)

    def cumulative(self, t: float, x: np.ndarray) -> np.ndarray:
        return cumulative_from_probabilities(self.progeny(t, x))


def net_growth_c(coeffs: CoefficientSet, t: float, x: Any, mu: PointMeasure) -> float:
    """Net growth rate c(t, x, mu) = gamma (sum_l l p_l - 1) at one point."""
    points, _ = _as_points(x, coeffs.dimension)
    return float(coeffs.freeze(mu).net_growth(t, points[:1])[0])


def _progeny_vector(progeny: Sequence[float], max_litter: int) -> np.ndarray:
    probabilities = np.asarray(progeny, dtype=float).reshape(-1)
    if probabilities.shape[0] > max_litter + 1:
        raise CoefficientError(
            f"Offspring law has {probabilities.shape[0]} entries but max_litter is {max_litter}"
        )
    padded = np.zeros(max_litter + 1)
    padded[:probabilities.shape[0]] = probabilities
    cumulative_from_probabilities(padded)
    return padded


def _diffusion_matrix(sigma: Any, dimension: int) -> np.ndarray:
    matrix = np.asarray(sigma, dtype=float)
    if matrix.ndim == 0:
        return float(matrix) * np.eye(dimension)
    matrix = matrix.reshape(dimension, dimension)
    return matrix


class ConstantCoefficients(CoefficientSet):
    """Measure-independent constant drift, diffusion, rate and offspring law."""

    family = "constant"
    measure_dependent = False

    def __init__(
        self,
        dimension: int,
        bounds: CoefficientBounds,
        drift: Any = 0.0,
        sigma: Any = 1.0,
        rate: float = 0.0,
        progeny: Sequence[float] = (0.0, 1.0),
    ):
        super().__init__(dimension, bounds)
        self.drift_vector = np.broadcast_to(np.asarray(drift, dtype=float), (dimension,)).copy()
        self.sigma_matrix = _diffusion_matrix(sigma, dimension)
        if rate < 0:
            raise CoefficientError(f"Rate must be non-negative, got {rate}")
        self.rate = float(rate)
        self.progeny_vector = _progeny_vector(progeny, bounds.max_litter)

    @override
    def drift_at(self, t: float, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.drift_vector, x.shape).copy()

    @override
    def diffusion_at(self, t: float, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.sigma_matrix, (x.shape[0],) + self.sigma_matrix.shape).copy()

    @override
    def death_rate_at(self, t: float, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        return np.full(x.shape[0], self.rate)

    @override
    def progeny_at(self, t: float, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.progeny_vector, (x.shape[0], self.progeny_vector.shape[0])).copy()


class MeanFieldCoefficients(CoefficientSet):
    """
    Interacting scenario:
        b(x, mu) = -x + a * tanh(<tanh(x_1), mu>)      (every coordinate)
        sigma    = s * I
        gamma    = gamma0 * sigmoid(kappa * (mass_ref - mu(R^d)))
        p        = fixed offspring law
    The rate falls as mass exceeds mass_ref when kappa > 0.
    """

    family = "mean_field"

    def __init__(
        self,
        dimension: int,
        bounds: CoefficientBounds,
        a: float = 0.5,
        sigma: float = 1.0,
        gamma0: float = 1.0,
        kappa: float = 1.0,
        mass_ref: float = 4.0,
        progeny: Sequence[float] = (0.4, 0.0, 0.6),
    ):
        super().__init__(dimension, bounds)
        self.a = float(a)
        self.sigma = float(sigma)
        self.gamma0 = float(gamma0)
        self.kappa = float(kappa)
        self.mass_ref = float(mass_ref)
        self.progeny_vector = _progeny_vector(progeny, bounds.max_litter)
        if self.gamma0 > bounds.gamma_bar:
            raise CoefficientError(f"gamma0={self.gamma0} exceeds gamma_bar={bounds.gamma_bar}")

    @override
    def features(self, mu: PointMeasure) -> np.ndarray:
        return np.array([
            pair(lambda x: np.tanh(x[:, 0]), mu),
            float(np.sum(mu.weights)),
        ])

    @override
    def drift_at(self, t: float, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        return -x + self.a * np.tanh(features[0])

    @override
    def diffusion_at(self, t: float, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.sigma * np.eye(self.dimension), (x.shape[0], self.dimension, self.dimension)).copy()

    @override
    def death_rate_at(self, t: float, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        rate = self.gamma0 * expit(self.kappa * (self.mass_ref - features[1]))
        return np.full(x.shape[0], rate)

    @override
    def progeny_at(self, t: float, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.progeny_vector, (x.shape[0], self.progeny_vector.shape[0])).copy()


FeatureFunction = Callable[[PointMeasure], float]
PointFunction = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


class CallableCoefficients(CoefficientSet):
    """Coefficient set assembled from user functions of (t, x, features)."""

    def __init__(
        self,
        dimension: int,
        bounds: CoefficientBounds,
        drift: PointFunction,
        diffusion: PointFunction,
        rate: PointFunction,
        progeny: PointFunction,
        feature_functions: Sequence[FeatureFunction] = (),
    ):
        super().__init__(dimension, bounds)
        self._drift = drift
        self._diffusion = diffusion
        self._rate = rate
        self._progeny = progeny
        self.feature_functions = list(feature_functions)
        self.measure_dependent = bool(self.feature_functions)

    @override
    def features(self, mu: PointMeasure) -> np.ndarray:
        return np.array([fn(mu) for fn in self.feature_functions], dtype=float)

    @override
    def drift_at(self, t: float, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        return np.asarray(self._drift(t, x, features), dtype=float).reshape(x.shape)

    @override
    def diffusion_at(self, t: float, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        d = self.dimension
        return np.asarray(self._diffusion(t, x, features), dtype=float).reshape(x.shape[0], d, d)

    @override
    def death_rate_at(self, t: float, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self._rate(t, x, features), dtype=float), (x.shape[0],)).copy()

    @override
    def progeny_at(self, t: float, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        width = self.bounds.max_litter + 1
        return np.asarray(self._progeny(t, x, features), dtype=float).reshape(x.shape[0], width)


# ---------------------------------------------------------------------------
# Empirical validation of the declared bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingPlan:
    """Random sampling plan for validate_assumptions."""
    points: int = 200
    radius: float = 2.0  # half-width of the position box
    horizon: float = 1.0
    atoms: int = 4
    max_mass: float = 4.0
    step: float = 1e-2  # perturbation size
    seed: int = 0
    tolerance: float = 1e-9


@dataclass
class AssumptionReport:
    """Empirical sup-norms, Lipschitz quotients and ellipticity of a coefficient set."""
    sup_drift: float = 0.0
    sup_diffusion: float = 0.0
    sup_mean_offspring: float = 0.0
    max_rate: float = 0.0
    min_rate: float = np.inf
    max_progeny_error: float = 0.0
    min_eigenvalue: float = np.inf
    lipschitz_drift: float = 0.0
    lipschitz_diffusion: float = 0.0
    lipschitz_growth: float = 0.0
    max_net_growth: float = 0.0
    samples: int = 0
    violations: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def _random_measure(rng: np.random.Generator, dimension: int, plan: SamplingPlan) -> PointMeasure:
    locations = rng.uniform(-plan.radius, plan.radius, size=(plan.atoms, dimension))
    weights = rng.uniform(0.0, plan.max_mass / plan.atoms, size=plan.atoms)
    return PointMeasure(locations, weights)


def _perturbed_measure(rng: np.random.Generator, mu: PointMeasure, step: float) -> PointMeasure:
    moved = mu.locations + step * rng.standard_normal(mu.locations.shape)
    reweighted = mu.weights * (1.0 + step * rng.uniform(-1.0, 1.0, size=mu.size))
    return PointMeasure(moved, reweighted)


def validate_assumptions(coeffs: CoefficientSet, plan: Optional[SamplingPlan] = None) -> AssumptionReport:
    """
    Sample a coefficient set at random (t, x, mu) and compare with its declared bounds.

    Perturbation pairs cycle through moving x only, moving mu only, and both,
    so a Lipschitz quotient |delta (b, sigma, c)| / (|delta x| + d(mu, nu)) is
    measured in each direction.

    Args:
        coeffs: Coefficient set under test
        plan: Sampling plan (defaults to SamplingPlan())

    Returns:
        Report with the empirical quantities and any violations found
    """
    from .metrics import bounded_lipschitz

    plan = plan or SamplingPlan()
    bounds = coeffs.bounds
    rng = derive_generator(plan.seed, STREAM_ASSUMPTIONS)
    report = AssumptionReport()
    d = coeffs.dimension
    slack = 1.0 + plan.tolerance

    for index in range(plan.points):
        t = float(rng.uniform(0.0, plan.horizon))
        x = rng.uniform(-plan.radius, plan.radius, size=(1, d))
        mu = _random_measure(rng, d, plan)
        frozen = coeffs.freeze(mu)

        drift = frozen.drift(t, x)[0]
        sigma = frozen.diffusion(t, x)[0]
        rate = float(frozen.death_rate(t, x)[0])
        progeny = frozen.progeny(t, x)[0]
        growth = float(frozen.net_growth(t, x)[0])

        report.sup_drift = max(report.sup_drift, float(np.linalg.norm(drift)))
        report.sup_diffusion = max(report.sup_diffusion, float(np.linalg.norm(sigma)))
        report.sup_mean_offspring = max(report.sup_mean_offspring, float(progeny @ coeffs.litter_sizes))
        report.max_rate = max(report.max_rate, rate)
        report.min_rate = min(report.min_rate, rate)
        report.max_progeny_error = max(report.max_progeny_error, abs(float(progeny.sum()) - 1.0))
        report.max_net_growth = max(report.max_net_growth, abs(growth))
        eigenvalues = np.linalg.eigvalsh(sigma @ sigma.T)
        report.min_eigenvalue = min(report.min_eigenvalue, float(eigenvalues.min()))
        if np.any(progeny < 0):
            report.violations.append(f"negative offspring probability at t={t:.4g}")

        kind = index % 3
        x2 = x
        if kind != 1:
            direction = rng.standard_normal(d)
            x2 = x + plan.step * direction / np.linalg.norm(direction)
        nu = _perturbed_measure(rng, mu, plan.step) if kind != 0 else mu
        distance = float(np.linalg.norm(x2 - x)) + (bounded_lipschitz(mu, nu) if kind != 0 else 0.0)
        if distance <= 0:
            continue
        other = coeffs.freeze(nu) if kind != 0 else frozen
        report.lipschitz_drift = max(
            report.lipschitz_drift, float(np.linalg.norm(other.drift(t, x2)[0] - drift)) / distance
        )
        report.lipschitz_diffusion = max(
            report.lipschitz_diffusion, float(np.linalg.norm(other.diffusion(t, x2)[0] - sigma)) / distance
        )
        report.lipschitz_growth = max(
            report.lipschitz_growth, abs(float(other.net_growth(t, x2)[0]) - growth) / distance
        )
        report.samples += 1

    checks = [
        ("drift sup-norm", report.sup_drift, bounds.M),
        ("diffusion sup-norm", report.sup_diffusion, bounds.M),
        ("mean offspring", report.sup_mean_offspring, bounds.M),
        ("branching rate", report.max_rate, bounds.gamma_bar),
        ("drift Lipschitz quotient", report.lipschitz_drift, bounds.L),
        ("diffusion Lipschitz quotient", report.lipschitz_diffusion, bounds.L),
        ("net growth Lipschitz quotient", report.lipschitz_growth, bounds.L),
    ]
    for name, observed, declared in checks:
        if observed > declared * slack + plan.tolerance:
            report.violations.append(f"{name} {observed:.6g} exceeds declared {declared:.6g}")
    if report.min_rate < 0:
        report.violations.append(f"negative branching rate {report.min_rate:.6g}")
    if report.max_progeny_error > 1e-12:
        report.violations.append(f"offspring law sums off by {report.max_progeny_error:.3g}")
    if report.min_eigenvalue < bounds.epsilon0 / slack - plan.tolerance:
        report.violations.append(
            f"min eigenvalue of sigma sigma^T {report.min_eigenvalue:.6g} below epsilon0 {bounds.epsilon0:.6g}"
        )

    for violation in report.violations:
        logger.warning("Assumption check (%s): %s", coeffs.family, violation)
    return report
