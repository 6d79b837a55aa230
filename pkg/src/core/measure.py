"""
Labeled populations and finite point measures.

A Population is a finite antichain of genealogically labeled particles (child i
of label k is labeled k+(i,)). A PointMeasure is a nonnegative finite measure
stored as weighted atoms. Atoms are kept unaggregated: branching creates
coincident offspring and aggregation is an explicit, pairing-preserving pass.
"""

from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np


Label = Tuple[int, ...]
ROOT: Label = ()

# f maps an (n, d) array of locations to n values
ScalarField = Callable[[np.ndarray], np.ndarray]


class EvaluationError(ValueError):
    """Raised when a test function is not finite at an atom of a measure."""

    def __init__(self, message: str, atom_index: int = -1):
        super().__init__(message)
        self.atom_index = atom_index


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""
    pass


class InvalidPerturbationError(ValueError):
    """Raised when removing more weight at a point than the measure holds there."""
    pass


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------

def format_label(label: Label) -> str:
    """Dot-joined integers; the root label is the empty string."""
    return ".".join(str(k) for k in label)


def parse_label(text: str) -> Label:
    """Inverse of format_label."""
    text = text.strip()
    if not text:
        return ROOT
    try:
        label = tuple(int(part) for part in text.split("."))
    except ValueError:
        raise ValueError(f"Malformed label: {text!r}")
    if any(k < 1 for k in label):
        raise ValueError(f"Label entries must be positive integers: {text!r}")
    return label


def child_label(parent: Label, index: int) -> Label:
    """Label of the index-th child (1-based) of parent."""
    return parent + (index,)


def is_ancestor(k: Label, other: Label) -> bool:
    """True iff k is a strict prefix of other."""
    return len(k) < len(other) and other[:len(k)] == k


def is_antichain(labels: Iterable[Label]) -> bool:
    """True iff the labels are distinct and no label is an ancestor of another."""
    seen = set()
    for label in labels:
        if label in seen:
            return False
        seen.add(label)
    for label in seen:
        for cut in range(len(label)):
            if label[:cut] in seen:
                return False
    return True


# ---------------------------------------------------------------------------
# Particles and populations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Particle:
    """One particle: genealogical label, position in R^d and birth time."""
    label: Label
    position: Tuple[float, ...]
    birth_time: float = 0.0  # model time

    def __post_init__(self):
        label = tuple(int(k) for k in self.label)
        if any(k < 1 for k in label):
            raise ValueError(f"Label entries must be positive integers: {label}")
        position = tuple(float(v) for v in np.asarray(self.position, dtype=float).reshape(-1))
        if not position:
            raise ValueError("Particle position must have at least one coordinate")
        if self.birth_time < 0:
            raise ValueError(f"Birth time must be non-negative, got {self.birth_time}")
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "birth_time", float(self.birth_time))

    @property
    def dimension(self) -> int:
        return len(self.position)


@dataclass(frozen=True)
class Population:
    """A finite set of particles whose labels form an antichain."""
    particles: Tuple[Particle, ...] = ()

    def __post_init__(self):
        particles = tuple(self.particles)
        if not is_antichain(p.label for p in particles):
            raise ValueError("Population labels must be distinct and form an antichain")
        dimensions = {p.dimension for p in particles}
        if len(dimensions) > 1:
            raise ValueError(f"Mixed particle dimensions in population: {sorted(dimensions)}")
        object.__setattr__(self, "particles", particles)

    @property
    def count(self) -> int:
        return len(self.particles)

    @property
    def labels(self) -> List[Label]:
        return [p.label for p in self.particles]

    @property
    def dimension(self) -> Optional[int]:
        return self.particles[0].dimension if self.particles else None

    def positions(self, dimension: Optional[int] = None) -> np.ndarray:
        """Positions as an (n, d) array; an empty population needs dimension."""
        if not self.particles:
            return np.zeros((0, dimension or 1))
        return np.array([p.position for p in self.particles], dtype=float)

    def by_label(self) -> dict:
        return {p.label: p for p in self.particles}


# ---------------------------------------------------------------------------
# Point measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PointMeasure:
    """
    Nonnegative finite measure on R^d as weighted atoms.

    locations is an (n, d) array; a 1-D array is read as n atoms in d = 1.
    Arrays are copied and made read-only on construction.
    """
    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        locations = np.array(self.locations, dtype=float)
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if locations.ndim == 1:
            locations = locations.reshape(-1, 1)
        if locations.ndim != 2 or locations.shape[1] < 1:
            raise ValueError(f"Locations must be an (n, d) array, got shape {locations.shape}")
        if locations.shape[0] != weights.shape[0]:
            raise ValueError(
                f"Got {locations.shape[0]} locations but {weights.shape[0]} weights"
            )
        if not np.all(np.isfinite(locations)):
            raise ValueError("Atom locations must be finite")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValueError("Atom weights must be finite and non-negative")
        locations.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "locations", locations)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def empty(cls, dimension: int = 1) -> "PointMeasure":
        return cls(np.zeros((0, dimension)), np.zeros(0))

    @classmethod
    def dirac(cls, x: Sequence[float], weight: float = 1.0) -> "PointMeasure":
        point = np.asarray(x, dtype=float).reshape(1, -1)
        return cls(point, np.array([weight], dtype=float))

    @classmethod
    def from_atoms(
        cls,
        atoms: Iterable[Tuple[Sequence[float], float]],
        dimension: Optional[int] = None,
    ) -> "PointMeasure":
        """Build from (location, weight) pairs."""
        atoms = list(atoms)
        if not atoms:
            return cls.empty(dimension or 1)
        locations = np.array([np.asarray(x, dtype=float).reshape(-1) for x, _ in atoms])
        weights = np.array([w for _, w in atoms], dtype=float)
        return cls(locations, weights)

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.locations.shape[1])

    def scaled(self, factor: float) -> "PointMeasure":
        if factor < 0:
            raise ValueError(f"Scale factor must be non-negative, got {factor}")
        return PointMeasure(self.locations, self.weights * factor)

    def combined(self, other: "PointMeasure") -> "PointMeasure":
        """Sum of two measures (atoms concatenated)."""
        if other.dimension != self.dimension:
            raise ValueError(f"Dimension mismatch: {self.dimension} vs {other.dimension}")
        return PointMeasure(
            np.vstack([self.locations, other.locations]),
            np.concatenate([self.weights, other.weights]),
        )

    def without_zero_atoms(self) -> "PointMeasure":
        keep = self.weights > 0
        return PointMeasure(self.locations[keep], self.weights[keep])

    def aggregated(self) -> "PointMeasure":
        """Merge atoms sharing a location, drop zero weights; pairings unchanged."""
        if self.size == 0:
            return self
        unique, inverse = np.unique(self.locations, axis=0, return_inverse=True)
        weights = np.bincount(inverse.reshape(-1), weights=self.weights, minlength=unique.shape[0])
        keep = weights > 0
        return PointMeasure(unique[keep], weights[keep])


def pair(f: ScalarField, mu: PointMeasure) -> float:
    """
    Pairing <f, mu> = sum_i w_i f(x_i).

    Args:
        f: Vectorized scalar function of an (n, d) location array
        mu: Measure to integrate against

    Returns:
        The integral of f against mu

    Raises:
        EvaluationError: f is not finite at some atom
    """
    if mu.size == 0:
        return 0.0
    try:
        values = np.broadcast_to(np.asarray(f(mu.locations), dtype=float), (mu.size,))
    except ValueError as e:
        raise EvaluationError(f"Test function returned the wrong shape: {e}")
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        index = int(bad[0])
        raise EvaluationError(
            f"Non-finite value {values[index]} at atom {index} "
            f"(location {mu.locations[index].tolist()})",
            atom_index=index,
        )
    return float(np.dot(mu.weights, values))


def mass(mu: PointMeasure) -> float:
    """Total mass mu(R^d)."""
    return float(np.sum(mu.weights))


def moment(mu: PointMeasure, p: float) -> float:
    """p-th absolute moment sum_i w_i |x_i|^p (Euclidean norm), p >= 1."""
    if p < 1:
        raise DomainError(f"Moment order must be >= 1, got {p}")
    if mu.size == 0:
        return 0.0
    norms = np.linalg.norm(mu.locations, axis=1)
    return float(np.dot(mu.weights, norms ** p))


def population_to_measure(
    pops: Sequence[Population],
    scale: float,
    dimension: Optional[int] = None,
) -> PointMeasure:
    """
    One atom of weight scale per particle (scale = 1/N for the empirical measure).

    Args:
        pops: Populations to merge
        scale: Positive weight given to every particle
        dimension: Dimension to use when there are no particles at all

    Returns:
        The merged point measure
    """
    if scale <= 0:
        raise ValueError(f"Scale must be positive, got {scale}")
    positions = [p.position for pop in pops for p in pop.particles]
    if not positions:
        known = [pop.dimension for pop in pops if pop.dimension is not None]
        return PointMeasure.empty(dimension or (known[0] if known else 1))
    locations = np.array(positions, dtype=float)
    return PointMeasure(locations, np.full(locations.shape[0], float(scale)))


def population_distance(e1: Population, e2: Population) -> float:
    """
    Metric on populations: sum over shared labels of min(|x - y|, 1)
    plus the size of the symmetric difference of the label sets.
    """
    first = e1.by_label()
    second = e2.by_label()
    shared = first.keys() & second.keys()
    total = 0.0
    for label in sorted(shared):
        gap = np.linalg.norm(
            np.asarray(first[label].position) - np.asarray(second[label].position)
        )
        total += min(float(gap), 1.0)
    return total + float(len(first.keys() ^ second.keys()))


def add_atom(mu: PointMeasure, x: Sequence[float], w: float) -> PointMeasure:
    """
    Perturb mu by w * delta_x.

    A negative w removes weight from atoms located exactly at x, most recently
    added first, so that adding and then removing restores the original atoms.

    Raises:
        InvalidPerturbationError: less than |w| weight sits at x
    """
    point = np.asarray(x, dtype=float).reshape(-1)
    if point.shape[0] != mu.dimension:
        raise ValueError(f"Point has dimension {point.shape[0]}, measure has {mu.dimension}")
    if w >= 0:
        return PointMeasure(
            np.vstack([mu.locations, point.reshape(1, -1)]),
            np.concatenate([mu.weights, [float(w)]]),
        )

    matches = np.flatnonzero(np.all(mu.locations == point, axis=1)) if mu.size else np.array([], int)
    available = float(np.sum(mu.weights[matches])) if matches.size else 0.0
    remaining = -float(w)
    if available < remaining * (1.0 - 1e-12):
        raise InvalidPerturbationError(
            f"Cannot remove weight {remaining} at {point.tolist()}: only {available} available"
        )
    weights = mu.weights.copy()
    for index in matches[::-1]:
        take = min(weights[index], remaining)
        weights[index] -= take
        remaining -= take
        if remaining <= 0:
            break
    return PointMeasure(mu.locations, np.maximum(weights, 0.0))
