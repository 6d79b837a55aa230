"""
Built-in scenario library and initial conditions.

The scenario families are constructed for testing: each one has a closed-form
or brute-force oracle for at least one observable (see docs/SCENARIOS.md).
"""

import copy
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .coefficients import (
    CoefficientBounds,
    CoefficientError,
    CoefficientSet,
    ConstantCoefficients,
    MeanFieldCoefficients,
)
from .measure import Particle, PointMeasure, Population, population_to_measure


# Default parameters and bounds per family
SCENARIO_PRESETS: Dict[str, Dict[str, Any]] = {
    "constant": {
        "description": "Constant drift, diffusion, rate and offspring law (no interaction).",
        "params": {"drift": 0.0, "sigma": 1.0, "rate": 0.5, "progeny": [0.25, 0.25, 0.5]},
        "bounds": {"M": 2.0, "L": 1.0, "gamma_bar": 0.5, "epsilon0": 1.0, "max_litter": 2},
    },
    "pure_death": {
        "description": "Brownian particles killed at constant rate, no offspring.",
        "params": {"drift": 0.0, "sigma": 1.0, "rate": 0.5, "progeny": [1.0]},
        "bounds": {"M": 1.0, "L": 1.0, "gamma_bar": 0.5, "epsilon0": 1.0, "max_litter": 0},
    },
    "binary_branching": {
        "description": "Brownian particles splitting in two at constant rate.",
        "params": {"drift": 0.0, "sigma": 1.0, "rate": 1.0, "progeny": [0.0, 0.0, 1.0]},
        "bounds": {"M": 2.0, "L": 1.0, "gamma_bar": 1.0, "epsilon0": 1.0, "max_litter": 2},
    },
    "critical_branching": {
        "description": "Every event replaces a particle by exactly one child.",
        "params": {"drift": 0.0, "sigma": 1.0, "rate": 1.0, "progeny": [0.0, 1.0]},
        "bounds": {"M": 1.0, "L": 1.0, "gamma_bar": 1.0, "epsilon0": 1.0, "max_litter": 1},
    },
    "mean_field": {
        "description": "Drift -x + a tanh(<tanh x_1, mu>), mass-regulated binary/zero branching.",
        "params": {
            "a": 0.5,
            "sigma": 1.0,
            "gamma0": 1.0,
            "kappa": 1.0,
            "mass_ref": 4.0,
            "progeny": [0.4, 0.0, 0.6],
        },
        "bounds": {"M": 4.0, "L": 1.5, "gamma_bar": 1.0, "epsilon0": 1.0, "max_litter": 2},
    },
}

_CONSTANT_FAMILIES = ("constant", "pure_death", "binary_branching", "critical_branching")


def _preset(family: str) -> Dict[str, Any]:
    if family not in SCENARIO_PRESETS:
        raise CoefficientError(f"Unknown scenario family: {family}. Available: {list(SCENARIO_PRESETS.keys())}")
    return SCENARIO_PRESETS[family]


@dataclass(frozen=True)
class ScenarioSpec:
    """A built-in family plus its parameters, dimension and declared bounds."""
    family: str = "constant"
    dimension: int = 1
    params: Dict[str, Any] = field(default_factory=dict)
    bounds: Optional[CoefficientBounds] = None

    def __post_init__(self):
        preset = _preset(self.family)
        unknown = set(self.params) - set(preset["params"])
        if unknown:
            raise CoefficientError(
                f"Unknown parameters for {self.family}: {sorted(unknown)}. "
                f"Available: {sorted(preset['params'])}"
            )
        merged = copy.deepcopy(preset["params"])
        merged.update(copy.deepcopy(self.params))
        object.__setattr__(self, "params", merged)
        if self.bounds is None:
            object.__setattr__(self, "bounds", CoefficientBounds.from_dict(preset["bounds"]))
        if int(self.dimension) < 1:
            raise CoefficientError(f"Dimension must be >= 1, got {self.dimension}")
        object.__setattr__(self, "dimension", int(self.dimension))

    @classmethod
    def from_preset(cls, family: str, dimension: int = 1, **params: Any) -> "ScenarioSpec":
        """Create a spec from a preset name, overriding selected parameters."""
        return cls(family=family, dimension=dimension, params=params)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family,
            "dimension": self.dimension,
            "params": copy.deepcopy(self.params),
            "bounds": self.bounds.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ScenarioSpec":
        bounds = data.get("bounds")
        return cls(
            family=data.get("family", "constant"),
            dimension=int(data.get("dimension", 1)),
            params=dict(data.get("params", {})),
            bounds=CoefficientBounds.from_dict(bounds) if bounds is not None else None,
        )


def build_coefficients(spec: ScenarioSpec) -> CoefficientSet:
    """Instantiate the coefficient set described by a scenario spec."""
    params = spec.params
    if spec.family in _CONSTANT_FAMILIES:
        coeffs: CoefficientSet = ConstantCoefficients(
            spec.dimension,
            spec.bounds,
            drift=params["drift"],
            sigma=params["sigma"],
            rate=params["rate"],
            progeny=params["progeny"],
        )
    else:
        coeffs = MeanFieldCoefficients(
            spec.dimension,
            spec.bounds,
            a=params["a"],
            sigma=params["sigma"],
            gamma0=params["gamma0"],
            kappa=params["kappa"],
            mass_ref=params["mass_ref"],
            progeny=params["progeny"],
        )
    coeffs.family = spec.family
    if spec.family != "mean_field" and params["rate"] > spec.bounds.gamma_bar:
        raise CoefficientError(f"rate={params['rate']} exceeds gamma_bar={spec.bounds.gamma_bar}")
    return coeffs


@dataclass(frozen=True)
class InitialCondition:
    """
    I.i.d. initial populations: #K_0 particles (fixed, or Poisson with that mean)
    at independent Gaussian positions N(mean, std^2 I).
    """
    count: float = 4
    count_law: str = "fixed"  # "fixed" | "poisson"
    mean: Tuple[float, ...] = (0.0,)
    std: float = 1.0

    def __post_init__(self):
        if self.count_law not in ("fixed", "poisson"):
            raise ValueError(f"Unknown count law: {self.count_law}. Available: ['fixed', 'poisson']")
        if self.count < 0 or (self.count_law == "fixed" and int(self.count) != self.count):
            raise ValueError(f"Invalid initial count {self.count} for law {self.count_law}")
        if self.std < 0:
            raise ValueError(f"Initial position std must be non-negative, got {self.std}")
        object.__setattr__(self, "mean", tuple(float(v) for v in np.asarray(self.mean, float).reshape(-1)))
        if self.count_law == "fixed":
            object.__setattr__(self, "count", int(self.count))
        else:
            object.__setattr__(self, "count", float(self.count))

    @property
    def dimension(self) -> int:
        return len(self.mean)

    @property
    def expected_count(self) -> float:
        return float(self.count)

    def _positions(self, size: int, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal((size, self.dimension))
        return np.asarray(self.mean) + self.std * noise

    def sample_population(self, rng: np.random.Generator) -> Population:
        """One initial population with labels (1,), (2,), ..."""
        n = int(rng.poisson(self.count)) if self.count_law == "poisson" else int(self.count)
        positions = self._positions(n, rng)
        return Population(tuple(
            Particle(label=(i + 1,), position=tuple(positions[i]), birth_time=0.0)
            for i in range(n)
        ))

    def sample_measure(self, populations: int, rng: np.random.Generator) -> PointMeasure:
        """Empirical initial measure of N i.i.d. populations, weight 1/N per particle."""
        pops = [self.sample_population(rng) for _ in range(populations)]
        return population_to_measure(pops, 1.0 / populations, dimension=self.dimension)

    def sample_lifted(self, size: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """Matched lifted initial law: y from the position law, z = E[#K_0]."""
        return self._positions(size, rng), np.full(size, self.expected_count)

    def to_dict(self) -> Dict[str, Any]:
        return {"count": self.count, "count_law": self.count_law, "mean": list(self.mean), "std": self.std}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "InitialCondition":
        return cls(
            count=data.get("count", 4),
            count_law=data.get("count_law", "fixed"),
            mean=tuple(data.get("mean", (0.0,))),
            std=float(data.get("std", 1.0)),
        )
