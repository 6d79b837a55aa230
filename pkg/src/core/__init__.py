from .measure import Particle, Population, PointMeasure, pair, mass, moment, population_to_measure
from .coefficients import CoefficientBounds, CoefficientError, CoefficientSet, validate_assumptions
from .scenario import SCENARIO_PRESETS, InitialCondition, ScenarioSpec, build_coefficients
from .branching import (
    SimGrid,
    BranchingTrajectory,
    simulate_branching,
    mass_statistics,
    PopulationExplosionError,
    NumericsError,
)
from .lifted import WeightedEnsemble, ReferenceFlow, project_T_star, lift_Phi, simulate_lifted_self, picard_solve
from .metrics import bounded_lipschitz, certified_bounded_lipschitz, extended_w1, MetricSizeError, MetricSolverError
from .functionals import CylinderFunctional, ContractError, LiftedSolver, value_function_U, functional_from_dict
from .harness import weak_error_study, fit_rate, StudyError
from .battery import run_check_battery
from .settings import RunConfig, ConfigError, load_run_config
from .exporter import ArtifactExporter, ArtifactError, Provenance

__all__ = [
    "Particle",
    "Population",
    "PointMeasure",
    "pair",
    "mass",
    "moment",
    "population_to_measure",
    "CoefficientBounds",
    "CoefficientError",
    "CoefficientSet",
    "validate_assumptions",
    "SCENARIO_PRESETS",
    "InitialCondition",
    "ScenarioSpec",
    "build_coefficients",
    "SimGrid",
    "BranchingTrajectory",
    "simulate_branching",
    "mass_statistics",
    "PopulationExplosionError",
    "NumericsError",
    "WeightedEnsemble",
    "ReferenceFlow",
    "project_T_star",
    "lift_Phi",
    "simulate_lifted_self",
    "picard_solve",
    "bounded_lipschitz",
    "certified_bounded_lipschitz",
    "extended_w1",
    "MetricSizeError",
    "MetricSolverError",
    "CylinderFunctional",
    "ContractError",
    "LiftedSolver",
    "value_function_U",
    "functional_from_dict",
    "weak_error_study",
    "fit_rate",
    "StudyError",
    "run_check_battery",
    "RunConfig",
    "ConfigError",
    "load_run_config",
    "ArtifactExporter",
    "ArtifactError",
    "Provenance",
]
