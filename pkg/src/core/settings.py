"""
Run configuration for BranchLab.
Loads one declarative JSON file into a RunConfig, rejects unknown keys, and
emits the canonical form that config hashes are computed from.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv

from .branching import DEFAULT_MAX_PARTICLES, SimGrid
from .coefficients import CoefficientBounds, CoefficientError
from .functionals import functional_from_dict
from .scenario import InitialCondition, ScenarioSpec
from .testfunctions import SpaceTimeFunction, inner_function_keys, outer_function_keys


class ConfigError(ValueError):
    """Raised when a config file cannot be parsed or holds invalid keys."""

    def __init__(self, message: str, key: str = "", line: Optional[int] = None):
        super().__init__(message)
        self.key = key
        self.line = line


DEFAULT_FUNCTIONAL: Dict[str, Any] = {
    "inner": [{"name": "tanh-coordinate", "index": 0, "scale": 1.0, "amplitude": 1.0}],
    "outer": {"name": "quadratic", "constant": 0.0, "linear": [0.0], "quadratic": [[2.0]]},
    "time_growth": 0.0,
    "time_drift": 0.0,
}

DEFAULT_BATTERY: List[Dict[str, Any]] = [
    {
        "name": "mass",
        "inner": [{"name": "constant", "value": 1.0}],
        "outer": {"name": "quadratic", "constant": 0.0, "linear": [1.0], "quadratic": [[0.0]]},
        "time_growth": 0.0,
        "time_drift": 0.0,
    },
    {
        "name": "bump-squared",
        "inner": [{"name": "gaussian-bump", "center": [0.0], "width": 1.0, "height": 1.0}],
        "outer": {"name": "quadratic", "constant": 0.0, "linear": [0.0], "quadratic": [[2.0]]},
        "time_growth": 0.0,
        "time_drift": 0.0,
    },
    {
        "name": "tanh-mixed",
        "inner": [
            {"name": "tanh-coordinate", "index": 0, "scale": 1.0, "amplitude": 1.0},
            {"name": "constant", "value": 1.0},
        ],
        "outer": {"name": "tanh", "weights": [1.0, 0.5]},
        "time_growth": 0.5,
        "time_drift": 0.1,
    },
]

DEFAULT_TEST_FUNCTIONS: List[Dict[str, Any]] = [
    {"function": {"name": "constant", "value": 1.0}, "growth": 0.0},
    {"function": {"name": "tanh-coordinate", "index": 0, "scale": 1.0, "amplitude": 1.0}, "growth": 0.0},
    {"function": {"name": "gaussian-bump", "center": [0.5], "width": 1.0, "height": 1.0}, "growth": 0.5},
]


@dataclass(frozen=True)
class SimulateConfig:
    N: int = 64
    runs: int = 1
    record: str = "measures"
    keep_events: bool = True
    max_particles: int = DEFAULT_MAX_PARTICLES


@dataclass(frozen=True)
class ReferenceConfig:
    ensemble_size: int = 4096
    method: str = "self-interaction"
    iterations: int = 3
    replicas: int = 4
    gap_radius: float = 0.02


@dataclass(frozen=True)
class StudyConfig:
    N_list: Tuple[int, ...] = (8, 16, 32, 64, 128, 256)
    replicas_base: int = 16
    replicas_base_N: int = 8
    replicas_cap: int = 100_000
    replicas_min: int = 2
    replicas_fixed: Optional[int] = None
    max_particles: int = DEFAULT_MAX_PARTICLES
    initial_error_replicas: int = 0


@dataclass(frozen=True)
class CheckConfig:
    runs: int = 200
    N: int = 16
    ensemble_size: int = 2048
    sample_points: int = 100
    sandwich_pairs: int = 200
    slack: float = 3.0
    dt_tolerance: float = 2.0
    continuity_factor: float = 4.0
    continuity_radius: float = 0.05


@dataclass(frozen=True)
class ValueConfig:
    times: Tuple[float, ...] = (0.25, 0.5, 0.75)
    ensemble_size: int = 512
    replicas: int = 8
    method: str = "self-interaction"
    iterations: int = 3
    constancy: bool = True


@dataclass(frozen=True)
class DistanceConfig:
    coarsen_radius: float = 0.0
    witness: bool = False
    anchor: Optional[Tuple[float, ...]] = None


_TUPLE_FIELDS = {"N_list", "times", "anchor"}


@dataclass(frozen=True)
class RunConfig:
    """Everything a subcommand needs; every section has defaults."""
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    initial: InitialCondition = field(default_factory=InitialCondition)
    grid: SimGrid = field(default_factory=lambda: SimGrid(1.0, 1.0 / 64))
    seed: int = 0
    output_dir: str = "output"
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    study: StudyConfig = field(default_factory=StudyConfig)
    functional: Dict[str, Any] = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_FUNCTIONAL)))
    battery: List[Dict[str, Any]] = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_BATTERY)))
    test_functions: List[Dict[str, Any]] = field(
        default_factory=lambda: json.loads(json.dumps(DEFAULT_TEST_FUNCTIONS))
    )
    check: CheckConfig = field(default_factory=CheckConfig)
    value: ValueConfig = field(default_factory=ValueConfig)
    distance: DistanceConfig = field(default_factory=DistanceConfig)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario.to_dict(),
            "initial": self.initial.to_dict(),
            "grid": self.grid.to_dict(),
            "seed": self.seed,
            "output_dir": self.output_dir,
            "simulate": _plain_dict(self.simulate),
            "reference": _plain_dict(self.reference),
            "study": _plain_dict(self.study),
            "functional": self.functional,
            "battery": self.battery,
            "test_functions": self.test_functions,
            "check": _plain_dict(self.check),
            "value": _plain_dict(self.value),
            "distance": _plain_dict(self.distance),
        }


def _plain_dict(section: Any) -> Dict[str, Any]:
    result = {}
    for f in fields(section):
        value = getattr(section, f.name)
        result[f.name] = list(value) if isinstance(value, tuple) else value
    return result


def _check_keys(data: Any, allowed: set, path: str) -> Dict[str, Any]:
    if not isinstance(data, dict):
        raise ConfigError(f"'{path}' must be an object", key=path)
    unknown = sorted(set(data) - allowed)
    if unknown:
        key = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(f"Unknown config key '{key}'. Allowed: {sorted(allowed)}", key=key)
    return data


def _section(cls, data: Any, path: str):
    data = _check_keys(data, {f.name for f in fields(cls)}, path)
    values = {}
    try:
        for key, value in data.items():
            if key in _TUPLE_FIELDS and value is not None:
                value = tuple(value)
            values[key] = value
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid '{path}' section: {e}", key=path)


def _check_catalog_entry(spec: Any, path: str, keys_for) -> Dict[str, Any]:
    if not isinstance(spec, dict):
        raise ConfigError(f"'{path}' must be an object", key=path)
    try:
        allowed = keys_for(spec.get("name"))
    except (ValueError, TypeError) as e:
        raise ConfigError(f"Invalid '{path}.name': {e}", key=f"{path}.name")
    return _check_keys(spec, allowed, path)


def _check_inner(spec: Any, path: str) -> None:
    spec = _check_catalog_entry(spec, path, inner_function_keys)
    if spec["name"] == "product":
        factors = spec.get("factors")
        if not isinstance(factors, list) or len(factors) != 2:
            raise ConfigError(f"'{path}.factors' must list two functions", key=f"{path}.factors")
        for j, factor in enumerate(factors):
            _check_inner(factor, f"{path}.factors[{j}]")


def _check_functional(data: Any, path: str) -> Dict[str, Any]:
    data = _check_keys(data, {"inner", "outer", "time_growth", "time_drift", "name"}, path)
    inner = data.get("inner")
    if not isinstance(inner, list) or not inner:
        raise ConfigError(f"'{path}.inner' must be a non-empty list", key=f"{path}.inner")
    for i, spec in enumerate(inner):
        _check_inner(spec, f"{path}.inner[{i}]")
    if "outer" not in data:
        raise ConfigError(f"'{path}.outer' is required", key=f"{path}.outer")
    _check_catalog_entry(data["outer"], f"{path}.outer", outer_function_keys)
    try:
        functional_from_dict(data)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"Invalid '{path}': {e}", key=path)
    return data


def _check_test_function(item: Any, path: str) -> Dict[str, Any]:
    if not isinstance(item, dict):
        raise ConfigError(f"'{path}' must be an object", key=path)
    if "function" in item:
        _check_keys(item, {"function", "growth"}, path)
        _check_inner(item["function"], f"{path}.function")
    else:
        _check_inner(item, path)
    try:
        SpaceTimeFunction.from_dict(item)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"Invalid '{path}': {e}", key=path)
    return dict(item)


def parse_run_config(data: Dict[str, Any]) -> RunConfig:
    """
    Build a RunConfig from parsed JSON.

    Raises:
        ConfigError: unknown key (named by dotted path) or invalid value
    """
    _check_keys(data, {f.name for f in fields(RunConfig)}, "")
    values: Dict[str, Any] = {}
    try:
        if "scenario" in data:
            scenario = _check_keys(data["scenario"], {"family", "dimension", "params", "bounds"}, "scenario")
            if "bounds" in scenario:
                _check_keys(
                    scenario["bounds"], {f.name for f in fields(CoefficientBounds)}, "scenario.bounds"
                )
            values["scenario"] = ScenarioSpec.from_dict(scenario)
        if "initial" in data:
            initial = _check_keys(data["initial"], {"count", "count_law", "mean", "std"}, "initial")
            values["initial"] = InitialCondition.from_dict(initial)
        if "grid" in data:
            values["grid"] = SimGrid.from_dict(_check_keys(data["grid"], {"horizon", "dt"}, "grid"))
    except (CoefficientError, ValueError, TypeError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"Invalid config: {e}")

    if "seed" in data:
        seed = data["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0 or seed >= 1 << 64:
            raise ConfigError(f"'seed' must be an integer in [0, 2^64), got {seed!r}", key="seed")
        values["seed"] = seed
    if "output_dir" in data:
        values["output_dir"] = str(data["output_dir"])
    for name, cls in (
        ("simulate", SimulateConfig),
        ("reference", ReferenceConfig),
        ("study", StudyConfig),
        ("check", CheckConfig),
        ("value", ValueConfig),
        ("distance", DistanceConfig),
    ):
        if name in data:
            values[name] = _section(cls, data[name], name)
    if "functional" in data:
        values["functional"] = _check_functional(data["functional"], "functional")
    if "battery" in data:
        if not isinstance(data["battery"], list):
            raise ConfigError("'battery' must be a list of functionals", key="battery")
        values["battery"] = [
            _check_functional(item, f"battery[{i}]") for i, item in enumerate(data["battery"])
        ]
    if "test_functions" in data:
        if not isinstance(data["test_functions"], list):
            raise ConfigError("'test_functions' must be a list", key="test_functions")
        values["test_functions"] = [
            _check_test_function(item, f"test_functions[{i}]") for i, item in enumerate(data["test_functions"])
        ]

    config = RunConfig(**values)
    if config.initial.dimension != config.scenario.dimension:
        raise ConfigError(
            f"initial.mean has dimension {config.initial.dimension}, scenario has {config.scenario.dimension}",
            key="initial.mean",
        )
    return config


def loads_run_config(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config is not valid JSON (line {e.lineno}, column {e.colno}): {e.msg}", line=e.lineno)
    return parse_run_config(data)


def load_run_config(path: Path) -> RunConfig:
    """
    Load a RunConfig from a JSON file.

    Raises:
        ConfigError: unreadable file, bad JSON or invalid keys
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}")
    return loads_run_config(text)


def emit_run_config(config: RunConfig) -> str:
    """Canonical JSON form: sorted keys, two-space indent, trailing newline."""
    return json.dumps(config.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def config_hash(config: RunConfig) -> str:
    """First 16 hex digits of the SHA-256 of the canonical emission."""
    return hashlib.sha256(emit_run_config(config).encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class EnvironmentDefaults:
    workers: Optional[int] = None
    output_dir: Optional[str] = None
    log_level: Optional[str] = None


def load_environment(dotenv_path: Optional[Path] = None) -> EnvironmentDefaults:
    """
    Read BRANCHLAB_WORKERS, BRANCHLAB_OUT and BRANCHLAB_LOG_LEVEL,
    loading a .env file first when present. Existing variables win.
    """
    load_dotenv(dotenv_path=dotenv_path, override=False)
    workers = os.getenv("BRANCHLAB_WORKERS")
    try:
        parsed_workers = int(workers) if workers else None
    except ValueError:
        raise ConfigError(f"BRANCHLAB_WORKERS must be an integer, got {workers!r}", key="BRANCHLAB_WORKERS")
    return EnvironmentDefaults(
        workers=parsed_workers,
        output_dir=os.getenv("BRANCHLAB_OUT") or None,
        log_level=os.getenv("BRANCHLAB_LOG_LEVEL") or None,
    )
