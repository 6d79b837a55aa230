"""
CSV and JSON artifacts for BranchLab runs.

Every CSV starts with a `# config_hash=<hex> seed=<n>` comment line followed by
the header row; every JSON artifact carries `config_hash` and `seed` keys.
Floats are written with repr() and files contain no timestamps, so equal runs
produce byte-identical artifacts.
"""

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .branching import BranchingTrajectory
from .lifted import ReferenceFlow
from .measure import PointMeasure, format_label
from .metrics import DualWitness


class ArtifactError(ValueError):
    """Raised when an artifact file is malformed."""
    pass


@dataclass(frozen=True)
class Provenance:
    """Config hash and seed embedded in every artifact."""
    config_hash: str = ""
    seed: int = 0

    @property
    def comment(self) -> str:
        return f"# config_hash={self.config_hash} seed={self.seed}"

    def as_dict(self) -> Dict[str, Any]:
        return {"config_hash": self.config_hash, "seed": self.seed}


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _json_safe(value: Any) -> Any:
    """Replace NaN and infinities by None; convert numpy scalars and tuples."""
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return _json_safe(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


def _coordinate_header(dimension: int) -> List[str]:
    return [f"x{i + 1}" for i in range(dimension)]


class ArtifactExporter:
    """
    Writes and reads run artifacts.
    """

    @staticmethod
    def write_table(
        path: Path,
        header: Sequence[str],
        rows: Iterable[Sequence[Any]],
        provenance: Optional[Provenance] = None,
    ) -> Path:
        """
        Write one CSV table.

        Args:
            path: Output file
            header: Column names
            rows: Row values (floats are written with repr)
            provenance: Comment line written above the header

        Returns:
            Path to the created CSV file
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            if provenance is not None:
                f.write(provenance.comment + "\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        return path

    @staticmethod
    def read_table(path: Path) -> List[Dict[str, str]]:
        """Rows of a CSV artifact as dicts; comment lines starting with '#' are skipped."""
        try:
            with open(path, "r", encoding="utf-8", newline="") as f:
                lines = [line for line in f if not line.startswith("#")]
        except OSError as e:
            raise ArtifactError(f"Cannot read {path}: {e}")
        if not lines:
            raise ArtifactError(f"{path} has no header row")
        return list(csv.DictReader(lines))

    @staticmethod
    def write_json(path: Path, data: Dict[str, Any], provenance: Optional[Provenance] = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = dict(data)
        if provenance is not None:
            payload.update(provenance.as_dict())
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(_json_safe(payload), f, ensure_ascii=False, indent=2, sort_keys=True)
            f.write("\n")
        return path

    # Measures

    @staticmethod
    def write_measure(path: Path, mu: PointMeasure, provenance: Optional[Provenance] = None) -> Path:
        """Measure CSV `x1,...,xd,weight`, one atom per row."""
        rows = (list(mu.locations[i]) + [mu.weights[i]] for i in range(mu.size))
        return ArtifactExporter.write_table(path, _coordinate_header(mu.dimension) + ["weight"], rows, provenance)

    @staticmethod
    def read_measure(path: Path) -> PointMeasure:
        """
        Read a measure CSV.

        Raises:
            ArtifactError: missing columns or unparseable numbers
        """
        try:
            with open(path, "r", encoding="utf-8", newline="") as f:
                lines = [line for line in f if not line.startswith("#")]
        except OSError as e:
            raise ArtifactError(f"Cannot read {path}: {e}")
        reader = csv.reader(lines)
        header = next(reader, None)
        if not header or header[-1] != "weight" or header[:-1] != _coordinate_header(len(header) - 1):
            raise ArtifactError(f"{path}: expected header x1,...,xd,weight, got {header}")
        dimension = len(header) - 1
        if dimension < 1:
            raise ArtifactError(f"{path}: no coordinate columns")
        rows = [row for row in reader if row]
        try:
            values = np.array([[float(cell) for cell in row] for row in rows], dtype=float)
        except ValueError as e:
            raise ArtifactError(f"{path}: {e}")
        if values.size == 0:
            return PointMeasure.empty(dimension)
        if values.ndim != 2 or values.shape[1] != dimension + 1:
            raise ArtifactError(f"{path}: rows must have {dimension + 1} columns")
        try:
            return PointMeasure(values[:, :dimension], values[:, dimension])
        except ValueError as e:
            raise ArtifactError(f"{path}: {e}")

    @staticmethod
    def write_measure_flow(
        path: Path,
        times: Sequence[float],
        measures: Sequence[PointMeasure],
        dimension: int,
        provenance: Optional[Provenance] = None,
    ) -> Path:
        """Long-format flow CSV `time,x1,...,xd,weight`."""

        def rows():
            for t, mu in zip(times, measures):
                for i in range(mu.size):
                    yield [float(t)] + list(mu.locations[i]) + [mu.weights[i]]

        header = ["time"] + _coordinate_header(dimension) + ["weight"]
        return ArtifactExporter.write_table(path, header, rows(), provenance)

    # Branching trajectories

    @staticmethod
    def export_trajectory(
        traj: BranchingTrajectory,
        output_folder: Path,
        provenance: Provenance,
        prefix: str = "run",
    ) -> List[Path]:
        """
        Measures, particle counts and (when kept) the event log of one run.

        Returns:
            Paths of the created files
        """
        output_folder = Path(output_folder)
        times = traj.grid.times
        dimension = traj.measures[0].dimension if traj.measures else 1
        paths = [
            ArtifactExporter.write_measure_flow(
                output_folder / f"{prefix}_measures.csv",
                [times[j] for j in traj.recorded],
                traj.measures,
                dimension,
                provenance,
            ),
            ArtifactExporter.write_table(
                output_folder / f"{prefix}_counts.csv",
                ["time", "count"],
                zip(times, traj.counts),
                provenance,
            ),
        ]
        if traj.event_log is not None:
            paths.append(ArtifactExporter.write_table(
                output_folder / f"{prefix}_events.csv",
                ["time", "replica", "parent_label", "litter"],
                ([e.time, e.replica, format_label(e.parent_label), e.litter] for e in traj.event_log),
                provenance,
            ))
        return paths

    # Reference flows

    @staticmethod
    def export_flow(flow: ReferenceFlow, output_folder: Path, provenance: Provenance, prefix: str = "reference") -> List[Path]:
        """Flow CSV plus a JSON manifest (method, ensemble size, grid, seed, iteration gaps)."""
        output_folder = Path(output_folder)
        dimension = flow.measures[0].dimension
        csv_path = ArtifactExporter.write_measure_flow(
            output_folder / f"{prefix}_flow.csv", flow.grid.times, flow.measures, dimension, provenance
        )
        manifest = {
            "method": flow.method,
            "ensemble_size": flow.ensemble_size,
            "horizon": flow.grid.horizon,
            "dt": flow.grid.dt,
            "run_seed": flow.seed,
            "iterations": flow.iterations,
            "iteration_gaps": list(flow.iteration_gaps),
            "weight_violations": flow.weight_violations,
            "final_mass": float(np.sum(flow.final_measure.weights)),
        }
        json_path = ArtifactExporter.write_json(output_folder / f"{prefix}_manifest.json", manifest, provenance)
        return [csv_path, json_path]

    # Distances

    @staticmethod
    def write_witness(path: Path, witness: DualWitness, provenance: Optional[Provenance] = None) -> Path:
        """Dual witness CSV `x1,...,xd,signed_weight,f`."""
        dimension = witness.locations.shape[1] if witness.locations.ndim == 2 else 1
        rows = (
            list(witness.locations[i]) + [witness.signed_weights[i], witness.f[i]]
            for i in range(witness.f.shape[0])
        )
        header = _coordinate_header(dimension) + ["signed_weight", "f"]
        return ArtifactExporter.write_table(path, header, rows, provenance)

    # Studies and reports

    @staticmethod
    def export_weak_error(table: Any, fit: Any, output_folder: Path, provenance: Provenance) -> List[Path]:
        """WeakErrorTable CSV plus a JSON summary of the rate fit."""
        output_folder = Path(output_folder)
        csv_path = ArtifactExporter.write_table(
            output_folder / "weak_error.csv",
            ["N", "replicas", "mean", "stderr", "reference", "reference_stderr", "bias", "noise_dominated"],
            (
                [r.N, r.replicas, r.mean, r.stderr, r.reference, r.reference_stderr, r.bias, r.noise_dominated]
                for r in table.rows
            ),
            provenance,
        )
        summary = {
            "slope": fit.slope,
            "intercept": fit.intercept,
            "half_width": fit.half_width,
            "interval": list(fit.interval),
            "points": fit.points,
            "conclusive": fit.conclusive,
            "diagnostics": list(fit.diagnostics),
            "reference": table.reference,
            "reference_stderr": table.reference_stderr,
            "signal_rows": [r.N for r in table.signal_rows],
        }
        json_path = ArtifactExporter.write_json(output_folder / "weak_error_summary.json", summary, provenance)
        return [csv_path, json_path]

    @staticmethod
    def export_initial_error(rows: Sequence[Any], output_folder: Path, provenance: Provenance) -> Path:
        return ArtifactExporter.write_table(
            Path(output_folder) / "initial_error.csv",
            ["N", "replicas", "mean", "stderr", "reference", "reference_stderr", "bias"],
            ([r.N, r.replicas, r.mean, r.stderr, r.reference, r.reference_stderr, r.bias] for r in rows),
            provenance,
        )

    @staticmethod
    def export_check_report(report: Any, output_folder: Path, provenance: Provenance) -> List[Path]:
        """Check report as CSV rows plus a JSON document with the overall verdict."""
        output_folder = Path(output_folder)
        csv_path = ArtifactExporter.write_table(
            output_folder / "check_report.csv",
            ["name", "passed", "value", "threshold", "detail"],
            ([i.name, i.passed, i.value, i.threshold, i.detail] for i in report.items),
            provenance,
        )
        document = {
            "passed": report.passed,
            "items": [
                {"name": i.name, "passed": i.passed, "value": i.value, "threshold": i.threshold, "detail": i.detail}
                for i in report.items
            ],
        }
        json_path = ArtifactExporter.write_json(output_folder / "check_report.json", document, provenance)
        return [csv_path, json_path]

    @staticmethod
    def export_values(
        estimates: Sequence[Any],
        output_folder: Path,
        provenance: Provenance,
        constancy: Optional[Any] = None,
    ) -> List[Path]:
        """U(t, mu) estimates, and the flow-constancy comparison when one was run."""
        output_folder = Path(output_folder)
        paths = [ArtifactExporter.write_table(
            output_folder / "value_estimates.csv",
            ["time", "value", "stderr", "replicas"],
            ([e.time, e.value, e.stderr, e.replicas] for e in estimates),
            provenance,
        )]
        if constancy is not None:
            paths.append(ArtifactExporter.write_table(
                output_folder / "flow_constancy.csv",
                ["time", "value", "stderr", "deviation", "combined_stderr"],
                zip(constancy.times, constancy.values, constancy.stderrs, constancy.deviations, constancy.combined_stderrs),
                provenance,
            ))
        return paths
