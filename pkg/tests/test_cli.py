"""
Tests for the branchlab command line.
"""

import io
import math
import json
import unittest
import tempfile
import shutil
import sys
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.cli.app import EXIT_ERROR, EXIT_FAILED, EXIT_OK, main
from src.core.exporter import ArtifactExporter
from src.core.measure import PointMeasure


def run_cli(*argv):
    """Run main() with captured output; returns (status, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        status = main([str(a) for a in argv])
    return status, out.getvalue(), err.getvalue()


class TestCommandLine(unittest.TestCase):
    """Tests for branchlab subcommands."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.mkdtemp()
        self.root = Path(self.temp_dir)

    def tearDown(self):
        """Clean up test files."""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def write_config(self, data, name="config.json"):
        path = self.root / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    def test_distance_of_identical_measures(self):
        """Test identical measure files are at distance zero."""
        mu = PointMeasure([[0.0], [1.0]], [0.5, 0.25])
        first = ArtifactExporter.write_measure(self.root / "a.csv", mu)
        second = ArtifactExporter.write_measure(self.root / "b.csv", mu)

        status, stdout, _ = run_cli("distance", first, second, "--out", self.root / "out")

        self.assertEqual(status, EXIT_OK)
        self.assertIn("[OK]", stdout)
        result = json.loads((self.root / "out" / "distance.json").read_text(encoding="utf-8"))
        self.assertEqual(result["bounded_lipschitz"], 0.0)
        self.assertAlmostEqual(result["extended_w1"], 0.0, places=9)

    def test_distance_with_witness(self):
        """Test the witness file is written on request."""
        first = ArtifactExporter.write_measure(self.root / "a.csv", PointMeasure.dirac([0.0]))
        second = ArtifactExporter.write_measure(self.root / "b.csv", PointMeasure.dirac([1.0]))

        status, _, _ = run_cli("distance", first, second, "--witness", "--out", self.root / "out")

        self.assertEqual(status, EXIT_OK)
        result = json.loads((self.root / "out" / "distance.json").read_text(encoding="utf-8"))
        self.assertAlmostEqual(result["bounded_lipschitz"], 1.0, places=7)
        rows = ArtifactExporter.read_table(self.root / "out" / "witness.csv")
        self.assertEqual(len(rows), 2)

    def test_missing_measure_file(self):
        """Test an unreadable input exits with status 2."""
        status, _, stderr = run_cli("distance", self.root / "x.csv", self.root / "y.csv", "--out", self.root / "out")
        self.assertEqual(status, EXIT_ERROR)
        self.assertIn("[ERROR]", stderr)

    def test_simulate_is_independent_of_workers(self):
        """Test artifacts are byte-identical for one and four workers."""
        config = self.write_config({
            "scenario": {"family": "constant"},
            "grid": {"horizon": 1.0, "dt": 0.25},
            "simulate": {"N": 4, "runs": 3},
            "seed": 17,
        })
        for workers, name in ((1, "serial"), (4, "threaded")):
            status, _, _ = run_cli("simulate", "--config", config, "--workers", workers, "--out", self.root / name)
            self.assertEqual(status, EXIT_OK)

        serial = sorted(p.name for p in (self.root / "serial").iterdir())
        self.assertIn("run_0002_events.csv", serial)
        self.assertIn("mass_statistics.csv", serial)
        self.assertEqual(serial, sorted(p.name for p in (self.root / "threaded").iterdir()))
        for name in serial:
            self.assertEqual((self.root / "serial" / name).read_bytes(), (self.root / "threaded" / name).read_bytes(), name)

    def test_seed_flag_overrides_config(self):
        """Test --seed changes the embedded provenance."""
        config = self.write_config({"grid": {"horizon": 1.0, "dt": 0.5}, "simulate": {"N": 2}})
        run_cli("simulate", "--config", config, "--seed", 99, "--out", self.root / "out")
        first_line = (self.root / "out" / "mass_statistics.csv").read_text(encoding="utf-8").splitlines()[0]
        self.assertTrue(first_line.endswith("seed=99"))

    def test_unknown_config_key(self):
        """Test an unknown key exits with status 2 and names the key."""
        config = self.write_config({"simulate": {"n": 4}})
        status, _, stderr = run_cli("simulate", "--config", config, "--out", self.root / "out")
        self.assertEqual(status, EXIT_ERROR)
        self.assertIn("simulate.n", stderr)

    def test_malformed_test_functions(self):
        """Test non-object and misspelled test functions exit with status 2."""
        config = self.write_config({"test_functions": [3]})
        status, _, stderr = run_cli("check", "--config", config, "--out", self.root / "out")
        self.assertEqual(status, EXIT_ERROR)
        self.assertIn("test_functions[0]", stderr)

        config = self.write_config({
            "test_functions": [{"function": {"name": "constant", "value": 1.0}, "grwoth": 2.0}]
        })
        status, _, stderr = run_cli("check", "--config", config, "--out", self.root / "out")
        self.assertEqual(status, EXIT_ERROR)
        self.assertIn("test_functions[0].grwoth", stderr)

    def test_check(self):
        """Test the check battery passes on the constant scenario."""
        config = self.write_config({
            "scenario": {"family": "constant"},
            "grid": {"horizon": 1.0, "dt": 0.0625},
            "check": {"runs": 40, "N": 4, "ensemble_size": 256, "sample_points": 10, "sandwich_pairs": 20, "slack": 4.0},
        })
        status, stdout, _ = run_cli("check", "--config", config, "--out", self.root / "out")
        self.assertEqual(status, EXIT_OK, stdout)
        self.assertIn("metric sandwich", stdout)
        self.assertNotIn("[FAIL]", stdout)
        report = json.loads((self.root / "out" / "check_report.json").read_text(encoding="utf-8"))
        self.assertTrue(report["passed"])

    def assert_same_artifacts(self, *argv):
        for workers, name in ((1, "serial"), (4, "threaded")):
            status, stdout, _ = run_cli(*argv, "--workers", workers, "--out", self.root / name)
            self.assertEqual(status, EXIT_OK, stdout)
        serial = sorted(p.name for p in (self.root / "serial").iterdir())
        self.assertTrue(serial)
        self.assertEqual(serial, sorted(p.name for p in (self.root / "threaded").iterdir()))
        for name in serial:
            self.assertEqual((self.root / "serial" / name).read_bytes(), (self.root / "threaded" / name).read_bytes(), name)
        return serial

    def test_reference_is_independent_of_workers(self):
        """Test reference artifacts are byte-identical for one and four workers."""
        config = self.write_config({"grid": {"horizon": 1.0, "dt": 0.25}, "reference": {"ensemble_size": 32}})
        files = self.assert_same_artifacts("reference", "--config", config)
        self.assertIn("reference_flow.csv", files)

    def test_distance_is_independent_of_workers(self):
        """Test distance and witness files are byte-identical for one and four workers."""
        first = ArtifactExporter.write_measure(self.root / "a.csv", PointMeasure([[0.0], [0.7]], [0.5, 1.0]))
        second = ArtifactExporter.write_measure(self.root / "b.csv", PointMeasure([[0.2], [1.5]], [1.0, 0.25]))
        files = self.assert_same_artifacts("distance", first, second, "--witness")
        self.assertEqual(files, ["distance.json", "witness.csv"])

    def test_convergence_is_independent_of_workers(self):
        """Test the weak-error table is byte-identical for one and four workers."""
        config = self.write_config({
            "grid": {"horizon": 1.0, "dt": 0.25},
            "study": {"N_list": [2, 4], "replicas_fixed": 4},
            "reference": {"ensemble_size": 64, "replicas": 2},
            "seed": 5,
        })
        self.assert_same_artifacts("convergence", "--config", config)

    def test_value_on_pure_death(self):
        """Test U is constant along the pure-death flow."""
        config = self.write_config({
            "scenario": {"family": "pure_death", "params": {"rate": 0.5}},
            "initial": {"count": 4},
            "grid": {"horizon": 1.0, "dt": 0.25},
            "functional": {
                "inner": [{"name": "constant", "value": 1.0}],
                "outer": {"name": "quadratic", "linear": [1.0]},
            },
            "value": {"times": [0.5], "ensemble_size": 16, "replicas": 2},
        })
        status, stdout, _ = run_cli("value", "--config", config, "--out", self.root / "out")
        self.assertEqual(status, EXIT_OK, stdout)
        rows = ArtifactExporter.read_table(self.root / "out" / "value_estimates.csv")
        self.assertEqual([row["time"] for row in rows], ["0.0", "0.5"])
        for row in rows:
            t = float(row["time"])
            self.assertAlmostEqual(float(row["value"]), 4.0 * math.exp(-0.5 * (1.0 - t)), places=9)
        self.assertTrue((self.root / "out" / "flow_constancy.csv").exists())

    def test_reference(self):
        """Test the reference flow and its manifest are written."""
        config = self.write_config({"grid": {"horizon": 1.0, "dt": 0.25}, "reference": {"ensemble_size": 32}})
        status, _, _ = run_cli("reference", "--config", config, "--out", self.root / "out")
        self.assertEqual(status, EXIT_OK)
        self.assertTrue((self.root / "out" / "reference_flow.csv").exists())
        self.assertTrue((self.root / "out" / "reference_manifest.json").exists())

    def test_missing_subcommand(self):
        """Test argparse rejects a call without subcommand."""
        with redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit):
                main([])


if __name__ == "__main__":
    unittest.main()
