"""
Tests for run configs and environment defaults.
"""

import json
import os
import unittest
import tempfile
import shutil
import sys
from pathlib import Path
from unittest.mock import patch

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.settings import (
    ConfigError,
    RunConfig,
    config_hash,
    emit_run_config,
    load_environment,
    load_run_config,
    loads_run_config,
)
from src.data import SCENARIO_DIR, scenario_config_path


class TestRunConfig(unittest.TestCase):
    """Tests for parsing and emitting run configs."""

    def test_defaults(self):
        """Test an empty config gives every default section."""
        config = loads_run_config("{}")
        self.assertEqual(config.seed, 0)
        self.assertEqual(config.grid.dt, 1.0 / 64)
        self.assertEqual(config.scenario.family, "constant")
        self.assertEqual(config.check.slack, 3.0)
        self.assertEqual(len(config.battery), 3)

    def test_unknown_keys_name_their_path(self):
        """Test unknown keys are rejected with their dotted path."""
        cases = [
            ({"sede": 1}, "sede"),
            ({"check": {"runz": 3}}, "check.runz"),
            ({"scenario": {"family": "constant", "bounds": {"Q": 1.0}}}, "scenario.bounds.Q"),
        ]
        for data, key in cases:
            with self.assertRaises(ConfigError) as ctx:
                loads_run_config(json.dumps(data))
            self.assertEqual(ctx.exception.key, key)

    def test_seed_range(self):
        """Test seeds must be integers in [0, 2^64)."""
        self.assertEqual(loads_run_config(json.dumps({"seed": 2 ** 64 - 1})).seed, 2 ** 64 - 1)
        for seed in (-1, 2 ** 64, 1.5, True, "7"):
            with self.assertRaises(ConfigError):
                loads_run_config(json.dumps({"seed": seed}))

    def test_bad_json_reports_line(self):
        """Test malformed JSON reports the offending line."""
        with self.assertRaises(ConfigError) as ctx:
            loads_run_config('{\n  "seed": 1,\n}\n')
        self.assertEqual(ctx.exception.line, 3)

    def test_dimension_mismatch(self):
        """Test the initial mean must match the scenario dimension."""
        with self.assertRaises(ConfigError) as ctx:
            loads_run_config(json.dumps({"scenario": {"family": "constant", "dimension": 2}}))
        self.assertEqual(ctx.exception.key, "initial.mean")

    def test_invalid_values(self):
        """Test bad families and grids surface as ConfigError."""
        with self.assertRaises(ConfigError):
            loads_run_config(json.dumps({"scenario": {"family": "logistic"}}))
        with self.assertRaises(ConfigError):
            loads_run_config(json.dumps({"grid": {"horizon": 1.0, "dt": 0.3}}))
        with self.assertRaises(ConfigError):
            loads_run_config(json.dumps({"battery": {"name": "mass"}}))

    def test_test_function_keys_are_checked(self):
        """Test misspelled keys inside test_functions entries are named by path."""
        with self.assertRaises(ConfigError) as ctx:
            loads_run_config(json.dumps({
                "test_functions": [{"function": {"name": "constant", "value": 1.0}, "grwoth": 2.0}]
            }))
        self.assertEqual(ctx.exception.key, "test_functions[0].grwoth")

        with self.assertRaises(ConfigError) as ctx:
            loads_run_config(json.dumps({
                "test_functions": [
                    {"function": {"name": "constant", "value": 1.0}},
                    {"function": {"name": "gaussian-bump", "centre": [0.0]}, "growth": 0.5},
                ]
            }))
        self.assertEqual(ctx.exception.key, "test_functions[1].function.centre")

    def test_test_function_entries_must_be_objects(self):
        """Test a non-object test function is a ConfigError."""
        with self.assertRaises(ConfigError) as ctx:
            loads_run_config(json.dumps({"test_functions": [3]}))
        self.assertEqual(ctx.exception.key, "test_functions[0]")
        with self.assertRaises(ConfigError) as ctx:
            loads_run_config(json.dumps({"test_functions": [{"function": [1, 2]}]}))
        self.assertEqual(ctx.exception.key, "test_functions[0].function")

    def test_functional_checked_at_parse_time(self):
        """Test functional and battery entries are validated while loading."""
        with self.assertRaises(ConfigError) as ctx:
            loads_run_config(json.dumps({
                "functional": {
                    "inner": [{"name": "constant", "valeu": 1.0}],
                    "outer": {"name": "quadratic", "linear": [1.0]},
                }
            }))
        self.assertEqual(ctx.exception.key, "functional.inner[0].valeu")

        with self.assertRaises(ConfigError) as ctx:
            loads_run_config(json.dumps({
                "battery": [{
                    "inner": [{"name": "constant", "value": 1.0}],
                    "outer": {"name": "tanh", "wieghts": [1.0]},
                }]
            }))
        self.assertEqual(ctx.exception.key, "battery[0].outer.wieghts")

        with self.assertRaises(ConfigError) as ctx:
            loads_run_config(json.dumps({
                "functional": {"inner": [{"name": "wavelet"}], "outer": {"name": "quadratic"}}
            }))
        self.assertEqual(ctx.exception.key, "functional.inner[0].name")

        with self.assertRaises(ConfigError) as ctx:
            loads_run_config(json.dumps({
                "functional": {
                    "inner": [{"name": "product", "factors": [{"name": "constant"}, {"name": "coordinate", "axis": 0}]}],
                    "outer": {"name": "quadratic"},
                }
            }))
        self.assertEqual(ctx.exception.key, "functional.inner[0].factors[1].axis")

    def test_functional_arity_mismatch(self):
        """Test an outer function of the wrong arity is rejected while loading."""
        with self.assertRaises(ConfigError) as ctx:
            loads_run_config(json.dumps({
                "functional": {
                    "inner": [{"name": "constant", "value": 1.0}],
                    "outer": {"name": "tanh", "weights": [1.0, 0.5]},
                }
            }))
        self.assertEqual(ctx.exception.key, "functional")

    def test_emit_is_canonical(self):
        """Test emitting a parsed emission reproduces it byte for byte."""
        config = loads_run_config(json.dumps({"seed": 9, "study": {"N_list": [4, 8]}}))
        text = emit_run_config(config)
        self.assertEqual(emit_run_config(loads_run_config(text)), text)
        self.assertTrue(text.endswith("\n"))
        self.assertEqual(json.loads(text)["study"]["N_list"], [4, 8])

    def test_hash(self):
        """Test the hash is stable and changes with the seed."""
        first = config_hash(RunConfig())
        self.assertEqual(first, config_hash(loads_run_config("{}")))
        self.assertEqual(len(first), 16)
        self.assertNotEqual(first, config_hash(loads_run_config('{"seed": 1}')))

    def test_bundled_configs_parse(self):
        """Test every bundled scenario config loads."""
        names = sorted(p.stem for p in SCENARIO_DIR.glob("*.json"))
        self.assertIn("mean_field", names)
        for name in names:
            config = load_run_config(scenario_config_path(name))
            self.assertEqual(config.scenario.family, name)
        with self.assertRaises(FileNotFoundError):
            scenario_config_path("nonexistent")


class TestEnvironment(unittest.TestCase):
    """Tests for BRANCHLAB_* environment defaults."""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.env_file = Path(self.temp_dir) / ".env"

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def clean_environ(self):
        return {k: v for k, v in os.environ.items() if not k.startswith("BRANCHLAB_")}

    def test_dotenv_file(self):
        """Test values are read from a .env file."""
        self.env_file.write_text("BRANCHLAB_WORKERS=3\nBRANCHLAB_OUT=results\n", encoding="utf-8")
        with patch.dict(os.environ, self.clean_environ(), clear=True):
            env = load_environment(self.env_file)
        self.assertEqual(env.workers, 3)
        self.assertEqual(env.output_dir, "results")
        self.assertIsNone(env.log_level)

    def test_existing_variables_win(self):
        """Test process variables override the .env file."""
        self.env_file.write_text("BRANCHLAB_OUT=results\n", encoding="utf-8")
        with patch.dict(os.environ, dict(self.clean_environ(), BRANCHLAB_OUT="mine"), clear=True):
            env = load_environment(self.env_file)
        self.assertEqual(env.output_dir, "mine")

    def test_bad_workers(self):
        """Test a non-integer worker count is a config error."""
        with patch.dict(os.environ, dict(self.clean_environ(), BRANCHLAB_WORKERS="many"), clear=True):
            with self.assertRaises(ConfigError):
                load_environment(self.env_file)


if __name__ == "__main__":
    unittest.main()
