"""
Tests for the structural check battery.
"""

import json
import unittest
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.battery import metric_sandwich, random_measure_pair, run_check_battery
from src.core.rng import derive_generator
from src.core.settings import loads_run_config


TINY_CONFIG = {
    "scenario": {"family": "constant", "dimension": 1},
    "initial": {"count": 3},
    "grid": {"horizon": 1.0, "dt": 0.0625},
    "seed": 5,
    "check": {
        "runs": 20,
        "N": 4,
        "ensemble_size": 256,
        "sample_points": 20,
        "sandwich_pairs": 20,
    },
}


class TestMetricSandwich(unittest.TestCase):
    """Tests for the random-pair metric comparison."""

    def test_sandwich_holds(self):
        """Test the extended W_1 stays within a factor two of the BL distance."""
        for dimension in (1, 2):
            item = metric_sandwich(40, dimension, seed=3)
            self.assertTrue(item.passed, item.detail)
            self.assertEqual(item.name, "metric sandwich")

    def test_random_pairs(self):
        """Test random pairs respect the atom and weight ranges."""
        rng = derive_generator(0, 1)
        for _ in range(20):
            mu, nu = random_measure_pair(rng, 2, max_atoms=3)
            for m in (mu, nu):
                self.assertTrue(1 <= m.size <= 3)
                self.assertEqual(m.dimension, 2)
                self.assertTrue((m.weights > 0).all())


class TestCheckBattery(unittest.TestCase):
    """Tests for run_check_battery on a tiny config."""

    @classmethod
    def setUpClass(cls):
        cls.config = loads_run_config(json.dumps(TINY_CONFIG))
        cls.report = run_check_battery(cls.config)

    def test_item_names(self):
        """Test every structural check reports one item per functional and test function."""
        names = [item.name for item in self.report.items]
        self.assertEqual(names, [
            "assumptions",
            "fokker-planck constant",
            "fokker-planck tanh-coordinate",
            "fokker-planck gaussian-bump",
            "weight sandwich",
            "continuity (reference flow)",
            "ito mass",
            "ito bump-squared",
            "ito tanh-mixed",
            "mass growth",
            "continuity (branching ensemble)",
            "metric sandwich",
        ])

    def test_deterministic_items_pass(self):
        """Test checks without sampling noise pass on the constant family."""
        items = {item.name: item for item in self.report.items}
        for name in ("assumptions", "weight sandwich", "metric sandwich"):
            self.assertTrue(items[name].passed, f"{name}: {items[name].detail}")

    def test_thresholds_are_finite(self):
        """Test every item ran and produced a finite threshold."""
        for item in self.report.items:
            self.assertFalse(item.detail.startswith("error:"), item.detail)
            self.assertEqual(item.threshold, item.threshold, item.name)

    def test_reproducible(self):
        """Test the battery is a pure function of the config."""
        again = run_check_battery(self.config, workers=3)
        self.assertEqual(
            [(item.name, item.passed, item.detail) for item in self.report.items],
            [(item.name, item.passed, item.detail) for item in again.items],
        )


if __name__ == "__main__":
    unittest.main()
