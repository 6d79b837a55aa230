"""
Tests for the scenario library and initial conditions.
"""

import unittest
import sys
from pathlib import Path

import numpy as np

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.coefficients import CoefficientBounds, CoefficientError, MeanFieldCoefficients
from src.core.measure import is_antichain, mass
from src.core.scenario import SCENARIO_PRESETS, InitialCondition, ScenarioSpec, build_coefficients


class TestScenarioSpec(unittest.TestCase):
    """Tests for ScenarioSpec and build_coefficients."""

    def test_all_presets_build(self):
        """Test every preset instantiates with its own family name."""
        for family in SCENARIO_PRESETS:
            coeffs = build_coefficients(ScenarioSpec(family=family, dimension=2))
            self.assertEqual(coeffs.family, family)
            self.assertEqual(coeffs.dimension, 2)

    def test_mean_field_family(self):
        """Test the interacting family is measure dependent."""
        coeffs = build_coefficients(ScenarioSpec.from_preset("mean_field", a=0.25))
        self.assertIsInstance(coeffs, MeanFieldCoefficients)
        self.assertTrue(coeffs.measure_dependent)
        self.assertEqual(coeffs.a, 0.25)

    def test_unknown_family(self):
        """Test an unknown family lists the available ones."""
        with self.assertRaises(CoefficientError) as ctx:
            ScenarioSpec(family="nope")
        self.assertIn("binary_branching", str(ctx.exception))

    def test_unknown_parameter(self):
        """Test parameters outside the preset are rejected."""
        with self.assertRaises(CoefficientError):
            ScenarioSpec.from_preset("constant", bogus=1.0)

    def test_rate_above_cap(self):
        """Test a constant rate above gamma_bar is rejected."""
        spec = ScenarioSpec.from_preset("pure_death", rate=2.0)
        with self.assertRaises(CoefficientError):
            build_coefficients(spec)

    def test_preset_values_merged(self):
        """Test overrides keep the remaining preset parameters."""
        spec = ScenarioSpec.from_preset("binary_branching", rate=0.5)
        self.assertEqual(spec.params["rate"], 0.5)
        self.assertEqual(spec.params["progeny"], [0.0, 0.0, 1.0])
        self.assertIsInstance(spec.bounds, CoefficientBounds)

    def test_dict_form_is_stable(self):
        """Test from_dict(to_dict()) reproduces the spec."""
        spec = ScenarioSpec.from_preset("mean_field", kappa=2.0)
        again = ScenarioSpec.from_dict(spec.to_dict())
        self.assertEqual(again.to_dict(), spec.to_dict())


class TestInitialCondition(unittest.TestCase):
    """Tests for i.i.d. initial populations."""

    def test_fixed_count(self):
        """Test a fixed law gives exactly count particles."""
        init = InitialCondition(count=3, mean=(1.0, 2.0), std=0.0)
        pop = init.sample_population(np.random.default_rng(0))
        self.assertEqual(pop.count, 3)
        self.assertTrue(is_antichain(pop.labels))
        np.testing.assert_allclose(pop.positions(), [[1.0, 2.0]] * 3)

    def test_poisson_count(self):
        """Test a Poisson law has the requested mean."""
        init = InitialCondition(count=2.5, count_law="poisson")
        rng = np.random.default_rng(1)
        counts = [init.sample_population(rng).count for _ in range(4000)]
        self.assertAlmostEqual(float(np.mean(counts)), 2.5, delta=0.1)

    def test_invalid_settings(self):
        """Test bad laws and counts are rejected."""
        with self.assertRaises(ValueError):
            InitialCondition(count=2.5, count_law="fixed")
        with self.assertRaises(ValueError):
            InitialCondition(count_law="geometric")
        with self.assertRaises(ValueError):
            InitialCondition(std=-1.0)

    def test_empirical_measure_weights(self):
        """Test the empirical initial measure has weight 1/N per particle."""
        init = InitialCondition(count=4)
        mu = init.sample_measure(10, np.random.default_rng(2))
        self.assertEqual(mu.size, 40)
        self.assertAlmostEqual(mass(mu), 4.0)

    def test_matched_lifted_law(self):
        """Test lifted weights equal the expected initial count."""
        init = InitialCondition(count=3.0, count_law="poisson", mean=(0.0, 0.0))
        y, z = init.sample_lifted(50, np.random.default_rng(3))
        self.assertEqual(y.shape, (50, 2))
        np.testing.assert_allclose(z, 3.0)


if __name__ == "__main__":
    unittest.main()
