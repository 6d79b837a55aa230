"""
Tests for coefficient sets, offspring laws and the assumption sampling.
"""

import unittest
import sys
from pathlib import Path

import numpy as np

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.coefficients import (
    CallableCoefficients,
    CoefficientBounds,
    CoefficientError,
    ConstantCoefficients,
    MeanFieldCoefficients,
    OffspringPartition,
    SamplingPlan,
    cumulative_from_probabilities,
    net_growth_c,
    sample_progeny,
    sample_progeny_rows,
    validate_assumptions,
)
from src.core.measure import DomainError, PointMeasure
from src.core.scenario import SCENARIO_PRESETS, ScenarioSpec, build_coefficients


class TestOffspringLaw(unittest.TestCase):
    """Tests for partitions of [0, 1) into litter intervals."""

    def test_partition_from_probabilities(self):
        """Test boundaries are the cumulative sums."""
        part = OffspringPartition.from_probabilities([0.25, 0.25, 0.5])
        np.testing.assert_allclose(part.cumulative, [0.0, 0.25, 0.5, 1.0])
        self.assertEqual(part.max_litter, 2)
        self.assertEqual(part.interval(1), (0.25, 0.5))

    def test_sample_progeny(self):
        """Test the litter is the interval holding u."""
        part = OffspringPartition.from_probabilities([0.25, 0.25, 0.5])
        self.assertEqual(sample_progeny(0.0, part), 0)
        self.assertEqual(sample_progeny(0.25, part), 1)
        self.assertEqual(sample_progeny(0.49, part), 1)
        self.assertEqual(sample_progeny(0.999, part), 2)

    def test_empty_intervals_are_skipped(self):
        """Test zero-probability litters are never drawn."""
        part = OffspringPartition.from_probabilities([0.0, 0.0, 1.0])
        for u in (0.0, 0.3, 0.999):
            self.assertEqual(sample_progeny(u, part), 2)

    def test_sample_progeny_domain(self):
        """Test u outside [0, 1) is rejected."""
        part = OffspringPartition.from_probabilities([0.5, 0.5])
        with self.assertRaises(DomainError):
            sample_progeny(1.0, part)
        with self.assertRaises(DomainError):
            sample_progeny_rows(np.array([-0.1]), part.cumulative[None, :])

    def test_sampled_frequencies(self):
        """Test vectorized sampling reproduces the law."""
        rng = np.random.default_rng(5)
        cumulative = cumulative_from_probabilities(np.array([[0.2, 0.3, 0.5]]))
        u = rng.random(20000)
        litters = sample_progeny_rows(u, np.repeat(cumulative, u.size, axis=0))
        frequencies = np.bincount(litters, minlength=3) / u.size
        np.testing.assert_allclose(frequencies, [0.2, 0.3, 0.5], atol=0.02)

    def test_bad_laws_rejected(self):
        """Test laws must be non-negative and sum to one."""
        with self.assertRaises(CoefficientError):
            cumulative_from_probabilities(np.array([0.5, 0.6]))
        with self.assertRaises(CoefficientError):
            cumulative_from_probabilities(np.array([1.5, -0.5]))


class TestCoefficientSets(unittest.TestCase):
    """Tests for the built-in coefficient families."""

    def setUp(self):
        self.bounds = CoefficientBounds(M=2.0, L=1.0, gamma_bar=1.0, epsilon0=1.0, max_litter=2)

    def test_bounds_validation(self):
        """Test negative bounds and fractional litters are rejected."""
        with self.assertRaises(CoefficientError):
            CoefficientBounds(M=-1.0, L=1.0, gamma_bar=1.0)
        with self.assertRaises(CoefficientError):
            CoefficientBounds(M=1.0, L=1.0, gamma_bar=1.0, max_litter=1.5)

    def test_constant_shapes(self):
        """Test evaluated coefficients have array shapes per particle."""
        coeffs = ConstantCoefficients(2, self.bounds, drift=[0.5, 0.0], sigma=1.0, rate=1.0, progeny=[0.0, 0.0, 1.0])
        frozen = coeffs.freeze(PointMeasure.empty(2))
        x = np.zeros((5, 2))
        self.assertEqual(frozen.drift(0.0, x).shape, (5, 2))
        self.assertEqual(frozen.diffusion(0.0, x).shape, (5, 2, 2))
        self.assertEqual(frozen.covariance(0.0, x).shape, (5, 2, 2))
        self.assertEqual(frozen.progeny(0.0, x).shape, (5, 3))
        np.testing.assert_allclose(frozen.net_growth(0.0, x), 1.0)

    def test_progeny_longer_than_max_litter(self):
        """Test an offspring law wider than max_litter is rejected."""
        with self.assertRaises(CoefficientError):
            ConstantCoefficients(1, self.bounds, progeny=[0.25, 0.25, 0.25, 0.25])

    def test_single_point_conveniences(self):
        """Test single-point calls return unbatched values."""
        coeffs = ConstantCoefficients(1, self.bounds, rate=0.5, progeny=[0.5, 0.0, 0.5])
        mu = PointMeasure.dirac([0.0])
        self.assertEqual(coeffs.drift(0.0, [0.3], mu).shape, (1,))
        self.assertAlmostEqual(coeffs.death_rate(0.0, [0.3], mu), 0.5)
        self.assertAlmostEqual(net_growth_c(coeffs, 0.0, [0.3], mu), 0.0)
        self.assertEqual(coeffs.partition(0.0, [0.3], mu).max_litter, 2)

    def test_mean_field_rate_falls_with_mass(self):
        """Test the branching rate decreases as the mass grows."""
        coeffs = MeanFieldCoefficients(1, CoefficientBounds(M=4.0, L=1.5, gamma_bar=1.0, epsilon0=1.0))
        light = coeffs.death_rate(0.0, [0.0], PointMeasure.dirac([0.0], 1.0))
        at_reference = coeffs.death_rate(0.0, [0.0], PointMeasure.dirac([0.0], 4.0))
        heavy = coeffs.death_rate(0.0, [0.0], PointMeasure.dirac([0.0], 8.0))
        self.assertGreater(light, at_reference)
        self.assertGreater(at_reference, heavy)
        self.assertAlmostEqual(at_reference, 0.5)

    def test_mean_field_drift_sees_the_measure(self):
        """Test the interaction term follows the tanh pairing."""
        coeffs = MeanFieldCoefficients(1, CoefficientBounds(M=4.0, L=1.5, gamma_bar=1.0), a=0.5)
        mu = PointMeasure.dirac([1.0], 2.0)
        expected = -0.2 + 0.5 * np.tanh(2.0 * np.tanh(1.0))
        self.assertAlmostEqual(float(coeffs.drift(0.0, [0.2], mu)[0]), expected)

    def test_mean_field_rate_cap(self):
        """Test gamma0 above gamma_bar is rejected."""
        with self.assertRaises(CoefficientError):
            MeanFieldCoefficients(1, CoefficientBounds(M=4.0, L=1.5, gamma_bar=0.5), gamma0=1.0)


class TestValidateAssumptions(unittest.TestCase):
    """Tests for the empirical bound sampling."""

    def test_presets_pass(self):
        """Test every built-in family respects its declared bounds."""
        for family in SCENARIO_PRESETS:
            coeffs = build_coefficients(ScenarioSpec(family=family))
            report = validate_assumptions(coeffs, SamplingPlan(points=60, seed=1))
            self.assertTrue(report.passed, f"{family}: {report.violations}")
            self.assertGreater(report.samples, 0)

    def test_violation_is_reported(self):
        """Test a drift above M is reported as a violation."""
        bounds = CoefficientBounds(M=1.0, L=1.0, gamma_bar=1.0, epsilon0=0.0, max_litter=1)
        coeffs = CallableCoefficients(
            1,
            bounds,
            drift=lambda t, x, f: 10.0 * np.ones_like(x),
            diffusion=lambda t, x, f: np.ones((x.shape[0], 1, 1)),
            rate=lambda t, x, f: np.full(x.shape[0], 0.5),
            progeny=lambda t, x, f: np.tile([0.0, 1.0], (x.shape[0], 1)),
        )
        report = validate_assumptions(coeffs, SamplingPlan(points=10))
        self.assertFalse(report.passed)
        self.assertTrue(any("drift sup-norm" in v for v in report.violations))

    def test_sampling_is_deterministic(self):
        """Test the same plan gives the same report."""
        coeffs = build_coefficients(ScenarioSpec(family="mean_field"))
        first = validate_assumptions(coeffs, SamplingPlan(points=30, seed=9))
        second = validate_assumptions(coeffs, SamplingPlan(points=30, seed=9))
        self.assertEqual(first.lipschitz_drift, second.lipschitz_drift)
        self.assertEqual(first.sup_drift, second.sup_drift)


if __name__ == "__main__":
    unittest.main()
