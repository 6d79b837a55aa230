"""
Tests for weak-error studies, rate fits and the structural flow checks.
"""

import os
import unittest
import sys
from pathlib import Path

import numpy as np

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.branching import MassStatistics, SimGrid, simulate_branching
from src.core.functionals import CylinderFunctional, LiftedSolver
from src.core.harness import (
    ReferenceSettings,
    ReplicaPolicy,
    StudyError,
    WeakErrorRow,
    WeakErrorTable,
    ensemble_mean_measures,
    fit_rate,
    initial_error_study,
    mass_growth_check,
    reference_value,
    time_continuity_check,
    weak_error_study,
)
from src.core.measure import PointMeasure, mass
from src.core.scenario import InitialCondition, ScenarioSpec, build_coefficients
from src.core.testfunctions import ConstantFunction, TanhCoordinate, identity_outer, square_outer


def mass_functional() -> CylinderFunctional:
    return CylinderFunctional([ConstantFunction(1.0)], identity_outer(), name="mass")


def synthetic_table(N_list, reference_stderr=1e-4, noisy=()):
    rows = []
    for N in N_list:
        stderr = 1.0 if N in noisy else 1e-5
        rows.append(WeakErrorRow(N, 100, 1.0 - 1.0 / N, stderr, 1.0, reference_stderr))
    return WeakErrorTable(rows, 1.0, reference_stderr)


class TestReplicaPolicy(unittest.TestCase):
    """Tests for R(N)."""

    def test_quadratic_scaling(self):
        """Test replicas grow like N^2 from the base point."""
        policy = ReplicaPolicy(base=16, base_N=8, cap=1000, minimum=2)
        self.assertEqual(policy.replicas(8), 16)
        self.assertEqual(policy.replicas(16), 64)
        self.assertEqual(policy.replicas(1), 2)
        self.assertEqual(policy.replicas(1024), 1000)

    def test_fixed(self):
        """Test a fixed count overrides the scaling."""
        self.assertEqual(ReplicaPolicy(fixed=7).replicas(256), 7)


class TestWeakErrorStudy(unittest.TestCase):
    """Tests for weak_error_study and reference_value."""

    def setUp(self):
        self.coeffs = build_coefficients(ScenarioSpec(family="constant"))
        self.init = InitialCondition(count=2)
        self.grid = SimGrid(1.0, 0.25)

    def test_reference_must_dominate(self):
        """Test a reference ensemble below 16 max N is refused."""
        with self.assertRaises(StudyError):
            weak_error_study(self.coeffs, self.init, mass_functional(), self.grid, N_list=[8],
                             reference=ReferenceSettings(ensemble_size=100))
        with self.assertRaises(StudyError):
            weak_error_study(self.coeffs, self.init, mass_functional(), self.grid, N_list=[])

    def test_workers_do_not_change_results(self):
        """Test the table is identical for one and several workers."""
        kwargs = dict(
            N_list=[2, 4],
            policy=ReplicaPolicy(fixed=4),
            reference=ReferenceSettings(ensemble_size=64, replicas=2),
            seed=11,
        )
        serial = weak_error_study(self.coeffs, self.init, mass_functional(), self.grid, workers=1, **kwargs)
        threaded = weak_error_study(self.coeffs, self.init, mass_functional(), self.grid, workers=3, **kwargs)
        self.assertEqual([row.mean for row in serial.rows], [row.mean for row in threaded.rows])
        self.assertEqual(serial.reference, threaded.reference)
        self.assertEqual([row.N for row in serial.rows], [2, 4])
        self.assertEqual([row.replicas for row in serial.rows], [4, 4])

    def test_reference_value(self):
        """Test the pure-death reference mass is exact for every flow."""
        coeffs = build_coefficients(ScenarioSpec.from_preset("pure_death", rate=0.5))
        ref = reference_value(mass_functional(), coeffs, InitialCondition(count=4), self.grid,
                              ReferenceSettings(ensemble_size=32, replicas=3), seed=1)
        self.assertAlmostEqual(ref.value, 4.0 * np.exp(-0.5), places=9)
        self.assertLess(ref.stderr, 1e-9)
        self.assertEqual(ref.replicas, 3)

    @unittest.skipUnless(os.getenv("BRANCHLAB_LONG_TESTS"), "long weak-error study")
    def test_mean_field_bias_shrinks(self):
        """Test the weak error on the interacting family does not grow with N."""
        coeffs = build_coefficients(ScenarioSpec(family="mean_field"))
        G = CylinderFunctional([TanhCoordinate()], square_outer())
        table = weak_error_study(
            coeffs, InitialCondition(count=2), G, SimGrid(1.0, 0.0625),
            N_list=[4, 8, 16],
            policy=ReplicaPolicy(base=256, base_N=4, cap=4096),
            reference=ReferenceSettings(ensemble_size=4096, replicas=4),
            seed=3, workers=4,
        )
        first, last = table.rows[0], table.rows[-1]
        self.assertLessEqual(last.bias, first.bias + 3.0 * (first.stderr + last.stderr + table.reference_stderr))


class TestFitRate(unittest.TestCase):
    """Tests for the log-log rate fit."""

    def test_exact_inverse_rate(self):
        """Test a bias of exactly 1/N fits slope -1."""
        fit = fit_rate(synthetic_table([8, 16, 32, 64, 128]))
        self.assertAlmostEqual(fit.slope, -1.0, places=6)
        self.assertAlmostEqual(fit.intercept, 0.0, places=6)
        self.assertTrue(fit.conclusive)
        self.assertEqual(fit.points, 5)
        low, high = fit.interval
        self.assertLessEqual(low, -1.0 + 1e-9)
        self.assertGreaterEqual(high, -1.0 - 1e-9)

    def test_too_few_signal_rows(self):
        """Test noise-dominated rows are dropped and fewer than three give NaN."""
        fit = fit_rate(synthetic_table([8, 16, 32, 64], noisy=(32, 64)))
        self.assertTrue(np.isnan(fit.slope))
        self.assertFalse(fit.conclusive)
        self.assertEqual(fit.points, 2)
        self.assertTrue(any("N=32" in line for line in fit.diagnostics))

    def test_reference_noise_budget(self):
        """Test a noisy reference keeps the slope but marks the fit inconclusive."""
        fit = fit_rate(synthetic_table([8, 16, 32, 64], reference_stderr=0.01))
        self.assertAlmostEqual(fit.slope, -1.0, places=6)
        self.assertFalse(fit.conclusive)
        self.assertTrue(any("reference stderr" in line for line in fit.diagnostics))


class TestTimeContinuity(unittest.TestCase):
    """Tests for the Holder-1/2 quotient check."""

    def setUp(self):
        self.grid = SimGrid(1.0, 1.0 / 64)

    def test_lipschitz_path_is_bounded(self):
        """Test a Dirac moving at unit speed passes."""
        flow = [PointMeasure.dirac([t]) for t in self.grid.times]
        report = time_continuity_check(flow, self.grid)
        self.assertEqual(len(report.lags), 3)
        self.assertTrue(report.bounded)
        self.assertLess(report.max_quotient, 1.0)

    def test_jump_path_is_flagged(self):
        """Test a Dirac jumping at mid-horizon fails with factor 2."""
        flow = [PointMeasure.dirac([0.0 if t < 0.5 else 1.0]) for t in self.grid.times]
        report = time_continuity_check(flow, self.grid, factor=2.0)
        self.assertFalse(report.bounded)
        self.assertGreater(report.quotients[-1], 2.0 * report.quotients[0])

    def test_lags_off_the_grid_are_skipped(self):
        """Test a lag that is not a whole number of steps is left out."""
        grid = SimGrid(1.0, 0.25)
        flow = [PointMeasure.dirac([t]) for t in grid.times]
        report = time_continuity_check(flow, grid)
        self.assertEqual(report.lags, [0.25])
        self.assertTrue(report.bounded)

    def test_measure_count_must_match(self):
        """Test a flow of the wrong length is refused."""
        with self.assertRaises(ValueError):
            time_continuity_check([PointMeasure.dirac([0.0])], self.grid)

    def test_ensemble_mean(self):
        """Test the ensemble mean measure carries the mean mass."""
        coeffs = build_coefficients(ScenarioSpec.from_preset("pure_death"))
        grid = SimGrid(1.0, 0.25)
        ensemble = [simulate_branching(4, coeffs, InitialCondition(count=3), grid, seed=s, record="measures")
                    for s in range(3)]
        means = ensemble_mean_measures(ensemble)
        self.assertEqual(len(means), grid.steps + 1)
        for k, mu in enumerate(means):
            expected = np.mean([traj.counts[k] for traj in ensemble]) / 4.0
            self.assertAlmostEqual(mass(mu), expected)


class TestMassGrowth(unittest.TestCase):
    """Tests for the exponential mass growth check."""

    def statistics(self, mean):
        mean = np.asarray(mean, dtype=float)
        zeros = np.zeros_like(mean)
        return MassStatistics(times=np.array([0.0, 0.5, 1.0]), mean=mean, variance=zeros, stderr=zeros, runs=10)

    def test_within_bound(self):
        """Test slow growth passes."""
        report = mass_growth_check(self.statistics([10.0, 11.0, 12.0]), gamma_bar=0.5, M=2.0)
        self.assertTrue(report.passed)
        self.assertGreater(report.min_margin, 0.0)

    def test_fast_growth_fails(self):
        """Test growth beyond exp(gamma_bar M t) is reported."""
        report = mass_growth_check(self.statistics([10.0, 40.0, 45.0]), gamma_bar=0.5, M=2.0)
        self.assertFalse(report.passed)
        self.assertLess(report.min_margin, 0.0)
        self.assertIn((0.0, 0.5), [(t, s) for t, s, _ in report.violations])


class TestInitialError(unittest.TestCase):
    """Tests for the initial-condition error study."""

    def test_fixed_count_has_no_mass_error(self):
        """Test empirical and lifted initial laws agree on the pure-death mass."""
        coeffs = build_coefficients(ScenarioSpec.from_preset("pure_death", rate=0.5))
        solver = LiftedSolver(coeffs, horizon=1.0, dt=0.125, ensemble_size=16, seed=1, replicas=2)
        rows = initial_error_study(InitialCondition(count=4), mass_functional(), [4, 2], 3, solver)
        self.assertEqual([row.N for row in rows], [2, 4])
        for row in rows:
            self.assertEqual(row.replicas, 3)
            self.assertAlmostEqual(row.reference, 4.0 * np.exp(-0.5), places=9)
            self.assertLess(row.bias, 1e-9)


if __name__ == "__main__":
    unittest.main()
