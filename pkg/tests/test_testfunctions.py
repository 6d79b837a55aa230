"""
Tests for the test-function catalog.
"""

import unittest
import sys
from pathlib import Path

import numpy as np

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.testfunctions import (
    ConstantFunction,
    CoordinateFunction,
    GaussianBump,
    ProductFunction,
    QuadraticOuter,
    SpaceTimeFunction,
    TanhCoordinate,
    TanhOuter,
    build_outer_function,
    build_test_function,
    inner_function_keys,
    outer_function_keys,
)


def numeric_gradient(f, x, h=1e-6):
    grad = np.zeros_like(x)
    for k in range(x.shape[1]):
        step = np.zeros_like(x)
        step[:, k] = h
        grad[:, k] = (f(x + step) - f(x - step)) / (2 * h)
    return grad


class TestInnerFunctions(unittest.TestCase):
    """Tests for scalar functions on R^d."""

    def setUp(self):
        self.points = np.random.default_rng(0).normal(size=(7, 2))
        self.functions = [
            ConstantFunction(2.0),
            CoordinateFunction(1, 3.0),
            GaussianBump([0.5, -0.5], 0.8, 2.0),
            TanhCoordinate(0, 1.5, 0.7),
            ProductFunction(GaussianBump([0.0, 0.0], 1.0, 1.0), TanhCoordinate(1, 1.0, 1.0)),
        ]

    def test_gradients_match_differences(self):
        """Test analytic gradients against central differences."""
        for f in self.functions:
            np.testing.assert_allclose(f.gradient(self.points), numeric_gradient(f, self.points), atol=1e-6, err_msg=f.name)

    def test_hessians_match_differences(self):
        """Test analytic Hessians against differences of the gradient."""
        for f in self.functions:
            for k in range(2):
                column = numeric_gradient(lambda x, f=f, k=k: f.gradient(x)[:, k], self.points)
                np.testing.assert_allclose(f.hessian(self.points)[:, k, :], column, atol=1e-5, err_msg=f.name)

    def test_declared_bounds_hold(self):
        """Test values and gradients stay within the declared bounds on a sample."""
        x = np.random.default_rng(1).normal(scale=3.0, size=(500, 2))
        for f in self.functions:
            self.assertLessEqual(np.max(np.abs(f(x))), f.sup_bound + 1e-12, f.name)
            self.assertLessEqual(np.max(np.linalg.norm(f.gradient(x), axis=1)), f.lipschitz_bound + 1e-12, f.name)

    def test_product_bounds_with_constant(self):
        """Test a zero bound times an infinite bound counts as zero."""
        f = ProductFunction(ConstantFunction(1.0), CoordinateFunction(0, 1.0))
        self.assertEqual(f.hessian_bound, 0.0)
        self.assertEqual(f.lipschitz_bound, 1.0)

    def test_config_form(self):
        """Test catalog functions rebuild from their config form."""
        for f in self.functions:
            again = build_test_function(f.to_dict())
            np.testing.assert_allclose(again(self.points), f(self.points))

    def test_unknown_and_bad_specs(self):
        """Test unknown names and bad parameters raise ValueError."""
        with self.assertRaises(ValueError):
            build_test_function({"name": "sawtooth"})
        with self.assertRaises(ValueError):
            build_test_function({"name": "constant", "height": 1.0})
        with self.assertRaises(ValueError):
            build_test_function({"name": "product", "factors": [{"name": "constant"}]})


class TestOuterFunctions(unittest.TestCase):
    """Tests for functions of the pairing vector."""

    def test_quadratic(self):
        """Test value, gradient and symmetrized Hessian."""
        phi = QuadraticOuter(linear=[1.0, 0.0], quadratic=[[2.0, 1.0], [0.0, 0.0]], constant=0.5)
        u = np.array([1.0, 2.0])
        np.testing.assert_allclose(phi.hessian(u), [[2.0, 0.5], [0.5, 0.0]])
        self.assertAlmostEqual(float(phi.value(u)), 0.5 + 1.0 + 0.5 * (2.0 + 2.0 * 0.5 * 2.0))
        np.testing.assert_allclose(phi.gradient(u), [1.0 + 2.0 + 1.0, 0.5])

    def test_batched_values(self):
        """Test values broadcast over leading axes."""
        phi = TanhOuter([1.0, -1.0])
        u = np.zeros((3, 4, 2))
        u[..., 0] = 1.0
        np.testing.assert_allclose(phi.value(u), np.tanh(1.0))

    def test_tanh_derivatives(self):
        """Test tanh outer gradient against differences."""
        phi = TanhOuter([0.5, 2.0])
        u = np.array([0.3, -0.1])
        h = 1e-6
        numeric = [(phi.value(u + h * e) - phi.value(u - h * e)) / (2 * h) for e in np.eye(2)]
        np.testing.assert_allclose(phi.gradient(u), numeric, atol=1e-8)

    def test_build(self):
        """Test outer functions rebuild from their config form."""
        phi = build_outer_function({"name": "quadratic", "linear": [0.0], "quadratic": [[2.0]]})
        self.assertEqual(phi.arity, 1)
        self.assertAlmostEqual(float(phi.value(np.array([3.0]))), 9.0)
        with self.assertRaises(ValueError):
            build_outer_function({"name": "cubic"})


class TestSpaceTimeFunction(unittest.TestCase):
    """Tests for exp(growth t) g(x)."""

    def test_time_factor(self):
        """Test the time factor and derivative."""
        f = SpaceTimeFunction(ConstantFunction(2.0), growth=0.5)
        x = np.zeros((1, 1))
        self.assertAlmostEqual(float(f(1.0, x)[0]), 2.0 * np.exp(0.5))
        self.assertAlmostEqual(float(f.time_derivative(1.0, x)[0]), np.exp(0.5))

    def test_from_bare_spec(self):
        """Test a bare function spec is read with zero growth."""
        f = SpaceTimeFunction.from_dict({"name": "coordinate", "index": 0})
        self.assertEqual(f.growth, 0.0)
        again = SpaceTimeFunction.from_dict(f.to_dict())
        self.assertEqual(again.to_dict(), f.to_dict())

    def test_from_dict_rejects_unknown_keys(self):
        """Test extra keys and non-object entries are refused."""
        with self.assertRaises(ValueError):
            SpaceTimeFunction.from_dict({"function": {"name": "constant"}, "grwoth": 1.0})
        with self.assertRaises(ValueError):
            SpaceTimeFunction.from_dict(3)
        with self.assertRaises(ValueError):
            build_test_function([1, 2])

    def test_catalog_keys(self):
        """Test accepted config keys follow the constructors."""
        self.assertEqual(inner_function_keys("gaussian-bump"), {"name", "center", "width", "height"})
        self.assertEqual(inner_function_keys("product"), {"name", "factors"})
        self.assertEqual(outer_function_keys("tanh"), {"name", "weights"})
        with self.assertRaises(ValueError):
            inner_function_keys("wavelet")


if __name__ == "__main__":
    unittest.main()
