"""
Catalog of smooth test functions with analytic derivatives.

Inner functions act on (n, d) location arrays and return values, gradients
(n, d) and Hessians (n, d, d). Outer functions act on pairing vectors
u in R^m. Both are declared in configs by name (see build_* below).
"""

import inspect
from abc import ABC, abstractmethod
from typing import Any, Dict, Optional, Sequence

import numpy as np
from typing_extensions import override


class SmoothFunction(ABC):
    """C^2 scalar function on R^d with declared bounds."""

    name: str = ""
    sup_bound: float = np.inf
    lipschitz_bound: float = np.inf
    hessian_bound: float = np.inf

    @abstractmethod
    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Values at an (n, d) array."""

    @abstractmethod
    def gradient(self, x: np.ndarray) -> np.ndarray:
        """(n, d) gradients."""

    @abstractmethod
    def hessian(self, x: np.ndarray) -> np.ndarray:
        """(n, d, d) Hessians."""

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        """Config form."""


class ConstantFunction(SmoothFunction):
    name = "constant"

    def __init__(self, value: float = 1.0):
        self.value = float(value)
        self.sup_bound = abs(self.value)
        self.lipschitz_bound = 0.0
        self.hessian_bound = 0.0

    @override
    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(x).shape[0], self.value)

    @override
    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.zeros_like(np.atleast_2d(x), dtype=float)

    @override
    def hessian(self, x: np.ndarray) -> np.ndarray:
        n, d = np.atleast_2d(x).shape
        return np.zeros((n, d, d))

    @override
    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "value": self.value}


class CoordinateFunction(SmoothFunction):
    """scale * x_index. Unbounded; used for first-moment checks."""

    name = "coordinate"

    def __init__(self, index: int = 0, scale: float = 1.0):
        self.index = int(index)
        self.scale = float(scale)
        self.lipschitz_bound = abs(self.scale)
        self.hessian_bound = 0.0

    @override
    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.scale * np.atleast_2d(x)[:, self.index]

    @override
    def gradient(self, x: np.ndarray) -> np.ndarray:
        grad = np.zeros_like(np.atleast_2d(x), dtype=float)
        grad[:, self.index] = self.scale
        return grad

    @override
    def hessian(self, x: np.ndarray) -> np.ndarray:
        n, d = np.atleast_2d(x).shape
        return np.zeros((n, d, d))

    @override
    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "index": self.index, "scale": self.scale}


class GaussianBump(SmoothFunction):
    """height * exp(-|x - center|^2 / (2 width^2))."""

    name = "gaussian-bump"

    def __init__(self, center: Sequence[float] = (0.0,), width: float = 1.0, height: float = 1.0):
        if width <= 0:
            raise ValueError(f"Bump width must be positive, got {width}")
        self.center = np.asarray(center, dtype=float).reshape(-1)
        self.width = float(width)
        self.height = float(height)
        self.sup_bound = abs(self.height)
        self.lipschitz_bound = abs(self.height) * np.exp(-0.5) / self.width
        self.hessian_bound = abs(self.height) / self.width ** 2

    @override
    def __call__(self, x: np.ndarray) -> np.ndarray:
        offset = np.atleast_2d(x) - self.center
        return self.height * np.exp(-0.5 * np.sum(offset ** 2, axis=1) / self.width ** 2)

    @override
    def gradient(self, x: np.ndarray) -> np.ndarray:
        offset = np.atleast_2d(x) - self.center
        return -(self(x) / self.width ** 2)[:, None] * offset

    @override
    def hessian(self, x: np.ndarray) -> np.ndarray:
        offset = np.atleast_2d(x) - self.center
        d = offset.shape[1]
        outer = np.einsum("ni,nj->nij", offset, offset) / self.width ** 4
        return self(x)[:, None, None] * (outer - np.eye(d) / self.width ** 2)

    @override
    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "center": self.center.tolist(), "width": self.width, "height": self.height}


class TanhCoordinate(SmoothFunction):
    """amplitude * tanh(scale * x_index)."""

    name = "tanh-coordinate"

    def __init__(self, index: int = 0, scale: float = 1.0, amplitude: float = 1.0):
        self.index = int(index)
        self.scale = float(scale)
        self.amplitude = float(amplitude)
        self.sup_bound = abs(self.amplitude)
        self.lipschitz_bound = abs(self.amplitude * self.scale)
        self.hessian_bound = abs(self.amplitude) * self.scale ** 2 * 4.0 / (3.0 * np.sqrt(3.0))

    @override
    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.amplitude * np.tanh(self.scale * np.atleast_2d(x)[:, self.index])

    @override
    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        grad = np.zeros_like(x, dtype=float)
        grad[:, self.index] = self.amplitude * self.scale / np.cosh(self.scale * x[:, self.index]) ** 2
        return grad

    @override
    def hessian(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        n, d = x.shape
        arg = self.scale * x[:, self.index]
        hess = np.zeros((n, d, d))
        hess[:, self.index, self.index] = -2.0 * self.amplitude * self.scale ** 2 * np.tanh(arg) / np.cosh(arg) ** 2
        return hess

    @override
    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "index": self.index, "scale": self.scale, "amplitude": self.amplitude}


def _times(a: float, b: float) -> float:
    """Product of two bounds with 0 * inf = 0."""
    return 0.0 if a == 0 or b == 0 else a * b


class ProductFunction(SmoothFunction):
    """Pointwise product of two catalog functions."""

    name = "product"

    def __init__(self, left: SmoothFunction, right: SmoothFunction):
        self.left = left
        self.right = right
        self.sup_bound = _times(left.sup_bound, right.sup_bound)
        self.lipschitz_bound = _times(left.sup_bound, right.lipschitz_bound) + _times(right.sup_bound, left.lipschitz_bound)
        self.hessian_bound = (
            _times(left.sup_bound, right.hessian_bound)
            + _times(right.sup_bound, left.hessian_bound)
            + 2.0 * _times(left.lipschitz_bound, right.lipschitz_bound)
        )

    @override
    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.left(x) * self.right(x)

    @override
    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.left(x)[:, None] * self.right.gradient(x) + self.right(x)[:, None] * self.left.gradient(x)

    @override
    def hessian(self, x: np.ndarray) -> np.ndarray:
        g, h = self.left(x), self.right(x)
        dg, dh = self.left.gradient(x), self.right.gradient(x)
        cross = np.einsum("ni,nj->nij", dg, dh)
        return (
            g[:, None, None] * self.right.hessian(x)
            + h[:, None, None] * self.left.hessian(x)
            + cross
            + np.transpose(cross, (0, 2, 1))
        )

    @override
    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "factors": [self.left.to_dict(), self.right.to_dict()]}


def build_test_function(spec: Dict[str, Any]) -> SmoothFunction:
    """Instantiate a catalog function from its config form."""
    if not isinstance(spec, dict):
        raise ValueError(f"A test function must be an object, got {spec!r}")
    params = dict(spec)
    name = params.pop("name", None)
    if name == "product":
        factors = params.pop("factors", [])
        if len(factors) != 2 or params:
            raise ValueError("product needs exactly the key 'factors' with two entries")
        return ProductFunction(build_test_function(factors[0]), build_test_function(factors[1]))
    if name not in INNER_CATALOG:
        raise ValueError(f"Unknown test function: {name}. Available: {list(INNER_CATALOG) + ['product']}")
    try:
        return INNER_CATALOG[name](**params)
    except TypeError as e:
        raise ValueError(f"Bad parameters for test function {name}: {e}")


INNER_CATALOG = {
    "constant": ConstantFunction,
    "coordinate": CoordinateFunction,
    "gaussian-bump": GaussianBump,
    "tanh-coordinate": TanhCoordinate,
}


def inner_function_keys(name: str) -> set:
    """Config keys accepted by the named inner function, 'name' included."""
    if name == "product":
        return {"name", "factors"}
    if name not in INNER_CATALOG:
        raise ValueError(f"Unknown test function: {name}. Available: {list(INNER_CATALOG) + ['product']}")
    return {"name"} | set(inspect.signature(INNER_CATALOG[name]).parameters)


# ---------------------------------------------------------------------------
# Outer functions phi: R^m -> R
# ---------------------------------------------------------------------------

class OuterFunction(ABC):
    """C^2 function of the pairing vector."""

    name: str = ""

    @property
    @abstractmethod
    def arity(self) -> int:
        """Number of pairings m."""

    @abstractmethod
    def value(self, u: np.ndarray) -> np.ndarray:
        """phi at u of shape (..., m)."""

    @abstractmethod
    def gradient(self, u: np.ndarray) -> np.ndarray:
        """(m,) gradient at u of shape (m,)."""

    @abstractmethod
    def hessian(self, u: np.ndarray) -> np.ndarray:
        """(m, m) Hessian at u of shape (m,)."""

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        """Config form."""


class QuadraticOuter(OuterFunction):
    """phi(u) = constant + linear . u + 0.5 u^T quadratic u (quadratic symmetrized)."""

    name = "quadratic"

    def __init__(
        self,
        linear: Sequence[float] = (1.0,),
        quadratic: Optional[Sequence[Sequence[float]]] = None,
        constant: float = 0.0,
    ):
        self.linear = np.asarray(linear, dtype=float).reshape(-1)
        m = self.linear.shape[0]
        matrix = np.zeros((m, m)) if quadratic is None else np.asarray(quadratic, dtype=float).reshape(m, m)
        self.quadratic = 0.5 * (matrix + matrix.T)
        self.constant = float(constant)

    @property
    @override
    def arity(self) -> int:
        return int(self.linear.shape[0])

    @override
    def value(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.constant + u @ self.linear + 0.5 * np.einsum("...i,ij,...j->...", u, self.quadratic, u)

    @override
    def gradient(self, u: np.ndarray) -> np.ndarray:
        return self.linear + self.quadratic @ np.asarray(u, dtype=float)

    @override
    def hessian(self, u: np.ndarray) -> np.ndarray:
        return self.quadratic.copy()

    @override
    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "constant": self.constant,
            "linear": self.linear.tolist(),
            "quadratic": self.quadratic.tolist(),
        }


class TanhOuter(OuterFunction):
    """phi(u) = tanh(weights . u)."""

    name = "tanh"

    def __init__(self, weights: Sequence[float] = (1.0,)):
        self.weights = np.asarray(weights, dtype=float).reshape(-1)

    @property
    @override
    def arity(self) -> int:
        return int(self.weights.shape[0])

    @override
    def value(self, u: np.ndarray) -> np.ndarray:
        return np.tanh(np.asarray(u, dtype=float) @ self.weights)

    @override
    def gradient(self, u: np.ndarray) -> np.ndarray:
        s = float(np.asarray(u, dtype=float) @ self.weights)
        return self.weights / np.cosh(s) ** 2

    @override
    def hessian(self, u: np.ndarray) -> np.ndarray:
        s = float(np.asarray(u, dtype=float) @ self.weights)
        return -2.0 * np.tanh(s) / np.cosh(s) ** 2 * np.outer(self.weights, self.weights)

    @override
    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "weights": self.weights.tolist()}


def identity_outer() -> QuadraticOuter:
    """phi(u) = u."""
    return QuadraticOuter(linear=[1.0])


def square_outer() -> QuadraticOuter:
    """phi(u) = u^2."""
    return QuadraticOuter(linear=[0.0], quadratic=[[2.0]])


def half_square_outer() -> QuadraticOuter:
    """phi(u) = u^2 / 2."""
    return QuadraticOuter(linear=[0.0], quadratic=[[1.0]])


def build_outer_function(spec: Dict[str, Any]) -> OuterFunction:
    """Instantiate an outer function from its config form."""
    if not isinstance(spec, dict):
        raise ValueError(f"An outer function must be an object, got {spec!r}")
    params = dict(spec)
    name = params.pop("name", None)
    if name not in OUTER_CATALOG:
        raise ValueError(f"Unknown outer function: {name}. Available: {list(OUTER_CATALOG)}")
    try:
        return OUTER_CATALOG[name](**params)
    except TypeError as e:
        raise ValueError(f"Bad parameters for outer function {name}: {e}")


OUTER_CATALOG = {
    "quadratic": QuadraticOuter,
    "tanh": TanhOuter,
}


def outer_function_keys(name: str) -> set:
    """Config keys accepted by the named outer function, 'name' included."""
    if name not in OUTER_CATALOG:
        raise ValueError(f"Unknown outer function: {name}. Available: {list(OUTER_CATALOG)}")
    return {"name"} | set(inspect.signature(OUTER_CATALOG[name]).parameters)


class SpaceTimeFunction:
    """f(t, x) = exp(growth t) g(x) for a catalog function g."""

    def __init__(self, spatial: SmoothFunction, growth: float = 0.0):
        self.spatial = spatial
        self.growth = float(growth)

    def factor(self, t: float) -> float:
        return float(np.exp(self.growth * t))

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.factor(t) * self.spatial(x)

    def time_derivative(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.growth * self(t, x)

    def gradient(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.factor(t) * self.spatial.gradient(x)

    def hessian(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.factor(t) * self.spatial.hessian(x)

    def to_dict(self) -> Dict[str, Any]:
        return {"function": self.spatial.to_dict(), "growth": self.growth}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SpaceTimeFunction":
        if not isinstance(data, dict):
            raise ValueError(f"A test function must be an object, got {data!r}")
        if "function" in data:
            unknown = sorted(set(data) - {"function", "growth"})
            if unknown:
                raise ValueError(f"Unknown test function keys: {unknown}")
            return cls(build_test_function(data["function"]), float(data.get("growth", 0.0)))
        return cls(build_test_function(data))
