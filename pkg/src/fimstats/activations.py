"""Activation functions and the metadata the Gaussian-kernel machinery needs.

Each activation carries its derivative and a list of *critical points*:
argument values where the function has a kink or its sharpest variation.
The quadrature engine splits integration panels exactly at (images of)
these points, which is what lets piecewise functions like ReLU reach
1e-9 accuracy instead of the slow O(n^-3/2) convergence a plain
Gauss-Hermite rule gives on kinked integrands.

phi and phi' must be finite on finite inputs and square-integrable under
a Gaussian measure; every builtin qualifies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special


@dataclass(frozen=True)
class Activation:
    """A scalar activation, vectorized over numpy arrays."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    # closed-form Gaussian kernels exist (erf, relu, linear)
    analytic: bool = False
    critical_points: tuple[float, ...] = (0.0,)
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.fn(x)

    def __repr__(self):  # keep ensemble CSV labels short
        return self.name


# module-level callables only: Activation instances must pickle cleanly so
# ensemble seeds can fan out to worker processes


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_d(x):
    return np.where(x > 0, 1.0, 0.0)


def _erf_d(x):
    return (2.0 / np.sqrt(np.pi)) * np.exp(-np.square(x))


def _tanh_d(x):
    return 1.0 - np.square(np.tanh(x))


def _identity(x):
    return np.asarray(x, dtype=float)


def _one(x):
    return np.ones_like(np.asarray(x, dtype=float))


def _leaky(x, slope):
    return np.where(x > 0, x, slope * x)


def _leaky_d(x, slope):
    return np.where(x > 0, 1.0, slope)


ERF = Activation("erf", special.erf, _erf_d, analytic=True)
RELU = Activation("relu", _relu, _relu_d, analytic=True)
LINEAR = Activation("linear", _identity, _one, analytic=True)
TANH = Activation("tanh", np.tanh, _tanh_d)


def leaky_relu(slope: float = 0.1) -> Activation:
    """Leaky ReLU with the given negative-side slope."""
    from functools import partial

    return Activation(f"leaky-relu({slope:g})", partial(_leaky, slope=float(slope)),
                      partial(_leaky_d, slope=float(slope)), params={"slope": float(slope)})


def custom(
    fn: Callable,
    deriv: Callable,
    name: str = "custom",
    critical_points: tuple[float, ...] = (0.0,),
) -> Activation:
    """Wrap a user-supplied phi / phi' pair.

    critical_points should list kink locations (or centers of sharp
    variation); they only affect quadrature accuracy, not correctness of
    smooth functions.
    """
    return Activation(name, fn, deriv, critical_points=tuple(float(c) for c in critical_points))


_BUILTINS = {
    "erf": ERF,
    "relu": RELU,
    "linear": LINEAR,
    "tanh": TANH,
}


def get_activation(spec) -> Activation:
    """Resolve an activation from an Activation, a name, or 'leaky-relu:<slope>'."""
    if isinstance(spec, Activation):
        return spec
    key = str(spec).strip().lower()
    if key in _BUILTINS:
        return _BUILTINS[key]
    if key.startswith("leaky-relu"):
        _, _, rest = key.partition(":")
        return leaky_relu(float(rest) if rest else 0.1)
    raise ValueError(f"unknown activation {spec!r}; expected one of "
                     f"{sorted(_BUILTINS)} or 'leaky-relu:<slope>'")
