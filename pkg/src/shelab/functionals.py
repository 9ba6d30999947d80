"""Compactly supported test functions and Gaussian smoothing by quadrature."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate


@dataclass(frozen=True)
class BumpTest:
    """Peak-``height`` bump ``height * exp(1 - 1/(1 - u^2))``, ``u = (y - center)/radius``."""

    center: float = 0.0
    radius: float = 1.0
    height: float = 1.0

    def __call__(self, y) -> np.ndarray:
        u = (np.asarray(y, dtype=float) - self.center) / self.radius
        out = np.zeros(u.shape)
        inside = np.abs(u) < 1.0
        out[inside] = self.height * np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
        return out

    @property
    def support(self) -> tuple[float, float]:
        return self.center - self.radius, self.center + self.radius

    def heat_smoothed(self, t: float, x0: float = 0.0, variance_rate: float = 1.0) -> float:
        """``E psi(x0 + B_t)`` for a Brownian motion with ``<B>_t = variance_rate * t``."""
        if t == 0:
            return float(self(x0))
        var = variance_rate * t
        lo, hi = self.support

        def f(y):
            return float(self(y)) * math.exp(-((y - x0) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)

        val, _ = integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
        return val

    def to_dict(self) -> dict:
        return {"center": self.center, "radius": self.radius, "height": self.height}


class Constant:
    """The constant test function, used for total-mass moments."""

    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def __call__(self, y) -> np.ndarray:
        return np.full(np.shape(y), self.value)

    def heat_smoothed(self, t: float, x0: float = 0.0, variance_rate: float = 1.0) -> float:
        return self.value

    def to_dict(self) -> dict:
        return {"constant": self.value}

    def __repr__(self):
        return f"Constant({self.value})"


# The fixed family used by the heat-kernel mean checks.
STANDARD_FAMILY = (
    BumpTest(0.0, 1.0),
    BumpTest(0.5, 0.75),
    BumpTest(-0.8, 1.0),
    BumpTest(0.0, 2.0),
    BumpTest(1.2, 0.6),
)

# Test function for pair moments: wide enough to be insensitive to the lattice.
PAIR_TEST = BumpTest(0.0, 2.0)


def test_function_from_dict(d: dict):
    if "constant" in d:
        return Constant(d["constant"])
    return BumpTest(float(d.get("center", 0.0)), float(d.get("radius", 1.0)), float(d.get("height", 1.0)))
