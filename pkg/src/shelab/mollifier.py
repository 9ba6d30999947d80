"""Smooth even bump functions and the kernels built from them.

The mollifier is the normalized bump ``phi(x) = (a/w) * b(x/w)`` with
``b(x) = c * exp(-1/(1 - x^2))`` on ``(-1, 1)``.  Everything downstream is
expressed through its self-convolution ``Phi = phi * phi`` and derivatives
of it, sampled on uniform grids.

Derivatives of the bump follow the recurrence

    b^(k)(x) = P_k(x) / (1 - x^2)^(2k) * b(x),
    P_{k+1} = P_k' (1 - x^2)^2 + 4 k x (1 - x^2) P_k - 2 x P_k,

which is evaluated in log form to avoid overflow near the support edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate

from .errors import InvalidMollifierError, ResolutionError, UnsupportedOrderError

MAX_DERIVATIVE_ORDER = 8
# Simpson intervals across the support of the inner factor; the bump
# integrates to machine precision at this count.
_QUAD_INTERVALS = 1024
# finest spacing is (support)/_MIN_POINTS_PER_SUPPORT
_MIN_POINTS_PER_SUPPORT = 64


def _bump_mass() -> float:
    val, _ = integrate.quad(lambda x: math.exp(-1.0 / (1.0 - x * x)), -1.0, 1.0, epsabs=1e-14, limit=200)
    return val


BUMP_NORMALIZATION = 1.0 / _bump_mass()


def _recurrence_polynomials(kmax: int) -> list[Polynomial]:
    one_minus_sq = Polynomial([1.0, 0.0, -1.0])
    x = Polynomial([0.0, 1.0])
    polys = [Polynomial([1.0])]
    for k in range(kmax):
        pk = polys[-1]
        polys.append(pk.deriv() * one_minus_sq**2 + 4 * k * x * one_minus_sq * pk - 2 * x * pk)
    return polys


_POLYS = _recurrence_polynomials(MAX_DERIVATIVE_ORDER)


def bump_derivative(k: int, u) -> np.ndarray:
    """k-th derivative of the unit-mass bump on ``(-1, 1)``, zero outside."""
    if not 0 <= k <= MAX_DERIVATIVE_ORDER:
        raise UnsupportedOrderError(f"derivative order {k} outside 0..{MAX_DERIVATIVE_ORDER}")
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape)
    inside = np.abs(u) < 1.0
    ui = u[inside]
    s = 1.0 - ui * ui
    out[inside] = BUMP_NORMALIZATION * _POLYS[k](ui) * np.exp(-1.0 / s - 2 * k * np.log(s))
    return out


@dataclass(frozen=True)
class Mollifier:
    """Even bump ``phi(x) = (amplitude/width) * b(x/width)`` supported on ``[-width, width]``.

    ``amplitude`` is the total mass; only ``amplitude == 1`` is a valid
    mollifier, other values exist so that validation can be exercised.
    """

    width: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if not (self.width > 0 and math.isfinite(self.width)):
            raise InvalidMollifierError(f"width must be positive, got {self.width}")
        if not math.isfinite(self.amplitude):
            raise InvalidMollifierError("amplitude must be finite")

    @classmethod
    def with_l2_norm_sq(cls, target: float) -> "Mollifier":
        """Canonical shape rescaled in width so that ``||phi||_2^2 == target``."""
        if target <= 0:
            raise InvalidMollifierError("squared L2 norm must be positive")
        return cls(width=BUMP_L2_NORM_SQ / target)

    def __call__(self, x) -> np.ndarray:
        return self.derivative(0, x)

    def derivative(self, k: int, x) -> np.ndarray:
        w = self.width
        return self.amplitude / w ** (k + 1) * bump_derivative(k, np.asarray(x, dtype=float) / w)

    def scaled(self, eps: float) -> "Mollifier":
        """The rescaled mollifier ``eps^-1 phi(x/eps)``."""
        if eps <= 0:
            raise ValueError("eps must be positive")
        return Mollifier(self.width * eps, self.amplitude)

    def integral(self) -> float:
        y = np.linspace(-self.width, self.width, _QUAD_INTERVALS + 1)
        return float(integrate.simpson(self(y), x=y))

    def l2_norm_sq(self) -> float:
        return self.amplitude**2 * BUMP_L2_NORM_SQ / self.width

    def validate(self, tol: float = 1e-10) -> "Mollifier":
        """Raise :class:`InvalidMollifierError` unless the mass is one."""
        if abs(self.integral() - 1.0) > tol:
            raise InvalidMollifierError(f"mollifier mass {self.integral():.12g} differs from 1")
        return self


def eval_mollifier_derivative(phi: Mollifier, k: int, x) -> np.ndarray:
    """Pointwise values of ``phi^(k)``."""
    return phi.derivative(k, x)


def _l2_bump() -> float:
    y = np.linspace(-1.0, 1.0, 2 * _QUAD_INTERVALS + 1)
    return float(integrate.simpson(bump_derivative(0, y) ** 2, x=y))


BUMP_L2_NORM_SQ = _l2_bump()


@dataclass(frozen=True, eq=False)
class SampledKernel:
    """Values of a function on the uniform grid ``(i - origin_index) * spacing``.

    Outside the sampled window the function is ``left_value`` on the left and
    continues linearly with slope ``right_slope`` from the last sample on the
    right (zero slope for compactly supported kernels).
    """

    values: np.ndarray
    spacing: float
    origin_index: int
    support_radius: float
    right_slope: float = 0.0
    left_value: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> np.ndarray:
        return (np.arange(self.values.size) - self.origin_index) * self.spacing

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = self.grid
        out = np.interp(x, g, self.values, left=self.left_value, right=np.nan)
        right = x > g[-1]
        if np.any(right):
            out = np.where(right, self.values[-1] + self.right_slope * (x - g[-1]), out)
        return out

    def integral(self) -> float:
        return float(integrate.simpson(self.values, dx=self.spacing))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


def _check_spacing(h: float, scale: float) -> None:
    if not h > 0:
        raise ResolutionError("grid spacing must be positive")
    if h > scale / _MIN_POINTS_PER_SUPPORT * (1 + 1e-12):
        raise ResolutionError(
            f"spacing {h:g} does not resolve a kernel of half-width {scale:g}; "
            f"need at most {scale / _MIN_POINTS_PER_SUPPORT:g}"
        )


def _convolution_values(phi: Mollifier, k: int, x: np.ndarray, inner_order: int = 0) -> np.ndarray:
    """Simpson quadrature of ``int phi^(j)(y) phi^(k-j)(x - y) dy`` at the points ``x``."""
    w = phi.width
    y = np.linspace(-w, w, _QUAD_INTERVALS + 1)
    wts = np.ones(y.size)
    wts[1:-1:2] = 4.0
    wts[2:-1:2] = 2.0
    wts *= (y[1] - y[0]) / 3.0
    inner = phi.derivative(inner_order, y) * wts
    out = np.empty(x.size)
    chunk = max(1, 4_000_000 // y.size)
    for start in range(0, x.size, chunk):
        xs = x[start : start + chunk]
        out[start : start + chunk] = phi.derivative(k - inner_order, xs[:, None] - y[None, :]) @ inner
    return out


def self_convolve(phi: Mollifier, eps: float = 1.0, k: int = 0, spacing: float | None = None) -> SampledKernel:
    """Sample ``Phi_eps^(k) = phi_eps * phi_eps^(k)`` on ``[-2 eps w, 2 eps w]``.

    Parameters
    ----------
    phi : Mollifier
    eps : float
        Scale parameter; ``phi_eps(x) = eps^-1 phi(x/eps)``.
    k : int
        Derivative order, at most ``MAX_DERIVATIVE_ORDER``.
    spacing : float, optional
        Output grid spacing.  Defaults to ``eps * w / 128`` and must not
        exceed ``eps * w / 64``.

    Returns
    -------
    SampledKernel
    """
    if not 0 <= k <= MAX_DERIVATIVE_ORDER:
        raise UnsupportedOrderError(f"derivative order {k} outside 0..{MAX_DERIVATIVE_ORDER}")
    pe = phi.scaled(eps)
    half = pe.width
    h = half / 128 if spacing is None else float(spacing)
    _check_spacing(h, half)
    m = int(math.ceil(2 * half / h - 1e-9))
    x = np.arange(-m, m + 1) * h
    # splitting the derivatives evenly keeps both factors tame
    vals = _convolution_values(pe, k, x, inner_order=k // 2)
    # symmetrize away rounding so parity holds exactly
    parity = -1.0 if k % 2 else 1.0
    vals = 0.5 * (vals + parity * vals[::-1])
    if k % 2:
        vals[m] = 0.0
    return SampledKernel(vals, h, m, 2 * half, meta={"eps": eps, "order": k, "width": phi.width})


@lru_cache(maxsize=64)
def _base_kernel(phi: Mollifier, k: int, resolution: int) -> SampledKernel:
    return self_convolve(phi, 1.0, k, phi.width / resolution)


class ScaledKernel:
    """Fast evaluator of ``Phi_eps^(k)(x) = eps^(-1-k) Phi^(k)(x/eps)``.

    All scales share one table of ``Phi^(k)`` at ``eps = 1``, so kernels at
    different scales are exact rescalings of each other up to rounding.
    """

    def __init__(self, phi: Mollifier, eps: float, k: int = 0, resolution: int = 1024):
        self.phi = phi
        self.eps = float(eps)
        self.order = k
        self.base = _base_kernel(phi, k, resolution)
        self._grid = self.base.grid
        self._factor = self.eps ** (-1 - k)

    @property
    def support_radius(self) -> float:
        return self.eps * self.base.support_radius

    def __call__(self, x) -> np.ndarray:
        u = np.asarray(x, dtype=float) / self.eps
        return self._factor * np.interp(u, self._grid, self.base.values, left=0.0, right=0.0)


def kernel_at_zero(phi: Mollifier) -> float:
    """``Phi(0) = ||phi||_2^2``."""
    return phi.l2_norm_sq()


def theta(phi: Mollifier) -> float:
    """``1 - Phi(0)``, the diagonal entry of the centered diffusion's covariance."""
    return 1.0 - kernel_at_zero(phi)


def sigma_p_squared(phi: Mollifier, p: int = 1, spacing: float | None = None) -> float:
    """Squared L2 norm of ``Phi^(2p-1)``.

    This is the total mass of ``eps^(4p-1) (Phi_eps^(2p-1))^2`` for every
    ``eps`` and the coefficient of the limiting pair local time for the
    derivative-noise equation of order ``p``.
    """
    if p < 1:
        raise ValueError("p must be a positive integer")
    phi.validate()
    if 2 * p - 1 > MAX_DERIVATIVE_ORDER:
        raise UnsupportedOrderError(f"p = {p} needs derivative order {2 * p - 1}")
    h = phi.width / 1024 if spacing is None else spacing
    ker = self_convolve(phi, 1.0, 2 * p - 1, h)
    return float(integrate.simpson(ker.values**2, dx=ker.spacing))


def _check_subunit(phi: Mollifier) -> None:
    phi.validate()
    if kernel_at_zero(phi) >= 1.0:
        raise InvalidMollifierError(
            f"Phi(0) = ||phi||^2 = {kernel_at_zero(phi):.6g} must be below 1"
        )


def gamma_ext_squared(phi: Mollifier, spacing: float | None = None) -> float:
    """``int Phi/(1 - Phi)``, the effective noise strength of the advective equation.

    Raises
    ------
    InvalidMollifierError
        If ``Phi(0) >= 1`` so the integrand is not defined.
    """
    _check_subunit(phi)
    h = phi.width / 256 if spacing is None else spacing
    ker = self_convolve(phi, 1.0, 0, h)
    v = ker.values
    return float(integrate.simpson(v / (1.0 - v), dx=ker.spacing))


def _integrate_twice(second: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Profile and slope with zero value and slope at the left end."""
    x = np.arange(second.size) * h
    first = integrate.cumulative_simpson(second, dx=h, initial=0.0)
    moment = integrate.cumulative_simpson(x * second, dx=h, initial=0.0)
    return x * first - moment, first


def psi_profile(phi: Mollifier, spacing: float | None = None) -> SampledKernel:
    """Solve ``Psi'' = Phi/(1 - Phi)`` with ``Psi = Psi' = 0`` at ``-2w``.

    Returned on ``[-2w, 2w]``; beyond the right end it continues linearly
    with slope ``gamma_ext_squared(phi)``.
    """
    _check_subunit(phi)
    h = phi.width / 256 if spacing is None else spacing
    ker = self_convolve(phi, 1.0, 0, h)
    second = ker.values / (1.0 - ker.values)
    prof, slope = _integrate_twice(second, ker.spacing)
    return SampledKernel(prof, ker.spacing, ker.origin_index, ker.support_radius, right_slope=float(slope[-1]))


def psi_eps_profile(phi: Mollifier, eps: float, p: int = 1, spacing: float | None = None) -> SampledKernel:
    """Solve ``Psi_eps'' = eps^(4p-1) (Phi_eps^(2p-1))^2`` with zero data at ``-2 eps w``.

    The second derivative has mass ``sigma_p_squared`` for every ``eps`` so
    the profile tends to ``sigma_p_squared * max(0, y)`` as ``eps -> 0``; the
    uniform distance equals ``Psi_eps(0)`` and is proportional to ``eps``.
    """
    phi.validate()
    ker = self_convolve(phi, eps, 2 * p - 1, spacing)
    second = eps ** (4 * p - 1) * ker.values**2
    prof, slope = _integrate_twice(second, ker.spacing)
    return SampledKernel(prof, ker.spacing, ker.origin_index, ker.support_radius, right_slope=float(slope[-1]))
