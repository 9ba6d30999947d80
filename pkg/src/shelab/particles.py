"""Monte Carlo oracles for moments of the lattice fields.

Every moment of the three equations is an expectation over a small system of
particles:

* the white-noise limit: independent Brownian motions weighted by
  ``exp(gamma * sum of pair local times)``;
* the derivative-noise equation: Brownian motions weighted by an integral
  of ``Phi_eps^(2p)``, or equivalently, after a change of measure, the drifted
  system ``Diff(eps)`` with a bounded-variation exponent;
* the advective equation: the singular system ``Sing(eps)`` with covariance
  ``theta I + eps Phi_eps(y_i - y_j)``, or the driftless ``Cen(eps)``
  reweighted by its exponential martingale.

Pair local times use the occupation normalization ``L = int delta(X^i - X^j) ds``
by default, which is half of the Tanaka local time of ``X^i - X^j``.

Randomness: replica ``r`` of oracle family ``f`` reads stream ``(seed, f, r)``,
so estimates do not depend on batching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

from . import rng
from ._particle_kernels import bm_kernel_exponent, bm_local_times, cen_engine, diff_engine, sym_sqrt
from .errors import ConfigurationError, FactorizationError, InvalidMollifierError
from .functionals import Constant
from .mollifier import Mollifier, _base_kernel, theta as theta_of
from .parallel import map_batches
from .stats import MomentEstimate

TABLE_RESOLUTION = 1024
BATCH = 1024
MAX_PARTICLES = 4

CONVENTIONS = {"occupation": 0.5, "tanaka": 1.0}


def default_dt(eps: float | None = None, width: float = 1.0) -> float:
    """``min(1e-3, (eps w / 8)^2)``."""
    if eps is None:
        return 1e-3
    return min(1e-3, (eps * width / 8) ** 2)


def _n_steps(t: float, dt: float) -> int:
    if t < 0 or dt <= 0:
        raise ConfigurationError("time and step must be positive")
    q = t / dt
    if abs(q - round(q)) > 1e-7 * max(1.0, q):
        raise ConfigurationError(f"t = {t} is not a multiple of dt_p = {dt}")
    return int(round(q))


def _check_positions(n: int, x_vec) -> np.ndarray:
    x = np.asarray(x_vec, dtype=float).reshape(-1)
    if x.size == 1 and n > 1:
        x = np.full(n, x[0])
    if x.size != n:
        raise ConfigurationError("need one starting point per particle")
    if not 1 <= n <= MAX_PARTICLES:
        raise ConfigurationError(f"n must be between 1 and {MAX_PARTICLES}")
    return x


def _normals(seed: int, family: int, reps: Sequence[int], steps: int, n: int) -> np.ndarray:
    out = np.empty((len(reps), steps, n))
    for row, r in enumerate(reps):
        rng.stream(seed, family, r).standard_normal(out=out[row])
    return out


def _batches(replicas: int, batch: int = BATCH):
    for lo in range(0, replicas, batch):
        yield range(lo, min(lo + batch, replicas))


def _product(test_fn, final: np.ndarray) -> np.ndarray:
    n = final.shape[1]
    fns = test_fn if isinstance(test_fn, (list, tuple)) else [test_fn] * n
    out = np.ones(final.shape[0])
    for k in range(n):
        out *= fns[k](final[:, k])
    return out


def _table(phi: Mollifier, k: int):
    base = _base_kernel(phi, k, TABLE_RESOLUTION)
    return np.ascontiguousarray(base.values), float(base.grid[0]), 1.0 / base.spacing


def _estimate(values, exponents, seed, rel_tol=None, **diag) -> MomentEstimate:
    w = np.exp(exponents)
    est = MomentEstimate.from_samples(values, weights=w, seed=seed, **diag)
    if rel_tol is not None:
        est.diagnostics["tolerance_met"] = est.relative_stderr() <= rel_tol
    return est


# ---------------------------------------------------------------------------
# local times and the Brownian limit


def local_time_tanaka(path) -> np.ndarray:
    """Discrete Tanaka local time at 0 along the last axis.

    ``|X_N| - |X_0| - sum_k sgn(X_k) (X_{k+1} - X_k)`` with ``sgn(0) = 0``.
    """
    x = np.asarray(path, dtype=float)
    dx = np.diff(x, axis=-1)
    return np.abs(x[..., -1]) - np.abs(x[..., 0]) - np.sum(np.sign(x[..., :-1]) * dx, axis=-1)


def bm_local_time_moment(
    n: int,
    x_vec,
    t: float,
    gamma: float,
    test_fn: Callable = Constant(1.0),
    dt_p: float = 1e-3,
    replicas: int = 10_000,
    seed: int = 0,
    convention: str = "occupation",
    estimator: str = "tanaka",
    band: float | None = None,
    rel_tol: float | None = None,
) -> MomentEstimate:
    """``E[prod_k psi(B^k_t) exp(gamma sum_{i<j} L^{ij}_t)]`` for independent Brownian motions.

    Parameters
    ----------
    convention : {"occupation", "tanaka"}
        ``L^{ij}`` is ``int delta(B^i - B^j) ds`` or the Tanaka local time of
        ``B^i - B^j`` at zero (twice as large).
    estimator : {"tanaka", "band"}
        Discrete Tanaka formula, or the occupation of ``|B^i - B^j| < band``.
    """
    if convention not in CONVENTIONS:
        raise ConfigurationError(f"unknown local-time convention {convention!r}")
    if estimator not in ("tanaka", "band"):
        raise ConfigurationError(f"unknown estimator {estimator!r}")
    x0 = _check_positions(n, x_vec)
    N = _n_steps(t, dt_p)
    if estimator == "band" and band is None:
        band = 4 * math.sqrt(dt_p)

    def run(reps):
        Z = _normals(seed, rng.BM_LOCAL_TIME, reps, N, n)
        final, tanaka, occ = bm_local_times(x0, Z, math.sqrt(dt_p), dt_p, band or 0.0)
        # occupation of Y = B^i - B^j: int delta(Y) ds = L_tanaka(Y) / 2
        occupation = 0.5 * tanaka if estimator == "tanaka" else occ
        e = gamma * (2.0 * CONVENTIONS[convention]) * occupation.sum(axis=1)
        return _product(test_fn, final) * np.exp(e), e

    vals, expo = zip(*map_batches(run, _batches(replicas)))
    return _estimate(np.concatenate(vals), np.concatenate(expo), seed, rel_tol, dt_p=dt_p, oracle="bm_local_time",
                     convention=convention)


def pair_moment_closed_form(t: float, gamma: float, convention: str = "occupation") -> float:
    """``E exp(gamma L_t)`` for two Brownian motions started together, ``2 e^{c^2 t/2} N(c sqrt t)``."""
    c = gamma * math.sqrt(2.0) * CONVENTIONS[convention]
    return 2 * math.exp(c * c * t / 2) * special.ndtr(c * math.sqrt(t))


def levy_pair_moment(t: float, gamma: float, convention: str = "occupation") -> float:
    """Same quantity by quadrature of ``E exp(c |beta_t|)``, using that local time is distributed as ``|beta_t|``."""
    c = gamma * math.sqrt(2.0) * CONVENTIONS[convention]
    s = math.sqrt(t)
    f = lambda z: math.exp(c * s * z - z * z / 2) / math.sqrt(2 * math.pi)
    val, _ = integrate.quad(f, 0, np.inf, epsabs=1e-13, epsrel=1e-13)
    return 2 * val


def pair_moment_quadrature(t: float, gamma: float, test_fn: Callable = Constant(1.0), x0: float = 0.0,
                           convention: str = "occupation") -> float:
    """``E[psi(B^1_t) psi(B^2_t) exp(gamma L_t)]`` for Brownian motions started together at ``x0``.

    Uses the joint density of a Brownian motion and its local time at zero,
    ``(|b| + l) / sqrt(2 pi t^3) exp(-(|b| + l)^2 / 2t)``, with the local time
    integrated in closed form; the remaining integral over the two endpoints
    is done by adaptive quadrature.
    """
    if isinstance(test_fn, Constant):
        return test_fn.value**2 * pair_moment_closed_form(t, gamma, convention)
    # c multiplies the local time of the standard motion beta = (B^1 - B^2)/sqrt(2)
    c = gamma * CONVENTIONS[convention] * math.sqrt(2.0)
    st = math.sqrt(t)

    def h(b):
        a = abs(b)
        m = c * t
        tail = special.ndtr(-(a - m) / st)
        return math.exp(-c * a + c * c * t / 2) / math.sqrt(2 * math.pi * t**3) * (
            t * math.exp(-((a - m) ** 2) / (2 * t)) + m * math.sqrt(2 * math.pi * t) * tail
        )

    def g(u2, u1):
        s = (u1 + u2 - 2 * x0) / math.sqrt(2)
        b = (u1 - u2) / math.sqrt(2)
        dens = math.exp(-s * s / (2 * t)) / math.sqrt(2 * math.pi * t)
        return float(test_fn(u1)) * float(test_fn(u2)) * dens * h(b)

    lo, hi = test_fn.support
    opts = dict(epsabs=1e-12, epsrel=1e-11)
    below, _ = integrate.dblquad(g, lo, hi, lambda u1: lo, lambda u1: u1, **opts)
    above, _ = integrate.dblquad(g, lo, hi, lambda u1: u1, lambda u1: hi, **opts)
    return below + above


# ---------------------------------------------------------------------------
# derivative-noise systems


def _dshe_parts(phi: Mollifier, p: int, eps: float):
    phi.validate()
    if p < 1:
        raise ConfigurationError("p must be at least 1")
    h = (-1) ** p * eps ** (2 * p - 0.5)
    return h


def bm_phi_exponent_moment(n: int, x_vec, t: float, eps: float, p: int = 1, phi: Mollifier = Mollifier(),
                           test_fn: Callable = Constant(1.0), dt_p: float | None = None, replicas: int = 10_000,
                           seed: int = 0) -> MomentEstimate:
    """``E[prod psi(W^k_t) exp((-1)^p eps^(2p-1/2) sum_{i<j} int Phi_eps^(2p)(W^i - W^j) ds)]``.

    The sign ``(-1)^p`` makes the exponent the noise covariance
    ``int phi_eps^(p)(x - z) phi_eps^(p)(y - z) dz = (-1)^p Phi_eps^(2p)(x - y)``.
    """
    x0 = _check_positions(n, x_vec)
    h = _dshe_parts(phi, p, eps)
    dt = default_dt(eps, phi.width) if dt_p is None else dt_p
    N = _n_steps(t, dt)
    tab, left, inv_h = _table(phi, 2 * p)
    factor = h * eps ** (-1 - 2 * p)

    def run(reps):
        Z = _normals(seed, rng.BM_EXPONENT, reps, N, n)
        final, e = bm_kernel_exponent(x0, Z, math.sqrt(dt), dt, tab, left, inv_h, 1.0 / eps, factor)
        return _product(test_fn, final) * np.exp(e), e

    vals, expo = zip(*map_batches(run, _batches(replicas)))
    return _estimate(np.concatenate(vals), np.concatenate(expo), seed, dt_p=dt, oracle="bm_phi_exponent", eps=eps)


def diff_eps_moment(n: int, x_vec, t: float, eps: float, p: int = 1, phi: Mollifier = Mollifier(),
                    test_fn: Callable = Constant(1.0), dt_p: float | None = None, replicas: int = 10_000,
                    seed: int = 0) -> MomentEstimate:
    """The same moment after the change of measure that removes the stochastic integral.

    Particles follow ``dX^i = (-1)^(p+1) eps^(2p-1/2) sum_{j != i} Phi_eps^(2p-1)(X^i - X^j) dt + dW^i``
    and the weight is ``exp`` of

        sum_{i<j} [(-1)^p eps^(2p-1/2) (Phi_eps^(2p-2)(Y_t) - Phi_eps^(2p-2)(Y_0))
                   + eps^(4p-1) int Phi_eps^(2p-1)(Y)^2 ds]
        + eps^(4p-1) sum_i sum_{j1<j2, j != i} int Phi_eps^(2p-1)(X^i - X^j1) Phi_eps^(2p-1)(X^i - X^j2) ds.
    """
    x0 = _check_positions(n, x_vec)
    h = _dshe_parts(phi, p, eps)
    dt = default_dt(eps, phi.width) if dt_p is None else dt_p
    N = _n_steps(t, dt)
    tabF, left, inv_h = _table(phi, 2 * p - 1)
    tabG, _, _ = _table(phi, 2 * p - 2)
    fF = eps ** (-2 * p)
    fG = eps ** (1 - 2 * p)
    c_sq = eps ** (4 * p - 1)

    def run(reps):
        Z = _normals(seed, rng.DIFFUSION, reps, N, n)
        final, e = diff_engine(x0, Z, math.sqrt(dt), dt, tabF, tabG, left, inv_h, 1.0 / eps, fF, fG, -h, h, c_sq)
        return _product(test_fn, final) * np.exp(e), e

    vals, expo = zip(*map_batches(run, _batches(replicas)))
    return _estimate(np.concatenate(vals), np.concatenate(expo), seed, dt_p=dt, oracle="diff_eps", eps=eps)


# ---------------------------------------------------------------------------
# centered and singular systems


@dataclass(frozen=True)
class ParticleSystem:
    """State of one replica of an n-particle system."""

    positions: np.ndarray
    time: float
    dt_p: float
    exponent: float = 0.0
    log_weight: float = 0.0
    bracket: float = 0.0

    @property
    def n(self) -> int:
        return self.positions.size


def _check_subunit(phi: Mollifier) -> float:
    phi.validate()
    th = theta_of(phi)
    if th <= 0:
        raise InvalidMollifierError("||phi||^2 must be below 1")
    return th


def cen_covariance(positions, eps: float, phi: Mollifier) -> np.ndarray:
    """``theta I + eps Phi_eps(y_i - y_j)``."""
    th = _check_subunit(phi)
    tab, left, inv_h = _table(phi, 0)
    y = np.asarray(positions, dtype=float)
    u = (y[:, None] - y[None, :]) / eps
    A = np.interp((u - left) * inv_h, np.arange(tab.size), tab, left=0.0, right=0.0)
    return A + th * np.eye(y.size)


def cen_eps_step(system: ParticleSystem, eps: float, phi: Mollifier, normals) -> ParticleSystem:
    """One Euler step with zero drift and covariance ``theta I + eps Phi_eps(y_i - y_j)``.

    Raises
    ------
    FactorizationError
        If the covariance is not positive definite; the message carries the state.
    """
    A = cen_covariance(system.positions, eps, phi)
    S = np.zeros_like(A)
    lam = sym_sqrt(A, S)
    if lam <= 0:
        raise FactorizationError(f"covariance not positive definite at positions {system.positions!r}: {A!r}")
    step = math.sqrt(system.dt_p) * S @ np.asarray(normals, dtype=float)
    return replace(system, positions=system.positions + step, time=system.time + system.dt_p)


@dataclass(frozen=True)
class _CenRun:
    final: np.ndarray
    exponent: np.ndarray
    dmart: np.ndarray
    bracket: np.ndarray


def _run_cen(n, x_vec, t, eps, phi, dt, replicas, seed, family, singular, girsanov, with_exponent=True,
             path=None) -> _CenRun:
    x0 = _check_positions(n, x_vec)
    th = _check_subunit(phi)
    N = _n_steps(t, dt)
    tab, left, inv_h = _table(phi, 0)
    drift = -1.0 / math.sqrt(eps) if singular else 0.0
    dummy = np.zeros((0, n))

    def run(reps):
        Z = _normals(seed, family, reps, N, n)
        rec = path if (path is not None and reps.start == 0) else dummy
        *res, lam = cen_engine(x0, Z, math.sqrt(dt), dt, th, tab, left, inv_h, 1.0 / eps, drift,
                               1.0 / eps if with_exponent else 0.0, girsanov, rec)
        if lam <= 0:
            raise FactorizationError(f"covariance lost positive definiteness (smallest eigenvalue {lam})")
        return res

    parts = list(zip(*map_batches(run, _batches(replicas))))
    return _CenRun(*(np.concatenate(p) for p in parts))


def cen_eps_positions(n, x_vec, t, eps, phi=Mollifier(), dt_p=None, replicas=10_000, seed=0) -> np.ndarray:
    """Final positions of the centered diffusion, shape ``(replicas, n)``."""
    dt = default_dt(eps, phi.width) if dt_p is None else dt_p
    return _run_cen(n, x_vec, t, eps, phi, dt, replicas, seed, rng.CENTERED, False, False, False).final


def sing_eps_moment(n: int, x_vec, t: float, eps: float, phi: Mollifier = Mollifier(),
                    test_fn: Callable = Constant(1.0), dt_p: float | None = None, replicas: int = 10_000,
                    seed: int = 0, include_exponent: bool = True) -> MomentEstimate:
    """``E[exp(sum_{i<j} int Phi_eps(X^i - X^j) ds) prod psi(X^k_t)]`` for the singular system.

    The singular system has covariance ``theta I + eps Phi_eps(y_i - y_j)`` and
    drift ``-eps^(1/2) sum_{j != i} Phi_eps(y_i - y_j)``.
    """
    dt = default_dt(eps, phi.width) if dt_p is None else dt_p
    run = _run_cen(n, x_vec, t, eps, phi, dt, replicas, seed, rng.SINGULAR, True, False, include_exponent)
    vals = _product(test_fn, run.final) * np.exp(run.exponent)
    return _estimate(vals, run.exponent, seed, dt_p=dt, oracle="sing_eps", eps=eps)


def girsanov_reweighted_moment(n: int, x_vec, t: float, eps: float, phi: Mollifier = Mollifier(),
                               functional: Callable | None = None, dt_p: float | None = None,
                               replicas: int = 10_000, seed: int = 0) -> MomentEstimate:
    """``E_Cen[exp(D - <D>/2) F]``, the singular-system expectation of ``F`` by change of measure.

    ``functional(final_positions, exponent)`` returns ``F`` per replica, where
    ``exponent`` is ``sum_{i<j} int Phi_eps(X^i - X^j) ds``.  The default is
    ``F = 1``.  ``ess`` in the result is computed from the Girsanov weights.
    """
    dt = default_dt(eps, phi.width) if dt_p is None else dt_p
    run = _run_cen(n, x_vec, t, eps, phi, dt, replicas, seed, rng.GIRSANOV, False, True, True)
    w = np.exp(run.dmart - 0.5 * run.bracket)
    F = np.ones(w.size) if functional is None else np.asarray(functional(run.final, run.exponent), dtype=float)
    est = MomentEstimate.from_samples(w * F, weights=w, seed=seed, dt_p=dt, oracle="girsanov", eps=eps)
    est.diagnostics["mean_weight"] = float(w.mean())
    return est


def product_functional(test_fn: Callable, include_exponent: bool = True) -> Callable:
    """``F = prod psi(X^k_t)``, times ``exp(exponent)`` if requested."""

    def F(final, exponent):
        v = _product(test_fn, final)
        return v * np.exp(exponent) if include_exponent else v

    return F


@dataclass(frozen=True)
class CouplingResult:
    discrepancy: float
    sup_norm: float
    steps: int

    @property
    def relative(self) -> float:
        return self.discrepancy / self.sup_norm


def rescale_coupling_check(n: int, x_vec, t: float, eps: float, phi: Mollifier = Mollifier(), seed: int = 0,
                           dt_unit: float = 1e-3, seed_eps: int | None = None, dt_eps: float | None = None) -> CouplingResult:
    """Compare the centered diffusion at scale ``eps`` with ``eps`` times the one at scale 1.

    The scale-1 system starts from ``x_vec`` and runs to ``t / eps^2`` with
    step ``dt_unit``; the scale-``eps`` system starts from ``eps * x_vec`` and
    runs to ``t`` with step ``eps^2 dt_unit``.  Both read the same normals
    unless ``seed_eps`` differs from ``seed``.  Returns the largest
    coordinate discrepancy over all steps.
    """
    x0 = _check_positions(n, x_vec)
    if dt_eps is None:
        dt_eps = eps * eps * dt_unit
    elif abs(dt_eps - eps * eps * dt_unit) > 1e-15:
        raise ConfigurationError("the coupling needs dt_eps = eps^2 * dt_unit")
    N = _n_steps(t, dt_eps)
    path1 = np.zeros((N + 1, n))
    pathe = np.zeros((N + 1, n))
    _run_cen(n, x0, N * dt_unit, 1.0, phi, dt_unit, 1, seed, rng.CENTERED, False, False, False, path1)
    _run_cen(n, eps * x0, N * dt_eps, eps, phi, dt_eps, 1, seed if seed_eps is None else seed_eps,
             rng.CENTERED, False, False, False, pathe)
    disc = float(np.max(np.abs(pathe - eps * path1)))
    return CouplingResult(disc, float(np.max(np.abs(pathe))), N)


# ---------------------------------------------------------------------------
# exponential-moment probe


def _mollifier_table(phi: Mollifier):
    w = phi.width
    h = w / TABLE_RESOLUTION
    x = np.arange(-TABLE_RESOLUTION, TABLE_RESOLUTION + 1) * h
    return np.ascontiguousarray(phi(x)), float(x[0]), 1.0 / h


def exp_moment_bound_probe(process: str, q: float, t: float, eps_ladder: Sequence[float],
                           phi: Mollifier = Mollifier(), replicas: int = 10_000, seed: int = 0,
                           dt_p: float | None = None) -> list[tuple[float, MomentEstimate]]:
    """``E exp(q int phi_eps(X^1 - X^2) ds)`` for two particles started together, per ``eps``.

    ``process`` selects the pair: ``bm`` (independent Brownian motions),
    ``diff`` (the derivative-noise drifted pair, p = 1), ``cen`` or ``sing``.
    """
    if process not in ("bm", "diff", "cen", "sing"):
        raise ConfigurationError(f"unknown process {process!r}")
    if t > 0.5:
        raise ConfigurationError("the probe is limited to t <= 0.5")
    tab, left, inv_h = _mollifier_table(phi)
    out = []
    for eps in eps_ladder:
        dt = default_dt(eps, phi.width) if dt_p is None else dt_p
        if q == 0:
            out.append((eps, MomentEstimate(1.0, 0.0, replicas, float(replicas), seed, {"exact": True})))
            continue
        N = _n_steps(t, dt)
        vals = []
        for reps in _batches(replicas):
            Z = _normals(seed, rng.ADVECTION_PROBE, reps, N, 2)
            if process == "bm":
                _, e = bm_kernel_exponent(np.zeros(2), Z, math.sqrt(dt), dt, tab, left, inv_h, 1.0 / eps, q / eps)
            elif process == "diff":
                path = _pair_path_diff(Z, dt, eps, phi)
                e = q / eps * dt * np.sum(np.interp((path / eps - left) * inv_h, np.arange(tab.size), tab,
                                                    left=0.0, right=0.0), axis=1)
            else:
                path = _pair_path_cen(Z, dt, eps, phi, process == "sing")
                e = q / eps * dt * np.sum(np.interp((path / eps - left) * inv_h, np.arange(tab.size), tab,
                                                    left=0.0, right=0.0), axis=1)
            vals.append(np.exp(e))
        out.append((eps, MomentEstimate.from_samples(np.concatenate(vals), seed=seed, process=process, q=q)))
    return out


def _pair_path_diff(Z, dt, eps, phi):
    """Separations ``X^1 - X^2`` of the p = 1 drifted pair at steps ``0..N-1``."""
    tabF, left, inv_h = _table(phi, 1)
    c = eps**1.5 * eps**-2
    B, N, _ = Z.shape
    y = np.zeros(B)
    out = np.empty((B, N))
    for k in range(N):
        out[:, k] = y
        F = c * np.interp((y / eps - left) * inv_h, np.arange(tabF.size), tabF, left=0.0, right=0.0)
        # relative drift of the pair is 2 * eps^(3/2) Phi_eps'(Y)
        y = y + 2 * F * dt + math.sqrt(dt) * (Z[:, k, 0] - Z[:, k, 1])
    return out


def _pair_path_cen(Z, dt, eps, phi, singular):
    """Separations of the centered or singular pair; drift cancels in the difference."""
    th = _check_subunit(phi)
    tab, left, inv_h = _table(phi, 0)
    B, N, _ = Z.shape
    y = np.zeros(B)
    out = np.empty((B, N))
    for k in range(N):
        out[:, k] = y
        c = np.interp((y / eps - left) * inv_h, np.arange(tab.size), tab, left=0.0, right=0.0)
        # Var(dX^1 - dX^2) = 2 (A_11 - A_12) dt = 2 (1 - c) dt up to the theta + Phi(0) = 1 identity
        y = y + np.sqrt(2 * np.maximum(th + tab[tab.size // 2] - c, 0.0) * dt) * (Z[:, k, 0] - Z[:, k, 1]) / math.sqrt(2)
    return out
