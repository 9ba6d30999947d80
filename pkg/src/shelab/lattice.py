"""Explicit finite-difference solvers for stochastic heat equations on a periodic lattice.

Four equations share one update rule

    U <- U + dt/2 * Lap U + a * U * eta + b * D(U * eta),

where ``Lap`` is the 3-point Laplacian, ``D`` the central difference and
``eta`` the white-noise increment of the step, optionally smoothed in space:

=============  ============  ==============  ====================
equation       a             b               eta
=============  ============  ==============  ====================
mshe           sigma         0               raw increments
dshe           eps^(p-1/4)   0               phi_eps^(p) * xi
ashe           1             eps^(1/2)       phi_eps * xi
advection      0             eps^(1/2)       phi_eps * xi
=============  ============  ==============  ====================

Increments are N(0, dt/dx) per cell and step.  They are drawn from streams
keyed by (seed, replica, block of 64 steps) so that a field started at any
time reads exactly the same noise as every other field of that replica.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import rng
from ._kernels import advance
from .errors import ConfigurationError, InvalidMollifierError, ResolutionError
from .mollifier import Mollifier, SampledKernel
from .parallel import map_batches
from .stats import MomentEstimate

NOISE_BLOCK = 64
REPLICA_BATCH = 64
MAX_CLIP_RATE = 1e-6


def _is_multiple(a: float, b: float, tol: float = 1e-9) -> bool:
    q = a / b
    return abs(q - round(q)) < tol * max(1.0, abs(q))


@dataclass(frozen=True)
class LatticeGrid:
    """Periodic grid on ``[-half_width, half_width)`` with cells at ``-L + i dx``."""

    dx: float
    dt: float
    half_width: float

    def __post_init__(self):
        if self.dx <= 0 or self.dt <= 0 or self.half_width <= 0:
            raise ConfigurationError("grid parameters must be positive")
        if not _is_multiple(self.half_width, self.dx):
            raise ConfigurationError(f"dx = {self.dx} does not divide L = {self.half_width}")
        if self.dt > self.dx**2 / 4 * (1 + 1e-12):
            raise ConfigurationError(f"CFL violated: dt = {self.dt} > dx^2/4 = {self.dx ** 2 / 4}")

    @classmethod
    def for_run(cls, t_max: float, dx: float = 0.025, eps: float = 0.0, width: float = 1.0,
                half_width: float | None = None) -> "LatticeGrid":
        """Grid with ``dt = dx^2/4`` and a domain wide enough that heat leakage is negligible.

        The half-width is the smallest multiple of 0.5 with ``L >= 6 sqrt(t) + eps w``.
        """
        if half_width is None:
            need = 6 * math.sqrt(t_max) + eps * width
            half_width = math.ceil(need * 2 - 1e-9) / 2
        return cls(dx, dx * dx / 4, half_width)

    @property
    def n_cells(self) -> int:
        return int(round(2 * self.half_width / self.dx))

    @property
    def origin(self) -> int:
        return int(round(self.half_width / self.dx))

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.n_cells) - self.origin) * self.dx

    def cell_index(self, x: float) -> int:
        return (int(round(x / self.dx)) + self.origin) % self.n_cells

    def steps(self, t: float) -> int:
        """Number of steps covering time ``t``; ``t`` must be a multiple of ``dt``."""
        if t < 0:
            raise ConfigurationError("negative time")
        if not _is_multiple(t, self.dt, 1e-7) and t != 0:
            raise ConfigurationError(f"time {t} is not a multiple of dt = {self.dt}")
        return int(round(t / self.dt))

    def pair(self, field_values: np.ndarray, psi: Callable) -> np.ndarray:
        """``(U, psi) = dx * sum_i U_i psi(x_i)`` along the last axis."""
        return field_values @ (psi(self.x) * self.dx)

    def to_dict(self) -> dict:
        return {"dx": self.dx, "dt": self.dt, "half_width": self.half_width}


@dataclass(frozen=True)
class NoiseSlab:
    """White-noise increments ``N(0, dt/dx)`` for one replica, addressable by step index."""

    seed: int
    grid: LatticeGrid
    replica: int = 0

    def increments(self, start: int, count: int) -> np.ndarray:
        """Increments of steps ``start, ..., start + count - 1``, shape ``(count, n_cells)``."""
        out = np.empty((count, self.grid.n_cells))
        buf = np.empty((1, NOISE_BLOCK, self.grid.n_cells))
        b0, b1 = start // NOISE_BLOCK, (start + count - 1) // NOISE_BLOCK
        for b in range(b0, b1 + 1):
            noise_block(buf, self.seed, [self.replica], b)
            lo = max(start, b * NOISE_BLOCK)
            hi = min(start + count, (b + 1) * NOISE_BLOCK)
            out[lo - start : hi - start] = buf[0, lo - b * NOISE_BLOCK : hi - b * NOISE_BLOCK]
        return out * math.sqrt(self.grid.dt / self.grid.dx)


def noise_block(out: np.ndarray, seed: int, replicas: Sequence[int], block: int) -> None:
    """Fill ``out`` of shape ``(R, NOISE_BLOCK, n)`` with the standard normals of ``block``."""
    for r, rep in enumerate(replicas):
        rng.stream(seed, rng.LATTICE, rep, block).standard_normal(out=out[r])


def lattice_kernel(phi: Mollifier, eps: float, order: int, grid: LatticeGrid) -> SampledKernel:
    """Sample ``phi_eps^(order)`` at the cell centres covering its support."""
    pe = phi.scaled(eps)
    if grid.dx > pe.width / 8 * (1 + 1e-12):
        raise ResolutionError(f"dx = {grid.dx} does not resolve eps * w = {pe.width} (need dx <= eps w / 8)")
    m = int(math.floor(pe.width / grid.dx + 1e-9))
    if 2 * m + 1 > grid.n_cells:
        raise ConfigurationError("kernel wider than the domain")
    x = np.arange(-m, m + 1) * grid.dx
    return SampledKernel(pe.derivative(order, x), grid.dx, m, pe.width, meta={"eps": eps, "order": order})


def _kernel_weights(kernel: SampledKernel, grid: LatticeGrid) -> np.ndarray:
    if abs(kernel.spacing - grid.dx) > 1e-12 * grid.dx:
        m = int(math.floor(kernel.support_radius / grid.dx + 1e-9))
        vals = kernel(np.arange(-m, m + 1) * grid.dx)
    else:
        vals = kernel.values
    if vals.size > grid.n_cells:
        raise ConfigurationError("kernel wider than the domain")
    return np.ascontiguousarray(vals * grid.dx)


def smooth_noise(slab: NoiseSlab, kernel: SampledKernel, step_index: int) -> np.ndarray:
    """Circular convolution of one step's increments with ``kernel``.

    The kernel is resampled at spacing ``dx`` if it was tabulated on another
    grid.  Returns ``dx * sum_j kernel(j dx) * xi[i - j]``.
    """
    w = _kernel_weights(kernel, slab.grid)
    xi = slab.increments(step_index, 1)[0]
    half = w.size // 2
    out = np.zeros_like(xi)
    for j in range(w.size):
        out += w[j] * np.roll(xi, j - half)
    return out


@dataclass(frozen=True)
class Equation:
    """One of ``mshe``, ``dshe``, ``ashe``, ``advection`` with its parameters."""

    kind: str
    sigma: float = 1.0
    eps: float = 1.0
    p: int = 1
    phi: Mollifier = field(default_factory=Mollifier)

    KINDS = ("mshe", "dshe", "ashe", "advection")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigurationError(f"unknown equation {self.kind!r}")
        if self.kind != "mshe":
            if self.eps <= 0:
                raise ConfigurationError("eps must be positive")
            self.phi.validate()
        if self.kind in ("ashe", "advection") and self.phi.l2_norm_sq() >= 1.0:
            raise InvalidMollifierError("the advective equations need ||phi||^2 < 1")
        if self.kind == "dshe" and self.p < 1:
            raise ConfigurationError("p must be at least 1")

    def coefficients(self) -> tuple[float, float]:
        if self.kind == "mshe":
            return self.sigma, 0.0
        if self.kind == "dshe":
            return self.eps ** (self.p - 0.25), 0.0
        if self.kind == "ashe":
            return 1.0, math.sqrt(self.eps)
        return 0.0, math.sqrt(self.eps)

    def kernel(self, grid: LatticeGrid) -> SampledKernel | None:
        if self.kind == "mshe":
            return None
        order = self.p if self.kind == "dshe" else 0
        return lattice_kernel(self.phi, self.eps, order, grid)

    def kernel_key(self) -> tuple:
        if self.kind == "mshe":
            return ("raw",)
        return (self.eps, self.p if self.kind == "dshe" else 0, self.phi)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "mshe":
            d["sigma"] = self.sigma
        else:
            d.update(eps=self.eps, phi_width=self.phi.width, phi_amplitude=self.phi.amplitude)
            if self.kind == "dshe":
                d["p"] = self.p
        return d


@dataclass
class LatticeRun:
    """Output of :func:`simulate`.

    ``observations[k]`` holds the functional evaluated at ``times[k]`` for
    every replica (first axis).  Fields are kept only when no functional is
    given.
    """

    grid: LatticeGrid
    equations: tuple
    times: tuple
    observations: list
    replicas: int
    seed: int
    clips: int
    cell_steps: int

    @property
    def clip_rate(self) -> float:
        return self.clips / max(self.cell_steps, 1)

    @property
    def valid(self) -> bool:
        return self.clip_rate <= MAX_CLIP_RATE


def dirac_fields(grid: LatticeGrid, sources: Sequence[float]) -> np.ndarray:
    """Lattice Dirac masses ``1/dx`` at the cells nearest to ``sources``."""
    out = np.zeros((len(sources), grid.n_cells))
    for s, x in enumerate(sources):
        out[s, grid.cell_index(x)] = 1.0 / grid.dx
    return out


def simulate(
    equations: Sequence[Equation] | Equation,
    grid: LatticeGrid,
    sources: Sequence[float] | np.ndarray,
    t: float | Sequence[float],
    replicas: int | Sequence[int],
    seed: int,
    s: float = 0.0,
    functional: Callable[[np.ndarray], np.ndarray] | None = None,
    noise: bool = True,
    batch: int = REPLICA_BATCH,
) -> LatticeRun:
    """Propagate Dirac (or given) initial data under shared noise.

    Parameters
    ----------
    equations : Equation or sequence of Equation
        Equations advanced side by side on the same noise; they must share
        the smoothing kernel (same kind of noise).
    grid : LatticeGrid
    sources : sequence of float, (S, n) array or (R, S, n) array
        Dirac source positions, explicit initial fields shared by all
        replicas, or one set of initial fields per replica.
    t : float or sequence of float
        Observation times (absolute, ``>= s``).
    replicas : int or sequence of int
        Replica indices (``range(replicas)`` for an int).
    seed : int
    s : float
        Start time; noise of steps ``s/dt, s/dt + 1, ...`` is used.
    functional : callable, optional
        Maps a batch of fields of shape ``(R, E, S, n)`` to per-replica
        results.  Defaults to returning the fields.
    noise : bool
        ``False`` runs the deterministic heat flow.

    Returns
    -------
    LatticeRun
    """
    eqs = (equations,) if isinstance(equations, Equation) else tuple(equations)
    if len({e.kernel_key() for e in eqs}) != 1:
        raise ConfigurationError("equations simulated together must share the noise kernel")
    reps = list(range(replicas)) if isinstance(replicas, int) else list(replicas)
    times = (t,) if np.isscalar(t) else tuple(t)
    if any(tt < s for tt in times) or list(times) != sorted(times):
        raise ConfigurationError("observation times must be sorted and not before the start")
    start = grid.steps(s)
    stops = [grid.steps(tt) for tt in times]
    init = np.asarray(sources, dtype=float)
    if init.ndim == 1:
        init = dirac_fields(grid, list(init))
    if init.ndim == 3 and init.shape[0] != len(reps):
        raise ConfigurationError("per-replica initial data does not match the replica count")
    S, n = init.shape[-2:]
    kernel = eqs[0].kernel(grid)
    smooth = kernel is not None
    weights = _kernel_weights(kernel, grid) if smooth else np.zeros(1)
    coef = np.array([e.coefficients() for e in eqs])
    if not noise:
        coef[:] = 0.0
    a = np.repeat(coef[:, 0], S)
    b = np.repeat(coef[:, 1], S)
    c_lap = grid.dt / (2 * grid.dx**2)
    floor = -(1.0 - 2 * c_lap)
    fn = functional if functional is not None else (lambda u: u.copy())
    E = len(eqs)
    scale = math.sqrt(grid.dt / grid.dx)
    inv2dx = 1 / (2 * grid.dx)

    def run(lo):
        chunk = reps[lo : lo + batch]
        R = len(chunk)
        base = init[lo : lo + batch, None] if init.ndim == 3 else init
        U = np.array(np.broadcast_to(base, (R, E, S, n)).reshape(R, E * S, n), order="C")
        xi = np.zeros((R, NOISE_BLOCK, n))
        counts = np.zeros(1, dtype=np.int64)
        out = []
        step = start
        loaded = -1
        for stop in stops:
            while step < stop:
                blk = step // NOISE_BLOCK
                if noise and blk != loaded:
                    noise_block(xi, seed, chunk, blk)
                    loaded = blk
                k0 = step - blk * NOISE_BLOCK
                k1 = min(NOISE_BLOCK, stop - blk * NOISE_BLOCK)
                advance(U, xi, k0, k1, weights, smooth, a, b, c_lap, inv2dx, floor, scale, counts)
                step += k1 - k0
            out.append(np.asarray(fn(U.reshape(R, E, S, n))))
        return out, int(counts[0])

    results = map_batches(run, range(0, len(reps), batch))
    observations = [np.concatenate([r[0][k] for r in results], axis=0) for k in range(len(times))]
    clips = sum(r[1] for r in results)
    cell_steps = len(reps) * E * S * n * (stops[-1] - start)
    return LatticeRun(grid, eqs, times, observations, len(reps), seed, clips, cell_steps)


# ---------------------------------------------------------------------------
# single-step operations on one field


@dataclass(frozen=True)
class PropagatorField:
    """Lattice approximation of ``Z_{s,t}(x_source, .)``."""

    grid: LatticeGrid
    s: float
    t: float
    x_source: float
    values: np.ndarray

    @classmethod
    def dirac(cls, grid: LatticeGrid, x_source: float, s: float = 0.0) -> "PropagatorField":
        return cls(grid, s, s, x_source, dirac_fields(grid, [x_source])[0])

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.dx)


def _one_step(f: PropagatorField, slab: NoiseSlab, eq: Equation, grid: LatticeGrid) -> PropagatorField:
    if slab.grid != grid or f.grid != grid:
        raise ConfigurationError("field, noise and grid disagree")
    kernel = eq.kernel(grid)
    weights = _kernel_weights(kernel, grid) if kernel is not None else np.zeros(1)
    a, b = eq.coefficients()
    k = grid.steps(f.t)
    xi = slab.increments(k, 1)[None, :, :]
    U = f.values.copy()[None, None, :]
    c_lap = grid.dt / (2 * grid.dx**2)
    counts = np.zeros(1, dtype=np.int64)
    advance(U, xi, 0, 1, weights, kernel is not None, np.array([a]), np.array([b]), c_lap, 1 / (2 * grid.dx),
            -(1.0 - 2 * c_lap), 1.0, counts)
    return replace(f, t=f.t + grid.dt, values=U[0, 0])


def step_mshe(f: PropagatorField, slab: NoiseSlab, sigma: float, grid: LatticeGrid) -> PropagatorField:
    """One Euler step of the white-noise multiplicative equation."""
    return _one_step(f, slab, Equation("mshe", sigma=sigma), grid)


def step_dshe(f: PropagatorField, slab: NoiseSlab, eps: float, p: int, phi: Mollifier, grid: LatticeGrid) -> PropagatorField:
    """One Euler step of the equation driven by ``eps^(p-1/4) d^p/dy^p`` of mollified noise."""
    return _one_step(f, slab, Equation("dshe", eps=eps, p=p, phi=phi), grid)


def step_ashe(f: PropagatorField, slab: NoiseSlab, eps: float, phi: Mollifier, grid: LatticeGrid) -> PropagatorField:
    """One Euler step of the multiplicative-plus-advective equation."""
    return _one_step(f, slab, Equation("ashe", eps=eps, phi=phi), grid)


def step_advection(f: PropagatorField, slab: NoiseSlab, eps: float, phi: Mollifier, grid: LatticeGrid) -> PropagatorField:
    """One Euler step of the conservative transport equation ``v_t = v''/2 + eps^(1/2) (v eta)'``."""
    return _one_step(f, slab, Equation("advection", eps=eps, phi=phi), grid)


# ---------------------------------------------------------------------------
# reference solutions and identities


def heat_kernel(t: float, x, variance_rate: float = 1.0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    v = variance_rate * t
    return np.exp(-(x**2) / (2 * v)) / math.sqrt(2 * math.pi * v)


def periodic_heat_kernel(grid: LatticeGrid, x_source: float, t: float, images: int = 3) -> np.ndarray:
    y = grid.x - grid.x[grid.cell_index(x_source)]
    period = 2 * grid.half_width
    return sum(heat_kernel(t, y + m * period) for m in range(-images, images + 1))


def discrete_heat_kernel(grid: LatticeGrid, x_source: float, t: float) -> np.ndarray:
    """Exact noiseless scheme output, computed in Fourier space."""
    n = grid.n_cells
    k = np.fft.rfftfreq(n) * 2 * np.pi
    c = grid.dt / (2 * grid.dx**2)
    mult = (1 - 2 * c * (1 - np.cos(k))) ** grid.steps(t)
    init = dirac_fields(grid, [x_source])[0]
    return np.fft.irfft(np.fft.rfft(init) * mult, n)


def propagator_compose_residual(Z_st: np.ndarray, Z_tu: np.ndarray, Z_su: np.ndarray, grid: LatticeGrid) -> float:
    """Relative L2 distance between ``Z_su(x, .)`` and ``dx sum_y Z_st(x, y) Z_tu(y, .)``.

    ``Z_st`` and ``Z_su`` are fields over cells; ``Z_tu`` is the matrix whose
    row ``y`` is the propagator started from cell ``y``.
    """
    Z_st = np.asarray(Z_st)
    Z_tu = np.asarray(Z_tu)
    Z_su = np.asarray(Z_su)
    n = grid.n_cells
    if Z_st.shape != (n,) or Z_su.shape != (n,) or Z_tu.shape != (n, n):
        raise ConfigurationError("propagators are not on the given grid")
    composed = grid.dx * (Z_st @ Z_tu)
    return float(np.linalg.norm(composed - Z_su) / np.linalg.norm(Z_su))


def propagator_triple(grid: LatticeGrid, equation: Equation, x: float, s: float, t: float, u: float,
                      replica: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``Z_st(x, .)``, the matrix ``Z_tu(y, .)`` over all cells ``y`` and ``Z_su(x, .)``, on one noise path."""
    first = simulate(equation, grid, [x], [t, u], [replica], seed, s=s)
    Z_st = first.observations[0][0, 0, 0]
    Z_su = first.observations[1][0, 0, 0]
    eye = np.eye(grid.n_cells) / grid.dx
    Z_tu = simulate(equation, grid, eye, u, [replica], seed, s=t).observations[0][0, 0]
    return Z_st, Z_tu, Z_su


def lattice_moment(equation: Equation, grid: LatticeGrid, t: float, psi: Callable, n: int,
                   replicas: int, seed: int, source: float = 0.0) -> MomentEstimate:
    """``E (U_t, psi)^n`` for coincident Dirac sources at ``source``."""
    run = simulate(equation, grid, [source], t, replicas, seed,
                   functional=lambda U: grid.pair(U[:, 0, 0], psi))
    vals = run.observations[0] ** n
    return MomentEstimate.from_samples(vals, seed=seed, clip_rate=run.clip_rate, valid=run.valid)


@dataclass(frozen=True)
class TiltResult:
    direct: MomentEstimate
    tilted: MomentEstimate
    shift_cells: int


def tilt_shift_cells(eps: float, t: float, grid: LatticeGrid) -> int:
    shift = t / math.sqrt(eps) / grid.dx
    if abs(shift - round(shift)) > 1e-9:
        raise ConfigurationError(f"shift eps^(-1/2) t / dx = {shift} is not an integer")
    return int(round(shift))


def tilt_transform(v: np.ndarray, eps: float, t: float, grid: LatticeGrid) -> np.ndarray:
    """``exp(t/(2 eps) - y/sqrt(eps)) * v(y - t/sqrt(eps))`` on the lattice (last axis)."""
    if t / (2 * eps) > 600:
        raise ConfigurationError("tilt factor overflows")
    m = tilt_shift_cells(eps, t, grid)
    shifted = np.roll(v, m, axis=-1)
    return np.exp(t / (2 * eps) - grid.x / math.sqrt(eps)) * shifted


def tilt_identity_check(eps: float, phi: Mollifier, t: float, test_fn: Callable, replicas: int, seed: int,
                        grid: LatticeGrid | None = None, moment: int = 1) -> TiltResult:
    """Estimate ``E (u_t, psi)^moment`` for the advective equation directly and via the transport equation.

    The transport field ``v`` is tilted by ``exp(t/(2 eps) - y/sqrt(eps))``
    and shifted by ``t/sqrt(eps)``.  The two routes use independent seeds.
    """
    if grid is None:
        grid = LatticeGrid.for_run(t, dx=eps * phi.width / 8, eps=eps, width=phi.width)
    tilt_shift_cells(eps, t, grid)
    direct = lattice_moment(Equation("ashe", eps=eps, phi=phi), grid, t, test_fn, moment, replicas, seed)
    run = simulate(Equation("advection", eps=eps, phi=phi), grid, [0.0], t, replicas, seed + 1,
                   functional=lambda V: grid.pair(tilt_transform(V[:, 0, 0], eps, t, grid), test_fn))
    tilted = MomentEstimate.from_samples(run.observations[0] ** moment, seed=seed + 1)
    return TiltResult(direct, tilted, tilt_shift_cells(eps, t, grid))


def _noise_covariance(equation: Equation, grid: LatticeGrid) -> np.ndarray:
    """Cell-by-cell covariance of one step's (smoothed) increments."""
    n = grid.n_cells
    kernel = equation.kernel(grid)
    if kernel is None:
        return np.eye(n) * grid.dt / grid.dx
    w = _kernel_weights(kernel, grid)
    auto = np.correlate(w, w, mode="full")
    half = w.size - 1
    row = np.zeros(n)
    for d in range(-half, half + 1):
        row[d % n] += auto[half + d]
    idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
    return row[idx] * grid.dt / grid.dx


def lattice_second_moment(equation: Equation, grid: LatticeGrid, t: float, psi: Callable,
                          sources: tuple[float, float] = (0.0, 0.0)) -> float:
    """Exact ``E (U^1_t, psi)(U^2_t, psi)`` of the scheme without Monte Carlo.

    Propagates ``M = E[U^1 U^2^T]`` through ``M <- P M P^T + A (M o C) A^T``
    where ``P`` is the heat step, ``C`` the increment covariance and
    ``A = a I + b D``.  The increment floor is ignored, which is exact as
    long as no clipping occurs.
    """
    a, b = equation.coefficients()
    C = _noise_covariance(equation, grid)
    c = grid.dt / (2 * grid.dx**2)
    k = b / (2 * grid.dx)

    def heat(m, axis):
        return (1 - 2 * c) * m + c * (np.roll(m, 1, axis) + np.roll(m, -1, axis))

    def mult(m, axis):
        # (a I + b D) applied along ``axis``; (D u)_i = (u_{i+1} - u_{i-1}) / (2 dx)
        out = a * m
        if k != 0.0:
            out = out + k * (np.roll(m, -1, axis) - np.roll(m, 1, axis))
        return out

    d = dirac_fields(grid, list(sources))
    M = np.outer(d[0], d[1])
    for _ in range(grid.steps(t)):
        MC = M * C
        M = heat(heat(M, 0), 1) + mult(mult(MC, 0), 1)
    v = psi(grid.x) * grid.dx
    return float(v @ M @ v)
