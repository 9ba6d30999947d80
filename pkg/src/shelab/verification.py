"""Statistical checks that a simulated flow behaves like a propagator of a stochastic heat equation.

Three properties are probed on lattice flows: independence over disjoint
time intervals, the composition identity obtained by gluing two propagators
through a narrow kernel, and agreement of moments with a particle oracle.
A geometric Brownian flow, for which everything is explicit, serves as a
toy model for the moment formula and the quadratic-variation limit.

Every check returns :class:`TestVerdict` objects whose outcome is a
deterministic function of the seed and the parameters.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats as _st

from . import rng
from .errors import ConfigurationError, ResolutionError
from .lattice import Equation, LatticeGrid, simulate
from .mollifier import Mollifier
from .stats import MomentEstimate, pearson_with_stderr, z_between

PASS = "PASS"
FAIL = "FAIL"
INCONCLUSIVE = "INCONCLUSIVE"

Z_THRESHOLD = 3.0


def bonferroni_threshold(probes: int, base: float = Z_THRESHOLD) -> float:
    """Two-sided z threshold keeping the family-wise error of ``probes`` tests at that of one ``base``-sigma test."""
    if probes < 1:
        raise ValueError("need at least one probe")
    alpha = 2 * _st.norm.sf(base) / probes
    return float(_st.norm.isf(alpha / 2))


@dataclass(frozen=True)
class TestVerdict:
    """Outcome of one statistical check.

    ``verdict`` is PASS when ``statistic <= threshold`` unless a check sets
    it otherwise (trend checks, effective-sample-size floors).
    """

    __test__ = False

    name: str
    statistic: float
    threshold: float
    verdict: str
    replicas: int
    seed: int
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_dict(self) -> dict:
        return asdict(self)


def _verdict(name, statistic, threshold, replicas, seed, **details) -> TestVerdict:
    v = PASS if abs(statistic) <= threshold else FAIL
    return TestVerdict(name, float(statistic), float(threshold), v, int(replicas), int(seed), details)


# ---------------------------------------------------------------------------
# geometric Brownian flow


@dataclass(frozen=True)
class GbfPath:
    """Geometric Brownian flow ``G_{s,t} = exp(B_t - B_s)`` on a uniform grid.

    Attributes
    ----------
    brownian : (R, N + 1) array
        Driving Brownian paths, one row per replica, with ``B_0 = 0``.
    horizon : float
    """

    brownian: np.ndarray
    horizon: float

    @classmethod
    def sample(cls, horizon: float, steps: int, replicas: int, seed: int) -> "GbfPath":
        dt = horizon / steps
        inc = rng.replica_normals(seed, rng.VERIFY, range(replicas), (steps,)) * math.sqrt(dt)
        B = np.zeros((replicas, steps + 1))
        np.cumsum(inc, axis=1, out=B[:, 1:])
        return cls(B, horizon)

    @property
    def steps(self) -> int:
        return self.brownian.shape[1] - 1

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def flow(self, i: int, j: int) -> np.ndarray:
        """``G`` between grid indices ``i <= j`` for every replica."""
        return np.exp(self.brownian[:, j] - self.brownian[:, i])

    def multiplicativity_error(self, i: int, j: int, k: int) -> float:
        """Largest relative deviation of ``G_{ij} G_{jk}`` from ``G_{ik}``."""
        lhs = self.flow(i, j) * self.flow(j, k)
        rhs = self.flow(i, k)
        return float(np.max(np.abs(lhs - rhs) / rhs))


def gbf_moment_check(t_minus_s: float, n_max: int = 4, replicas: int = 100_000, seed: int = 0,
                     exponent_scale: float = 1.0) -> list[TestVerdict]:
    """Compare replica means of ``G_{s,t}^n`` with ``exp(n^2 (t - s) / 2)`` for ``n = 1..n_max``.

    ``exponent_scale`` multiplies the target exponent and exists for
    negative controls.
    """
    if n_max > 6 or n_max < 1:
        raise ConfigurationError("n_max must be between 1 and 6")
    if not 0.0 <= t_minus_s <= 1.0:
        raise ConfigurationError("t - s must lie in [0, 1]")
    G = GbfPath.sample(t_minus_s, 1, replicas, seed).flow(0, 1)
    out = []
    for n in range(1, n_max + 1):
        target = math.exp(exponent_scale * n * n * t_minus_s / 2)
        est = MomentEstimate.from_samples(G**n, seed=seed)
        z = z_between(est, target)
        if est.stderr == 0.0:
            z = 0.0 if abs(est.mean - target) <= 1e-12 * target else math.inf
        out.append(_verdict(f"gbf_moment_n{n}", z, Z_THRESHOLD, replicas, seed,
                            n=n, estimate=est.mean, stderr=est.stderr, target=target))
    return out


@dataclass(frozen=True)
class QvLadder:
    meshes: tuple
    residuals: tuple
    stderrs: tuple
    verdict: TestVerdict


def gbf_qv_partition(horizon: float = 1.0, levels: Sequence[int] = range(4, 11), replicas: int = 4000,
                     seed: int = 0, zero_noise: bool = False) -> QvLadder:
    """Mean-square gap between the discrete quadratic variation and its compensator.

    For ``X_t = exp(-t/2) G_{0,t}`` and partitions of mesh ``2^-k`` the
    estimated quantity is ``E[(sum (dX)^2 - sum X^2 dt)^2]``.  All meshes
    are read off the same finest-level paths.  With ``zero_noise`` the path
    is ``X = 1`` and the residual equals ``horizon^2`` exactly.

    The verdict passes when each residual is at most the previous one plus
    two standard errors and the finest is below a quarter of the coarsest.
    """
    levels = sorted(levels)
    if levels[0] < 1:
        raise ConfigurationError("mesh levels must be positive")
    finest = levels[-1]
    steps = horizon * 2**finest
    if abs(steps - round(steps)) > 1e-9:
        raise ConfigurationError("horizon must be a multiple of the finest mesh")
    steps = int(round(steps))
    if zero_noise:
        X = np.ones((replicas, steps + 1))
    else:
        path = GbfPath.sample(horizon, steps, replicas, seed)
        t = np.linspace(0.0, horizon, steps + 1)
        X = np.exp(path.brownian - t / 2)
    res, errs, meshes = [], [], []
    for k in levels:
        stride = 2 ** (finest - k)
        Xk = X[:, ::stride]
        h = 2.0**-k
        gap = np.sum(np.diff(Xk, axis=1) ** 2, axis=1) - h * np.sum(Xk[:, :-1] ** 2, axis=1)
        est = MomentEstimate.from_samples(gap**2, seed=seed)
        res.append(est.mean)
        errs.append(est.stderr)
        meshes.append(h)
    monotone = all(res[i + 1] <= res[i] + 2 * errs[i] for i in range(len(res) - 1))
    ratio = res[-1] / res[0] if res[0] > 0 else math.inf
    ok = monotone and ratio < 0.25
    verdict = TestVerdict("gbf_qv_partition", ratio, 0.25, PASS if ok else FAIL, replicas, seed,
                          {"monotone": monotone, "residuals": res})
    return QvLadder(tuple(meshes), tuple(res), tuple(errs), verdict)


# ---------------------------------------------------------------------------
# lattice flows


def _pairing(equation: Equation, grid: LatticeGrid, phi_fn: Callable, psi: Callable, s: float, t: float,
             replicas: int, seed: int) -> np.ndarray:
    """``(Z_{s,t}, phi (x) psi)`` per replica, by propagating the initial field ``phi``."""
    init = phi_fn(grid.x)[None, :]
    run = simulate(equation, grid, init, t, replicas, seed, s=s,
                   functional=lambda U: grid.pair(U[:, 0, 0], psi))
    return run.observations[0]


def independence_test(equation: Equation, grid: LatticeGrid, first: tuple[float, float],
                      second: tuple[float, float], phi_fn: Callable, psi: Callable, replicas: int, seed: int,
                      f: Callable = np.tanh, g: Callable = np.tanh) -> TestVerdict:
    """Correlation of bounded functionals of the flow over two time intervals.

    Both intervals read the same noise realization; independence must come
    from the intervals being disjoint.  Passing the same interval twice is
    the degenerate control and fails; partially overlapping intervals are
    rejected.
    """
    (s1, t1), (s2, t2) = first, second
    if not (s1 < t1 and s2 < t2):
        raise ConfigurationError("intervals must have positive length")
    if (s1, t1) != (s2, t2) and max(s1, s2) < min(t1, t2):
        raise ConfigurationError(f"intervals {first} and {second} overlap")
    a = f(_pairing(equation, grid, phi_fn, psi, s1, t1, replicas, seed))
    b = g(_pairing(equation, grid, phi_fn, psi, s2, t2, replicas, seed))
    r, se = pearson_with_stderr(a, b)
    return _verdict("independence", r / se, Z_THRESHOLD, replicas, seed, correlation=r, stderr=se,
                    first=list(first), second=list(second))


@dataclass(frozen=True)
class CompositionLadder:
    deltas: tuple
    residuals: tuple
    stderrs: tuple
    relative: tuple
    verdict: TestVerdict


def _narrow_kernel(delta: float, grid: LatticeGrid) -> np.ndarray:
    """Weights ``dx * psi_delta(j dx)`` of a unit-mass bump of half-width ``delta``, summing to one."""
    m = int(math.floor(delta / grid.dx + 1e-9))
    w = Mollifier().scaled(delta)(np.arange(-m, m + 1) * grid.dx)
    return w / w.sum()


def _circular_convolve(U: np.ndarray, w: np.ndarray) -> np.ndarray:
    half = w.size // 2
    out = np.zeros_like(U)
    for j in range(w.size):
        out += w[j] * np.roll(U, j - half, axis=-1)
    return out


def composition_test(equation: Equation, grid: LatticeGrid, s: float, t: float, u: float, f_left: Callable,
                     f_right: Callable, deltas: Sequence[float] | None = None, replicas: int = 200, seed: int = 0,
                     seed_whole: int | None = None, noise: bool = True, max_relative: float = 0.1) -> CompositionLadder:
    """Glue ``Z_{s,t}`` and ``Z_{t,u}`` through a narrow kernel and compare with ``Z_{s,u}``.

    With ``f(x, z) = f_left(x) f_right(z)`` the glued quantity is
    ``int psi_delta(y1 - y2) f(x, z) Z_{s,t}(x, y1) Z_{t,u}(y2, z)`` and the
    target ``int f(x, z) Z_{s,u}(x, z)``.  By linearity both sides need one
    field per replica: the time-``t`` field is smoothed by ``psi_delta`` and
    propagated on to ``u``.

    The verdict passes when the mean-square residual does not grow as
    ``delta`` shrinks (within two combined standard errors) and, at the
    smallest ``delta``, is at most ``max_relative`` times the mean square of
    the target.  ``seed_whole`` draws ``Z_{s,u}`` from another noise
    realization, which must fail.
    """
    if not s < t < u:
        raise ConfigurationError("need s < t < u")
    deltas = sorted(deltas if deltas is not None else [4 * grid.dx, 8 * grid.dx, 16 * grid.dx], reverse=True)
    if min(deltas) < 2 * grid.dx * (1 - 1e-12):
        raise ResolutionError(f"delta = {min(deltas)} is below 2 dx = {2 * grid.dx}")
    seed_whole = seed if seed_whole is None else seed_whole
    init = f_left(grid.x)[None, :]
    mid = simulate(equation, grid, init, t, replicas, seed, s=s, noise=noise).observations[0][:, 0, 0]
    whole = simulate(equation, grid, init, u, replicas, seed_whole, s=s, noise=noise,
                     functional=lambda U: grid.pair(U[:, 0, 0], f_right)).observations[0]
    target_ms = float(np.mean(whole**2))
    res, errs, rel = [], [], []
    for d in deltas:
        glued_init = _circular_convolve(mid, _narrow_kernel(d, grid))[:, None, :]
        glued = simulate(equation, grid, glued_init, u, replicas, seed, s=t, noise=noise,
                         functional=lambda U: grid.pair(U[:, 0, 0], f_right)).observations[0]
        sq = (glued - whole) ** 2
        if noise:
            est = MomentEstimate.from_samples(sq, seed=seed)
            res.append(est.mean)
            errs.append(est.stderr)
        else:
            res.append(float(sq[0]))
            errs.append(0.0)
        rel.append(res[-1] / target_ms if target_ms > 0 else math.inf)
    # deltas run from wide to narrow; the residual must not grow
    monotone = all(res[i + 1] <= res[i] + 2 * math.hypot(errs[i], errs[i + 1]) for i in range(len(res) - 1))
    ok = monotone and rel[-1] <= max_relative
    verdict = TestVerdict("composition", rel[-1], max_relative, PASS if ok else FAIL, replicas, seed,
                          {"monotone": monotone, "deltas": deltas, "residuals": res, "seed_whole": seed_whole})
    return CompositionLadder(tuple(deltas), tuple(res), tuple(errs), tuple(rel), verdict)


def compare_estimates(name: str, estimate: MomentEstimate, oracle: MomentEstimate | float,
                      threshold: float = Z_THRESHOLD, ess_floor: float = 0.1) -> TestVerdict:
    """Two-sample z test; INCONCLUSIVE when either side's effective sample size is below ``ess_floor * replicas``."""
    z = z_between(estimate, oracle)
    details = {"estimate": estimate.mean, "stderr": estimate.stderr}
    ess_ok = estimate.ess >= ess_floor * estimate.replicas
    if isinstance(oracle, MomentEstimate):
        details.update(oracle=oracle.mean, oracle_stderr=oracle.stderr)
        ess_ok = ess_ok and oracle.ess >= ess_floor * oracle.replicas
    else:
        details["oracle"] = float(oracle)
    if not ess_ok:
        return TestVerdict(name, z, threshold, INCONCLUSIVE, estimate.replicas, estimate.seed or 0, details)
    return _verdict(name, z, threshold, estimate.replicas, estimate.seed or 0, **details)


def moment_match_test(equation: Equation, grid: LatticeGrid, n: int, test_fn: Callable,
                      oracle: MomentEstimate | float, t: float, replicas: int, seed: int,
                      sources: Sequence[float] | None = None, ess_floor: float = 0.1) -> TestVerdict:
    """Compare ``E prod_i (Z_{0,t}(x_i, .), test_fn)`` on the lattice with an oracle value.

    ``sources`` defaults to ``n`` coincident points at the origin.
    """
    if not 1 <= n <= 4:
        raise ConfigurationError("n must be between 1 and 4")
    sources = [0.0] * n if sources is None else list(sources)
    if len(sources) != n:
        raise ConfigurationError("need one source per factor")
    distinct = sorted(set(sources))
    run = simulate(equation, grid, distinct, t, replicas, seed,
                   functional=lambda U: grid.pair(U[:, 0], test_fn))
    pairs = run.observations[0]
    prod = np.prod([pairs[:, distinct.index(x)] for x in sources], axis=0)
    est = MomentEstimate.from_samples(prod, seed=seed, clip_rate=run.clip_rate)
    if not run.valid:
        return TestVerdict(f"moment_n{n}", z_between(est, oracle), Z_THRESHOLD, INCONCLUSIVE, replicas, seed,
                           {"reason": "increment floor active", "clip_rate": run.clip_rate})
    return compare_estimates(f"moment_n{n}", est, oracle, ess_floor=ess_floor)
