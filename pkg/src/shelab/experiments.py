"""Experiment configurations and the runners behind the command-line interface.

A configuration is a JSON object with a ``kind`` (``constants``,
``simulate``, ``oracle``, ``verify`` or ``convergence``), a ``master_seed``
and kind-specific sections.  Everything derivable is validated before any
work starts.  Each runner returns a list of :class:`ResultRecord`.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import particles as pt
from .errors import ConfigurationError, EmptySuiteError, InvalidMollifierError
from .functionals import PAIR_TEST, STANDARD_FAMILY, BumpTest, test_function_from_dict
from .lattice import Equation, LatticeGrid, simulate
from .mollifier import Mollifier, gamma_ext_squared, kernel_at_zero, psi_profile, sigma_p_squared, theta
from .records import ResultRecord, config_hash, write_columns, write_manifest, write_snapshot
from .stats import MomentEstimate
from . import verification as vf

KINDS = ("constants", "simulate", "oracle", "verify", "convergence")
ORACLES = ("closed_form", "levy", "quadrature", "bm_local_time", "bm_exponent", "diff", "sing", "girsanov",
           "coupling")


def mollifier_from_dict(d: dict | None) -> Mollifier:
    d = d or {}
    if "l2_norm_sq" in d:
        return Mollifier.with_l2_norm_sq(float(d["l2_norm_sq"]))
    return Mollifier(float(d.get("width", 1.0)), float(d.get("amplitude", 1.0)))


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigurationError(f"missing {key!r} in {where}")
    return d[key]


@dataclass
class ExperimentConfig:
    """Parsed and validated experiment configuration.

    ``raw`` keeps the JSON object as given; its hash labels every record.
    """

    kind: str
    master_seed: int
    mollifier: Mollifier
    raw: dict
    out: Path = field(default_factory=lambda: Path("shelab-out"))

    @classmethod
    def from_dict(cls, d: dict, out: str | Path | None = None) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("configuration must be a JSON object")
        kind = _require(d, "kind", "configuration")
        if kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {kind!r}")
        seed = int(d.get("master_seed", 0))
        if seed < 0:
            raise ConfigurationError("master_seed must be non-negative")
        phi = mollifier_from_dict(d.get("mollifier"))
        cfg = cls(kind, seed, phi, d, Path(out) if out is not None else Path("shelab-out"))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path, out: str | Path | None = None) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except FileNotFoundError as e:
            raise ConfigurationError(f"configuration file {path} not found") from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"configuration file {path} is not valid JSON: {e}") from e
        return cls.from_dict(d, out)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def validate(self) -> None:
        self.mollifier.validate()
        check = getattr(self, f"_validate_{self.kind}")
        check()

    def _validate_constants(self):
        if int(self.raw.get("p", 1)) < 1:
            raise ConfigurationError("p must be at least 1")

    def _validate_simulate(self):
        eq = self.equation(_require(self.raw, "equation", "simulate configuration"))
        grid = self.grid(eq)
        eq.kernel(grid)
        for t in self.times():
            grid.steps(t)

    def _validate_oracle(self):
        name = _require(self.raw, "oracle", "oracle configuration")
        if name not in ORACLES:
            raise ConfigurationError(f"unknown oracle {name!r}")
        if name in ("sing", "girsanov", "coupling"):
            self._subunit()
        if name == "coupling" and "dt_eps" in self.raw:
            eps = float(_require(self.raw, "eps", "oracle configuration"))
            if abs(float(self.raw["dt_eps"]) - eps * eps * float(self.raw.get("dt_unit", 1e-3))) > 1e-15:
                raise ConfigurationError("the coupling needs dt_eps = eps^2 * dt_unit")

    def _validate_verify(self):
        suite = self.raw.get("suite", "default")
        if suite != "default" and not suite:
            raise EmptySuiteError("the verification suite is empty")
        if suite != "default":
            for entry in suite:
                if entry.get("test") not in SUITE_TESTS:
                    raise ConfigurationError(f"unknown verification test {entry.get('test')!r}")

    def _validate_convergence(self):
        chain = _require(self.raw, "chain", "convergence configuration")
        if chain not in ("dshe", "ashe"):
            raise ConfigurationError("chain must be 'dshe' or 'ashe'")
        ladder = [float(e) for e in _require(self.raw, "eps_ladder", "convergence configuration")]
        if not ladder or any(e <= 0 for e in ladder):
            raise ConfigurationError("eps ladder must be non-empty and positive")
        if ladder != sorted(ladder, reverse=True):
            raise ConfigurationError("eps ladder must be descending")
        if chain == "ashe":
            self._subunit()

    def _subunit(self):
        if kernel_at_zero(self.mollifier) >= 1.0:
            raise InvalidMollifierError("this experiment needs ||phi||^2 < 1")

    # section parsers

    def equation(self, d: dict) -> Equation:
        kind = _require(d, "kind", "equation")
        return Equation(kind, sigma=float(d.get("sigma", 1.0)), eps=float(d.get("eps", 1.0)),
                        p=int(d.get("p", 1)), phi=self.mollifier)

    def times(self) -> list[float]:
        if "times" in self.raw:
            return [float(t) for t in self.raw["times"]]
        return [float(self.raw.get("t", 0.5))]

    def grid(self, eq: Equation) -> LatticeGrid:
        g = self.raw.get("grid", {})
        eps = eq.eps if eq.kind != "mshe" else 0.0
        return LatticeGrid.for_run(max(self.times()), dx=float(g.get("dx", 0.025)), eps=eps,
                                   width=self.mollifier.width, half_width=g.get("half_width"))


# ---------------------------------------------------------------------------
# runners


def _record(cfg: ExperimentConfig, op: str, params: dict, payload: dict, t0: float, est: MomentEstimate | None = None,
            seed: int | None = None, replicas: int | None = None, **extra) -> ResultRecord:
    return ResultRecord(
        config_hash=cfg.hash, operation=op, parameters=params, payload=payload,
        stderr=None if est is None else est.stderr,
        replicas=est.replicas if est is not None else replicas,
        seed=cfg.master_seed if seed is None else seed,
        wall_time=time.perf_counter() - t0, extra=extra,
    )


def run_constants(cfg: ExperimentConfig) -> list[ResultRecord]:
    phi = cfg.mollifier
    p = int(cfg.raw.get("p", 1))
    t0 = time.perf_counter()
    recs = [
        _record(cfg, "theta", {}, {"value": theta(phi)}, t0),
        _record(cfg, "phi_l2_norm_sq", {}, {"value": kernel_at_zero(phi)}, t0),
        _record(cfg, "sigma_p_sq", {"p": p}, {"value": sigma_p_squared(phi, p)}, t0),
    ]
    if kernel_at_zero(phi) < 1.0:
        t0 = time.perf_counter()
        g = gamma_ext_squared(phi)
        prof = psi_profile(phi)
        rel = abs(prof.right_slope - g) / g
        recs.append(_record(cfg, "gamma_ext_sq", {}, {"value": g, "exceeds_one": g > 1.0}, t0))
        recs.append(_record(cfg, "psi_slope", {}, {"value": prof.right_slope, "relative_error": rel,
                                                   "matches": rel <= 1e-8}, t0))
        cfg.out.mkdir(parents=True, exist_ok=True)
        write_columns(cfg.out / "psi_profile.dat", prof.grid, prof.values, ("y", "psi"))
        write_manifest(cfg.out, {"psi_profile.dat": "solution of Psi'' = Phi/(1 - Phi) on [-2w, 2w]"})
    return recs


def run_simulate(cfg: ExperimentConfig) -> list[ResultRecord]:
    """Moments of ``(U_t, psi)`` over replicas for each time and test function, plus field snapshots."""
    eq = cfg.equation(cfg.raw["equation"])
    grid = cfg.grid(eq)
    times = cfg.times()
    sources = [float(x) for x in cfg.raw.get("sources", [0.0])]
    replicas = int(cfg.raw.get("replicas", 64))
    tests = [test_function_from_dict(d) for d in cfg.raw.get("test_functions", [])] or list(STANDARD_FAMILY)
    keep = int(cfg.raw.get("snapshots", 1))
    t0 = time.perf_counter()
    snaps: dict[int, np.ndarray] = {}

    def functional(U):
        return np.stack([grid.pair(U[:, 0], psi) for psi in tests], axis=-1)

    run = simulate(eq, grid, sources, times, replicas, cfg.master_seed, functional=functional)
    if keep > 0:
        fields = simulate(eq, grid, sources, times, min(keep, replicas), cfg.master_seed)
        for k, t in enumerate(times):
            snaps[k] = fields.observations[k][:, 0]
    recs = []
    files = {}
    cfg.out.mkdir(parents=True, exist_ok=True)
    for k, t in enumerate(times):
        obs = run.observations[k]  # (R, S, T)
        for j, psi in enumerate(tests):
            for s, x in enumerate(sources):
                vals = obs[:, s, j]
                for n in (1, 2):
                    est = MomentEstimate.from_samples(vals**n, seed=cfg.master_seed)
                    recs.append(_record(cfg, "lattice_moment",
                                        {"equation": eq.to_dict(), "grid": grid.to_dict(), "t": t, "source": x,
                                         "test_function": psi.to_dict(), "n": n},
                                        {"mean": est.mean}, t0, est, clip_rate=run.clip_rate, valid=run.valid))
        if k in snaps:
            name = f"field_t{k}.bin"
            write_snapshot(cfg.out / name, snaps[k], {"equation": eq.to_dict(), "grid": grid.to_dict(), "t": t,
                                                       "sources": sources, "seed": cfg.master_seed,
                                                       "config_hash": cfg.hash})
            files[name] = f"fields at t = {t}, shape (replicas, sources, cells)"
            mean_name = f"mean_field_t{k}.dat"
            write_columns(cfg.out / mean_name, grid.x, snaps[k][:, 0].mean(axis=0), ("y", "field"))
            files[mean_name] = f"replica mean of the first source's field at t = {t}"
    if files:
        write_manifest(cfg.out, files)
    return recs


def _test_fn(raw: dict):
    return test_function_from_dict(raw["test_function"]) if "test_function" in raw else PAIR_TEST


def run_oracle(cfg: ExperimentConfig) -> list[ResultRecord]:
    r = cfg.raw
    name = r["oracle"]
    phi = cfg.mollifier
    n = int(r.get("n", 2))
    x = r.get("x", [0.0] * n)
    t = float(r.get("t", 0.5))
    eps = float(r.get("eps", 0.2))
    reps = int(r.get("replicas", 10_000))
    dt_p = r.get("dt_p")
    seed = cfg.master_seed
    psi = _test_fn(r)
    params = {"oracle": name, "n": n, "x": x, "t": t}
    t0 = time.perf_counter()
    est = None
    if name in ("closed_form", "levy", "quadrature"):
        gamma = float(_require(r, "gamma", "oracle configuration"))
        conv = r.get("convention", "occupation")
        params.update(gamma=gamma, convention=conv)
        if name == "closed_form":
            value = pt.pair_moment_closed_form(t, gamma, conv)
        elif name == "levy":
            value = pt.levy_pair_moment(t, gamma, conv)
        else:
            value = pt.pair_moment_quadrature(t, gamma, psi, float(x[0]), conv)
        return [_record(cfg, "oracle", params, {"value": value}, t0)]
    if name == "coupling":
        res = pt.rescale_coupling_check(n, x, t, eps, phi, seed, float(r.get("dt_unit", 1e-3)),
                                        r.get("seed_eps"), r.get("dt_eps"))
        params.update(eps=eps)
        return [_record(cfg, "coupling", params, {"discrepancy": res.discrepancy, "sup_norm": res.sup_norm,
                                                  "relative": res.relative, "steps": res.steps}, t0)]
    params.update(eps=eps, dt_p=dt_p)
    if name == "bm_local_time":
        gamma = float(_require(r, "gamma", "oracle configuration"))
        est = pt.bm_local_time_moment(n, x, t, gamma, psi, dt_p=dt_p or 1e-3, replicas=reps, seed=seed,
                                      convention=r.get("convention", "occupation"))
        params.update(gamma=gamma)
    elif name == "bm_exponent":
        est = pt.bm_phi_exponent_moment(n, x, t, eps, int(r.get("p", 1)), phi, psi, dt_p, reps, seed)
    elif name == "diff":
        est = pt.diff_eps_moment(n, x, t, eps, int(r.get("p", 1)), phi, psi, dt_p, reps, seed)
    elif name == "sing":
        est = pt.sing_eps_moment(n, x, t, eps, phi, psi, dt_p, reps, seed)
    else:
        est = pt.girsanov_reweighted_moment(n, x, t, eps, phi, pt.product_functional(psi), dt_p, reps, seed)
    return [_record(cfg, "oracle", params, {"mean": est.mean, "ess": est.ess}, t0, est,
                    diagnostics=est.diagnostics)]


# ---------------------------------------------------------------------------
# verification suites


def _suite_grid(p: dict, eq: Equation, t_max: float) -> LatticeGrid:
    eps = 0.0 if eq.kind == "mshe" else eq.eps
    return LatticeGrid.for_run(t_max, dx=float(p.get("dx", 0.05)), eps=eps, width=eq.phi.width,
                               half_width=p.get("half_width"))


def _suite_equation(p: dict, phi: Mollifier) -> Equation:
    return Equation(p.get("equation", "mshe"), sigma=float(p.get("sigma", 1.0)), eps=float(p.get("eps", 1.0)),
                    p=int(p.get("p", 1)), phi=phi)


def _t_gbf_moment(p, phi, seed):
    return vf.gbf_moment_check(float(p.get("t_minus_s", 0.25)), int(p.get("n_max", 4)),
                               int(p.get("replicas", 100_000)), seed, float(p.get("exponent_scale", 1.0)))


def _t_gbf_qv(p, phi, seed):
    return [vf.gbf_qv_partition(float(p.get("horizon", 1.0)), p.get("levels", list(range(4, 11))),
                                int(p.get("replicas", 4000)), seed).verdict]


def _t_independence(p, phi, seed):
    eq = _suite_equation(p, phi)
    first, second = tuple(p.get("first", (0.0, 0.25))), tuple(p.get("second", (0.25, 0.5)))
    grid = _suite_grid(p, eq, max(first[1], second[1]))
    return [vf.independence_test(eq, grid, first, second, BumpTest(0.0, 1.5), BumpTest(0.0, 1.5),
                                 int(p.get("replicas", 400)), seed)]


def _t_composition(p, phi, seed):
    eq = _suite_equation(p, phi)
    s, t, u = p.get("times", (0.0, 0.25, 0.5))
    grid = _suite_grid(p, eq, u)
    lad = vf.composition_test(eq, grid, s, t, u, BumpTest(0.0, 1.5), BumpTest(0.3, 1.5),
                              replicas=int(p.get("replicas", 200)), seed=seed, seed_whole=p.get("seed_whole"))
    return [lad.verdict]


def _t_moment_match(p, phi, seed):
    eq = _suite_equation(p, phi)
    t = float(p.get("t", 0.5))
    n = int(p.get("n", 1))
    grid = _suite_grid(p, eq, t)
    psi = test_function_from_dict(p["test_function"]) if "test_function" in p else BumpTest(0.0, 1.0)
    if "oracle_value" in p:
        oracle = float(p["oracle_value"])
    elif n == 1:
        oracle = psi.heat_smoothed(t)
    else:
        gamma = float(p["oracle_gamma"]) if "oracle_gamma" in p else _limit_strength(eq, int(p.get("oracle_p", eq.p)))
        oracle = pt.pair_moment_quadrature(t, gamma, psi)
    return [vf.moment_match_test(eq, grid, n, psi, oracle, t, int(p.get("replicas", 500)), seed)]


def _limit_strength(eq: Equation, p: int) -> float:
    if eq.kind == "dshe":
        return sigma_p_squared(eq.phi, p)
    if eq.kind == "ashe":
        return gamma_ext_squared(eq.phi)
    return eq.sigma**2


SUITE_TESTS: dict[str, Callable] = {
    "gbf_moment": _t_gbf_moment,
    "gbf_qv": _t_gbf_qv,
    "independence": _t_independence,
    "composition": _t_composition,
    "moment_match": _t_moment_match,
}


def default_suite() -> list[dict]:
    """The standard suite on the white-noise equation, with its negative controls."""
    return [
        {"test": "gbf_moment", "params": {"t_minus_s": 0.25, "n_max": 4, "replicas": 100_000}},
        {"test": "gbf_moment", "params": {"t_minus_s": 0.25, "n_max": 2, "replicas": 100_000,
                                          "exponent_scale": 1.5}, "negative_control": True},
        {"test": "gbf_qv", "params": {}},
        {"test": "independence", "params": {"first": [0.0, 0.25], "second": [0.25, 0.5]}},
        {"test": "independence", "params": {"first": [0.0, 0.25], "second": [0.0, 0.25]},
         "negative_control": True},
        {"test": "composition", "params": {}},
        {"test": "composition", "params": {"seed_whole": 1}, "negative_control": True},
        {"test": "moment_match", "params": {"n": 1}},
        {"test": "moment_match", "params": {"n": 2, "oracle_gamma": 2.0}, "negative_control": True},
    ]


def run_verify(cfg: ExperimentConfig) -> tuple[list[ResultRecord], bool]:
    """Run a suite; the second value is true iff every test passes and every negative control fails."""
    suite = cfg.raw.get("suite", "default")
    suite = default_suite() if suite == "default" else suite
    if not suite:
        raise EmptySuiteError("the verification suite is empty")
    recs, ok = [], True
    for k, entry in enumerate(suite):
        params = entry.get("params", {})
        negative = bool(entry.get("negative_control", False))
        seed = int(params.get("seed", cfg.master_seed + k))
        t0 = time.perf_counter()
        try:
            verdicts = SUITE_TESTS[entry["test"]](params, cfg.mollifier, seed)
        except ConfigurationError as e:
            if not negative:
                raise
            verdicts = [vf.TestVerdict(entry["test"], math.nan, math.nan, vf.FAIL, 0, seed, {"error": str(e)})]
        for v in verdicts:
            good = (v.verdict == vf.FAIL) if negative else (v.verdict == vf.PASS)
            ok = ok and good
            recs.append(_record(cfg, f"verify:{v.name}", {"test": entry["test"], "params": params,
                                                          "negative_control": negative},
                                {"verdict": v.verdict, "statistic": v.statistic, "threshold": v.threshold,
                                 "expected": vf.FAIL if negative else vf.PASS, "as_expected": good,
                                 "details": v.details}, t0, seed=seed, replicas=v.replicas))
    return recs, ok


# ---------------------------------------------------------------------------
# convergence ladders


def limit_oracle(chain: str, t: float, phi: Mollifier, p: int = 1, psi=PAIR_TEST) -> tuple[float, float]:
    """Limiting noise strength and the two-particle moment of the limiting equation."""
    g = sigma_p_squared(phi, p) if chain == "dshe" else gamma_ext_squared(phi)
    return g, pt.pair_moment_quadrature(t, g, psi)


def gap_trend(gaps: list[tuple[float, float]]) -> str:
    """``non-increasing`` if each |gap| is at most the previous plus two combined stderr, else ``increasing``."""
    if len(gaps) < 2:
        return "n/a"
    for (g0, s0), (g1, s1) in zip(gaps, gaps[1:]):
        if abs(g1) > abs(g0) + 2 * math.hypot(s0, s1):
            return "increasing"
    return "non-increasing"


def run_convergence(cfg: ExperimentConfig) -> list[ResultRecord]:
    r = cfg.raw
    chain = r["chain"]
    ladder = [float(e) for e in r["eps_ladder"]]
    t = float(r.get("t", 0.5))
    reps = int(r.get("replicas", 20_000))
    budget = float(r.get("budget_seconds", math.inf))
    p = int(r.get("p", 1))
    phi = cfg.mollifier
    psi = _test_fn(r)
    strength, limit = limit_oracle(chain, t, phi, p, psi)
    start = time.perf_counter()
    recs, gaps = [], []
    partial = False
    for eps in ladder:
        if time.perf_counter() - start > budget:
            partial = True
            break
        t0 = time.perf_counter()
        if chain == "dshe":
            est = pt.diff_eps_moment(2, [0.0, 0.0], t, eps, p, phi, psi, replicas=reps, seed=cfg.master_seed)
        else:
            est = pt.sing_eps_moment(2, [0.0, 0.0], t, eps, phi, psi, replicas=reps, seed=cfg.master_seed)
        gaps.append((est.mean - limit, est.stderr))
        recs.append(_record(cfg, "convergence_step", {"chain": chain, "eps": eps, "t": t, "p": p},
                            {"mean": est.mean, "limit": limit, "gap": est.mean - limit, "strength": strength},
                            t0, est))
    trend = gap_trend(gaps)
    cfg.out.mkdir(parents=True, exist_ok=True)
    done = ladder[: len(gaps)]
    if gaps:
        write_columns(cfg.out / f"gap_{chain}.dat", done, [g for g, _ in gaps], ("eps", "gap"))
        write_manifest(cfg.out, {f"gap_{chain}.dat": "moment minus limit oracle per eps"})
    recs.append(_record(cfg, "convergence_trend", {"chain": chain, "eps_ladder": ladder},
                        {"trend": trend, "gaps": [g for g, _ in gaps], "stderrs": [s for _, s in gaps],
                         "partial": partial}, start))
    return recs


RUNNERS = {
    "constants": run_constants,
    "simulate": run_simulate,
    "oracle": run_oracle,
    "convergence": run_convergence,
}
