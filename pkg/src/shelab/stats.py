"""Monte Carlo summaries and two-sample comparisons."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import stats as _st


@dataclass(frozen=True)
class MomentEstimate:
    """Sample mean of a Monte Carlo functional with its standard error.

    Attributes
    ----------
    mean, stderr : float
        Estimate and one-sigma standard error of the mean.
    replicas : int
        Number of independent samples.
    ess : float
        Effective sample size.  Equal to ``replicas`` for unweighted samples,
        ``(sum w)^2 / sum w^2`` for importance-weighted ones.
    seed : int or None
        Master seed the samples were drawn with.
    diagnostics : dict
        Free-form extra information (step sizes, clip counts, ...).
    """

    mean: float
    stderr: float
    replicas: int
    ess: float
    seed: int | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict, compare=False)

    @classmethod
    def from_samples(cls, samples, *, weights=None, seed=None, **diagnostics) -> "MomentEstimate":
        x = np.asarray(samples, dtype=float).ravel()
        n = x.size
        if n < 2:
            raise ValueError("need at least two samples")
        if weights is None:
            ess = float(n)
        else:
            w = np.asarray(weights, dtype=float).ravel()
            ess = float(w.sum() ** 2 / np.dot(w, w)) if np.any(w) else 0.0
        mean = float(np.mean(x))
        stderr = float(np.std(x, ddof=1) / math.sqrt(n))
        return cls(mean, stderr, n, ess, seed, dict(diagnostics))

    def relative_stderr(self) -> float:
        return self.stderr / abs(self.mean) if self.mean else math.inf


def z_score(a: float, sa: float, b: float, sb: float = 0.0) -> float:
    """Two-sample z statistic ``(a - b) / sqrt(sa^2 + sb^2)``."""
    s = math.hypot(sa, sb)
    if s == 0.0:
        return 0.0 if a == b else math.copysign(math.inf, a - b)
    return (a - b) / s


def z_between(a: MomentEstimate, b: MomentEstimate | float) -> float:
    if isinstance(b, MomentEstimate):
        return z_score(a.mean, a.stderr, b.mean, b.stderr)
    return z_score(a.mean, a.stderr, float(b), 0.0)


def normal_cdf(x: float) -> float:
    return float(_st.norm.cdf(x))


def pearson_with_stderr(x, y) -> tuple[float, float]:
    """Sample correlation and its standard error under the null of zero correlation."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    r = float(np.corrcoef(x, y)[0, 1])
    return r, 1.0 / math.sqrt(max(x.size - 3, 1))
