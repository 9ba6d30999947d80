import math

import numpy as np
import pytest

from shelab.errors import ConfigurationError, ResolutionError
from shelab.functionals import BumpTest
from shelab.lattice import Equation, LatticeGrid
from shelab.stats import MomentEstimate
from shelab.verification import (
    FAIL,
    INCONCLUSIVE,
    PASS,
    GbfPath,
    bonferroni_threshold,
    compare_estimates,
    composition_test,
    gbf_moment_check,
    gbf_qv_partition,
    independence_test,
    moment_match_test,
)

GRID = LatticeGrid.for_run(0.5, dx=0.05)
WIDE = BumpTest(0.0, 1.5)
SHIFTED = BumpTest(0.3, 1.5)


def test_bonferroni():
    assert bonferroni_threshold(1) == pytest.approx(3.0)
    assert bonferroni_threshold(5) > 3.0


# geometric Brownian flow


def test_gbf_multiplicativity():
    path = GbfPath.sample(1.0, 64, 50, 1)
    for i, j, k in [(0, 10, 64), (3, 4, 5), (7, 40, 41)]:
        assert path.multiplicativity_error(i, j, k) < 1e-12
    assert np.all(path.flow(0, 64) > 0)


def test_gbf_moment_targets():
    verdicts = gbf_moment_check(1.0, 2, 100_000, 2)
    assert [v.details["target"] for v in verdicts] == pytest.approx([math.exp(0.5), math.exp(2.0)])
    assert verdicts[1].details["target"] == pytest.approx(7.389, abs=1e-3)


def test_gbf_moments_pass():
    verdicts = gbf_moment_check(0.25, 4, 100_000, 7)
    assert all(v.verdict == PASS for v in verdicts)
    assert all(abs(v.statistic) <= 3 for v in verdicts)


def test_gbf_zero_interval_is_exact():
    verdicts = gbf_moment_check(0.0, 4, 100, 0)
    assert all(v.details["estimate"] == 1.0 and v.verdict == PASS for v in verdicts)


def test_gbf_wrong_exponent_fails():
    verdicts = gbf_moment_check(0.25, 2, 100_000, 7, exponent_scale=1.5)
    assert all(v.verdict == FAIL for v in verdicts)


def test_gbf_moment_limits():
    with pytest.raises(ConfigurationError):
        gbf_moment_check(0.5, 7)
    with pytest.raises(ConfigurationError):
        gbf_moment_check(1.5, 2)


def test_gbf_verdict_reproducible():
    a = gbf_moment_check(0.25, 3, 20_000, 11)
    b = gbf_moment_check(0.25, 3, 20_000, 11)
    assert a == b


def test_qv_ladder_decreases():
    lad = gbf_qv_partition(1.0, range(4, 11), 2000, 3)
    assert lad.verdict.verdict == PASS
    assert lad.residuals[-1] < lad.residuals[0] / 4
    assert lad.meshes == tuple(2.0**-k for k in range(4, 11))


def test_qv_zero_noise_control():
    lad = gbf_qv_partition(1.0, range(4, 11), 5, 0, zero_noise=True)
    assert lad.residuals == pytest.approx([1.0] * 7, abs=1e-14)
    assert lad.verdict.verdict == FAIL


# lattice flows


def test_independence_disjoint_intervals_pass():
    v = independence_test(Equation("mshe"), GRID, (0.0, 0.25), (0.25, 0.5), WIDE, WIDE, 400, 5)
    assert v.verdict == PASS


def test_independence_same_interval_fails():
    v = independence_test(Equation("mshe"), GRID, (0.0, 0.25), (0.0, 0.25), WIDE, WIDE, 400, 5)
    assert v.verdict == FAIL
    assert v.details["correlation"] == pytest.approx(1.0)


def test_independence_overlap_rejected():
    with pytest.raises(ConfigurationError):
        independence_test(Equation("mshe"), GRID, (0.0, 0.3), (0.2, 0.5), WIDE, WIDE, 10, 5)


def test_independence_advective_equation():
    grid = LatticeGrid.for_run(0.5, dx=0.025, eps=0.2)
    v = independence_test(Equation("ashe", eps=0.2), grid, (0.0, 0.25), (0.3, 0.5), WIDE, WIDE, 200, 6)
    assert v.verdict == PASS


def test_composition_noiseless_residual_is_smoothing_error():
    grid = LatticeGrid.for_run(0.5, dx=0.025)
    lad = composition_test(Equation("mshe"), grid, 0.0, 0.25, 0.5, WIDE, SHIFTED, noise=False, replicas=2)
    # the narrow kernel only adds O(delta^2) variance, so the squared residual falls like delta^4
    ratios = [a / b for a, b in zip(lad.residuals, lad.residuals[1:])]
    assert all(10 < r < 20 for r in ratios)
    assert lad.residuals[1] < 1e-5
    assert lad.residuals[2] < 1e-6
    assert lad.verdict.verdict == PASS


def test_composition_white_noise_passes():
    lad = composition_test(Equation("mshe"), GRID, 0.0, 0.25, 0.5, WIDE, SHIFTED, replicas=200, seed=3)
    assert lad.verdict.verdict == PASS
    assert lad.residuals[1] <= 2 * lad.residuals[0] + 2 * lad.stderrs[0]


def test_composition_mismatched_seed_fails():
    lad = composition_test(Equation("mshe"), GRID, 0.0, 0.25, 0.5, WIDE, SHIFTED, replicas=200, seed=3,
                           seed_whole=4)
    assert lad.verdict.verdict == FAIL
    assert min(lad.relative) > 0.1


def test_composition_resolution():
    with pytest.raises(ResolutionError):
        composition_test(Equation("mshe"), GRID, 0.0, 0.25, 0.5, WIDE, SHIFTED, deltas=[GRID.dx])
    with pytest.raises(ConfigurationError):
        composition_test(Equation("mshe"), GRID, 0.3, 0.25, 0.5, WIDE, SHIFTED)


def test_moment_match_first_moment():
    psi = BumpTest(0.0, 1.0)
    v = moment_match_test(Equation("mshe"), GRID, 1, psi, psi.heat_smoothed(0.5), 0.5, 400, 2)
    assert v.verdict == PASS


def test_moment_match_distinct_sources():
    psi = BumpTest(0.0, 1.0)
    grid = LatticeGrid(0.1, 0.0025, 3.0)
    exact = psi.heat_smoothed(0.2, -0.5) * psi.heat_smoothed(0.2, 0.5)
    v = moment_match_test(Equation("mshe", sigma=0.0), grid, 2, psi, exact, 0.2, 4, 0, sources=[-0.5, 0.5])
    # without noise every replica is identical, so only the discretization error remains
    assert v.details["stderr"] == 0.0
    assert v.details["estimate"] == pytest.approx(exact, rel=2e-3)


def test_moment_match_limits():
    with pytest.raises(ConfigurationError):
        moment_match_test(Equation("mshe"), GRID, 5, WIDE, 1.0, 0.5, 10, 0)


def test_compare_estimates_inconclusive_on_low_ess():
    est = MomentEstimate(1.0, 0.1, 1000, 20.0)
    assert compare_estimates("x", est, 1.0).verdict == INCONCLUSIVE
    good = MomentEstimate(1.0, 0.1, 1000, 1000.0)
    assert compare_estimates("x", good, 1.05).verdict == PASS
    assert compare_estimates("x", good, 2.0).verdict == FAIL


def test_compare_two_estimates():
    a = MomentEstimate(1.0, 0.1, 100, 100.0)
    b = MomentEstimate(1.5, 0.1, 100, 100.0)
    v = compare_estimates("pair", a, b)
    assert v.statistic == pytest.approx(-0.5 / math.hypot(0.1, 0.1))
    assert v.verdict == FAIL
