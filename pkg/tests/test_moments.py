import math

import numpy as np
import pytest

from dist_core import distribution
from moments import (bernoulli_moments, dispersion_argmax, dispersion_index,
                     dispersion_unity_crossing, log_variance, mean, moment_summary,
                     moments_from_distribution, ones_zeros_ratio, ratio_unity_probability,
                     second_moment, variance, zeros_mean)
from schemas import RuleParams
from substitution_utils import SubstitutionError

P_GRID = [round(0.05 * j, 2) for j in range(1, 20)]


def _assert_oracle(k, max_i):
    for p in P_GRID:
        params = RuleParams(k=k, p=p)
        for i in range(1, max_i + 1):
            oracle = moments_from_distribution(distribution(i, params))
            assert mean(i, params) == pytest.approx(oracle.mean, rel=1e-9)
            assert second_moment(i, params) == pytest.approx(oracle.second_moment, rel=1e-9)
            assert variance(i, params) == pytest.approx(oracle.variance, rel=1e-9)


@pytest.mark.parametrize("k,max_i", [(2, 8), (3, 6), (4, 4)])
def test_closed_forms_match_exact_distribution(k, max_i):
    _assert_oracle(k, max_i)


@pytest.mark.slow
@pytest.mark.parametrize("k", [3, 4])
def test_closed_forms_match_exact_distribution_full_grid(k):
    _assert_oracle(k, 8)


def test_second_moment_recurrence_agrees():
    for k in (2, 3, 7):
        for p in P_GRID:
            params = RuleParams(k=k, p=p)
            for i in (1, 5, 12):
                assert second_moment(i, params, method="recurrence") == pytest.approx(
                    second_moment(i, params), rel=1e-12)


def test_first_iteration():
    params = RuleParams(k=2, p=0.3)
    assert mean(1, params) == pytest.approx(0.6)
    assert variance(1, params) == pytest.approx(2 * 0.3 * 0.7)
    assert second_moment(1, params) == pytest.approx(2 * 0.3 * (1 + 0.3))


def test_variance_at_reference_points():
    def var10(p):
        return variance(10, RuleParams(k=2, p=p))
    assert var10(0.99) == pytest.approx(8741, abs=1)
    assert var10(0.79) == pytest.approx(3368, abs=2)
    assert var10(0.85) == pytest.approx(8700, abs=100)
    assert var10(1.0) == 0.0
    assert var10(0.0) == 0.0


def test_variance_continuous_at_critical_point():
    # kp = 1: VAR_i = (1 - p) * i
    assert variance(10, RuleParams(k=2, p=0.5)) == pytest.approx(5.0, rel=1e-12)
    for eps in (1e-9, 1e-7, 1e-5):
        assert variance(10, RuleParams(k=2, p=0.5 + eps)) == pytest.approx(5.0, rel=1e-3)
        assert variance(10, RuleParams(k=2, p=0.5 - eps)) == pytest.approx(5.0, rel=1e-3)


def test_large_iterations_stay_finite_in_log_space():
    params = RuleParams(k=2, p=0.9)
    log_var = log_variance(2000, params)
    assert math.isfinite(log_var)
    assert variance(2000, params) == math.inf
    assert mean(2000, params) == math.inf
    assert log_variance(10, params) == pytest.approx(math.log(variance(10, params)), rel=1e-12)


def test_dispersion_index():
    assert dispersion_index(5, RuleParams(k=2, p=0.0)) == 1.0
    assert dispersion_index(5, RuleParams(k=2, p=1.0)) == 0.0
    params = RuleParams(k=3, p=0.4)
    assert dispersion_index(6, params) == pytest.approx(variance(6, params) / mean(6, params), rel=1e-12)


def test_dispersion_unity_crossing():
    for i in (2, 5, 10):
        root = dispersion_unity_crossing(i, 2)
        assert 0.0 < root < 1.0
        assert dispersion_index(i, RuleParams(k=2, p=root)) == pytest.approx(1.0, abs=1e-9)
    assert dispersion_unity_crossing(10, 2) > dispersion_unity_crossing(2, 2)


def test_dispersion_argmax_is_interior():
    p_max = dispersion_argmax(6, 2)
    assert 0.0 < p_max < 1.0
    peak = dispersion_index(6, RuleParams(k=2, p=p_max))
    for p in np.linspace(0.0, 1.0, 201):
        assert dispersion_index(6, RuleParams(k=2, p=float(p))) <= peak + 1e-12


def test_zeros_and_ratio():
    params = RuleParams(k=2, p=0.6)
    assert zeros_mean(3, params) == pytest.approx(8 * (1 - 0.6 ** 3))
    assert ones_zeros_ratio(3, params) == pytest.approx(0.216 / 0.784)
    assert ones_zeros_ratio(3, RuleParams(k=2, p=1.0)) == math.inf
    for i in (1, 2, 7):
        p = ratio_unity_probability(i)
        assert ones_zeros_ratio(i, RuleParams(k=2, p=p)) == pytest.approx(1.0, rel=1e-12)


def test_moment_summary():
    summary = moment_summary(4, RuleParams(k=3, p=0.5))
    assert summary.mean == pytest.approx(1.5 ** 4)
    assert summary.std_dev == pytest.approx(math.sqrt(summary.variance))
    assert not summary.overflow


def test_bernoulli_moments():
    summary = bernoulli_moments(10, 0.3)
    assert summary.mean == pytest.approx(3.0)
    assert summary.variance == pytest.approx(2.1)
    assert summary.second_moment == pytest.approx(2.1 + 9.0)


def test_invalid_iteration():
    with pytest.raises(SubstitutionError) as exc:
        mean(0, RuleParams(k=2, p=0.5))
    assert exc.value.exit_code == 2
    with pytest.raises(ValueError):
        RuleParams(k=1, p=0.5)
    with pytest.raises(ValueError):
        RuleParams(k=2, p=1.5)


@pytest.mark.parametrize("k,p", [(2, 0.3), (3, 0.2), (5, 0.1)])
def test_moments_vanish_below_critical_probability(k, p):
    params = RuleParams(k=k, p=p)
    means = [mean(i, params) for i in range(1, 41)]
    assert all(b < a for a, b in zip(means, means[1:]))
    assert means[-1] < 1e-6
    assert variance(40, params) < 1e-6


@pytest.mark.parametrize("k,p", [(2, 0.7), (3, 0.5), (5, 0.3)])
def test_moments_grow_above_critical_probability(k, p):
    params = RuleParams(k=k, p=p)
    means = [mean(i, params) for i in range(1, 41)]
    variances = [variance(i, params) for i in range(1, 41)]
    assert all(b > a for a, b in zip(means, means[1:]))
    assert all(b > a for a, b in zip(variances, variances[1:]))


@pytest.mark.parametrize("i", [2, 5, 10])
def test_dispersion_has_one_peak_and_one_unity_crossing(i):
    grid = np.linspace(0.0, 1.0, 10001)
    values = np.array([dispersion_index(i, RuleParams(k=2, p=float(p))) for p in grid])
    inner = values[1:-1]
    peaks = np.flatnonzero((inner > values[:-2]) & (inner > values[2:]))
    assert len(peaks) == 1
    above = values[1:] > 1.0
    assert int(np.count_nonzero(above[:-1] != above[1:])) == 1
