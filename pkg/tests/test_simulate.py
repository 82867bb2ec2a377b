import math

import numpy as np
import pytest

from dist_core import distribution, null_sequence_prob
from entropy import mean_entropy
from schemas import EnsembleHistogram, RuleParams, SubstitutionRule
from simulate import (empirical_stats, ensemble_counts, iterate_sequence, kronecker_expand,
                      merge_histograms, preset, rule_ensemble, total_variation)
from substitution_utils import SubstitutionError

CANTOR_2 = (1, 0, 1, 0, 0, 0, 1, 0, 1)


def _symbols(text):
    return [int(c) for c in text]


def _tv_threshold(dist, runs, floor):
    """Bound above the sampling noise expected for a histogram of the given size."""
    p = dist.probs
    expected = 0.5 * float(np.sum(np.sqrt(p * (1.0 - p) / runs)))
    return max(floor, 1.5 * expected)


def test_cantor_listings():
    rule = preset("cantor")
    assert tuple(iterate_sequence(rule, 1, 1)) == (1, 0, 1)
    assert tuple(iterate_sequence(rule, 1, 2)) == CANTOR_2
    expected = _symbols("101000101" "000000000" "101000101")
    assert list(iterate_sequence(rule, 1, 3)) == expected


def test_fibonacci_listing():
    rule = preset("fibonacci")
    assert tuple(iterate_sequence(rule, 0, 6)) == (1, 0, 1, 1, 0, 1, 0, 1)
    lengths = [len(iterate_sequence(rule, 0, i)) for i in range(1, 10)]
    assert lengths == [1, 1, 2, 3, 5, 8, 13, 21, 34]


def test_morse_thue():
    rule = preset("morse_thue")
    assert list(iterate_sequence(rule, 0, 3)) == _symbols("01101001")
    for i in range(0, 12):
        current = iterate_sequence(rule, 0, i)
        nxt = iterate_sequence(rule, 0, i + 1)
        np.testing.assert_array_equal(nxt, np.concatenate([current, 1 - current]))


def test_mandelbrot_preset_degenerate():
    seq = iterate_sequence(preset("mandelbrot", 3, 1.0), 1, 3)
    assert len(seq) == 27 and seq.sum() == 27


def test_length_law_and_reproducibility():
    rule = preset("mandelbrot", 3, 0.5)
    first = iterate_sequence(rule, 1, 4, rng_seed=11)
    again = iterate_sequence(rule, 1, 4, rng_seed=11)
    other = iterate_sequence(rule, 1, 4, rng_seed=11, run_index=1)
    assert len(first) == 81
    np.testing.assert_array_equal(first, again)
    assert not np.array_equal(first, other)


def test_zero_is_absorbing():
    rule = SubstitutionRule(word0=[0, 0], word1=[0.0, 0.0])
    assert iterate_sequence(rule, 1, 6, rng_seed=3).sum() == 0
    random_rule = preset("mandelbrot", 2, 0.3)
    for run in range(20):
        seq = iterate_sequence(random_rule, 0, 5, rng_seed=5, run_index=run)
        assert len(seq) == 32 and seq.sum() == 0


def test_sequence_cap():
    with pytest.raises(SubstitutionError) as exc:
        iterate_sequence(preset("mandelbrot", 2, 0.5), 1, 12, sequence_cap=1000)
    assert exc.value.error_code == "RESOURCE_LIMIT"


def test_unknown_preset():
    with pytest.raises(SubstitutionError) as exc:
        preset("koch")
    assert exc.value.error_code == "UNKNOWN_PRESET"
    assert exc.value.exit_code == 2


def test_kronecker_expansion():
    g = [1, 0, 1]
    assert tuple(kronecker_expand(g, [1])) == (1, 0, 1)
    assert tuple(kronecker_expand(g, [1, 0, 1])) == CANTOR_2
    np.testing.assert_array_equal(kronecker_expand([1, 1, 0, 1], [0, 0]), np.zeros(8))
    rule = preset("cantor")
    v = iterate_sequence(rule, 1, 3)
    np.testing.assert_array_equal(kronecker_expand(g, v), iterate_sequence(rule, 1, 4))


def test_ensemble_with_certain_fill():
    hist = ensemble_counts(RuleParams(k=2, p=1.0), 5, 100, rng_seed=1)
    assert hist.counts == {32: 100}
    stats = empirical_stats(hist)
    assert stats.variance == 0.0
    assert stats.mean == 32.0


def test_null_fraction_matches_recurrence():
    params = RuleParams(k=2, p=0.4)
    runs = 1000
    hist = ensemble_counts(params, 6, runs, rng_seed=2024)
    expected = null_sequence_prob(6, params)
    sigma = math.sqrt(expected * (1 - expected) / runs)
    assert abs(hist.counts.get(0, 0) / runs - expected) < 4 * sigma


@pytest.mark.parametrize("p", [0.5, 0.9])
def test_histogram_matches_exact_distribution(p):
    params = RuleParams(k=2, p=p)
    dist = distribution(7, params)
    hist = ensemble_counts(params, 7, 1000, rng_seed=77)
    assert total_variation(hist, dist) < _tv_threshold(dist, 1000, 0.08)


@pytest.mark.slow
def test_large_ensemble_matches_exact_distribution():
    params = RuleParams(k=2, p=0.9)
    dist = distribution(7, params)
    hist = ensemble_counts(params, 7, 10 ** 5, rng_seed=77)
    assert total_variation(hist, dist) < _tv_threshold(dist, 10 ** 5, 0.01)
    stats = empirical_stats(hist)
    assert stats.mean == pytest.approx(1.8 ** 7, rel=0.01)


def test_sequence_mode_matches_exact_distribution():
    params = RuleParams(k=2, p=0.7)
    dist = distribution(5, params)
    hist = ensemble_counts(params, 5, 2000, rng_seed=5, mode="sequence")
    assert hist.mode == "sequence"
    assert total_variation(hist, dist) < _tv_threshold(dist, 2000, 0.08)


def test_ensemble_is_deterministic_across_schedules():
    params = RuleParams(k=2, p=0.9)
    serial = ensemble_counts(params, 7, 3000, rng_seed=9)
    again = ensemble_counts(params, 7, 3000, rng_seed=9)
    threaded = ensemble_counts(params, 7, 3000, rng_seed=9, max_workers=4)
    assert serial.counts == again.counts == threaded.counts
    seq_serial = ensemble_counts(params, 4, 50, rng_seed=9, mode="sequence")
    seq_threaded = ensemble_counts(params, 4, 50, rng_seed=9, mode="sequence", max_workers=3)
    assert seq_serial.counts == seq_threaded.counts


def test_empirical_moments_near_exact():
    params = RuleParams(k=2, p=0.5)
    runs = 10 ** 4
    stats = empirical_stats(ensemble_counts(params, 6, runs, rng_seed=31))
    # VAR_6 = 3 at kp = 1
    assert abs(stats.mean - 1.0) < 4 * math.sqrt(3.0 / runs)
    assert stats.variance == pytest.approx(3.0, rel=0.25)


def test_empirical_entropy_near_exact():
    params = RuleParams(k=2, p=0.9)
    stats = empirical_stats(ensemble_counts(params, 7, 10 ** 4, rng_seed=8))
    assert stats.mean_entropy == pytest.approx(mean_entropy(7, params), abs=0.02)


def test_merge_histograms():
    params = RuleParams(k=2, p=0.8)
    a = ensemble_counts(params, 4, 300, rng_seed=1)
    b = ensemble_counts(params, 4, 200, rng_seed=2)
    ab, ba = merge_histograms(a, b), merge_histograms(b, a)
    assert ab.runs == 500
    assert ab.counts == ba.counts
    for x in set(a.counts) | set(b.counts):
        assert ab.counts[x] == a.counts.get(x, 0) + b.counts.get(x, 0)
    with pytest.raises(SubstitutionError):
        merge_histograms(a, ensemble_counts(params, 5, 10, rng_seed=1))


def test_histogram_validation():
    with pytest.raises(ValueError):
        EnsembleHistogram(iteration=2, k=2, p=0.5, runs=3, counts={0: 1, 1: 1}, seed=0)
    with pytest.raises(ValueError):
        EnsembleHistogram(iteration=2, k=2, p=0.5, runs=1, counts={5: 1}, seed=0)


def test_statistics_need_two_runs():
    hist = ensemble_counts(RuleParams(k=2, p=0.5), 3, 1, rng_seed=1)
    with pytest.raises(SubstitutionError):
        empirical_stats(hist)


def test_rule_properties():
    assert preset("cantor").is_deterministic
    assert preset("mandelbrot", 2, 1.0).is_deterministic
    assert not preset("mandelbrot", 2, 0.5).is_deterministic
    assert not preset("fibonacci").is_constant_length
    assert preset("bernoulli", 3, 0.4).is_constant_length


@pytest.mark.parametrize("mode", ["count", "sequence"])
def test_rule_ensemble_matches_exact_distribution(mode):
    params = RuleParams(k=2, p=0.8)
    dist = distribution(5, params)
    hist = rule_ensemble(preset("mandelbrot", 2, 0.8), 5, 2000, rng_seed=13, mode=mode)
    assert hist.mode == mode
    assert hist.p == pytest.approx(0.8)
    assert total_variation(hist, dist) < _tv_threshold(dist, 2000, 0.08)


def test_bernoulli_rule_ensemble_is_binomial():
    hist = rule_ensemble(preset("bernoulli", 2, 0.5), 3, 4000, rng_seed=21)
    stats = empirical_stats(hist)
    assert abs(stats.mean - 4.0) < 4 * math.sqrt(2.0 / 4000)
    assert stats.variance == pytest.approx(2.0, rel=0.15)


def test_rule_ensemble_is_deterministic_across_schedules():
    rule = preset("mandelbrot", 3, 0.6)
    for mode in ("count", "sequence"):
        serial = rule_ensemble(rule, 4, 1500, rng_seed=4, mode=mode)
        threaded = rule_ensemble(rule, 4, 1500, rng_seed=4, mode=mode, max_workers=3)
        assert serial.counts == threaded.counts


def test_rule_ensemble_rejects_variable_length_rules():
    with pytest.raises(SubstitutionError) as exc:
        rule_ensemble(preset("fibonacci"), 5, 10, rng_seed=1)
    assert exc.value.error_code == "INVALID_PARAMS"


def test_deterministic_rule_ensemble_is_single_bin():
    hist = rule_ensemble(preset("morse_thue"), 4, 30, rng_seed=1)
    assert hist.counts == {8: 30}
