import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.stats import norm

from lossaudit.core import SignalMatrix, ValidationError
from lossaudit.signals import OutWorldKind, OutWorldSet
from lossaudit.thresholds import (AttackKind, EmpiricalDist, MissingCalibration, SmoothingMethod, Target,
                                  calibrate_D, calibrate_L, calibrate_P, calibrate_R, calibrate_S, cdf_linear,
                                  cdf_logit, confidence_avg, logit_rescale, logit_rescale_inv, membership_cdf,
                                  norm_ppf, percentile_linear, percentile_logit, threshold, threshold_avg,
                                  threshold_min)

loss_lists = st.lists(st.floats(0.0, 20.0, allow_nan=False), min_size=2, max_size=60)


def bisect_norm_ppf(p, lo=-40.0, hi=40.0):
    """Invert 0.5*erfc(-x/sqrt 2) by bisection."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(-mid / math.sqrt(2)) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# percentile_linear ---------------------------------------------------------


def test_linear_hand_values():
    assert percentile_linear(EmpiricalDist([1, 2, 3, 4, 5]), 0.25) == 2.0
    assert percentile_linear(EmpiricalDist([0, 1]), 0.5) == 0.5
    assert percentile_linear(EmpiricalDist([3.0, 0.5, 2.0]), 0.0) == 0.5
    assert percentile_linear(EmpiricalDist([3.0, 0.5, 2.0]), 1.0) == 3.0


def test_linear_matches_numpy_quantile():
    rng = np.random.default_rng(0)
    alphas = np.linspace(0, 1, 20)
    for _ in range(200):
        losses = rng.exponential(1.0, size=rng.integers(2, 300))
        d = EmpiricalDist(losses)
        for a in alphas:
            assert abs(percentile_linear(d, a) - np.quantile(losses, a, method="linear")) <= 1e-12


def test_linear_needs_two_losses_and_valid_alpha():
    with pytest.raises(ValidationError):
        percentile_linear(EmpiricalDist([1.0]), 0.5)
    with pytest.raises(ValueError):
        percentile_linear(EmpiricalDist([1.0, 2.0]), 1.5)


@given(loss_lists, st.floats(0, 1), st.floats(0, 1))
def test_linear_is_monotone_in_alpha(losses, a, b):
    d = EmpiricalDist(losses)
    lo, hi = sorted((a, b))
    assert percentile_linear(d, lo) <= percentile_linear(d, hi)


def test_linear_is_constant_on_tied_losses():
    d = EmpiricalDist([1.4446531949807053] * 2)
    assert {percentile_linear(d, a) for a in np.linspace(0, 1, 101)} == {1.4446531949807053}


@given(loss_lists, st.floats(0.0, 1.0))
def test_linear_cdf_inverts_percentile(losses, a):
    d = EmpiricalDist(losses)
    assume(len(set(d.losses.tolist())) == len(d.losses))  # strictly increasing
    assume(np.min(np.diff(d.losses)) > 1e-6)
    assert abs(cdf_linear(d, percentile_linear(d, a)) - a) <= 1e-9


# logit smoothing -----------------------------------------------------------


def test_norm_ppf_against_bisection_and_scipy():
    for p in [1e-12, 1e-6, 0.001, 0.02425, 0.1, 0.1587, 0.5]:
        assert norm_ppf(p) == pytest.approx(bisect_norm_ppf(p), abs=1e-12)
        hi = 1 - p
        assert norm_ppf(hi) == -norm_ppf(1 - hi)
    for p in [1e-12, 0.001, 0.3, 0.8, 0.97575, 0.999, 1 - 1e-9]:
        assert norm_ppf(p) == pytest.approx(norm.ppf(p), abs=1e-12)


def test_logit_rescale_round_trip():
    l = np.array([1e-6, 0.01, 0.5, 1.0, 5.0, 25.0])
    np.testing.assert_allclose(logit_rescale_inv(logit_rescale(l)), l, rtol=1e-10)


def test_logit_median_is_inverse_of_mean():
    rng = np.random.default_rng(1)
    for _ in range(50):
        losses = rng.gamma(2.0, 0.5, size=100)
        d = EmpiricalDist(losses)
        expected = float(logit_rescale_inv(np.mean(logit_rescale(losses))))
        assert abs(percentile_logit(d, 0.5) - expected) <= 1e-9


def test_logit_degenerate_dist_returns_common_value():
    d = EmpiricalDist([0.7] * 10)
    for a in (0.01, 0.5, 0.9):
        assert percentile_logit(d, a) == pytest.approx(0.7, abs=1e-12)


def test_logit_on_standard_normal_grid():
    # transformed values with mean exactly 0 and population std exactly 1
    t = norm.ppf((np.arange(400) + 0.5) / 400)
    t = (t - t.mean()) / t.std()
    d = EmpiricalDist(logit_rescale_inv(t))
    expected = float(logit_rescale_inv(bisect_norm_ppf(1 - 0.1587)))
    assert abs(percentile_logit(d, 0.1587) - expected) <= 1e-6


def test_logit_cdf_inverts_percentile():
    d = EmpiricalDist(np.random.default_rng(2).exponential(1.0, 300))
    for a in (0.001, 0.05, 0.5, 0.9):
        assert cdf_logit(d, percentile_logit(d, a)) == pytest.approx(a, abs=1e-9)


# min and avg ---------------------------------------------------------------


def test_min_hand_values():
    d = EmpiricalDist([0.1, 0.1, 0.1])
    assert threshold_min(d, 0.3) == pytest.approx(0.1)


def test_min_is_elementwise_minimum():
    rng = np.random.default_rng(3)
    for _ in range(500):
        d = EmpiricalDist(rng.exponential(rng.uniform(0.1, 3), size=rng.integers(2, 200)))
        a = float(rng.uniform(0.001, 0.999))
        assert threshold_min(d, a) == min(percentile_linear(d, a), percentile_logit(d, a))


def test_avg_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(100):
        d = EmpiricalDist(rng.exponential(rng.uniform(0.1, 3), size=rng.integers(5, 200)))
        for a in (0.01, 0.1, 0.5):
            assert abs(float(confidence_avg(d, threshold_avg(d, a))) - a) <= 1e-8


def test_avg_boundaries():
    d = EmpiricalDist([2.0, 3.0, 4.0])
    assert float(confidence_avg(d, 0.0)) == pytest.approx(0.0, abs=1e-6)
    # where both CDFs agree the average equals the common value
    both = np.linspace(0.5, 8, 2000)
    gap = np.abs(cdf_linear(d, both) - cdf_logit(d, both))
    i = int(np.argmin(gap[:-1]))
    assert float(confidence_avg(d, both[i])) == pytest.approx(float(cdf_linear(d, both[i])), abs=gap[i])


@pytest.mark.parametrize("method", list(SmoothingMethod))
def test_membership_cdf_agrees_with_threshold_rule(method):
    rng = np.random.default_rng(5)
    d = EmpiricalDist(rng.exponential(1.0, 150))
    for a in (0.02, 0.1, 0.4):
        c = threshold(d, a, method)
        assert float(membership_cdf(d, c * 0.999, method)) <= a + 1e-9
        assert float(membership_cdf(d, c * 1.001 + 1e-9, method)) >= a - 1e-9


# calibration ---------------------------------------------------------------


def _set(kind, values, model_ids, record_ids, labels=None):
    labels = labels if labels is not None else [0] * len(record_ids)
    grouping = {}
    for j, y in enumerate(labels):
        grouping.setdefault(y, []).append(j)
    m = SignalMatrix(model_ids, record_ids, np.asarray(values, dtype=float))
    return OutWorldSet(kind, m, grouping=grouping, labels=labels)


def test_calibrate_S_pools_by_label():
    vals = np.array([[1.0, 9.0], [2.0, 8.0], [3.0, 7.0], [4.0, 6.0], [5.0, 5.5]])
    sh = _set(OutWorldKind.SHADOW, vals, [f"s{i}" for i in range(5)], [10, 11], labels=[0, 1])
    tfn = calibrate_S(sh)
    assert tfn(Target("m", 1, 0, 0.0), 0.25) == 2.0
    assert tfn(Target("a", 1, 1, 0.0), 0.1) == tfn(Target("b", 2, 1, 0.0), 0.1)
    assert tfn(Target("a", 1, 1, 0.0), 0.1) <= tfn(Target("a", 1, 1, 0.0), 0.3)


def test_calibrate_P_uniform_predictor_gives_log2():
    vals = np.full((1, 50), math.log(2))
    ps = _set(OutWorldKind.POPULATION, vals, ["t"], list(range(50)), labels=[i % 2 for i in range(50)])
    tfn = calibrate_P(ps)
    for a in (0.01, 0.3, 0.9):
        assert tfn(Target("t", 999, 0, 0.1), a) == pytest.approx(math.log(2))
    assert tfn(Target("t", 1, 0, 0.0), 0.2) == tfn(Target("t", 2, 1, 0.0), 0.2)


def test_calibrate_R_hand_value_and_dependency():
    rs = _set(OutWorldKind.REFERENCE, [[0.5, 2.0], [1.0, 3.0], [1.5, 4.0]], ["r0", "r1", "r2"], [7, 8])
    tfn = calibrate_R(rs)
    assert tfn(Target("x", 7, 0, 0.0), 0.5) == 1.0
    assert tfn(Target("x", 7, 0, 0.0), 0.5) == tfn(Target("y", 7, 0, 0.0), 0.5)
    with pytest.raises(MissingCalibration):
        tfn(Target("x", 9, 0, 0.0), 0.5)


def test_calibrate_D_and_L_are_model_and_record_specific():
    a = _set(OutWorldKind.DISTILLED, [[0.1, 0.4], [0.2, 0.5]], ["d0", "d1"], [1, 2])
    b = _set(OutWorldKind.DISTILLED, [[0.7, 0.7], [0.7, 0.7]], ["e0", "e1"], [1, 2])
    for calibrate, kind in ((calibrate_D, AttackKind.D), (calibrate_L, AttackKind.L)):
        tfn = calibrate({"m1": a, "m2": b})
        assert tfn.kind is kind
        assert tfn(Target("m1", 1, 0, 0.0), 0.5) != tfn(Target("m2", 1, 0, 0.0), 0.5)
        assert tfn(Target("m1", 1, 0, 0.0), 0.5) != tfn(Target("m1", 2, 0, 0.0), 0.5)
        for al in (0.05, 0.5, 0.95):
            assert tfn(Target("m2", 2, 0, 0.0), al) == pytest.approx(0.7)
        assert tfn(Target("m1", 2, 0, 0.0), 0.3) == pytest.approx(np.quantile([0.4, 0.5], 0.3))


@settings(max_examples=50)
@given(loss_lists, st.sampled_from(list(SmoothingMethod)))
def test_threshold_monotone_in_alpha(losses, method):
    d = EmpiricalDist(losses)
    prev = -math.inf
    for a in (0.01, 0.05, 0.1, 0.3, 0.6):
        c = threshold(d, a, method)
        assert c >= prev - 1e-12
        prev = c
