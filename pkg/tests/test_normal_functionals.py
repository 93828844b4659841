import math

import numpy as np
import pytest

from config import ConfigError
from kernel_core import get_kernel
from normal_functionals import (
    ONE_SIDED,
    TWO_SIDED,
    CovarianceCurve,
    LambdaSpec,
    McSettings,
    closed_form_cov,
    cov_lambda_pair,
    cov_lambda_pair_mc,
    mean_lambda,
    mean_lambda_mc,
    q_constant,
    var_lambda,
)

ONE = LambdaSpec(1.0)
TWO = LambdaSpec(2.0)


def test_mean_lambda_known_values():
    assert mean_lambda(ONE) == pytest.approx(0.3989422804, abs=1e-9)
    assert mean_lambda(TWO) == pytest.approx(0.5, abs=1e-12)
    assert mean_lambda(LambdaSpec(3.0)) == pytest.approx(math.sqrt(2.0 / math.pi), abs=1e-12)
    assert mean_lambda(LambdaSpec(1.0, TWO_SIDED)) == pytest.approx(math.sqrt(2.0 / math.pi), abs=1e-12)
    assert mean_lambda(LambdaSpec(2.0, TWO_SIDED)) == pytest.approx(1.0, abs=1e-12)


def test_mean_lambda_mc_agrees_with_closed_form(small_mc):
    for spec in (ONE, LambdaSpec(1.5), TWO):
        estimate, se = mean_lambda_mc(spec, small_mc)
        assert abs(estimate - mean_lambda(spec)) <= 4 * se + 1e-12


def test_lambda_spec_validation():
    with pytest.raises(ConfigError):
        LambdaSpec(0.5)
    with pytest.raises(ConfigError):
        LambdaSpec(1.0, "sideways")
    np.testing.assert_array_equal(ONE.apply([-1.0, 2.0]), [0.0, 2.0])
    np.testing.assert_array_equal(LambdaSpec(2.0, TWO_SIDED).apply([-3.0]), [9.0])


def test_mc_settings_validation():
    with pytest.raises(ConfigError):
        McSettings(draws=100)
    with pytest.raises(ConfigError):
        McSettings(seed=-1)


def test_c1_closed_form_endpoints():
    assert cov_lambda_pair(ONE, 0.0) == pytest.approx(0.0, abs=1e-15)
    assert cov_lambda_pair(ONE, 1.0) == pytest.approx((math.pi - 1.0) / (2.0 * math.pi), abs=1e-12)
    assert cov_lambda_pair(ONE, -1.0) == pytest.approx(-1.0 / (2.0 * math.pi), abs=1e-12)
    assert cov_lambda_pair(ONE, 1.0) == pytest.approx(var_lambda(ONE), abs=1e-12)


def test_c1_closed_form_matches_monte_carlo(small_mc):
    for t in (-0.8, -0.3, 0.2, 0.5, 0.95):
        estimate, se = cov_lambda_pair_mc(ONE, t, small_mc)
        assert abs(estimate - float(closed_form_cov(ONE, t))) <= 3.5 * se


def test_two_sided_closed_forms_match_monte_carlo(small_mc):
    for spec in (LambdaSpec(1.0, TWO_SIDED), LambdaSpec(2.0, TWO_SIDED), LambdaSpec(4.0, TWO_SIDED)):
        for t in (-0.6, 0.4):
            estimate, se = cov_lambda_pair_mc(spec, t, small_mc)
            assert abs(estimate - float(closed_form_cov(spec, t))) <= 4 * se


def test_two_sided_square_covariance_is_2t2():
    spec = LambdaSpec(2.0, TWO_SIDED)
    for t in (-0.7, 0.0, 0.3, 1.0):
        assert float(closed_form_cov(spec, t)) == pytest.approx(2.0 * t * t, abs=1e-12)


def test_c2_exact_endpoints(small_mc):
    assert cov_lambda_pair(TWO, 1.0, small_mc) == pytest.approx(1.25, abs=1e-12)
    assert cov_lambda_pair(TWO, -1.0, small_mc) == pytest.approx(-0.25, abs=1e-12)
    assert cov_lambda_pair(TWO, 0.0, small_mc) == 0.0


def test_simulated_curve_is_monotone_and_close(small_mc):
    curve = CovarianceCurve(TWO, small_mc, grid_size=41)
    assert not curve.closed_form
    t = np.linspace(-1.0, 1.0, 401)
    values = curve(t)
    assert np.all(np.diff(values) >= -1e-12)
    assert float(curve(1.0)) == pytest.approx(1.25, abs=1e-12)
    estimate, se = cov_lambda_pair_mc(TWO, 0.5, small_mc)
    assert float(curve(0.5)) == pytest.approx(estimate, abs=5 * se + 5e-3)


@pytest.mark.parametrize("p", [3.0, 1.5])
def test_simulated_two_sided_curve_is_even(small_mc, p):
    spec = LambdaSpec(p, TWO_SIDED)
    curve = CovarianceCurve(spec, small_mc, grid_size=41)
    assert not curve.closed_form
    for t in (0.3, 0.6, 0.95):
        assert cov_lambda_pair(spec, t, small_mc, 41) == cov_lambda_pair(spec, -t, small_mc, 41)
    t = np.linspace(0.0, 1.0, 101)
    np.testing.assert_array_equal(curve(t), curve(-t))
    assert float(curve(-1.0)) == pytest.approx(var_lambda(spec), rel=1e-12)
    estimate, se = cov_lambda_pair_mc(spec, 0.6, small_mc)
    assert float(curve(-0.6)) == pytest.approx(estimate, abs=5 * se + 0.02 * var_lambda(spec))


def test_correlations_outside_unit_interval_are_rejected():
    with pytest.raises(ValueError):
        cov_lambda_pair(ONE, 1.2)
    # floating noise just past 1 is clamped
    assert cov_lambda_pair(ONE, 1.0 + 1e-12) == pytest.approx(var_lambda(ONE), abs=1e-12)


def test_q_increasing_in_correlation_scale():
    kernel = get_kernel("quartic2u", 1)
    scales = [-1.0, -0.5, 0.0, 0.5, 1.0]
    q = [q_constant(ONE, kernel, s) for s in scales]
    assert q[2] == pytest.approx(0.0, abs=1e-15)
    assert all(a < b for a, b in zip(q, q[1:]))
    assert q[-1] > 0


def test_q_bar_exceeds_zero_and_is_even():
    kernel = get_kernel("quartic2u", 1)
    spec = LambdaSpec(1.0, TWO_SIDED)
    q_pos = q_constant(spec, kernel, 0.6)
    q_neg = q_constant(spec, kernel, -0.6)
    assert q_pos > 0
    assert q_pos == pytest.approx(q_neg, rel=1e-12)


def test_common_random_numbers_are_reproducible(small_mc):
    first = cov_lambda_pair_mc(LambdaSpec(1.5), 0.3, small_mc)
    second = cov_lambda_pair_mc(LambdaSpec(1.5), 0.3, McSettings(draws=20_000, seed=7))
    assert first == second
