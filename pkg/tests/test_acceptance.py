"""
Monte Carlo acceptance checks. Slow; run with ``pytest --runslow``.

Bands combine the asymptotic slack of each claim with a few Monte Carlo
standard errors of the rejection frequency.
"""

import math
import os

import numpy as np
import pytest
from scipy.stats import kstest

import reference_impl
from estimators import rule_bandwidth
from normal_functionals import ONE_SIDED, LambdaSpec, McSettings, cov_lambda_pair, cov_lambda_pair_mc, mean_lambda
from power_analysis import PowerQuery, local_power
from simulation import (
    ExperimentConfig,
    draw,
    make_dgp,
    make_local_alternative,
    pop_sigma_sq,
    rejection_frequency,
    replication_seed,
    run_experiment,
)
from statistic import TestConfig, prepare, run_test

pytestmark = pytest.mark.slow

WORKERS = min(4, os.cpu_count() or 1)
UNIT_SD = 1.0 / math.sqrt(12.0)


def campaign(dgps, n, replications, weights=("uniform",), noises=("homo",), c_h=(1.0,), p=1.0):
    cfg = ExperimentConfig(dgps=list(dgps), noises=list(noises), n_values=[n], c_h_values=list(c_h),
                           weights=list(weights), p=p, replications=replications, base_seed=2024)
    return run_experiment(cfg, workers=WORKERS)


def test_size_at_the_least_favorable_null():
    cell = campaign(["dgp0"], 1000, 1000).cell("dgp0", 1000, 1.0)
    assert cell.failures == 0
    assert 0.02 <= cell.reject_rate <= 0.09


def test_interior_null_almost_never_rejects():
    cell = campaign(["dgp1"], 1000, 1000).cell("dgp1", 1000, 1.0)
    assert cell.reject_rate <= 0.01


def test_power_increases_as_the_mean_rises():
    designs = ["dgp2", "dgp3", "dgp4", "dgp5"]
    result = campaign(designs, 1000, 1000)
    cells = [result.cell(name, 1000, 1.0) for name in designs]
    for weaker, stronger in zip(cells, cells[1:]):
        se = math.sqrt(weaker.mc_se ** 2 + stronger.mc_se ** 2)
        assert stronger.reject_rate - weaker.reject_rate > -2 * se


def test_sine_alternative_is_detected():
    result = campaign(["sine"], 1000, 500, weights=("uniform", "inverse_se"), noises=("homo", "hetero"))
    for cell in result.cells:
        assert cell.reject_rate >= 0.95, cell.row()


@pytest.mark.parametrize("p", [1.0, 2.0])
def test_null_statistic_is_close_to_standard_normal(p):
    dgp = make_dgp("dgp0")
    cfg = TestConfig(p=p, bandwidth_c=1.0, grid_points=256)
    _, failures, t_values = rejection_frequency(dgp, 2000, cfg, 2000, 7, ("ks", p))
    assert failures == 0
    assert kstest(t_values, "norm").statistic <= 0.10


def _simulated_power(dgp, n, cfg, replications, key):
    rejections, failures, _ = rejection_frequency(dgp, n, cfg, replications, 11, key)
    assert failures == 0
    return rejections / replications


def test_local_power_for_inequalities():
    n = 2000
    # the phi(0) eps^2 / 2 term of E(Z + eps)+ (eps = h^(1/2) delta / rho) and the skew of the
    # integrated positive part both push power above its limit by O(h^(1/2))
    h = rule_bandwidth(0.25, UNIT_SD, n)
    cfg = TestConfig(p=1.0, bandwidth=h, grid_points=512)
    dgp = make_local_alternative(lambda x: 1.0, n ** -0.5, name="local_root_n")
    sigma = math.sqrt(pop_sigma_sq(make_dgp("dgp0"), cfg))
    predicted = local_power(PowerQuery(delta=1.0, rho=math.sqrt(1.2), sigma=sigma, p=1, grid_points=256))
    simulated = _simulated_power(dgp, n, cfg, 2000, ("local", "root_n"))
    assert abs(simulated - predicted) <= 0.05


def test_local_power_for_equalities():
    n = 2000
    h = rule_bandwidth(1.0, UNIT_SD, n)
    cfg = TestConfig(p=2.0, mode="equality", bandwidth=h, grid_points=256)
    dgp = make_local_alternative(lambda x: 1.0, n ** -0.5 * h ** -0.25, name="local_root_n_h")
    predicted = local_power(PowerQuery(delta=1.0, rho=math.sqrt(1.2), p=2, mode="equality", grid_points=256))
    simulated = _simulated_power(dgp, n, cfg, 2000, ("local", "root_n_h"))
    assert abs(simulated - predicted) <= 0.07


def test_pipeline_matches_reference_on_seeded_samples():
    cfg = TestConfig(p=1.0, bandwidth_c=1.0, grid_points=128, weights="inverse_se")
    for seed in range(20):
        data = draw(make_dgp("dgp0"), 200, replication_seed(5, ("oracle",), seed))
        report = run_test(data, cfg)
        expected = reference_impl.reference_test(data, cfg)
        ctx = prepare(data, cfg)
        point = ctx.grid.points[40]
        _, rho_sq, _ = reference_impl.smooth(data, ctx.h, point, "quartic2u")
        assert ctx.moments.g[40, 0] == pytest.approx(reference_impl.reference_g_hat(data, 0, ctx.h, point),
                                                     rel=1e-9, abs=1e-14)
        assert ctx.moments.rho_sq[40, 0] == pytest.approx(rho_sq[0], rel=1e-9)
        assert min(report.gamma) >= 0.0
        assert report.gamma[0] == pytest.approx(expected["gamma"][0], rel=1e-9, abs=1e-14)
        assert report.a_hat[0] == pytest.approx(expected["a_hat"][0], rel=1e-9)
        assert report.sigma_hat_sq == pytest.approx(expected["sigma_hat_sq"], rel=1e-9)
        assert report.t_stat == pytest.approx(expected["t_stat"], rel=1e-9, abs=1e-12)


def test_normal_functional_constants():
    mc = McSettings()
    spec = LambdaSpec(1.0, ONE_SIDED)
    for t in (-0.9, -0.4, 0.1, 0.6, 0.9):
        estimate, se = cov_lambda_pair_mc(spec, t, mc)
        assert abs(estimate - cov_lambda_pair(spec, t)) <= 3 * se
    assert mean_lambda(spec) == pytest.approx(0.3989422804, abs=1e-9)

    square = LambdaSpec(2.0)
    assert cov_lambda_pair(square, 1.0, mc) == pytest.approx(1.25, abs=1e-3)
    estimate, se = cov_lambda_pair_mc(square, 1.0, mc)
    assert abs(estimate - 1.25) <= 4 * se


def test_sigma_oracle_uses_population_scale():
    cfg = TestConfig(p=1.0, bandwidth_c=1.0, grid_points=256)
    rho = np.sqrt(1.2)
    query = PowerQuery(delta=1.0, rho=rho, p=1, grid_points=256)
    assert query.resolved_sigma() == pytest.approx(math.sqrt(pop_sigma_sq(make_dgp("dgp0"), cfg)), rel=1e-12)
