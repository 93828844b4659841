import io
import json
import math

import numpy as np
import pandas as pd
import pytest

from config import ConfigError
from kernel_core import get_kernel
from normal_functionals import LambdaSpec, q_constant
from simulation import (
    CSV_COLUMNS,
    FIGURE_COLUMNS,
    ExperimentConfig,
    SimulationCampaign,
    draw,
    make_dgp,
    make_local_alternative,
    pop_a,
    pop_sigma_sq,
    rejection_frequency,
    replication_seed,
    run_experiment,
)
from statistic import TestConfig, run_test


def small_experiment(**overrides):
    settings = {
        "dgps": ["dgp0", "dgp5"],
        "n_values": [60],
        "c_h_values": [1.0, 2.0],
        "weights": ["uniform"],
        "grid_points": 64,
        "replications": 3,
        "base_seed": 99,
    }
    settings.update(overrides)
    return ExperimentConfig(**settings)


class TestDesigns:
    def test_mean_functions(self):
        assert make_dgp("dgp1").mean([0.5])[0] == pytest.approx(0.0, abs=1e-15)
        assert make_dgp("dgp5").mean([0.5])[0] == pytest.approx(0.20, abs=1e-15)
        assert make_dgp("dgp3").mean([0.0])[0] == pytest.approx(-0.15, abs=1e-15)
        np.testing.assert_array_equal(make_dgp("dgp0").mean([0.1, 0.7]), [0.0, 0.0])
        assert make_dgp("sine").mean([0.25])[0] == pytest.approx(1.0, abs=1e-15)

    def test_noise_models(self):
        np.testing.assert_array_equal(make_dgp("dgp2").scale([0.3, 0.8]), [1.0, 1.0])
        np.testing.assert_array_equal(make_dgp("dgp2/hetero").scale([0.3, 0.8]), [0.3, 0.8])
        assert make_dgp("dgp2/hetero").label == "dgp2/hetero"

    def test_alternative_and_unknown_names(self):
        assert make_dgp("alt", c_m=-0.1).mean([0.5])[0] == pytest.approx(0.35, abs=1e-15)
        with pytest.raises(ConfigError):
            make_dgp("alt")
        with pytest.raises(ConfigError):
            make_dgp("dgp7")
        with pytest.raises(ConfigError):
            make_dgp("dgp1", noise="wild")

    def test_local_alternative(self):
        dgp = make_local_alternative(lambda x: np.sin(2 * np.pi * x[:, 0]), 0.1)
        assert dgp.mean([0.25])[0] == pytest.approx(0.1, abs=1e-15)
        constant = make_local_alternative(lambda x: 1.0, 0.5)
        np.testing.assert_array_equal(constant.mean([0.2, 0.4]), [0.5, 0.5])


class TestDraws:
    def test_same_seed_same_sample(self):
        a = draw(make_dgp("dgp3"), 50, 4)
        b = draw(make_dgp("dgp3"), 50, 4)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.y, b.y)
        c = draw(make_dgp("dgp3"), 50, 5)
        assert not np.array_equal(a.x, c.x)

    def test_moments(self):
        data = draw(make_dgp("dgp0"), 20_000, 1)
        assert 0.0 < data.x.min() and data.x.max() < 1.0
        assert abs(data.x.mean() - 0.5) < 0.01
        assert abs(data.y.mean()) < 0.03
        assert abs(data.y.var() - 1.0) < 0.05

    def test_heteroskedastic_noise(self):
        data = draw(make_dgp("dgp0/hetero"), 20_000, 2)
        # E[X^2] for X uniform on (0, 1)
        assert abs(data.y.var() - 1.0 / 3.0) < 0.02
        middle = np.abs(data.x[:, 0] - 0.5) < 0.02
        assert abs(data.y[middle, 0].var() - 0.25) < 0.05

    def test_replication_seeds_are_distinct(self):
        a = replication_seed(1, ("dgp0/homo", 50), 0)
        b = replication_seed(1, ("dgp0/homo", 50), 1)
        c = replication_seed(1, ("dgp0/homo", 200), 0)
        first = [np.random.Generator(np.random.Philox(s)).integers(2 ** 62) for s in (a, b, c)]
        assert len(set(first)) == 3
        again = replication_seed(1, ("dgp0/homo", 50), 0)
        assert a.generate_state(4).tolist() == again.generate_state(4).tolist()


class TestPopulationTerms:
    def test_sigma_for_dgp0(self):
        cfg = TestConfig(bandwidth_c=1.0, grid_points=64)
        q1 = q_constant(LambdaSpec(1.0), get_kernel("quartic2u", 1))
        assert pop_sigma_sq(make_dgp("dgp0"), cfg) == pytest.approx(q1 * 1.2 * 0.9, rel=1e-12)

    def test_zero_weights_give_zero(self):
        cfg = TestConfig(bandwidth_c=1.0, grid_points=64, weights=np.zeros(64))
        assert pop_sigma_sq(make_dgp("dgp0"), cfg) == 0.0

    def test_heteroskedastic_sigma_is_smaller(self):
        cfg = TestConfig(bandwidth_c=1.0, grid_points=64)
        assert pop_sigma_sq(make_dgp("dgp0/hetero"), cfg) < pop_sigma_sq(make_dgp("dgp0"), cfg)

    def test_global_weights_normalize_sigma(self):
        cfg = TestConfig(bandwidth_c=1.0, grid_points=64, weights="inverse_se_global")
        assert pop_sigma_sq(make_dgp("dgp4/hetero"), cfg) == pytest.approx(1.0, rel=1e-12)

    def test_centering_term(self):
        cfg = TestConfig(bandwidth_c=1.0, grid_points=64)
        expected = 0.1 ** -0.5 * np.sqrt(1.2) * 0.9 / np.sqrt(2 * np.pi)
        assert pop_a(make_dgp("dgp0"), cfg, 0.1) == pytest.approx(expected, rel=1e-12)


def test_single_replication_matches_direct_run():
    dgp = make_dgp("dgp2")
    cfg = TestConfig(bandwidth_c=1.5, grid_points=64)
    key = (dgp.label, 80)
    rejections, failures, t_values = rejection_frequency(dgp, 80, cfg, 1, 7, key)
    report = run_test(draw(dgp, 80, replication_seed(7, key, 0)), cfg)
    assert failures == 0
    assert t_values == [report.t_stat]
    assert rejections == int(report.reject)


def test_replication_ranges_compose():
    dgp = make_dgp("dgp0")
    cfg = TestConfig(bandwidth_c=1.0, grid_points=32)
    whole = rejection_frequency(dgp, 40, cfg, 4, 3)
    first = rejection_frequency(dgp, 40, cfg, 2, 3, start=0)
    second = rejection_frequency(dgp, 40, cfg, 2, 3, start=2)
    assert whole[2] == first[2] + second[2]


class TestExperiment:
    def test_cells_and_columns(self):
        cfg = small_experiment()
        result = run_experiment(cfg)
        frame = result.to_frame()
        assert list(frame.columns) == CSV_COLUMNS
        assert len(frame) == len(cfg.cells()) == 4
        assert frame["replications"].eq(3).all()
        assert frame["reject_rate"].between(0, 1).all()
        cell = result.cell("dgp5", 60, 2.0)
        assert cell.replications == 3

    def test_worker_count_does_not_change_results(self):
        cfg = small_experiment(replications=60)
        serial = run_experiment(cfg, workers=1).to_csv()
        parallel = run_experiment(cfg, workers=2).to_csv()
        assert serial == parallel

    def test_figure_data_is_sorted_by_bandwidth(self):
        result = run_experiment(small_experiment(c_h_values=[2.0, 1.0]))
        figure = pd.read_csv(io.StringIO(result.to_csv(figure=True)))
        assert list(figure.columns) == FIGURE_COLUMNS
        for _, group in figure.groupby(["dgp", "n", "weight"]):
            assert group["c_h"].is_monotonic_increasing

    def test_json_document(self):
        result = run_experiment(small_experiment(dgps=["dgp0"], c_h_values=[1.0]))
        document = json.loads(json.dumps(result.to_dict()))
        assert document["config"]["replications"] == 3
        assert "runtime" in document["cells"][0]
        assert "runtime" not in result.to_frame().columns

    def test_cell_runtimes_are_measured(self):
        result = run_experiment(small_experiment(dgps=["dgp0"], c_h_values=[1.0, 2.0]))
        assert all(cell.runtime > 0 for cell in result.cells)
        assert math.fsum(cell.runtime for cell in result.cells) <= result.runtime

    def test_exponents_side_by_side_share_samples(self):
        cfg = small_experiment(dgps=["dgp5"], c_h_values=[1.0], p_values=[1, 2])
        result = run_experiment(cfg)
        assert cfg.p_values == [1.0, 2.0]
        assert [cell.p for cell in result.cells] == [1.0, 2.0]
        assert result.to_frame()["p"].tolist() == [1.0, 2.0]
        assert result.cell("dgp5", 60, 1.0, p=2).p == 2.0

        # the p=2 cell replays the streams a single-p campaign would use
        alone = run_experiment(small_experiment(dgps=["dgp5"], c_h_values=[1.0], p=2.0))
        assert alone.cells[0].mean_t == result.cell("dgp5", 60, 1.0, p=2).mean_t
        assert alone.cells[0].rejections == result.cell("dgp5", 60, 1.0, p=2).rejections

    def test_figure_data_keeps_exponents_apart(self):
        result = run_experiment(small_experiment(dgps=["dgp0"], p_values=[2, 1]))
        figure = result.figure_data()
        assert figure["p"].tolist() == [1.0, 1.0, 2.0, 2.0]
        assert figure["c_h"].tolist() == [1.0, 2.0, 1.0, 2.0]

    @pytest.mark.parametrize("overrides", [
        {"dgps": []},
        {"dgps": ["dgp8"]},
        {"n_values": [1]},
        {"c_h_values": [0.0]},
        {"replications": 0},
        {"weights": ["optimal"]},
        {"alpha": 2.0},
        {"p_values": []},
        {"p_values": [1.0, 0.5]},
    ])
    def test_invalid_campaigns(self, overrides):
        with pytest.raises(ConfigError):
            small_experiment(**overrides)

    def test_unknown_campaign_key(self):
        with pytest.raises(ConfigError, match="reps"):
            ExperimentConfig.from_mapping({"reps": 5}, "campaign.json")


def test_campaign_writes_its_files(tmp_path):
    campaign = SimulationCampaign(small_experiment(dgps=["dgp0"], c_h_values=[1.0]), str(tmp_path))
    with pytest.raises(RuntimeError):
        campaign.export_data()
    campaign.run()
    campaign.export_data(figure_data=True)
    for name in ("results.csv", "results.json", "figure_data.csv", "summary.json"):
        assert (tmp_path / name).exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["cells"] == 1
    assert summary["failures"] == 0
