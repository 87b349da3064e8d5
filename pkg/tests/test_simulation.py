from __future__ import annotations

import numpy as np
import pytest

from nnmoe import simulation as sim
from nnmoe.distributions import Family
from nnmoe.moe import FitOptions, MoESpec


def test_generate_is_reproducible_and_labelled():
    cfg = sim.ScenarioConfig("stmoe", sim.benchmark_params("stmoe"), 200, seed=5)
    d1, l1 = sim.generate(cfg)
    d2, l2 = sim.generate(cfg)
    np.testing.assert_array_equal(d1.y, d2.y)
    np.testing.assert_array_equal(l1, l2)
    assert set(np.unique(l1)) <= {1, 2}
    # the sharp gate at x = 0 sends positive x mostly to component 1
    assert np.mean(l1[d1.x > 0.3] == 1) > 0.95


def test_outliers_replace_observations():
    cfg = sim.ScenarioConfig("nmoe", sim.benchmark_params("nmoe"), 2000, outlier_rate=0.1, seed=1)
    data, labels = sim.generate(cfg)
    assert data.n == 2000
    assert np.all(data.y[labels == 0] == -2.0)
    assert np.mean(labels == 0) == pytest.approx(0.1, abs=0.02)


def test_config_validation():
    with pytest.raises(ValueError):
        sim.ScenarioConfig("nmoe", sim.benchmark_params("nmoe"), 10, outlier_rate=1.5)


def test_alignment_undoes_label_switching():
    truth = sim.benchmark_params("snmoe")
    swapped = truth.permuted([1, 0])
    errs = sim.mse_params(truth, swapped)
    assert max(errs.values()) < 1e-20
    raw = sim.mse_params(truth, swapped, align=False)
    assert raw["beta_1_1"] == pytest.approx(4.0)


def test_mean_function_error_zero_for_truth():
    truth = sim.benchmark_params("tmoe")
    spec = MoESpec("tmoe", 2)
    data, _ = sim.generate(sim.ScenarioConfig("tmoe", truth, 100, seed=0))
    assert sim.mse_mean_function(truth, truth, data, spec) == 0.0


def test_parameter_recovery_small_run():
    out = sim.parameter_recovery("nmoe", ns=(100,), n_trials=2, fit_opts=FitOptions(n_starts=1), seed=3)
    trials = out[100]
    assert len(trials) == 2
    m = sim.mean_errors(trials)
    assert m["beta_1_1"] < 0.05


def test_outlier_robustness_shares_datasets():
    out = sim.outlier_robustness("nmoe", ["nmoe", "tmoe"], n=150, n_trials=2,
                                 fit_opts=FitOptions(n_starts=1), seed=1)
    assert list(out) == [Family.NORMAL, Family.STUDENT_T]
    for errs in out.values():
        assert errs.shape == (2,)
        # nan marks an all-degenerate fit, inf an undefined fitted mean
        assert np.all(np.isnan(errs) | (errs >= 0))
