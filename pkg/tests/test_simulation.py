import numpy as np
import pytest

from hetsel.config import Config
from hetsel.deconv import ConvergenceError
from hetsel.model import InputError
from hetsel.selection import ThresholdPair
from hetsel.simulation import (METHODS, METRICS, CorrelatedTwoGroup, TwoComponent, UniformIndep, generate,
                               run_replications)

# fixed oracle cutoffs keep these tests clear of the Monte Carlo calibration
FIXED = ThresholdPair.from_t(12.0, 0.0)


def _arrays(data):
    xs = np.array([o.x for o in data.observations])
    sigmas = np.array([o.sigma for o in data.observations])
    return xs, sigmas


def test_design_validation():
    with pytest.raises(InputError):
        TwoComponent(sigma2=1.0)
    with pytest.raises(InputError):
        TwoComponent(sigma2=2.0, m=101)
    with pytest.raises(InputError):
        UniformIndep(sigma_max=0.4)
    with pytest.raises(InputError):
        UniformIndep(sigma_max=3.0, pi1=1.2)
    with pytest.raises(InputError):
        CorrelatedTwoGroup(sigma=2.0, reps=0)
    with pytest.raises(InputError):
        CorrelatedTwoGroup(sigma=2.0, alpha=1.5)


def test_design_defaults():
    assert TwoComponent(sigma2=2.0).mu0 == 6.0
    assert UniformIndep(sigma_max=3.0).mu0 == 0.0
    assert CorrelatedTwoGroup(sigma=2.0).mu0 == 1.0
    assert UniformIndep(sigma_max=3.0).to_dict()["design"] == "uniform"


def test_two_component_halves():
    data = generate(TwoComponent(sigma2=2.0, m=200, master_seed=4), 0)
    _, sigmas = _arrays(data)
    assert np.all(sigmas[:100] == 1.0)
    assert np.all(sigmas[100:] == 2.0)
    assert data.labels.tolist() == [0] * 100 + [1] * 100
    assert data.priors[0].components[0].mean == 5.0
    assert data.priors[1].components[0].mean == 7.0


def test_two_component_priors_follow_sigma_below_one():
    data = generate(TwoComponent(sigma2=0.5, m=20), 0)
    assert data.priors[0].components[0].mean == 5.0
    assert data.priors[1].components[0].mean == 7.0


def test_uniform_effects_match_truths():
    design = UniformIndep(sigma_max=3.0, m=3000, master_seed=2)
    data = generate(design, 0)
    _, sigmas = _arrays(data)
    mus = data.truths.mu_true
    theta = data.truths.theta == 1
    assert np.array_equal(theta, mus > 0.0)
    assert np.all((mus[~theta] > -3) & (mus[~theta] < -1))
    assert np.all((mus[theta] > 1) & (mus[theta] < 2))
    assert np.all((sigmas >= 0.5) & (sigmas <= 3.0))
    assert abs(theta.mean() - 0.2) < 0.03


def test_correlated_levels_and_truths():
    design = CorrelatedTwoGroup(sigma=2.0, m=4000, master_seed=8)
    data = generate(design, 0)
    _, sigmas = _arrays(data)
    assert set(np.unique(sigmas).tolist()) == {0.5, 2.5}
    assert np.array_equal(sigmas == 2.5, data.labels == 1)
    assert np.array_equal(data.truths.theta == 1, data.truths.mu_true > 1.0)
    low = data.priors[0]
    assert [c.mean for c in low.components] == [-0.5, 1.5]
    assert low.weights == (0.9, 0.1)


def test_rep_index_bounds():
    with pytest.raises(InputError):
        generate(UniformIndep(sigma_max=3.0, m=10, reps=2), 2)


def test_reps_are_distinct_and_replayable():
    design = UniformIndep(sigma_max=3.0, m=50, reps=3, master_seed=7)
    first = _arrays(generate(design, 0))[0]
    second = _arrays(generate(design, 1))[0]
    again = _arrays(generate(design, 0))[0]
    other_seed = _arrays(generate(UniformIndep(sigma_max=3.0, m=50, reps=3, master_seed=8), 0))[0]
    assert not np.array_equal(first, second)
    assert np.array_equal(first, again)
    assert not np.array_equal(first, other_seed)


def test_single_rep_report_equals_its_record():
    report = run_replications(UniformIndep(sigma_max=3.0, m=400, reps=1, master_seed=3), threads=1,
                              k=20, thresholds=FIXED)
    record = report.records[0]
    for method in METHODS:
        for metric in METRICS:
            assert getattr(report.averages[method], metric) == pytest.approx(getattr(record.metrics[method], metric))
        assert np.isnan(report.stderr[method]["fdp"])


def test_report_is_deterministic_and_thread_independent():
    design = UniformIndep(sigma_max=3.0, m=300, reps=3, master_seed=11)
    one = run_replications(design, threads=1, k=15, thresholds=FIXED).to_dict()
    two = run_replications(design, threads=3, k=15, thresholds=FIXED).to_dict()
    assert one == two
    ledger = one["seed_ledger"]
    assert len(set(ledger)) == 3


def test_tidy_frame_layout():
    report = run_replications(CorrelatedTwoGroup(sigma=2.0, m=300, reps=2, master_seed=5), threads=2,
                              k=15, thresholds=FIXED)
    frame = report.to_tidy_frame()
    assert list(frame.columns) == ["design", "method", "metric", "rep", "value"]
    assert len(frame) == 2 * len(METHODS) * len(METRICS)
    assert set(frame["method"]) == set(METHODS)
    assert report.averages["BH"].fdp == pytest.approx(np.mean(report.metric_values("BH", "fdp")))


def test_convergence_failure_names_the_rep(monkeypatch):
    monkeypatch.setattr(Config, "MAX_ITER", 2)
    monkeypatch.setattr(Config, "REL_TOL", 0.0)
    monkeypatch.setattr(Config, "PG_TOL", 0.0)
    with pytest.raises(ConvergenceError) as info:
        run_replications(UniformIndep(sigma_max=3.0, m=200, reps=2), threads=1, k=20, thresholds=FIXED)
    assert info.value.rep == 0
    assert info.value.context()["rep"] == 0
