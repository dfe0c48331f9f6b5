import numpy as np
import pytest

from hetsel.model import (DecisionVector, InputError, MetricsRecord, Observation, TestingProblem, TruthLabels,
                          compute_metrics, disagreement_etp_star, etp, etp_star, fdp, mfdr_estimate, pvalues,
                          zvalue_pvalue)


def test_fdp_examples():
    assert fdp([1, 1, 0], [1, 0, 0]) == 0.5
    assert fdp([0, 0, 0], [1, 0, 1]) == 0.0
    assert fdp([1, 1, 1, 1], [1, 1, 0, 1]) == 0.25


def test_fdp_length_mismatch():
    with pytest.raises(InputError):
        fdp([1, 0], [1, 0, 0])


def test_fdp_permutation_invariant(rng):
    d = rng.integers(0, 2, 50)
    theta = rng.integers(0, 2, 50)
    perm = rng.permutation(50)
    assert fdp(d, theta) == fdp(d[perm], theta[perm])


def test_etp_star_examples():
    assert etp_star([1, 0], np.array([3.0, 5.0]), 1.0) == 2.0
    assert etp_star([1, 1], np.array([3.0, 5.0]), 1.0) == 6.0
    assert etp_star([1], np.array([0.0]), 1.0) == -1.0


def test_etp_star_accepts_observations():
    obs = [Observation("a", 3.0, 1.0), Observation("b", 5.0, 2.0)]
    assert etp_star(DecisionVector([1, 1]), obs, 1.0) == 6.0


def test_etp_star_additive_over_disjoint_selections(rng):
    xs = rng.normal(size=30)
    first = np.zeros(30, dtype=int)
    second = np.zeros(30, dtype=int)
    first[:10] = 1
    second[15:25] = 1
    both = first | second
    assert etp_star(both, xs, 0.3) == pytest.approx(etp_star(first, xs, 0.3) + etp_star(second, xs, 0.3))


def test_etp_counts_true_selections():
    assert etp([1, 1, 0, 1], [1, 0, 1, 1]) == 2


def test_zvalue_pvalue_examples():
    z, p = zvalue_pvalue(Observation(0, 0.0, 1.0), 0.0)
    assert z == 0.0 and p == 0.5
    _, p = zvalue_pvalue(Observation(1, 1.6449, 1.0), 0.0)
    assert p == pytest.approx(0.05, abs=1e-5)
    z, p = zvalue_pvalue(Observation(2, 2.0, 2.0), 0.0)
    assert z == 1.0
    assert p == pytest.approx(0.158655253931457, abs=1e-12)


def test_pvalues_strictly_decreasing_in_x():
    ps = pvalues(np.linspace(-3, 3, 25), np.full(25, 1.5), 0.2)
    assert np.all(np.diff(ps) < 0)


def test_observation_rejects_bad_sigma():
    with pytest.raises(InputError):
        Observation("a", 1.0, 0.0)
    with pytest.raises(InputError):
        Observation("a", float("nan"), 1.0)


def test_testing_problem_alpha_range():
    TestingProblem(mu0=0.0, alpha=0.1)
    with pytest.raises(InputError):
        TestingProblem(mu0=0.0, alpha=1.0)


def test_truth_labels_from_effects():
    truths = TruthLabels.from_effects([0.5, -1.0, 0.0, 2.0], 0.0)
    assert truths.theta.tolist() == [1, 0, 0, 1]


def test_decisions_must_be_binary():
    with pytest.raises(InputError):
        DecisionVector([0, 2, 1])


def test_compute_metrics_and_mfdr():
    xs = np.array([2.0, 1.0, -1.0, 3.0])
    first = compute_metrics([1, 1, 0, 0], [1, 0, 0, 1], xs, 0.0)
    assert first == MetricsRecord(fdp=0.5, etp=1, etp_star=3.0, n_selected=2, n_false=1)
    second = compute_metrics([0, 0, 0, 1], [1, 0, 0, 1], xs, 0.0)
    assert second.fdp == 0.0
    # pooled: one false out of three selections
    assert mfdr_estimate([first, second]) == pytest.approx(1 / 3)


def test_disagreement_etp_star():
    xs = np.array([2.0, 1.0, -1.0, 3.0])
    only_a, only_b = disagreement_etp_star([1, 1, 0, 0], [0, 1, 1, 0], xs, 0.0)
    assert only_a == 2.0
    assert only_b == -1.0
