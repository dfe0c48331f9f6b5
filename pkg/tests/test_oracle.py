import numpy as np
import pytest

from hetsel.model import InputError, TruthLabels, fdp
from hetsel.priors import DiscreteSigmaLaw, TruePrior, UniformSigmaLaw, draw_units, oracle_clfdr_arrays
from hetsel.rng import make_streams
from hetsel.selection import (Group, ThresholdPair, classify_groups, oracle_clfdr_cutoff, oracle_thresholds,
                              select_dd_arrays, select_oracle, t_statistics)

ILLUSTRATIVE = TruePrior.uniforms([(-3.0, -1.0), (1.0, 2.0)], [0.8, 0.2])
SIGMA_LAW = UniformSigmaLaw(0.5, 3.0)


def test_calibration_needs_a_large_sample():
    with pytest.raises(InputError):
        oracle_thresholds(ILLUSTRATIVE, SIGMA_LAW, 0.1, 0.0, n_mc=1000)
    with pytest.raises(InputError):
        oracle_clfdr_cutoff(ILLUSTRATIVE, SIGMA_LAW, 0.1, 0.0, n_mc=99_999)


def test_prior_above_null_selects_everything():
    prior = TruePrior.point_masses([5.0], [1.0])
    law = DiscreteSigmaLaw((0.01,), (1.0,))
    thresholds = oracle_thresholds(prior, law, 0.1, 0.0, n_mc=100_000, seed=3)
    assert thresholds == ThresholdPair.g0_only()

    xs, sigmas, mus = draw_units(prior, law, 500, make_streams(3, 0))
    clfdrs = oracle_clfdr_arrays(prior, xs, sigmas, 0.0)
    result = select_oracle(xs, clfdrs, 0.0, 0.1, thresholds)
    assert result.n_selected == 500
    assert fdp(result.decisions, TruthLabels.from_effects(mus, 0.0)) == 0.0


def test_calibration_is_reproducible_for_a_seed():
    first = oracle_thresholds(ILLUSTRATIVE, SIGMA_LAW, 0.1, 0.0, n_mc=20_000, seed=9, min_n_mc=10_000)
    second = oracle_thresholds(ILLUSTRATIVE, SIGMA_LAW, 0.1, 0.0, n_mc=20_000, seed=9, min_n_mc=10_000)
    assert first == second
    assert np.isfinite(first.t1)
    assert -1.0 <= first.c1 <= 1.0 and -1.0 <= first.c2 <= 1.0


def test_clfdr_cutoff_is_near_the_known_value():
    cutoff = oracle_clfdr_cutoff(ILLUSTRATIVE, SIGMA_LAW, 0.1, 0.0, n_mc=100_000, seed=1)
    assert 0.25 < cutoff < 0.4


def test_curve_traversal_agrees_with_grid_search():
    xs, sigmas, _ = draw_units(ILLUSTRATIVE, SIGMA_LAW, 60, make_streams(5, 0))
    clfdrs = oracle_clfdr_arrays(ILLUSTRATIVE, xs, sigmas, 0.0)
    alpha = 0.1
    groups = classify_groups(xs, clfdrs, 0.0, alpha)
    ts = t_statistics(xs, clfdrs, 0.0, alpha)
    t1_candidates = np.concatenate(([np.inf, -np.inf], ts[groups == Group.G1]))
    t2_candidates = np.concatenate(([-np.inf, np.inf], ts[groups == Group.G2]))

    best = -np.inf
    for t1 in t1_candidates:
        for t2 in t2_candidates:
            result = select_oracle(xs, clfdrs, 0.0, alpha, ThresholdPair.from_t(t1, t2))
            if result.capacity_final >= -1e-12:
                best = max(best, result.etp_star_realized)

    curve = select_dd_arrays(xs, clfdrs, alpha, 0.0, stopping="full_curve")
    assert curve.etp_star_realized == pytest.approx(best, abs=1e-9)
