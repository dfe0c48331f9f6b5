import itertools

import numpy as np
import pytest

from hetsel.model import InputError, etp_star
from hetsel.selection import (Group, ThresholdPair, build_curve, classify_group, get_xi, replay_trace, score,
                              score_units, select_bh, select_clfdr_stepup, select_dd, select_dd_arrays,
                              select_oracle, t_statistics, xi_inverse)

HAND_XS = np.array([2.0, 3.0, 0.5, -1.0])          # A, B, C, D
HAND_CLFDRS = np.array([0.05, 0.2, 0.12, 0.02])


def _random_instance(rng, m):
    xs = rng.normal(0.0, 2.0, m)
    clfdrs = rng.uniform(0.0, 0.45, m)
    return xs, clfdrs


def _brute_force_best(xs, clfdrs, mu0, alpha, tol=1e-12):
    """Best ETP* over all prefix-structured feasible selections."""
    diff = xs - mu0
    cost = clfdrs - alpha
    ts = t_statistics(xs, clfdrs, mu0, alpha)
    g0 = (diff >= 0) & (cost <= 0)
    g1 = np.flatnonzero((diff >= 0) & (cost > 0))
    g2 = np.flatnonzero((diff < 0) & (cost <= 0))
    g1 = g1[np.argsort(-ts[g1], kind="mergesort")]
    g2 = g2[np.argsort(ts[g2], kind="mergesort")]
    best = -np.inf
    for a in range(g1.size + 1):
        for b in range(g2.size + 1):
            chosen = np.concatenate([np.flatnonzero(g0), g1[:a], g2[:b]]).astype(int)
            if np.sum(cost[chosen]) <= tol:
                best = max(best, float(np.sum(diff[chosen])))
    return best


def test_classify_group_examples():
    assert classify_group(1.0, 0.05, 0.0, 0.1) == Group.G0
    assert classify_group(-1.0, 0.3, 0.0, 0.1) == Group.G3
    assert classify_group(0.0, 0.1, 0.0, 0.1) == Group.G0
    assert classify_group(2.0, 0.5, 0.0, 0.1) == Group.G1
    assert classify_group(-2.0, 0.01, 0.0, 0.1) == Group.G2


def test_score_examples():
    t, s = score(1.0, 0.6, 0.0, 0.1)
    assert t == pytest.approx(2.0)
    assert s == pytest.approx(0.96403, abs=1e-5)
    assert score(0.5, 0.7, 0.5, 0.1) == (0.0, 0.0)
    assert score(1.0, 0.1, 0.0, 0.1) == (np.inf, 1.0)
    assert score(-1.0, 0.1, 0.0, 0.1) == (-np.inf, -1.0)


def test_score_maps_are_bounded_and_invertible():
    for name in ("tanh", "arctan", "logistic"):
        forward, _ = get_xi(name)
        values = forward(np.array([-np.inf, -3.0, 0.0, 2.5, np.inf]))
        assert np.all(np.diff(values) > 0)
        assert values[0] == pytest.approx(-1.0) and values[-1] == pytest.approx(1.0)
        assert xi_inverse(float(forward(2.5)), name) == pytest.approx(2.5)
    with pytest.raises(InputError):
        get_xi("relu")


def test_hand_example():
    units = score_units(HAND_XS, HAND_CLFDRS, 0.0, 0.1, ids=["A", "B", "C", "D"])
    result = select_dd(units, 0.1, 0.0)
    assert result.decisions.decisions.tolist() == [1, 1, 1, 1]
    assert result.etp_star_realized == pytest.approx(4.5)
    assert result.capacity_final == pytest.approx(0.01)
    assert [step.kind for step in result.trace] == ["seed_g0", "add_g2", "fill_g1", "fill_g1", "return"]
    assert [step.unit for step in result.trace[:-1]] == [0, 3, 1, 2]
    assert result.to_dict(["A", "B", "C", "D"])["selected_ids"] == ["A", "B", "C", "D"]


def test_all_g3_selects_nothing():
    result = select_dd_arrays([-1.0, -2.0, -0.5], [0.5, 0.9, 0.3], 0.1, 0.0)
    assert result.n_selected == 0
    assert result.etp_star_realized == 0.0


def test_only_g0_selects_everything():
    result = select_dd_arrays([0.5, 1.0, 4.0], [0.01, 0.0, 0.1], 0.1, 0.0)
    assert result.decisions.decisions.tolist() == [1, 1, 1]
    assert result.etp_star_realized == pytest.approx(5.5)


def test_unknown_stopping_mode():
    with pytest.raises(InputError):
        select_dd_arrays(HAND_XS, HAND_CLFDRS, 0.1, 0.0, stopping="never")


def test_clfdr_outside_unit_interval_is_rejected():
    with pytest.raises(InputError):
        select_dd_arrays([1.0], [1.2], 0.1, 0.0)


def test_feasibility_along_trace_and_replay(rng):
    for _ in range(50):
        xs, clfdrs = _random_instance(rng, 40)
        result = select_dd_arrays(xs, clfdrs, 0.15, 0.0)
        assert all(step.capacity >= -1e-9 for step in result.trace)
        replayed = replay_trace(result.trace, xs.size)
        assert np.array_equal(replayed.decisions, result.decisions.decisions)
        assert result.etp_star_realized == pytest.approx(etp_star(result.decisions, xs, 0.0))
        assert result.trace[-1].etp_star == pytest.approx(result.etp_star_realized)


def test_g0_always_in_and_g3_never_in(rng):
    xs, clfdrs = _random_instance(rng, 200)
    result = select_dd_arrays(xs, clfdrs, 0.15, 0.0)
    chosen = result.decisions.decisions == 1
    g0 = (xs >= 0) & (clfdrs <= 0.15)
    g3 = (xs < 0) & (clfdrs > 0.15)
    assert np.all(chosen[g0])
    assert not np.any(chosen[g3])


def test_prefix_structure_and_thresholds_reproduce_selection(rng):
    for _ in range(30):
        xs, clfdrs = _random_instance(rng, 60)
        result = select_dd_arrays(xs, clfdrs, 0.15, 0.0)
        chosen = result.decisions.decisions == 1
        ts = t_statistics(xs, clfdrs, 0.0, 0.15)
        g1 = (xs >= 0) & (clfdrs > 0.15)
        g2 = (xs < 0) & (clfdrs <= 0.15)
        if np.any(g1 & chosen) and np.any(g1 & ~chosen):
            assert ts[g1 & chosen].min() > ts[g1 & ~chosen].max()
        if np.any(g2 & chosen) and np.any(g2 & ~chosen):
            assert ts[g2 & chosen].max() < ts[g2 & ~chosen].min()
        again = select_oracle(xs, clfdrs, 0.0, 0.15, result.thresholds)
        assert np.array_equal(again.decisions.decisions, result.decisions.decisions)


def test_full_curve_matches_brute_force(rng):
    for _ in range(200):
        m = int(rng.integers(1, 13))
        xs, clfdrs = _random_instance(rng, m)
        best = _brute_force_best(xs, clfdrs, 0.0, 0.15)
        full = select_dd_arrays(xs, clfdrs, 0.15, 0.0, stopping="full_curve")
        early = select_dd_arrays(xs, clfdrs, 0.15, 0.0)
        assert full.etp_star_realized == pytest.approx(best, abs=1e-9)
        assert early.etp_star_realized <= best + 1e-9


def test_early_stop_can_miss_the_curve_maximum():
    # two G2 units: the first earns too little capacity to afford B, the second does
    xs = np.array([-0.1, -1.1, 100.0])
    clfdrs = np.array([0.09, 0.0, 0.2])
    curve = build_curve(xs, clfdrs, 0.0, 0.1)
    assert curve.etp_star == pytest.approx([0.0, -0.1, 98.8])

    early = select_dd_arrays(xs, clfdrs, 0.1, 0.0)
    assert early.n_selected == 0
    assert early.etp_star_realized == 0.0
    kinds = [step.kind for step in early.trace]
    assert kinds == ["add_g2", "rollback_remove", "return"]

    full = select_dd_arrays(xs, clfdrs, 0.1, 0.0, stopping="full_curve")
    assert full.decisions.decisions.tolist() == [1, 1, 1]
    assert full.etp_star_realized == pytest.approx(98.8)


def test_selection_is_not_nested_in_alpha():
    # three G0 units, one expensive large effect A and ten cheap small effects
    xs = np.array([1.0, 1.0, 1.0, 10.0] + [1.0] * 10)
    clfdrs = np.array([0.02, 0.02, 0.02, 0.3] + [0.121] * 10)
    tight = select_dd_arrays(xs, clfdrs, 0.1, 0.0)
    loose = select_dd_arrays(xs, clfdrs, 0.11, 0.0)
    assert tight.decisions.decisions[3] == 1
    assert loose.decisions.decisions[3] == 0
    assert loose.decisions.decisions[4:].sum() == 10


def test_clfdr_stepup_examples():
    result = select_clfdr_stepup([0.01, 0.05, 0.2, 0.5], 0.1)
    assert result.decisions.decisions.tolist() == [1, 1, 1, 0]
    assert select_clfdr_stepup([0.3, 0.4], 0.1).n_selected == 0
    assert select_clfdr_stepup([0.0, 0.0, 0.0], 0.1).n_selected == 3


def test_clfdr_stepup_includes_ties_at_cutoff():
    assert select_clfdr_stepup([0.05, 0.05, 0.6], 0.1).decisions.decisions.tolist() == [1, 1, 0]


def test_bh_examples():
    assert select_bh([0.001, 0.2, 0.9], 0.1).decisions.decisions.tolist() == [1, 0, 0]
    assert select_bh([1.0, 1.0], 0.1).n_selected == 0
    assert select_bh([0.04, 0.06], 0.1).n_selected == 2


def test_stepup_and_bh_match_enumeration(rng):
    for _ in range(1000):
        m = int(rng.integers(1, 9))
        values = rng.uniform(0.0, 0.4, m)
        alpha = 0.1
        largest = 0
        for size in range(1, m + 1):
            for subset in itertools.combinations(range(m), size):
                if np.mean(values[list(subset)]) <= alpha:
                    largest = size
                    break
        assert select_clfdr_stepup(values, alpha).n_selected == largest

        ordered = np.sort(values)
        passing = [i for i in range(1, m + 1) if ordered[i - 1] <= i * alpha / m]
        assert select_bh(values, alpha).n_selected == (max(passing) if passing else 0)


def test_stepup_and_bh_are_order_invariant(rng):
    values = rng.uniform(0.0, 0.3, 80)
    perm = rng.permutation(80)
    for rule in (select_clfdr_stepup, select_bh):
        base = rule(values, 0.1).decisions.decisions
        shuffled = rule(values[perm], 0.1).decisions.decisions
        assert np.array_equal(base[perm], shuffled)


def test_stepup_and_bh_grow_with_alpha(rng):
    values = rng.uniform(0.0, 0.5, 100)
    for rule in (select_clfdr_stepup, select_bh):
        previous = np.zeros(100, dtype=bool)
        for alpha in (0.01, 0.05, 0.1, 0.2, 0.3):
            current = rule(values, alpha).decisions.decisions == 1
            assert np.all(current[previous])
            previous = current


def test_oracle_rule_uses_strict_inequality():
    xs = np.array([1.0, 3.0])
    clfdrs = np.array([0.6, 0.05])    # G1 unit with T = 2, G0 unit
    t = t_statistics(xs, clfdrs, 0.0, 0.1)[0]
    at_cutoff = select_oracle(xs, clfdrs, 0.0, 0.1, ThresholdPair.from_t(t, -np.inf))
    assert at_cutoff.decisions.decisions.tolist() == [0, 1]
    below = select_oracle(xs, clfdrs, 0.0, 0.1, ThresholdPair.from_t(1.5, -np.inf))
    assert below.decisions.decisions.tolist() == [1, 1]


def test_oracle_extreme_thresholds():
    groups = [classify_group(x, c, 0.0, 0.1) for x, c in zip(HAND_XS, HAND_CLFDRS)]
    assert groups == [Group.G0, Group.G1, Group.G1, Group.G2]
    xs = np.append(HAND_XS, -3.0)
    clfdrs = np.append(HAND_CLFDRS, 0.8)
    only_g0 = select_oracle(xs, clfdrs, 0.0, 0.1, ThresholdPair.g0_only())
    assert only_g0.decisions.decisions.tolist() == [1, 0, 0, 0, 0]
    everything = select_oracle(xs, clfdrs, 0.0, 0.1, ThresholdPair.from_t(-np.inf, np.inf))
    assert everything.decisions.decisions.tolist() == [1, 1, 1, 1, 0]


def test_threshold_pair_validation():
    with pytest.raises(InputError):
        ThresholdPair(c1=1.5, c2=0.0, t1=0.0, t2=0.0)
    pair = ThresholdPair.from_scores(1.0, -1.0)
    assert pair.t1 == np.inf and pair.t2 == -np.inf
