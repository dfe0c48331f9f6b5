"""
Prioritized selection under an mFDR budget.

Units are split into four groups by the signs of (x - mu0) and (clfdr - alpha):

  G0  x >= mu0, clfdr <= alpha   gains power and FDR capacity: always selected
  G1  x >= mu0, clfdr >  alpha   gains power, spends capacity
  G2  x <  mu0, clfdr <= alpha   loses power, earns capacity
  G3  x <  mu0, clfdr >  alpha   never selected

G1 units are taken in descending T = (x - mu0) / (clfdr - alpha), G2 units in
ascending T. For every number j of G2 units taken, the largest affordable G1
prefix is refilled; the resulting ETP* values form the selection curve.
"""
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from hetsel.config import Config
from hetsel.model import DecisionVector, InputError
from hetsel.priors import draw_units, oracle_clfdr_arrays
from hetsel.rng import calibration_sequence, streams_from_sequence

logger = logging.getLogger(__name__)

STOPPING_MODES = ("first_decline", "full_curve")


class Group(IntEnum):
    G0 = 0
    G1 = 1
    G2 = 2
    G3 = 3


def _xi_tanh(t):
    return np.tanh(t)


def _xi_tanh_inv(c):
    with np.errstate(divide="ignore"):
        return np.arctanh(c)


def _xi_arctan(t):
    return 2.0 / np.pi * np.arctan(t)


def _xi_arctan_inv(c):
    return np.tan(np.pi * np.asarray(c, dtype=float) / 2.0)


def _xi_logistic(t):
    return np.tanh(np.asarray(t, dtype=float) / 2.0)


def _xi_logistic_inv(c):
    with np.errstate(divide="ignore"):
        return 2.0 * np.arctanh(c)


XI_REGISTRY = {
    "tanh": (_xi_tanh, _xi_tanh_inv),
    "arctan": (_xi_arctan, _xi_arctan_inv),
    "logistic": (_xi_logistic, _xi_logistic_inv),
}


def get_xi(name=None):
    """Bounded, continuous, strictly increasing score map and its inverse."""
    name = name or Config.XI
    try:
        return XI_REGISTRY[name]
    except KeyError:
        raise InputError(f"unknown score map {name!r}; choose from {sorted(XI_REGISTRY)}")


def xi_inverse(c, xi=None):
    """Inverse score map with the closed endpoints sent to -inf / +inf."""
    c = float(c)
    if c >= 1.0:
        return np.inf
    if c <= -1.0:
        return -np.inf
    return float(get_xi(xi)[1](c))


@dataclass(frozen=True)
class ScoredUnit:
    index: object
    x: float
    clfdr: float
    t: float
    s: float
    group: Group


@dataclass(frozen=True)
class ThresholdPair:
    """Cutoffs on the S scale (c1, c2) and the matching T-scale cutoffs (t1, t2)."""
    c1: float
    c2: float
    t1: float
    t2: float

    def __post_init__(self):
        for name in ("c1", "c2"):
            value = getattr(self, name)
            if not -1.0 <= value <= 1.0:
                raise InputError(f"threshold {name} must lie in [-1, 1], got {value}")

    @classmethod
    def from_t(cls, t1, t2, xi=None):
        forward = get_xi(xi)[0]
        return cls(c1=float(forward(t1)), c2=float(forward(t2)), t1=float(t1), t2=float(t2))

    @classmethod
    def from_scores(cls, c1, c2, xi=None):
        return cls(c1=float(c1), c2=float(c2), t1=xi_inverse(c1, xi), t2=xi_inverse(c2, xi))

    @classmethod
    def g0_only(cls):
        return cls(c1=1.0, c2=-1.0, t1=np.inf, t2=-np.inf)

    def to_dict(self):
        return {"c1": self.c1, "c2": self.c2, "t1": self.t1, "t2": self.t2}


@dataclass(frozen=True)
class TraceStep:
    kind: str          # seed_g0, fill_g1, add_g2, rollback_remove, return
    unit: Optional[int]
    etp_star: float
    capacity: float

    def to_dict(self):
        return {"kind": self.kind, "unit": self.unit, "etp_star": self.etp_star, "capacity": self.capacity}


@dataclass(frozen=True)
class SelectionResult:
    decisions: DecisionVector
    etp_star_realized: Optional[float]
    capacity_final: Optional[float]
    trace: Tuple[TraceStep, ...] = ()
    method: str = "dd"
    thresholds: Optional[ThresholdPair] = None
    curve: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def n_selected(self):
        return int(self.decisions.decisions.sum())

    def to_dict(self, ids=None):
        selected = self.decisions.selected
        if ids is not None:
            selected_ids = [ids[i] for i in selected]
        else:
            selected_ids = [int(i) for i in selected]
        return {
            "method": self.method,
            "selected_ids": selected_ids,
            "n_selected": self.n_selected,
            "etp_star": self.etp_star_realized,
            "capacity": self.capacity_final,
            "thresholds": self.thresholds.to_dict() if self.thresholds else None,
            "trace": [step.to_dict() for step in self.trace],
        }


def replay_trace(trace: Sequence[TraceStep], n) -> DecisionVector:
    decisions = np.zeros(n, dtype=np.int8)
    for step in trace:
        if step.unit is None:
            continue
        if step.kind == "rollback_remove":
            decisions[step.unit] = 0
        else:
            decisions[step.unit] = 1
    return DecisionVector(decisions)


def classify_groups(xs, clfdrs, mu0, alpha):
    diff = np.asarray(xs, dtype=float) - mu0
    cost = np.asarray(clfdrs, dtype=float) - alpha
    groups = np.full(diff.size, int(Group.G3), dtype=np.int8)
    groups[(diff >= 0) & (cost <= 0)] = Group.G0
    groups[(diff >= 0) & (cost > 0)] = Group.G1
    groups[(diff < 0) & (cost <= 0)] = Group.G2
    return groups


def classify_group(x, clfdr, mu0, alpha) -> Group:
    return Group(int(classify_groups([x], [clfdr], mu0, alpha)[0]))


def t_statistics(xs, clfdrs, mu0, alpha):
    """T = (x - mu0) / (clfdr - alpha); clfdr == alpha maps to +inf, -inf or 0 by the sign of x - mu0."""
    diff = np.asarray(xs, dtype=float) - mu0
    cost = np.asarray(clfdrs, dtype=float) - alpha
    t = np.empty(diff.size, dtype=float)
    nonzero = cost != 0
    t[nonzero] = diff[nonzero] / cost[nonzero]
    with np.errstate(invalid="ignore"):
        t[~nonzero] = np.sign(diff[~nonzero]) * np.inf
    t[~nonzero & (diff == 0)] = 0.0
    return t


def score(x, clfdr, mu0, alpha, xi=None):
    t = float(t_statistics([x], [clfdr], mu0, alpha)[0])
    return t, float(get_xi(xi)[0](t))


def score_units(xs, clfdrs, mu0, alpha, ids=None, xi=None) -> List[ScoredUnit]:
    xs = np.asarray(xs, dtype=float)
    clfdrs = np.asarray(clfdrs, dtype=float)
    ts = t_statistics(xs, clfdrs, mu0, alpha)
    ss = get_xi(xi)[0](ts)
    groups = classify_groups(xs, clfdrs, mu0, alpha)
    ids = range(xs.size) if ids is None else ids
    return [
        ScoredUnit(index=i, x=float(x), clfdr=float(c), t=float(t), s=float(s), group=Group(int(g)))
        for i, x, c, t, s, g in zip(ids, xs, clfdrs, ts, ss, groups)
    ]


def _validate_clfdrs(clfdrs):
    if clfdrs.size and (np.any(clfdrs < 0) or np.any(clfdrs > 1) or np.any(np.isnan(clfdrs))):
        raise InputError("clfdr values must lie in [0, 1]")


@dataclass
class SelectionCurve:
    """Prefix-structured selections indexed by the number of G2 units taken."""
    g0: np.ndarray
    g1: np.ndarray          # unit indices, descending T
    g2: np.ndarray          # unit indices, ascending T
    base_value: float
    base_capacity: float
    g1_cost: np.ndarray     # cumulative (clfdr - alpha) of the G1 prefix
    g1_value: np.ndarray    # cumulative (x - mu0), with a leading 0
    g2_gain: np.ndarray     # cumulative -(clfdr - alpha), with a leading 0
    g2_value: np.ndarray    # cumulative (x - mu0), with a leading 0
    refill: np.ndarray      # affordable G1 prefix length for each j
    etp_star: np.ndarray    # curve value for each j

    def capacity(self, j):
        return float(self.base_capacity + self.g2_gain[j]
                     - (self.g1_cost[self.refill[j] - 1] if self.refill[j] else 0.0))

    def first_decline(self):
        """Index where the curve is first followed by a drop, a group runs out, or the end."""
        n1, n2 = self.g1.size, self.g2.size
        if n2 == 0:
            return 0, False
        exhausted = self.refill[:-1] == n1
        drops = self.etp_star[1:] < self.etp_star[:-1]
        stops = np.flatnonzero(exhausted | drops)
        if stops.size == 0:
            return n2, False
        j = int(stops[0])
        return j, bool(drops[j] and not exhausted[j])

    def best(self):
        return int(np.argmax(self.etp_star))


def _order(indices, primary, xs, descending):
    key = -primary[indices] if descending else primary[indices]
    return indices[np.lexsort((indices, -xs[indices], key))]


def build_curve(xs, clfdrs, mu0, alpha, tol=None) -> SelectionCurve:
    tol = Config.CAPACITY_TOL if tol is None else tol
    xs = np.asarray(xs, dtype=float)
    clfdrs = np.asarray(clfdrs, dtype=float)
    _validate_clfdrs(clfdrs)
    diff = xs - mu0
    cost = clfdrs - alpha
    groups = classify_groups(xs, clfdrs, mu0, alpha)
    ts = t_statistics(xs, clfdrs, mu0, alpha)

    g0 = np.flatnonzero(groups == Group.G0)
    g1 = _order(np.flatnonzero(groups == Group.G1), ts, xs, descending=True)
    g2 = _order(np.flatnonzero(groups == Group.G2), ts, xs, descending=False)

    base_value = float(np.sum(diff[g0]))
    base_capacity = float(-np.sum(cost[g0]))
    g1_cost = np.cumsum(cost[g1])
    g1_value = np.concatenate(([0.0], np.cumsum(diff[g1])))
    g2_gain = np.concatenate(([0.0], np.cumsum(-cost[g2])))
    g2_value = np.concatenate(([0.0], np.cumsum(diff[g2])))

    refill = np.searchsorted(g1_cost, base_capacity + g2_gain + tol, side="right")
    etp_star = base_value + g2_value + g1_value[refill]
    return SelectionCurve(g0, g1, g2, base_value, base_capacity, g1_cost, g1_value,
                          g2_gain, g2_value, refill, etp_star)


def _trace_path(curve: SelectionCurve, xs, clfdrs, mu0, alpha, j_stop, rolled_back):
    diff = xs - mu0
    cost = clfdrs - alpha
    steps = []
    value = 0.0
    capacity = 0.0

    def push(kind, unit):
        nonlocal value, capacity
        sign = -1.0 if kind == "rollback_remove" else 1.0
        value += sign * diff[unit]
        capacity -= sign * cost[unit]
        steps.append(TraceStep(kind, int(unit), float(value), float(capacity)))

    for unit in curve.g0:
        push("seed_g0", unit)
    for unit in curve.g1[:curve.refill[0]]:
        push("fill_g1", unit)
    for j in range(1, j_stop + 1):
        push("add_g2", curve.g2[j - 1])
        for unit in curve.g1[curve.refill[j - 1]:curve.refill[j]]:
            push("fill_g1", unit)
    if rolled_back:
        # the next G2 unit lowers ETP*: record it, then undo back to j_stop
        added = [curve.g2[j_stop]]
        push("add_g2", curve.g2[j_stop])
        for unit in curve.g1[curve.refill[j_stop]:curve.refill[j_stop + 1]]:
            push("fill_g1", unit)
            added.append(unit)
        for unit in reversed(added):
            push("rollback_remove", unit)
    steps.append(TraceStep("return", None, float(value), float(capacity)))
    return tuple(steps)


def _boundary_t(ts, ordered, taken, empty, exhausted):
    """T of the first unit left out of a group prefix."""
    if ordered.size == 0:
        return empty
    if taken >= ordered.size:
        return exhausted
    return float(ts[ordered[taken]])


def select_dd_arrays(xs, clfdrs, alpha, mu0, stopping="first_decline", with_trace=True, method="dd"):
    """Prioritized selection on arrays of effects and Clfdr values."""
    if stopping not in STOPPING_MODES:
        raise InputError(f"unknown stopping mode {stopping!r}; choose from {STOPPING_MODES}")
    xs = np.asarray(xs, dtype=float)
    clfdrs = np.asarray(clfdrs, dtype=float)
    if xs.shape != clfdrs.shape:
        raise InputError("xs and clfdrs must have equal length")
    curve = build_curve(xs, clfdrs, mu0, alpha)

    rolled_back = False
    if stopping == "full_curve":
        j_stop = curve.best()
    else:
        j_stop, rolled_back = curve.first_decline()

    k = int(curve.refill[j_stop])
    decisions = np.zeros(xs.size, dtype=np.int8)
    decisions[curve.g0] = 1
    decisions[curve.g1[:k]] = 1
    decisions[curve.g2[:j_stop]] = 1

    ts = t_statistics(xs, clfdrs, mu0, alpha)
    t1 = _boundary_t(ts, curve.g1, k, empty=np.inf, exhausted=-np.inf)
    t2 = _boundary_t(ts, curve.g2, j_stop, empty=-np.inf, exhausted=np.inf)

    trace = _trace_path(curve, xs, clfdrs, mu0, alpha, j_stop, rolled_back) if with_trace else ()
    logger.debug("select_dd: G0=%d G1=%d/%d G2=%d/%d, ETP*=%.4f", curve.g0.size, k, curve.g1.size,
                 j_stop, curve.g2.size, curve.etp_star[j_stop])
    return SelectionResult(
        decisions=DecisionVector(decisions),
        etp_star_realized=float(curve.etp_star[j_stop]),
        capacity_final=curve.capacity(j_stop),
        trace=trace,
        method=method,
        thresholds=ThresholdPair.from_t(t1, t2),
        curve=curve.etp_star,
    )


def select_dd(units: Sequence[ScoredUnit], alpha, mu0, stopping="first_decline") -> SelectionResult:
    """Data-driven prioritized selection over scored units (decisions follow the input order)."""
    xs = np.array([u.x for u in units], dtype=float)
    clfdrs = np.array([u.clfdr for u in units], dtype=float)
    return select_dd_arrays(xs, clfdrs, alpha, mu0, stopping=stopping)


def _etp_and_capacity(decisions, xs, clfdrs, alpha, mu0):
    mask = decisions == 1
    etp_star = float(np.sum(np.asarray(xs)[mask] - mu0)) if xs is not None and mu0 is not None else None
    capacity = float(-np.sum(np.asarray(clfdrs)[mask] - alpha)) if clfdrs is not None else None
    return etp_star, capacity


def select_clfdr_stepup(clfdrs, alpha, xs=None, mu0=None) -> SelectionResult:
    """Select the k smallest Clfdr values, k the largest j with running mean <= alpha."""
    clfdrs = np.asarray(clfdrs, dtype=float)
    _validate_clfdrs(clfdrs)
    decisions = np.zeros(clfdrs.size, dtype=np.int8)
    if clfdrs.size:
        ordered = np.sort(clfdrs, kind="mergesort")
        means = np.cumsum(ordered) / np.arange(1, ordered.size + 1)
        passing = np.flatnonzero(means <= alpha)
        if passing.size:
            cutoff = ordered[passing[-1]]
            decisions[clfdrs <= cutoff] = 1
    etp_star, capacity = _etp_and_capacity(decisions, xs, clfdrs, alpha, mu0)
    return SelectionResult(DecisionVector(decisions), etp_star, capacity, method="clfdr")


def select_bh(pvalues, alpha, xs=None, mu0=None) -> SelectionResult:
    """Benjamini-Hochberg step-up on one-sided p-values."""
    pvalues = np.asarray(pvalues, dtype=float)
    if pvalues.size and (np.any(pvalues < 0) or np.any(pvalues > 1) or np.any(np.isnan(pvalues))):
        raise InputError("p-values must lie in [0, 1]")
    decisions = np.zeros(pvalues.size, dtype=np.int8)
    m = pvalues.size
    if m:
        ordered = np.sort(pvalues, kind="mergesort")
        passing = np.flatnonzero(ordered <= np.arange(1, m + 1) * alpha / m)
        if passing.size:
            decisions[pvalues <= ordered[passing[-1]]] = 1
    etp_star, _ = _etp_and_capacity(decisions, xs, None, alpha, mu0)
    return SelectionResult(DecisionVector(decisions), etp_star, None, method="bh")


def select_oracle(xs, clfdrs, mu0, alpha, thresholds: ThresholdPair) -> SelectionResult:
    """G0 always; G1 when T > t1; G2 when T < t2; never G3."""
    xs = np.asarray(xs, dtype=float)
    clfdrs = np.asarray(clfdrs, dtype=float)
    _validate_clfdrs(clfdrs)
    groups = classify_groups(xs, clfdrs, mu0, alpha)
    ts = t_statistics(xs, clfdrs, mu0, alpha)
    keep = (groups == Group.G0) \
        | ((groups == Group.G1) & (ts > thresholds.t1)) \
        | ((groups == Group.G2) & (ts < thresholds.t2))
    decisions = keep.astype(np.int8)
    etp_star, capacity = _etp_and_capacity(decisions, xs, clfdrs, alpha, mu0)
    return SelectionResult(DecisionVector(decisions), etp_star, capacity, method="oracle",
                           thresholds=thresholds)


def _calibration_sample(prior, sigma_law, mu0, n_mc, seed, min_n_mc):
    min_n_mc = Config.MIN_N_MC if min_n_mc is None else min_n_mc
    if n_mc < min_n_mc:
        raise InputError(f"oracle calibration needs n_mc >= {min_n_mc}, got {n_mc}")
    streams = streams_from_sequence(calibration_sequence(seed))
    xs, sigmas, _ = draw_units(prior, sigma_law, int(n_mc), streams)
    return xs, oracle_clfdr_arrays(prior, xs, sigmas, mu0)


def oracle_thresholds(prior, sigma_law, alpha, mu0, n_mc=None, seed=0, stopping="first_decline",
                      xi=None, min_n_mc=None) -> ThresholdPair:
    """Calibrate the oracle cutoffs on a Monte Carlo sample with exact Clfdr."""
    n_mc = Config.N_MC if n_mc is None else int(n_mc)
    xs, clfdrs = _calibration_sample(prior, sigma_law, mu0, n_mc, seed, min_n_mc)
    result = select_dd_arrays(xs, clfdrs, alpha, mu0, stopping=stopping, with_trace=False, method="oracle")
    thresholds = result.thresholds
    groups = classify_groups(xs, clfdrs, mu0, alpha)
    if not np.any(groups == Group.G1) and not np.any(groups == Group.G2):
        thresholds = ThresholdPair.g0_only()
    elif xi is not None:
        thresholds = ThresholdPair.from_t(thresholds.t1, thresholds.t2, xi)
    logger.info("Oracle thresholds from %d draws: t1=%.4g t2=%.4g (ETP*/draw %.4g)",
                n_mc, thresholds.t1, thresholds.t2, result.etp_star_realized / n_mc)
    return thresholds


def oracle_clfdr_cutoff(prior, sigma_law, alpha, mu0, n_mc=None, seed=0, min_n_mc=None):
    """Largest Clfdr the Clfdr step-up rule selects on a Monte Carlo sample (nan when none)."""
    n_mc = Config.N_MC if n_mc is None else int(n_mc)
    _, clfdrs = _calibration_sample(prior, sigma_law, mu0, n_mc, seed, min_n_mc)
    ordered = np.sort(clfdrs)
    means = np.cumsum(ordered) / np.arange(1, ordered.size + 1)
    passing = np.flatnonzero(means <= alpha)
    return float(ordered[passing[-1]]) if passing.size else float("nan")
