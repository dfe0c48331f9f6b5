"""
Core domain types and evaluation metrics for one-sided selection problems.

A unit is observed as x ~ N(mu, sigma^2) with sigma known; the null region
for every unit is {mu <= mu0}.
"""
import math
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np
from scipy.special import ndtr


class InputError(ValueError):
    """Raised when inputs violate a documented precondition."""


@dataclass(frozen=True)
class Observation:
    """One unit's observed effect and its known standard deviation."""
    id: Any
    x: float
    sigma: float

    def __post_init__(self):
        if not math.isfinite(self.x):
            raise InputError(f"Observation {self.id!r}: x must be finite, got {self.x}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise InputError(f"Observation {self.id!r}: sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class TestingProblem:
    __test__ = False  # not a pytest class

    mu0: float
    alpha: float

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not math.isfinite(self.mu0):
            raise InputError(f"mu0 must be finite, got {self.mu0}")


@dataclass(frozen=True)
class DecisionVector:
    decisions: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.decisions, dtype=np.int8).reshape(-1)
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise InputError("decisions must be 0/1 indicators")
        arr.setflags(write=False)
        object.__setattr__(self, "decisions", arr)

    def __len__(self):
        return self.decisions.size

    @property
    def selected(self):
        return np.flatnonzero(self.decisions)


@dataclass(frozen=True)
class TruthLabels:
    theta: np.ndarray
    mu_true: Optional[np.ndarray] = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.int8).reshape(-1)
        if theta.size and not np.isin(theta, (0, 1)).all():
            raise InputError("theta must be 0/1 indicators")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if self.mu_true is not None:
            mu = np.asarray(self.mu_true, dtype=float).reshape(-1)
            if mu.size != theta.size:
                raise InputError("mu_true and theta must have equal length")
            mu.setflags(write=False)
            object.__setattr__(self, "mu_true", mu)

    @classmethod
    def from_effects(cls, mu_true, mu0):
        mu = np.asarray(mu_true, dtype=float)
        return cls(theta=(mu > mu0).astype(np.int8), mu_true=mu)

    def __len__(self):
        return self.theta.size


@dataclass(frozen=True)
class MetricsRecord:
    fdp: float
    etp: int
    etp_star: float
    n_selected: int
    n_false: int = 0

    def __post_init__(self):
        if not (self.n_selected >= self.etp >= 0):
            raise InputError("metrics require n_selected >= etp >= 0")
        if not 0.0 <= self.fdp <= 1.0:
            raise InputError(f"fdp must lie in [0, 1], got {self.fdp}")

    def as_dict(self):
        return {
            "fdp": self.fdp,
            "etp": self.etp,
            "etp_star": self.etp_star,
            "n_selected": self.n_selected,
            "n_false": self.n_false,
        }


def _decisions_array(decisions):
    if isinstance(decisions, DecisionVector):
        return decisions.decisions
    return DecisionVector(decisions).decisions


def _theta_array(truths):
    if isinstance(truths, TruthLabels):
        return truths.theta
    return TruthLabels(truths).theta


def _x_array(observations):
    if isinstance(observations, np.ndarray):
        return observations.astype(float)
    return np.array([o.x if isinstance(o, Observation) else float(o) for o in observations], dtype=float)


def fdp(decisions, truths):
    """False discovery proportion: false selections over max(selections, 1)."""
    d = _decisions_array(decisions)
    theta = _theta_array(truths)
    if d.size != theta.size:
        raise InputError(f"length mismatch: {d.size} decisions vs {theta.size} truths")
    n_false = int(np.sum((1 - theta) * d))
    return n_false / max(int(d.sum()), 1)


def etp(decisions, truths):
    d = _decisions_array(decisions)
    theta = _theta_array(truths)
    if d.size != theta.size:
        raise InputError(f"length mismatch: {d.size} decisions vs {theta.size} truths")
    return int(np.sum(theta * d))


def etp_star(decisions, observations, mu0):
    """Modified power: sum of (x_i - mu0) over selected units. May be negative."""
    d = _decisions_array(decisions)
    xs = _x_array(observations)
    if d.size != xs.size:
        raise InputError(f"length mismatch: {d.size} decisions vs {xs.size} observations")
    return float(np.sum((xs - mu0)[d == 1]))


def normal_cdf(z):
    """Standard normal CDF (Cephes ndtr, absolute error well below 1e-12)."""
    return ndtr(z)


def zvalue_pvalue(obs, mu0):
    """One-sided z statistic and p-value 1 - Phi((x - mu0) / sigma)."""
    if obs.sigma <= 0:
        raise InputError(f"sigma must be positive, got {obs.sigma}")
    z = (obs.x - mu0) / obs.sigma
    return z, float(ndtr(-z))


def pvalues(xs, sigmas, mu0):
    """Vectorized p-values for arrays of effects and standard deviations."""
    xs = np.asarray(xs, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if np.any(sigmas <= 0):
        raise InputError("all sigmas must be positive")
    return ndtr(-(xs - mu0) / sigmas)


def compute_metrics(decisions, truths, observations, mu0):
    d = _decisions_array(decisions)
    theta = _theta_array(truths)
    n_selected = int(d.sum())
    return MetricsRecord(
        fdp=fdp(d, theta),
        etp=etp(d, theta),
        etp_star=etp_star(d, observations, mu0),
        n_selected=n_selected,
        n_false=int(np.sum((1 - theta) * d)),
    )


def mfdr_estimate(records: Sequence[MetricsRecord]):
    """Total false selections over total selections, pooled across replications."""
    total = sum(r.n_selected for r in records)
    return sum(r.n_false for r in records) / max(total, 1)


def disagreement_etp_star(decisions_a, decisions_b, observations, mu0):
    """ETP* of the units selected by exactly one of two procedures, per procedure."""
    a = _decisions_array(decisions_a)
    b = _decisions_array(decisions_b)
    only_a = (a == 1) & (b == 0)
    only_b = (b == 1) & (a == 0)
    return (
        etp_star(only_a.astype(np.int8), observations, mu0),
        etp_star(only_b.astype(np.int8), observations, mu0),
    )


def observation_arrays(observations):
    """Split observations into (ids, xs, sigmas) arrays."""
    ids = [o.id for o in observations]
    xs = np.array([o.x for o in observations], dtype=float)
    sigmas = np.array([o.sigma for o in observations], dtype=float)
    return ids, xs, sigmas


def make_observations(xs, sigmas, ids=None):
    xs = np.asarray(xs, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if xs.shape != sigmas.shape:
        raise InputError("xs and sigmas must have equal length")
    if ids is None:
        ids = range(xs.size)
    return [Observation(id=i, x=float(x), sigma=float(s)) for i, x, s in zip(ids, xs, sigmas)]
