"""
Known effect-size priors, standard-deviation laws and the exact oracle Clfdr.

A TruePrior is a finite mixture of point masses, uniform intervals and normal
components. Convolving each component with N(0, sigma^2) has a closed form, so
f0(x) = integral over {mu <= mu0} and f(x) are evaluated without quadrature.
All densities are accumulated in log space.
"""
import logging
from dataclasses import dataclass
from typing import Mapping, Tuple, Union

import numpy as np
from scipy.special import log_ndtr, logsumexp
from scipy.stats import norm

from hetsel.model import InputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PointMass:
    loc: float

    def sample(self, rng, n):
        return np.full(n, float(self.loc))

    def log_marginal(self, xs, sigmas):
        return norm.logpdf(xs, loc=self.loc, scale=sigmas)

    def log_null_marginal(self, xs, sigmas, mu0):
        if self.loc <= mu0:
            return self.log_marginal(xs, sigmas)
        return np.full(np.shape(xs), -np.inf)


@dataclass(frozen=True)
class UniformComponent:
    low: float
    high: float

    def __post_init__(self):
        if not self.high > self.low:
            raise InputError(f"uniform component needs low < high, got ({self.low}, {self.high})")

    def sample(self, rng, n):
        return rng.uniform(self.low, self.high, size=n)

    def _log_mass(self, xs, sigmas, upper):
        # log of [Phi((x - low)/s) - Phi((x - upper)/s)] / (high - low)
        u = (xs - self.low) / sigmas
        v = (xs - upper) / sigmas
        return log_ndtr_diff(u, v) - np.log(self.high - self.low)

    def log_marginal(self, xs, sigmas):
        return self._log_mass(xs, sigmas, self.high)

    def log_null_marginal(self, xs, sigmas, mu0):
        if mu0 <= self.low:
            return np.full(np.shape(xs), -np.inf)
        return self._log_mass(xs, sigmas, min(self.high, mu0))


@dataclass(frozen=True)
class NormalComponent:
    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise InputError(f"normal component needs sd > 0, got {self.sd}")

    def sample(self, rng, n):
        return rng.normal(self.mean, self.sd, size=n)

    def log_marginal(self, xs, sigmas):
        return norm.logpdf(xs, loc=self.mean, scale=np.sqrt(sigmas ** 2 + self.sd ** 2))

    def log_null_marginal(self, xs, sigmas, mu0):
        # joint density factorizes into the marginal times P(mu <= mu0 | x)
        tau2 = sigmas ** 2 + self.sd ** 2
        post_mean = (self.sd ** 2 * xs + sigmas ** 2 * self.mean) / tau2
        post_sd = np.sqrt(sigmas ** 2 * self.sd ** 2 / tau2)
        return self.log_marginal(xs, sigmas) + log_ndtr((mu0 - post_mean) / post_sd)


Component = Union[PointMass, UniformComponent, NormalComponent]


def log_ndtr_diff(u, v):
    """log(Phi(u) - Phi(v)) for u >= v, stable in both tails."""
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        # right tail: Phi(u) - Phi(v) = Phi(-v) - Phi(-u)
        upper = log_ndtr(-v)
        right = upper + np.log1p(-np.exp(log_ndtr(-u) - upper))
        lower = log_ndtr(u)
        left = lower + np.log1p(-np.exp(log_ndtr(v) - lower))
    return np.where(v > 0, right, left)


@dataclass(frozen=True)
class TruePrior:
    """Finite mixture g_mu; weights are nonnegative and sum to one."""
    components: Tuple[Component, ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        components = tuple(self.components)
        weights = tuple(float(w) for w in self.weights)
        if not components or len(components) != len(weights):
            raise InputError("prior needs one weight per component")
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise InputError(f"prior weights must be nonnegative and sum to 1, got {weights}")
        object.__setattr__(self, "components", components)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def point_masses(cls, locs, weights):
        return cls(tuple(PointMass(float(a)) for a in locs), tuple(weights))

    @classmethod
    def uniforms(cls, intervals, weights):
        return cls(tuple(UniformComponent(float(a), float(b)) for a, b in intervals), tuple(weights))

    @classmethod
    def normals(cls, params, weights):
        return cls(tuple(NormalComponent(float(m), float(s)) for m, s in params), tuple(weights))

    def draw_components(self, rng, n):
        return rng.choice(len(self.components), size=n, p=np.asarray(self.weights))

    def draw_effects(self, rng, labels):
        mus = np.empty(len(labels), dtype=float)
        for c, component in enumerate(self.components):
            mask = labels == c
            mus[mask] = component.sample(rng, int(mask.sum()))
        return mus

    def sample(self, rng, n):
        return self.draw_effects(rng, self.draw_components(rng, n))

    def _log_terms(self, xs, sigmas, mu0=None):
        terms = []
        for component in self.components:
            if mu0 is None:
                terms.append(component.log_marginal(xs, sigmas))
            else:
                terms.append(component.log_null_marginal(xs, sigmas, mu0))
        return np.vstack(terms)

    def log_marginal(self, xs, sigmas):
        return logsumexp(self._log_terms(xs, sigmas), axis=0, b=np.asarray(self.weights)[:, None])

    def log_null_marginal(self, xs, sigmas, mu0):
        with np.errstate(divide="ignore"):
            return logsumexp(self._log_terms(xs, sigmas, mu0), axis=0,
                             b=np.asarray(self.weights)[:, None])

    def to_dict(self):
        out = []
        for w, c in zip(self.weights, self.components):
            entry = {"kind": type(c).__name__, "weight": w}
            entry.update(c.__dict__)
            out.append(entry)
        return {"components": out}


@dataclass(frozen=True)
class SigmaConditionalPrior:
    """Effect prior that depends on the unit's (discrete) standard deviation."""
    priors: Mapping[float, TruePrior]

    def __post_init__(self):
        if not self.priors:
            raise InputError("conditional prior needs at least one sigma level")
        object.__setattr__(self, "priors", dict(sorted((float(k), v) for k, v in self.priors.items())))

    @property
    def levels(self):
        return np.array(list(self.priors), dtype=float)

    def level_index(self, sigmas):
        sigmas = np.asarray(sigmas, dtype=float)
        levels = self.levels
        hits = np.isclose(sigmas[:, None], levels[None, :], rtol=1e-12, atol=0.0)
        if not hits.any(axis=1).all():
            raise InputError("a sigma value has no prior in the conditional prior")
        return hits.argmax(axis=1)

    def to_dict(self):
        return {"by_sigma": {repr(k): v.to_dict() for k, v in self.priors.items()}}


PriorLike = Union[TruePrior, SigmaConditionalPrior]


@dataclass(frozen=True)
class UniformSigmaLaw:
    low: float
    high: float

    def __post_init__(self):
        if not 0 < self.low < self.high:
            raise InputError(f"sigma law needs 0 < low < high, got ({self.low}, {self.high})")

    def sample(self, rng, n):
        return rng.uniform(self.low, self.high, size=n)

    def to_dict(self):
        return {"kind": "uniform", "low": self.low, "high": self.high}


@dataclass(frozen=True)
class DiscreteSigmaLaw:
    values: Tuple[float, ...]
    probs: Tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        probs = tuple(float(p) for p in self.probs)
        if not values or len(values) != len(probs):
            raise InputError("discrete sigma law needs one probability per value")
        if any(v <= 0 for v in values):
            raise InputError("sigma values must be positive")
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise InputError("sigma probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    def sample(self, rng, n):
        return np.asarray(self.values)[rng.choice(len(self.values), size=n, p=np.asarray(self.probs))]

    def to_dict(self):
        return {"kind": "discrete", "values": list(self.values), "probs": list(self.probs)}


SigmaLaw = Union[UniformSigmaLaw, DiscreteSigmaLaw]


def _clfdr_from_logs(log_f0, log_f):
    log_f = np.where(np.isfinite(log_f), log_f, np.log(1e-300))
    with np.errstate(under="ignore"):
        return np.clip(np.exp(log_f0 - log_f), 0.0, 1.0)


def oracle_clfdr_arrays(prior: PriorLike, xs, sigmas, mu0):
    """Exact Clfdr for arrays of effects and standard deviations."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    if np.any(sigmas <= 0):
        raise InputError("all sigmas must be positive")
    if isinstance(prior, SigmaConditionalPrior):
        out = np.empty(xs.size, dtype=float)
        index = prior.level_index(sigmas)
        for j, level_prior in enumerate(prior.priors.values()):
            mask = index == j
            if mask.any():
                out[mask] = oracle_clfdr_arrays(level_prior, xs[mask], sigmas[mask], mu0)
        return out
    return _clfdr_from_logs(prior.log_null_marginal(xs, sigmas, mu0), prior.log_marginal(xs, sigmas))


def oracle_clfdr(prior: PriorLike, obs, mu0):
    """Exact Clfdr of one observation under a known prior."""
    return float(oracle_clfdr_arrays(prior, [obs.x], [obs.sigma], mu0)[0])


def draw_units(prior: PriorLike, sigma_law: SigmaLaw, n, streams):
    """Draw (xs, sigmas, mus) from the joint model using named streams."""
    sigmas = sigma_law.sample(streams.sigma, n)
    mus = np.empty(n, dtype=float)
    if isinstance(prior, SigmaConditionalPrior):
        index = prior.level_index(sigmas)
        for j, level_prior in enumerate(prior.priors.values()):
            mask = index == j
            mus[mask] = level_prior.draw_effects(streams.mu, level_prior.draw_components(streams.theta, int(mask.sum())))
    else:
        mus = prior.draw_effects(streams.mu, prior.draw_components(streams.theta, n))
    xs = mus + sigmas * streams.noise.standard_normal(n)
    return xs, sigmas, mus
