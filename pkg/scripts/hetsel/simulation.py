"""
Simulation designs, the replication runner and metric aggregation.

Designs:
  two-component  sigma = 1 for the first half (mu ~ N(5, .5^2)) and sigma2 for
                 the second half (mu ~ N(7, .5^2)); mu0 = 6
  uniform        sigma ~ U(0.5, sigma_max), theta ~ Ber(pi1),
                 mu ~ U(1, 2) if theta else U(-3, -1); mu0 = 0
  correlated     sigma in {0.25 s, 1.25 s} w.p. 1/2 each, mu drawn from a
                 sigma-specific normal mixture; mu0 = 1
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Dict, List, NamedTuple, Optional

import numpy as np
import pandas as pd

from hetsel.config import Config
from hetsel.deconv import ConvergenceError, clfdr_from_fits, fit_prior_groups
from hetsel.model import (InputError, MetricsRecord, TruthLabels, compute_metrics,
                          disagreement_etp_star, make_observations, mfdr_estimate, pvalues)
from hetsel.priors import (DiscreteSigmaLaw, SigmaConditionalPrior, TruePrior, UniformSigmaLaw,
                           oracle_clfdr_arrays)
from hetsel.rng import calibration_sequence, make_streams, seed_ledger_value
from hetsel.selection import (ThresholdPair, oracle_thresholds, select_bh, select_clfdr_stepup,
                              select_dd_arrays, select_oracle)

logger = logging.getLogger(__name__)

METHODS = ("DD", "OR", "Clfdr", "BH")
METRICS = ("fdp", "etp", "etp_star", "n_selected")


@dataclass(frozen=True, kw_only=True)
class SimDesign:
    master_seed: int = 0
    mu0: float = 0.0
    alpha: float = 0.1
    reps: int = 1
    name = "base"

    def __post_init__(self):
        if self.reps < 1:
            raise InputError(f"reps must be >= 1, got {self.reps}")
        if not 0 < self.alpha < 1:
            raise InputError(f"alpha must lie in (0, 1), got {self.alpha}")

    def prior(self):
        raise NotImplementedError

    def sigma_law(self):
        raise NotImplementedError

    def draw(self, streams):
        """Return (xs, sigmas, mus, labels) for one replication."""
        raise NotImplementedError

    def to_dict(self):
        return {"design": self.name, **asdict(self)}


@dataclass(frozen=True, kw_only=True)
class TwoComponent(SimDesign):
    sigma2: float
    m: int = 10000
    mu0: float = 6.0
    name = "two-component"

    def __post_init__(self):
        super().__post_init__()
        if not self.sigma2 > 0 or self.sigma2 == 1.0:
            raise InputError(f"sigma2 must be positive and differ from 1, got {self.sigma2}")
        if self.m < 4 or self.m % 2:
            raise InputError(f"two-component design needs an even m >= 4, got {self.m}")

    def _levels(self):
        return {1.0: TruePrior.normals([(5.0, 0.5)], [1.0]),
                float(self.sigma2): TruePrior.normals([(7.0, 0.5)], [1.0])}

    def prior(self):
        return SigmaConditionalPrior(self._levels())

    def sigma_law(self):
        return DiscreteSigmaLaw((1.0, float(self.sigma2)), (0.5, 0.5))

    def draw(self, streams):
        half = self.m // 2
        sigmas = np.concatenate([np.full(half, 1.0), np.full(half, float(self.sigma2))])
        labels = np.repeat([0, 1], half)
        mus = np.concatenate([streams.mu.normal(5.0, 0.5, half), streams.mu.normal(7.0, 0.5, half)])
        xs = mus + sigmas * streams.noise.standard_normal(self.m)
        return xs, sigmas, mus, labels


@dataclass(frozen=True, kw_only=True)
class UniformIndep(SimDesign):
    sigma_max: float
    m: int = 5000
    pi1: float = 0.2
    name = "uniform"

    def __post_init__(self):
        super().__post_init__()
        if not self.sigma_max > 0.5:
            raise InputError(f"sigma_max must exceed 0.5, got {self.sigma_max}")
        if not 0 < self.pi1 < 1:
            raise InputError(f"pi1 must lie in (0, 1), got {self.pi1}")
        if self.m < 2:
            raise InputError(f"m must be >= 2, got {self.m}")

    def prior(self):
        return TruePrior.uniforms([(-3.0, -1.0), (1.0, 2.0)], [1.0 - self.pi1, self.pi1])

    def sigma_law(self):
        return UniformSigmaLaw(0.5, float(self.sigma_max))

    def draw(self, streams):
        sigmas = streams.sigma.uniform(0.5, self.sigma_max, self.m)
        theta = streams.theta.random(self.m) < self.pi1
        mus = np.where(theta, streams.mu.uniform(1.0, 2.0, self.m), streams.mu.uniform(-3.0, -1.0, self.m))
        xs = mus + sigmas * streams.noise.standard_normal(self.m)
        return xs, sigmas, mus, np.zeros(self.m, dtype=int)


@dataclass(frozen=True, kw_only=True)
class CorrelatedTwoGroup(SimDesign):
    sigma: float
    m: int = 10000
    mu0: float = 1.0
    name = "correlated"

    def __post_init__(self):
        super().__post_init__()
        if not self.sigma > 0:
            raise InputError(f"sigma must be positive, got {self.sigma}")
        if self.m < 2:
            raise InputError(f"m must be >= 2, got {self.m}")

    @property
    def levels(self):
        return 0.25 * self.sigma, 1.25 * self.sigma

    def prior(self):
        low, high = self.levels
        return SigmaConditionalPrior({
            low: TruePrior.normals([(-0.5, 0.25), (1.5, 0.25)], [0.9, 0.1]),
            high: TruePrior.normals([(-0.5, 0.25), (3.0, 0.25)], [0.9, 0.1]),
        })

    def sigma_law(self):
        return DiscreteSigmaLaw(self.levels, (0.5, 0.5))

    def draw(self, streams):
        labels = (streams.sigma.random(self.m) < 0.5).astype(int)
        sigmas = np.asarray(self.levels)[labels]
        alt = streams.theta.random(self.m) < 0.1
        alt_mean = np.where(labels == 0, 1.5, 3.0)
        mus = streams.mu.normal(np.where(alt, alt_mean, -0.5), 0.25)
        xs = mus + sigmas * streams.noise.standard_normal(self.m)
        return xs, sigmas, mus, labels


DESIGNS = {"two-component": TwoComponent, "uniform": UniformIndep, "correlated": CorrelatedTwoGroup}


class SimulatedData(NamedTuple):
    observations: list
    truths: TruthLabels
    priors: Dict[int, TruePrior]
    labels: np.ndarray


def generate(design: SimDesign, rep: int) -> SimulatedData:
    if not 0 <= rep < design.reps:
        raise InputError(f"rep must lie in [0, {design.reps}), got {rep}")
    xs, sigmas, mus, labels = design.draw(make_streams(design.master_seed, rep))
    prior = design.prior()
    if isinstance(prior, SigmaConditionalPrior):
        levels = list(prior.priors.values())
        priors = {}
        for label in np.unique(labels).tolist():
            level = prior.level_index(sigmas[labels == label][:1])[0]
            priors[label] = levels[level]
    else:
        priors = {0: prior}
    return SimulatedData(
        observations=make_observations(xs, sigmas),
        truths=TruthLabels.from_effects(mus, design.mu0),
        priors=priors,
        labels=labels,
    )


@dataclass(frozen=True)
class RepRecord:
    rep: int
    seed: int
    metrics: Dict[str, MetricsRecord]
    disagreement: tuple        # (ETP* of DD-only units, ETP* of Clfdr-only units)
    clfdr_mse: float

    def to_dict(self):
        return {
            "rep": self.rep,
            "seed": self.seed,
            "metrics": {name: record.as_dict() for name, record in self.metrics.items()},
            "disagreement_etp_star": {"dd_only": self.disagreement[0], "clfdr_only": self.disagreement[1]},
            "clfdr_mse": self.clfdr_mse,
        }


@dataclass(frozen=True)
class ReplicationReport:
    design: dict
    thresholds: ThresholdPair
    records: List[RepRecord]
    averages: Dict[str, MetricsRecord] = field(default_factory=dict)
    stderr: Dict[str, Dict[str, float]] = field(default_factory=dict)
    mfdr: Dict[str, float] = field(default_factory=dict)

    @property
    def seed_ledger(self):
        return [r.seed for r in self.records]

    def metric_values(self, method, metric):
        return np.array([getattr(r.metrics[method], metric) for r in self.records], dtype=float)

    def mean_clfdr_mse(self):
        return float(np.mean([r.clfdr_mse for r in self.records]))

    def to_dict(self):
        dd_only = [r.disagreement[0] for r in self.records]
        clfdr_only = [r.disagreement[1] for r in self.records]
        return {
            "design": self.design,
            "oracle_thresholds": self.thresholds.to_dict(),
            "methods": {
                name: {
                    "mean": self.averages[name].as_dict(),
                    "stderr": self.stderr[name],
                    "mfdr": self.mfdr[name],
                }
                for name in METHODS
            },
            "disagreement_etp_star": {"dd_only": float(np.mean(dd_only)), "clfdr_only": float(np.mean(clfdr_only))},
            "clfdr_mse": self.mean_clfdr_mse(),
            "seed_ledger": self.seed_ledger,
            "records": [r.to_dict() for r in self.records],
        }

    def to_tidy_frame(self):
        rows = []
        name = self.design.get("design")
        for record in self.records:
            for method in METHODS:
                values = record.metrics[method].as_dict()
                for metric in METRICS:
                    rows.append({"design": name, "method": method, "metric": metric,
                                 "rep": record.rep, "value": values[metric]})
        return pd.DataFrame(rows, columns=["design", "method", "metric", "rep", "value"])


def _run_rep(design: SimDesign, rep, thresholds, k, stopping):
    data = generate(design, rep)
    xs = np.array([o.x for o in data.observations])
    sigmas = np.array([o.sigma for o in data.observations])
    mu0, alpha = design.mu0, design.alpha

    try:
        fits = fit_prior_groups(data.observations, data.labels, k)
    except ConvergenceError as e:
        e.rep = rep
        raise
    est_clfdr = clfdr_from_fits(fits, data.labels, xs, sigmas, mu0)
    exact_clfdr = oracle_clfdr_arrays(design.prior(), xs, sigmas, mu0)

    selections = {
        "DD": select_dd_arrays(xs, est_clfdr, alpha, mu0, stopping=stopping, with_trace=False),
        "OR": select_oracle(xs, exact_clfdr, mu0, alpha, thresholds),
        "Clfdr": select_clfdr_stepup(exact_clfdr, alpha, xs=xs, mu0=mu0),
        "BH": select_bh(pvalues(xs, sigmas, mu0), alpha, xs=xs, mu0=mu0),
    }
    metrics = {name: compute_metrics(result.decisions, data.truths, xs, mu0)
               for name, result in selections.items()}
    disagreement = disagreement_etp_star(selections["DD"].decisions, selections["Clfdr"].decisions, xs, mu0)
    record = RepRecord(
        rep=rep,
        seed=seed_ledger_value(design.master_seed, rep),
        metrics=metrics,
        disagreement=disagreement,
        clfdr_mse=float(np.mean((est_clfdr - exact_clfdr) ** 2)),
    )
    logger.info("rep %d: DD fdp=%.3f etp*=%.1f | OR fdp=%.3f | Clfdr fdp=%.3f | BH fdp=%.3f", rep,
                metrics["DD"].fdp, metrics["DD"].etp_star, metrics["OR"].fdp, metrics["Clfdr"].fdp,
                metrics["BH"].fdp)
    return record


def aggregate(design: SimDesign, thresholds, records: List[RepRecord]) -> ReplicationReport:
    averages, stderr, mfdr = {}, {}, {}
    n = len(records)
    for method in METHODS:
        per_rep = [r.metrics[method] for r in records]
        means = {metric: float(np.mean([getattr(p, metric) for p in per_rep])) for metric in METRICS}
        averages[method] = MetricsRecord(
            fdp=means["fdp"], etp=means["etp"], etp_star=means["etp_star"], n_selected=means["n_selected"],
            n_false=float(np.mean([p.n_false for p in per_rep])),
        )
        stderr[method] = {
            metric: float(np.std([getattr(p, metric) for p in per_rep], ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
            for metric in METRICS
        }
        mfdr[method] = mfdr_estimate(per_rep)
    return ReplicationReport(design=design.to_dict(), thresholds=thresholds, records=list(records),
                             averages=averages, stderr=stderr, mfdr=mfdr)


def run_replications(design: SimDesign, threads=None, n_mc=None, k=None, stopping="first_decline",
                     thresholds: Optional[ThresholdPair] = None) -> ReplicationReport:
    """Run every replication of a design and aggregate per-method metrics."""
    threads = threads or Config.THREADS
    if thresholds is None:
        thresholds = oracle_thresholds(design.prior(), design.sigma_law(), design.alpha, design.mu0,
                                       n_mc=n_mc, seed=calibration_sequence(design.master_seed),
                                       stopping=stopping)
    logger.info("Running %d replications of %s on %d threads", design.reps, design.name, threads)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        records = list(executor.map(lambda rep: _run_rep(design, rep, thresholds, k, stopping),
                                    range(design.reps)))
    return aggregate(design, thresholds, records)
