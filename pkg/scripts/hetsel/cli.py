#!/usr/bin/env python3
"""
Command-line surface for the selection toolkit.

Commands:
    deconv-fit   fit the effect-size prior and store it as JSON
    select       prioritized selection plus Clfdr step-up and BH baselines
    rvalue       r-values and standardized ranks
    simulate     replication study on one of the simulation designs
"""
import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from hetsel import __version__
from hetsel.artifacts import read_json, write_csv, write_json
from hetsel.config import Config, configure_logging
from hetsel.deconv import ConvergenceError, FittedPrior, clfdr_from_fits, fit_prior_groups, group_labels
from hetsel.ingest import IngestError, read_observations, trim_by_se_percentile
from hetsel.model import InputError, pvalues
from hetsel.rvalue import (default_alpha_grid, default_mu0_grid, dd_alpha_procedure, dd_mu0_procedure,
                           rvalue_vary_alpha, rvalue_vary_mu0, top_k_by_pvalue, top_k_by_rvalue, top_k_mean_x)
from hetsel.selection import (STOPPING_MODES, score_units, select_bh, select_clfdr_stepup, select_dd,
                              XI_REGISTRY)
from hetsel.simulation import DESIGNS, CorrelatedTwoGroup, TwoComponent, UniformIndep, run_replications

logger = logging.getLogger(__name__)

COMMANDS = ("deconv-fit", "select", "rvalue", "simulate")
DEFAULT_ALPHA = 0.1
TOP_K = 20

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_CONVERGENCE = 4
EXIT_IO = 5


class UsageError(InputError):
    """Required flags are missing or inconsistent for the chosen command."""


class ArgumentParser(argparse.ArgumentParser):
    """Parser whose errors surface as UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    command: str
    input: Optional[str] = None
    output: str = "output"
    alpha: Optional[float] = None
    mu0: Optional[float] = None
    grid_size: int = Config.GRID_SIZE
    seed: int = 0
    threads: int = Config.THREADS
    log_level: str = Config.LOG_LEVEL
    grouping: str = "none"
    trim_lower: float = 0.0
    trim_upper: float = 1.0
    stopping: str = "first_decline"
    xi: str = Config.XI
    prior: Optional[str] = None
    # simulate
    design: Optional[str] = None
    sigma_max: Optional[float] = None
    sigma: Optional[float] = None
    m: Optional[int] = None
    reps: int = 1
    n_mc: int = Config.N_MC
    # rvalue
    definition: str = "alpha"
    grid_points: int = Config.RVALUE_POINTS

    @classmethod
    def from_args(cls, args):
        fields = cls.__dataclass_fields__
        return cls(**{k: v for k, v in vars(args).items() if k in fields and v is not None})

    @property
    def effective_alpha(self):
        return DEFAULT_ALPHA if self.alpha is None else self.alpha

    def validate(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.command in ("deconv-fit", "select", "rvalue") and not self.input:
            raise UsageError(f"{self.command} requires --input")
        if self.command == "select" and self.mu0 is None:
            raise UsageError("select requires --mu0")
        if self.command == "rvalue":
            if self.definition == "alpha" and self.mu0 is None:
                raise UsageError("rvalue --definition alpha requires --mu0")
            if self.definition == "mu0" and self.alpha is None:
                raise UsageError("rvalue --definition mu0 requires --alpha")
            if self.definition not in ("alpha", "mu0"):
                raise UsageError(f"unknown r-value definition {self.definition!r}")
        if self.command == "simulate":
            if self.design not in DESIGNS:
                raise UsageError(f"simulate requires --design, one of {sorted(DESIGNS)}")
            if self.design == "uniform" and self.sigma_max is None:
                raise UsageError("the uniform design requires --sigma-max")
            if self.design in ("two-component", "correlated") and self.sigma is None:
                raise UsageError(f"the {self.design} design requires --sigma")
        if self.prior and self.command not in ("select", "rvalue"):
            raise UsageError(f"--prior applies to select and rvalue, not {self.command}")
        if self.stopping not in STOPPING_MODES:
            raise UsageError(f"unknown stopping mode {self.stopping!r}")
        if self.alpha is not None and not 0 < self.alpha < 1:
            raise UsageError(f"--alpha must lie in (0, 1), got {self.alpha}")

    def to_dict(self):
        return asdict(self)


def build_parser():
    parser = ArgumentParser(
        prog="run_selection.py",
        description="Prioritized selection with FDR control for heteroscedastic units",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python3 run_selection.py deconv-fit --input data.csv --output out/
  python3 run_selection.py select --input ayp.csv --alpha 0.01 --mu0 0.2 --trim-lower 0.01 --trim-upper 0.99
  python3 run_selection.py rvalue --input data.csv --definition mu0 --alpha 0.1
  python3 run_selection.py simulate --design uniform --sigma-max 3 --reps 50 --seed 7
        """
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    shared = ArgumentParser(add_help=False)
    shared.add_argument('--input', '-i', help='Input CSV (id,x,sigma or id,Y,Yprime,n,nprime)')
    shared.add_argument('--output', '-o', default='output', help='Output directory (default: output)')
    shared.add_argument('--alpha', type=float, help=f'Target FDR level (default: {DEFAULT_ALPHA})')
    shared.add_argument('--mu0', type=float, help='Indifference-region cutoff')
    shared.add_argument('--grid-size', type=int, default=Config.GRID_SIZE,
                        help=f'Deconvolution grid size (default: {Config.GRID_SIZE})')
    shared.add_argument('--seed', type=int, default=0, help='Master seed (default: 0)')
    shared.add_argument('--threads', type=int, default=Config.THREADS,
                        help='Worker threads (default: available cores)')
    shared.add_argument('--log-level', default=Config.LOG_LEVEL, help='Logging level (default: INFO)')
    shared.add_argument('--grouping', default='none',
                        help='Sigma grouping for the prior fit: none, distinct or split:<v>')
    shared.add_argument('--trim-lower', type=float, default=0.0,
                        help='Drop units with sigma below this percentile (default: off)')
    shared.add_argument('--trim-upper', type=float, default=1.0,
                        help='Drop units with sigma above this percentile (default: off)')
    shared.add_argument('--stopping', choices=STOPPING_MODES, default='first_decline',
                        help='Stop at the first ETP* decline or scan the whole curve')
    shared.add_argument('--xi', choices=sorted(XI_REGISTRY), default=Config.XI, help='Score map')

    sub.add_parser('deconv-fit', parents=[shared], help='Fit the effect-size prior')
    select = sub.add_parser('select', parents=[shared], help='Run prioritized selection and baselines')
    select.add_argument('--prior', help='Reuse fitted_prior.json from deconv-fit instead of refitting')

    rvalue = sub.add_parser('rvalue', parents=[shared], help='Compute r-values')
    rvalue.add_argument('--prior', help='Reuse fitted_prior.json from deconv-fit instead of refitting')
    rvalue.add_argument('--definition', choices=('alpha', 'mu0'), default='alpha',
                        help='Vary alpha at fixed mu0, or vary mu0 at fixed alpha')
    rvalue.add_argument('--grid-points', type=int, default=Config.RVALUE_POINTS,
                        help=f'Grid points (default: {Config.RVALUE_POINTS})')

    simulate = sub.add_parser('simulate', parents=[shared], help='Run a replication study')
    simulate.add_argument('--design', choices=sorted(DESIGNS), help='Simulation design')
    simulate.add_argument('--sigma-max', type=float, help='Upper sigma bound (uniform design)')
    simulate.add_argument('--sigma', type=float,
                          help='sigma2 (two-component design) or sigma-bar (correlated design)')
    simulate.add_argument('--m', type=int, help='Units per replication')
    simulate.add_argument('--reps', type=int, default=1, help='Replications (default: 1)')
    simulate.add_argument('--n-mc', type=int, default=Config.N_MC,
                          help=f'Monte Carlo draws for oracle calibration (default: {Config.N_MC})')
    return parser


def _load(config: RunConfig):
    records = read_observations(config.input)
    if config.trim_lower > 0.0 or config.trim_upper < 1.0:
        records = trim_by_se_percentile(records, config.trim_lower, config.trim_upper)
    observations = [r.to_observation() for r in records]
    ids = [o.id for o in observations]
    xs = np.array([o.x for o in observations])
    sigmas = np.array([o.sigma for o in observations])
    return observations, ids, xs, sigmas


def _stored_fits(config: RunConfig, sigmas):
    try:
        doc = read_json(config.prior)
    except ValueError as e:
        raise InputError(f"{config.prior}: not a readable fitted prior ({e})")
    if doc.get("kind") != "fitted_prior":
        raise InputError(f"{config.prior}: expected a fitted_prior artifact, got {doc.get('kind')!r}")
    grouping = doc.get("config", {}).get("grouping") or config.grouping
    if grouping != config.grouping:
        logger.info("Using grouping %r stored with %s", grouping, config.prior)
    try:
        fits = {int(label): FittedPrior.from_dict(data) for label, data in doc["groups"].items()}
    except (KeyError, TypeError, AttributeError) as e:
        raise InputError(f"{config.prior}: malformed fitted prior ({e!r})")
    logger.info("Reusing %d fitted prior group(s) from %s", len(fits), config.prior)
    return group_labels(sigmas, grouping), fits


def _fit(config: RunConfig, observations, sigmas):
    if config.prior:
        return _stored_fits(config, sigmas)
    labels = group_labels(sigmas, config.grouping)
    fits = fit_prior_groups(observations, labels, config.grid_size)
    return labels, fits


def _fits_payload(fits):
    return {"groups": {str(label): fit.to_dict() for label, fit in fits.items()}}


def _cmd_deconv_fit(config: RunConfig, out: Path):
    observations, ids, xs, sigmas = _load(config)
    labels, fits = _fit(config, observations, sigmas)
    write_json(out / "fitted_prior.json", "fitted_prior", _fits_payload(fits), config.to_dict())
    if config.mu0 is not None:
        clfdrs = clfdr_from_fits(fits, labels, xs, sigmas, config.mu0)
        write_csv(out / "clfdr.csv", pd.DataFrame({"id": ids, "x": xs, "sigma": sigmas, "clfdr": clfdrs}))
    print(f"✅ Fitted {len(fits)} prior group(s) on {len(ids)} units")
    for label, fit in fits.items():
        print(f"   group {label}: k={fit.grid.k}, objective={fit.objective:.4e}, iterations={fit.iterations}")


def _cmd_select(config: RunConfig, out: Path):
    alpha, mu0 = config.effective_alpha, config.mu0
    observations, ids, xs, sigmas = _load(config)
    labels, fits = _fit(config, observations, sigmas)
    clfdrs = clfdr_from_fits(fits, labels, xs, sigmas, mu0)
    units = score_units(xs, clfdrs, mu0, alpha, ids=ids, xi=config.xi)

    dd = select_dd(units, alpha, mu0, stopping=config.stopping)
    stepup = select_clfdr_stepup(clfdrs, alpha, xs=xs, mu0=mu0)
    bh = select_bh(pvalues(xs, sigmas, mu0), alpha, xs=xs, mu0=mu0)

    frame = pd.DataFrame({
        "id": ids,
        "x": xs,
        "sigma": sigmas,
        "clfdr": clfdrs,
        "s": [u.s for u in units],
        "group": [int(u.group) for u in units],
        "selected": dd.decisions.decisions.astype(int),
    })
    write_csv(out / "selection.csv", frame)
    write_json(out / "selection.json", "selection", dd.to_dict(ids), config.to_dict())

    summary = {
        "methods": {
            name: {"number_rejected": result.n_selected, "modified_power": result.etp_star_realized}
            for name, result in (("DD", dd), ("Clfdr", stepup), ("BH", bh))
        },
        "n_units": len(ids),
        "alpha": alpha,
        "mu0": mu0,
        "grid_size": config.grid_size,
        "fitted_prior": _fits_payload(fits),
    }
    write_json(out / "summary.json", "selection_summary", summary, config.to_dict())

    print("\n📊 Selection summary")
    print("=" * 60)
    print(f"{'Method':<10}{'Number rejected':>20}{'Modified power':>20}")
    for name, result in (("DD", dd), ("Clfdr", stepup), ("BH", bh)):
        print(f"{name:<10}{result.n_selected:>20}{result.etp_star_realized:>20.4f}")
    print("=" * 60)


def _cmd_rvalue(config: RunConfig, out: Path):
    observations, ids, xs, sigmas = _load(config)
    labels, fits = _fit(config, observations, sigmas)

    if config.definition == "alpha":
        mu0 = config.mu0
        clfdrs = clfdr_from_fits(fits, labels, xs, sigmas, mu0)
        procedure = dd_alpha_procedure(xs, clfdrs, mu0, stopping=config.stopping)
        table = rvalue_vary_alpha(observations, procedure, default_alpha_grid(config.grid_points),
                                  threads=config.threads)
    else:
        alpha = config.alpha

        def clfdr_at(mu0):
            return clfdr_from_fits(fits, labels, xs, sigmas, mu0)
        procedure = dd_mu0_procedure(xs, clfdr_at, alpha, stopping=config.stopping)
        table = rvalue_vary_mu0(observations, procedure, default_mu0_grid(xs, config.grid_points),
                                threads=config.threads)

    write_csv(out / "rvalues.csv", table.to_frame().drop(columns=["tied"]))
    payload = table.to_dict()
    k = min(TOP_K, len(ids))
    top_r = top_k_by_rvalue(table, k)
    comparison = {"k": k, "mean_x_by_rvalue": top_k_mean_x(xs, top_r)}
    if config.mu0 is not None:
        top_p = top_k_by_pvalue(pvalues(xs, sigmas, config.mu0), k)
        comparison["mean_x_by_pvalue"] = top_k_mean_x(xs, top_p)
    payload["top_k"] = comparison
    write_json(out / "rvalues.json", "rvalues", payload, config.to_dict())

    print(f"\n🏁 r-values ({table.definition.value}, {table.grid.size} grid points)")
    print(f"   ranked units: {table.ranked().size} of {len(ids)}")
    if comparison["mean_x_by_rvalue"] is not None:
        print(f"   top-{k} mean x by r-value: {comparison['mean_x_by_rvalue']:.4f}")
    if comparison.get("mean_x_by_pvalue") is not None:
        print(f"   top-{k} mean x by p-value: {comparison['mean_x_by_pvalue']:.4f}")


def _design_from_config(config: RunConfig):
    common = {"master_seed": config.seed, "reps": config.reps, "alpha": config.effective_alpha}
    if config.mu0 is not None:
        common["mu0"] = config.mu0
    if config.m is not None:
        common["m"] = config.m
    if config.design == "uniform":
        return UniformIndep(sigma_max=config.sigma_max, **common)
    if config.design == "two-component":
        return TwoComponent(sigma2=config.sigma, **common)
    return CorrelatedTwoGroup(sigma=config.sigma, **common)


def _cmd_simulate(config: RunConfig, out: Path):
    design = _design_from_config(config)
    report = run_replications(design, threads=config.threads, n_mc=config.n_mc, k=config.grid_size,
                              stopping=config.stopping)
    write_json(out / "report.json", "replication_report", report.to_dict(), config.to_dict())
    write_csv(out / "report_tidy.csv", report.to_tidy_frame())

    print(f"\n📊 Replication summary: {design.name}, {design.reps} rep(s)")
    print("=" * 60)
    print(f"{'Method':<8}{'FDR':>10}{'mFDR':>10}{'ETP':>14}{'ETP*':>14}")
    for name in report.averages:
        avg = report.averages[name]
        print(f"{name:<8}{avg.fdp:>10.4f}{report.mfdr[name]:>10.4f}{avg.etp:>14.2f}{avg.etp_star:>14.2f}")
    print("=" * 60)


HANDLERS = {
    "deconv-fit": _cmd_deconv_fit,
    "select": _cmd_select,
    "rvalue": _cmd_rvalue,
    "simulate": _cmd_simulate,
}


def _error_report(exc, context=None):
    report = {"error": type(exc).__name__, "message": str(exc), "context": context or {}}
    print(json.dumps(report, sort_keys=True), file=sys.stderr)


def run(config: RunConfig) -> int:
    """Execute one command; returns the process exit status."""
    try:
        config.validate()
        out = Path(config.output)
        out.mkdir(parents=True, exist_ok=True)
        HANDLERS[config.command](config, out)
    except UsageError as e:
        _error_report(e)
        return EXIT_USAGE
    except IngestError as e:
        logger.error("Input error: %s", e)
        _error_report(e, e.context())
        return EXIT_INPUT
    except InputError as e:
        logger.error("Input error: %s", e)
        _error_report(e)
        return EXIT_INPUT
    except ConvergenceError as e:
        logger.error("Solver did not converge: %s", e)
        _error_report(e, e.context())
        return EXIT_CONVERGENCE
    except OSError as e:
        logger.error("I/O error: %s", e)
        _error_report(e, {"path": getattr(e, "filename", None)})
        return EXIT_IO
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        _error_report(e)
        return EXIT_USAGE
    configure_logging(args.log_level)
    return run(RunConfig.from_args(args))


if __name__ == "__main__":
    sys.exit(main())
