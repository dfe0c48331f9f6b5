"""
r-values: the extremal threshold at which a unit enters a selection set.

VaryAlpha  r_i = smallest grid alpha at which unit i is selected
VaryMu0    r_i = largest grid mu0 at which unit i is selected (fixed alpha)

Selections are replayed at every grid point; since prioritized selection is
not nested, r_i scans all grid points instead of bisecting.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
import pandas as pd

from hetsel.config import Config
from hetsel.model import InputError
from hetsel.selection import select_dd_arrays, select_oracle

logger = logging.getLogger(__name__)

Procedure = Callable[[float], np.ndarray]


class RValueDefinition(str, Enum):
    VARY_ALPHA = "VaryAlpha"
    VARY_MU0 = "VaryMu0"


@dataclass(frozen=True)
class RValueTable:
    ids: tuple
    x: np.ndarray
    sigma: np.ndarray
    r: np.ndarray
    r_prime: np.ndarray
    tied: np.ndarray
    definition: RValueDefinition
    grid_resolution: float
    grid: np.ndarray

    def __len__(self):
        return len(self.ids)

    def ranked(self):
        """Unit positions in rank order (never-selected units excluded)."""
        finite = np.flatnonzero(np.isfinite(self.r_prime))
        return finite[np.argsort(self.r_prime[finite], kind="mergesort")]

    def to_frame(self):
        return pd.DataFrame({
            "id": list(self.ids),
            "x": self.x,
            "sigma": self.sigma,
            "r": self.r,
            "r_prime": self.r_prime,
            "definition": self.definition.value,
            "grid_resolution": self.grid_resolution,
            "tied": self.tied,
        })

    def to_dict(self):
        return {
            "definition": self.definition.value,
            "grid_resolution": self.grid_resolution,
            "grid_points": int(self.grid.size),
            "units": [
                {"id": i, "x": float(x), "sigma": float(s), "r": float(r), "r_prime": float(rp), "tied": bool(t)}
                for i, x, s, r, rp, t in zip(self.ids, self.x, self.sigma, self.r, self.r_prime, self.tied)
            ],
        }


def default_alpha_grid(points=None):
    points = points or Config.RVALUE_POINTS
    return np.geomspace(1e-4, 0.5, points)


def default_mu0_grid(xs, points=None):
    points = points or Config.RVALUE_POINTS
    xs = np.asarray(xs, dtype=float)
    eps = 1e-6 * (1.0 + float(xs.max() - xs.min()))
    return np.linspace(xs.max() + eps, xs.min() - eps, points)


def _validate_grid(grid, descending):
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise InputError("r-value grid is empty")
    if not np.all(np.isfinite(grid)):
        raise InputError("r-value grid must be finite")
    steps = np.diff(grid)
    if descending and np.any(steps >= 0):
        raise InputError("mu0 grid must be strictly descending")
    if not descending and np.any(steps <= 0):
        raise InputError("alpha grid must be strictly ascending")
    return grid


def _replay(procedure: Procedure, grid, n, threads):
    threads = threads or Config.THREADS
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        rows = list(executor.map(procedure, grid))
    decisions = np.vstack([np.asarray(row, dtype=np.int8).reshape(-1) for row in rows])
    if decisions.shape[1] != n:
        raise InputError(f"procedure returned {decisions.shape[1]} decisions for {n} units")
    return decisions.astype(bool)


def _first_hit(decisions, grid, sentinel):
    hit = decisions.any(axis=0)
    first = decisions.argmax(axis=0)
    return np.where(hit, grid[first], sentinel)


def _rank(r, xs, better_is_smaller):
    """Standardized ranks position/m; ties broken by larger x, then index."""
    m = r.size
    r_prime = np.full(m, np.nan)
    tied = np.zeros(m, dtype=bool)
    finite = np.flatnonzero(np.isfinite(r))
    if finite.size:
        key = r[finite] if better_is_smaller else -r[finite]
        order = finite[np.lexsort((finite, -xs[finite], key))]
        r_prime[order] = np.arange(1, order.size + 1) / m
        values, counts = np.unique(r[finite], return_counts=True)
        tied[finite] = np.isin(r[finite], values[counts > 1])
    return r_prime, tied


def _resolution(grid):
    return float(np.max(np.abs(np.diff(grid)))) if grid.size > 1 else 0.0


def _table(observations, r, grid, definition, better_is_smaller):
    ids = tuple(o.id for o in observations)
    xs = np.array([o.x for o in observations], dtype=float)
    sigmas = np.array([o.sigma for o in observations], dtype=float)
    r_prime, tied = _rank(r, xs, better_is_smaller)
    if tied.any():
        logger.info("%d units share an r-value with another unit", int(tied.sum()))
    return RValueTable(ids=ids, x=xs, sigma=sigmas, r=r, r_prime=r_prime, tied=tied,
                       definition=definition, grid_resolution=_resolution(grid), grid=grid)


def rvalue_vary_alpha(observations, procedure: Procedure, alpha_grid=None, threads=None) -> RValueTable:
    grid = default_alpha_grid() if alpha_grid is None else alpha_grid
    grid = _validate_grid(grid, descending=False)
    if grid[0] <= 0 or grid[-1] >= 1:
        raise InputError("alpha grid must lie inside (0, 1)")
    logger.info("r-values over %d alpha values for %d units", grid.size, len(observations))
    decisions = _replay(procedure, grid, len(observations), threads)
    r = _first_hit(decisions, grid, np.inf)
    return _table(observations, r, grid, RValueDefinition.VARY_ALPHA, better_is_smaller=True)


def rvalue_vary_mu0(observations, procedure: Procedure, mu0_grid=None, threads=None) -> RValueTable:
    if mu0_grid is None:
        mu0_grid = default_mu0_grid([o.x for o in observations])
    grid = _validate_grid(mu0_grid, descending=True)
    logger.info("r-values over %d mu0 values for %d units", grid.size, len(observations))
    decisions = _replay(procedure, grid, len(observations), threads)
    r = _first_hit(decisions, grid, -np.inf)
    return _table(observations, r, grid, RValueDefinition.VARY_MU0, better_is_smaller=False)


# Procedure factories

def pcer_procedure(pvalues) -> Procedure:
    """Per-comparison rule: select every unit with p <= alpha."""
    pvalues = np.asarray(pvalues, dtype=float)
    return lambda alpha: (pvalues <= alpha).astype(np.int8)


def dd_alpha_procedure(xs, clfdrs, mu0, stopping="first_decline") -> Procedure:
    xs = np.asarray(xs, dtype=float)
    clfdrs = np.asarray(clfdrs, dtype=float)

    def procedure(alpha):
        return select_dd_arrays(xs, clfdrs, alpha, mu0, stopping=stopping, with_trace=False).decisions.decisions
    return procedure


def dd_mu0_procedure(xs, clfdr_at: Callable[[float], np.ndarray], alpha, stopping="first_decline") -> Procedure:
    """mu0-indexed prioritized selection; Clfdr is re-evaluated at every mu0."""
    xs = np.asarray(xs, dtype=float)

    def procedure(mu0):
        return select_dd_arrays(xs, clfdr_at(mu0), alpha, mu0, stopping=stopping,
                                with_trace=False).decisions.decisions
    return procedure


def oracle_alpha_procedure(xs, clfdrs, mu0, thresholds_at) -> Procedure:
    xs = np.asarray(xs, dtype=float)
    clfdrs = np.asarray(clfdrs, dtype=float)
    return lambda alpha: select_oracle(xs, clfdrs, mu0, alpha, thresholds_at(alpha)).decisions.decisions


def oracle_mu0_procedure(xs, clfdr_at, alpha, thresholds_at) -> Procedure:
    xs = np.asarray(xs, dtype=float)
    return lambda mu0: select_oracle(xs, clfdr_at(mu0), mu0, alpha, thresholds_at(mu0)).decisions.decisions


# Top-k comparisons

def top_k_by_rvalue(table: RValueTable, k):
    return table.ranked()[:k]


def top_k_by_pvalue(pvalues, k):
    pvalues = np.asarray(pvalues, dtype=float)
    return np.argsort(pvalues, kind="mergesort")[:k]


def top_k_mean_x(xs, indices) -> Optional[float]:
    indices = np.asarray(indices, dtype=int)
    if indices.size == 0:
        return None
    return float(np.mean(np.asarray(xs, dtype=float)[indices]))
