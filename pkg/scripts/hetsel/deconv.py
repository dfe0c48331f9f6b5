"""
Density-matching deconvolution of the effect-size prior.

The prior is discretized to k equally spaced grid nodes. Weights on the
simplex are chosen so that the implied marginal sum_j w_j phi_sigma_i(x_i - node_j)
matches a weighted bivariate kernel estimate of the marginal density at each
observation, in least squares.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from hetsel.config import Config
from hetsel.model import InputError, observation_arrays

logger = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-300


class ConvergenceError(RuntimeError):
    """Raised when the simplex solver hits its iteration cap."""

    def __init__(self, message, best_weights=None, residual=None, iterations=0, rep=None):
        super().__init__(message)
        self.best_weights = best_weights
        self.residual = residual
        self.iterations = iterations
        self.rep = rep

    def context(self):
        return {"residual": self.residual, "iterations": self.iterations, "rep": self.rep}


@dataclass(frozen=True)
class PriorGrid:
    nodes: np.ndarray
    s: float
    eta: float
    k: int

    def __post_init__(self):
        if self.k < 2:
            raise InputError(f"grid needs k >= 2 nodes, got {self.k}")
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise InputError(f"grid spacing must be positive, got {self.eta}")
        nodes = np.asarray(self.nodes, dtype=float)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def from_range(cls, left, right, k):
        if k < 2:
            raise InputError(f"grid needs k >= 2 nodes, got {k}")
        if not right > left:
            raise InputError(f"grid needs right > left, got [{left}, {right}]")
        nodes = np.linspace(left, right, k)
        return cls(nodes=nodes, s=float(left), eta=float((right - left) / (k - 1)), k=int(k))

    @property
    def right(self):
        return float(self.nodes[-1])


@dataclass(frozen=True)
class GridWeights:
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InputError("grid weights must be nonnegative and sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)


@dataclass(frozen=True)
class BandwidthPair:
    h_x: float
    h_sigma: float

    def __post_init__(self):
        for name, value in (("h_x", self.h_x), ("h_sigma", self.h_sigma)):
            if not (np.isfinite(value) and value > 0):
                raise InputError(f"bandwidth {name} must be positive and finite, got {value}")

    def to_dict(self):
        return {"h_x": self.h_x, "h_sigma": self.h_sigma}


@dataclass(frozen=True)
class FittedPrior:
    grid: PriorGrid
    weights: GridWeights
    objective: float
    iterations: int
    residual: float = 0.0
    bandwidths: Optional[BandwidthPair] = None
    history: Tuple[float, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if not self.objective >= 0:
            raise InputError(f"objective must be nonnegative, got {self.objective}")

    def to_dict(self):
        return {
            "nodes": self.grid.nodes.tolist(),
            "weights": self.weights.w.tolist(),
            "objective": self.objective,
            "iterations": self.iterations,
            "residual": self.residual,
            "bandwidths": self.bandwidths.to_dict() if self.bandwidths else None,
        }

    @classmethod
    def from_dict(cls, data):
        nodes = np.asarray(data["nodes"], dtype=float)
        if nodes.size < 2:
            raise InputError("a stored prior needs at least two nodes")
        grid = PriorGrid(nodes=nodes, s=float(nodes[0]), eta=float(nodes[1] - nodes[0]), k=nodes.size)
        bw = data.get("bandwidths")
        return cls(
            grid=grid,
            weights=GridWeights(np.asarray(data["weights"], dtype=float)),
            objective=float(data["objective"]),
            iterations=int(data["iterations"]),
            residual=float(data.get("residual") or 0.0),
            bandwidths=BandwidthPair(**bw) if bw else None,
        )


def build_grid(xs, k=None):
    """Grid spanning the empirical 1% and 99% quantiles (linear interpolation)."""
    k = Config.GRID_SIZE if k is None else int(k)
    xs = np.asarray(xs, dtype=float)
    if k < 2:
        raise InputError(f"grid needs k >= 2 nodes, got {k}")
    if np.unique(xs).size < 2:
        raise InputError("grid support needs at least 2 distinct x values")
    left, right = np.quantile(xs, [0.01, 0.99])
    if not right > left:
        # heavy ties at both tails; widen to the sample range
        logger.warning("1%/99% quantiles coincide; using the sample range for the grid")
        left, right = xs.min(), xs.max()
    return PriorGrid.from_range(float(left), float(right), k)


def silverman_bandwidth(values):
    """0.9 * min(sd, IQR) / (1.34 * m^(1/5)), sd with ddof=1."""
    values = np.asarray(values, dtype=float)
    m = values.size
    if m < 2:
        raise InputError("bandwidth needs at least 2 values")
    q25, q75 = np.quantile(values, [0.25, 0.75])
    spread = min(np.std(values, ddof=1), q75 - q25)
    h = 0.9 * spread / (1.34 * m ** 0.2)
    if not h > 0:
        raise InputError("zero spread: bandwidth would vanish")
    return float(h)


def silverman_bandwidths(xs, sigmas):
    return BandwidthPair(h_x=silverman_bandwidth(xs), h_sigma=silverman_bandwidth(sigmas))


def estimate_bandwidths(xs, sigmas):
    """Rule-of-thumb bandwidths; constant sigma falls back to h_sigma = 1."""
    try:
        h_sigma = silverman_bandwidth(sigmas)
    except InputError:
        logger.info("sigma has no spread within this group; using h_sigma = 1")
        h_sigma = 1.0
    return BandwidthPair(h_x=silverman_bandwidth(xs), h_sigma=h_sigma)


def kernel_marginals(xs, sigmas, h: BandwidthPair, block=None):
    """Weighted bivariate kernel estimate of the marginal density at every x_i."""
    xs = np.asarray(xs, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    block = block or Config.KERNEL_BLOCK
    out = np.empty(xs.size, dtype=float)
    h_cols = h.h_x * sigmas
    for start in range(0, xs.size, block):
        rows = slice(start, start + block)
        sigma_weights = norm.pdf(sigmas[rows, None] - sigmas[None, :], scale=h.h_sigma)
        sigma_weights /= sigma_weights.sum(axis=1, keepdims=True)
        kernel = norm.pdf(xs[rows, None] - xs[None, :], scale=h_cols[None, :])
        out[rows] = np.sum(sigma_weights * kernel, axis=1)
    return out


def kernel_marginal(i, observations, h: BandwidthPair):
    """Kernel marginal density of one observation, its own term included."""
    _, xs, sigmas = observation_arrays(observations)
    if not 0 <= i < xs.size:
        raise InputError(f"index {i} out of range for {xs.size} observations")
    sigma_weights = norm.pdf(sigmas[i] - sigmas, scale=h.h_sigma)
    sigma_weights /= sigma_weights.sum()
    return float(np.sum(sigma_weights * norm.pdf(xs[i] - xs, scale=h.h_x * sigmas)))


def euclidean_proj_simplex(v, s=1.0):
    """Euclidean projection of v onto {w : sum(w) = s, w >= 0} (sort based)."""
    n = v.shape[0]
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, n + 1) > (cssv - s))[0][-1]
    theta = (cssv[rho] - s) / (rho + 1.0)
    return np.clip(v - theta, 0.0, None)


def design_matrix(grid: PriorGrid, xs, sigmas):
    return norm.pdf(xs[:, None] - grid.nodes[None, :], scale=sigmas[:, None])


def _face_step(w, R, z, objective, f):
    """
    Least-squares minimizer on the face spanned by the current support,
    followed as far as nonnegativity allows. Returns None without descent.
    """
    support = np.flatnonzero(w > 0)
    n = support.size
    if n < 2:
        return None
    Rs = R[:, support]
    centre = np.full(n, 1.0 / n)
    basis = np.linalg.qr(np.ones((n, 1)), mode="complete")[0][:, 1:]
    y = np.linalg.lstsq(Rs @ basis, z - Rs @ centre, rcond=None)[0]
    direction = centre + basis @ y - w[support]
    shrinking = direction < 0
    t = 1.0
    if shrinking.any():
        t = min(1.0, float(np.min(-w[support][shrinking] / direction[shrinking])))
    candidate = w.copy()
    candidate[support] = np.clip(w[support] + t * direction, 0.0, None)
    candidate /= candidate.sum()
    f_new = objective(candidate)
    return (candidate, f_new) if f_new < f else None


def fit_weights(grid: PriorGrid, observations, marginals, max_iter=None, rel_tol=None, pg_tol=None,
                bandwidths=None, window=None):
    """
    Minimize sum_i (f_i(x_i) - marginals_i)^2 over the probability simplex.

    Accelerated projected gradient from uniform weights, with momentum
    it / (it + 3) and a backtracking line search. Momentum is reset whenever a
    step fails to descend, so the accepted objective values never increase.
    Every `window` iterations the exact least-squares solution on the current
    support is tried as an active-set step. The objective is evaluated through
    a thin QR factorization of the design matrix so the constant part does not
    cancel against the fit.

    Stops when the gradient mapping falls below pg_tol times the gradient norm
    at the start, or when the objective improves by less than rel_tol per
    iteration (relative) over the last `window` iterations.
    """
    max_iter = Config.MAX_ITER if max_iter is None else max_iter
    rel_tol = Config.REL_TOL if rel_tol is None else rel_tol
    pg_tol = Config.PG_TOL if pg_tol is None else pg_tol
    window = Config.STALL_WINDOW if window is None else max(1, int(window))

    _, xs, sigmas = observation_arrays(observations)
    b = np.asarray(marginals, dtype=float)
    if b.shape != xs.shape:
        raise InputError("one marginal density per observation is required")
    if np.any(~(b > 0)):
        raise InputError("marginal densities must be positive")

    A = design_matrix(grid, xs, sigmas)
    Q, R = np.linalg.qr(A)
    z = Q.T @ b
    const = max(float(b @ b - z @ z), 0.0)

    def objective(w):
        r = R @ w - z
        return float(r @ r) + const

    def gradient(w):
        return 2.0 * (R.T @ (R @ w - z))

    lipschitz = 2.0 * np.linalg.norm(R, 2) ** 2
    base_step = 1.0 / lipschitz if lipschitz > 0 else 1.0

    w = np.full(grid.k, 1.0 / grid.k)
    g_scale = float(np.linalg.norm(gradient(w)))

    def stationarity(w, g):
        if g_scale == 0.0:
            return 0.0
        mapped = (w - euclidean_proj_simplex(w - base_step * g)) / base_step
        return float(np.linalg.norm(mapped)) / g_scale

    def prox_step(y, gy, fy):
        step = base_step
        while True:
            w_new = euclidean_proj_simplex(y - step * gy)
            d = w_new - y
            f_new = objective(w_new)
            if f_new <= fy + gy @ d + (d @ d) / (2.0 * step) or step < 1e-300:
                return w_new, f_new
            step *= 0.5

    f = objective(w)
    history = [f]
    w_prev = w
    momentum = 0
    converged = False
    iterations = 0
    restarts = 0
    face_steps = 0

    logger.debug("fit_weights: m=%d k=%d initial objective %.6e, L=%.3e", xs.size, grid.k, f, lipschitz)
    while iterations < max_iter:
        g = gradient(w)
        if stationarity(w, g) < pg_tol:
            converged = True
            break
        if len(history) > window:
            drop = history[-1 - window] - history[-1]
            if drop < rel_tol * window * max(history[-1], 1e-300):
                converged = True
                break
        iterations += 1

        if iterations % window == 0:
            polished = _face_step(w, R, z, objective, f)
            if polished is not None:
                w, f = polished
                w_prev = w
                momentum = 0
                face_steps += 1
                history.append(f)
                continue

        beta = momentum / (momentum + 3.0)
        y = w + beta * (w - w_prev)
        if beta:
            gy = gradient(y)
            fy = objective(y)
        else:
            gy, fy = g, f
        w_new, f_new = prox_step(y, gy, fy)

        if f_new > f:
            if not beta:
                # rounding floor reached: a plain step no longer descends
                converged = True
                break
            restarts += 1
            momentum = 0
            w_prev = w
            continue
        w_prev, w, f = w, w_new, f_new
        momentum += 1
        history.append(f)

    residual = stationarity(w, gradient(w))
    if not converged:
        raise ConvergenceError(
            f"simplex solver did not converge in {max_iter} iterations (residual {residual:.3e})",
            best_weights=w.copy(), residual=residual, iterations=iterations,
        )

    # exact feasibility after the last projection
    w = np.clip(w, 0.0, None)
    w /= w.sum()
    logger.debug("fit_weights: converged after %d iterations (%d restarts, %d face steps), objective %.6e, "
                 "residual %.3e",
                 iterations, restarts, face_steps, f, residual)
    return FittedPrior(
        grid=grid,
        weights=GridWeights(w),
        objective=f,
        iterations=iterations,
        residual=residual,
        bandwidths=bandwidths,
        history=tuple(history),
    )


def fit_prior(observations, k=None, **solver_kwargs):
    """Grid, bandwidths, kernel marginals and simplex fit for one group of units."""
    _, xs, sigmas = observation_arrays(observations)
    grid = build_grid(xs, k)
    h = estimate_bandwidths(xs, sigmas)
    marginals = kernel_marginals(xs, sigmas, h)
    logger.info("Fitting prior: %d units, k=%d, h_x=%.4g, h_sigma=%.4g", xs.size, grid.k, h.h_x, h.h_sigma)
    return fit_weights(grid, observations, marginals, bandwidths=h, **solver_kwargs)


def clfdr_from_fit_arrays(fit: FittedPrior, xs, sigmas, mu0):
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    nodes = fit.grid.nodes
    w = fit.weights.w
    log_phi = norm.logpdf(xs[:, None], loc=nodes[None, :], scale=sigmas[:, None])
    with np.errstate(divide="ignore"):
        log_f = logsumexp(log_phi, axis=1, b=w[None, :])
        null = nodes <= mu0
        if null.any() and w[null].sum() > 0:
            log_f0 = logsumexp(log_phi[:, null], axis=1, b=w[None, null])
        else:
            log_f0 = np.full(xs.size, -np.inf)
    # log-space densities only fail to be finite when f itself is zero
    log_f = np.where(np.isfinite(log_f), log_f, np.log(DENSITY_FLOOR))
    with np.errstate(under="ignore"):
        return np.clip(np.exp(log_f0 - log_f), 0.0, 1.0)


def clfdr_from_fit(fit: FittedPrior, obs, mu0):
    return float(clfdr_from_fit_arrays(fit, [obs.x], [obs.sigma], mu0)[0])


def group_labels(sigmas, grouping="none"):
    """
    Map a grouping onto per-unit labels.

    none      one group
    distinct  one group per distinct sigma value
    split:v   sigma <= v versus sigma > v
    """
    sigmas = np.asarray(sigmas, dtype=float)
    grouping = (grouping or "none").strip().lower()
    if grouping == "none":
        return np.zeros(sigmas.size, dtype=int)
    if grouping == "distinct":
        _, labels = np.unique(sigmas, return_inverse=True)
        return labels.astype(int)
    if grouping.startswith("split:"):
        try:
            cut = float(grouping.split(":", 1)[1])
        except ValueError:
            raise InputError(f"invalid split value in grouping {grouping!r}")
        return (sigmas > cut).astype(int)
    raise InputError(f"unknown grouping {grouping!r} (expected none, distinct or split:<v>)")


def fit_prior_groups(observations, labels, k=None, **solver_kwargs) -> Dict[int, FittedPrior]:
    labels = np.asarray(labels)
    if labels.size != len(observations):
        raise InputError("one group label per observation is required")
    fits = {}
    for label in np.unique(labels):
        members = [obs for obs, keep in zip(observations, labels == label) if keep]
        fits[int(label)] = fit_prior(members, k, **solver_kwargs)
    return fits


def clfdr_from_fits(fits: Mapping[int, FittedPrior], labels, xs, sigmas, mu0):
    labels = np.asarray(labels)
    xs = np.asarray(xs, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    out = np.empty(xs.size, dtype=float)
    for label, fit in fits.items():
        mask = labels == label
        if mask.any():
            out[mask] = clfdr_from_fit_arrays(fit, xs[mask], sigmas[mask], mu0)
    missing = ~np.isin(labels, list(fits))
    if missing.any():
        raise InputError(f"{int(missing.sum())} units have no fitted prior for their group")
    return out
