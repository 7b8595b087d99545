"""Univariate Gaussian mixture fitting with fixed component means.

Each bin group poses one mixture problem: the ground-truth pixels are
modeled as a mixture of M Gaussians, one per model, whose means are pinned
to the observed per-model prediction averages inside the group.  EM then
re-estimates only the mixture weights and component variances.  The
converged weights are the ensemble weights for that bin set.

All density sums run in log space with max-subtraction so that posteriors
stay normalized even when variances sit at the floor and residuals are
large.  Reductions use a fixed ascending-pixel order, so results are
independent of how groups are scheduled across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .binning import BinGroup

__all__ = [
    "EmConfig",
    "GmmModel",
    "e_step",
    "gaussian_pdf",
    "init_priors",
    "is_undetermined",
    "m_step",
    "mixture_loglik",
    "run_em",
]

_LOG_TWO_PI = math.log(2.0 * math.pi)

INIT_MODES = ("sample_variance", "norm_over_count")


@dataclass(frozen=True)
class EmConfig:
    """Solver settings.

    ``loglik_tol`` is the absolute change of the total (not per-pixel)
    log-likelihood between successive iterations.  ``init_mode`` selects the
    variance initializer: ``sample_variance`` is the mean squared deviation
    of the predictions (dimensionally consistent with the variance update),
    ``norm_over_count`` is the l2 norm of the deviations divided by the
    pixel count (a legacy initializer kept for comparison).
    """

    max_steps: int = 1000
    loglik_tol: float = 1e-5
    min_pixels: int = 100
    variance_floor: float = 1e-6
    init_mode: str = "sample_variance"

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.loglik_tol <= 0.0:
            raise ValueError("loglik_tol must be > 0")
        if self.variance_floor <= 0.0:
            raise ValueError("variance_floor must be > 0")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")


@dataclass
class GmmModel:
    """Mixture state for one bin group.

    ``means`` never change after initialization; ``variances`` are the
    second parameter of the normal density (i.e. true variances, not
    standard deviations); ``weights`` live on the probability simplex.
    """

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    count: int
    converged: bool = False
    steps_taken: int = 0
    loglik_trace: list[float] = field(default_factory=list)

    @property
    def num_components(self) -> int:
        return int(self.means.shape[0])


def gaussian_pdf(y, mean, variance):
    """Normal density with ``variance`` as the squared-scale parameter."""
    y = np.asarray(y, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    variance = np.asarray(variance, dtype=np.float64)
    if not (np.isfinite(y).all() and np.isfinite(mean).all() and np.isfinite(variance).all()):
        raise ValueError("non-finite inputs to gaussian_pdf")
    if np.any(variance <= 0.0):
        raise ValueError("variance must be positive")
    out = np.exp(-((y - mean) ** 2) / (2.0 * variance)) / np.sqrt(2.0 * np.pi * variance)
    return out if out.ndim else float(out)


def init_priors(group: BinGroup, cfg: EmConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Observed means, prior variances and uniform weights for a group."""
    if group.count < 1:
        raise ValueError("empty bin group")
    x = group.pred_values
    num_models = x.shape[0]
    means = x.mean(axis=1)
    dev_sq = (x - means[:, None]) ** 2
    if cfg.init_mode == "sample_variance":
        variances = dev_sq.mean(axis=1)
    else:  # norm_over_count
        variances = np.sqrt(dev_sq.sum(axis=1)) / group.count
    variances = np.maximum(variances, cfg.variance_floor)
    weights = np.full(num_models, 1.0 / num_models)
    return means, variances, weights


def _log_densities(diff_sq: np.ndarray, variances: np.ndarray) -> np.ndarray:
    return -0.5 * (_LOG_TWO_PI + np.log(variances))[None, :] - diff_sq / (2.0 * variances)[None, :]


def _posteriors(diff_sq: np.ndarray, variances: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, float]:
    """Responsibilities and total log-likelihood, computed in log space."""
    with np.errstate(divide="ignore"):  # log of zero weights is -inf, by design
        z = _log_densities(diff_sq, variances) + np.log(weights)[None, :]
    zmax = z.max(axis=1, keepdims=True)
    dead = ~np.isfinite(zmax[:, 0])
    if dead.any():
        zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    ez = np.exp(z - zmax)
    denom = ez.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):  # dead rows fixed below
        gamma = ez / denom[:, None]
        row_loglik = zmax[:, 0] + np.log(denom)
    if dead.any():
        # All components underflowed to -inf: fall back to the current weights.
        gamma[dead] = weights
        row_loglik[dead] = -np.inf
    return gamma, float(row_loglik.sum())


def _diff_sq(group: BinGroup, means: np.ndarray) -> np.ndarray:
    return (group.gt_values[:, None] - means[None, :]) ** 2


def e_step(group: BinGroup, model: GmmModel) -> np.ndarray:
    """Posterior responsibilities, one row per pixel; rows sum to 1."""
    gamma, _ = _posteriors(_diff_sq(group, model.means), model.variances, model.weights)
    return gamma


def mixture_loglik(group: BinGroup, model: GmmModel) -> float:
    """Total log-likelihood of the group under the model."""
    _, loglik = _posteriors(_diff_sq(group, model.means), model.variances, model.weights)
    return loglik


def _m_step_update(
    diff_sq: np.ndarray,
    gamma: np.ndarray,
    variances: np.ndarray,
    floor: float,
) -> tuple[np.ndarray, np.ndarray]:
    count = gamma.shape[0]
    col = gamma.sum(axis=0)
    weights = col / count
    # Renormalize away summation drift; the exact column sums total N.
    weights = weights / weights.sum()
    new_var = variances.copy()
    alive = col > 0.0
    if alive.any():
        new_var[alive] = (gamma[:, alive] * diff_sq[:, alive]).sum(axis=0) / col[alive]
    new_var = np.maximum(new_var, floor)
    return weights, new_var


def m_step(group: BinGroup, gamma: np.ndarray, model: GmmModel, cfg: EmConfig) -> GmmModel:
    """Update weights and variances; means are held fixed.

    A component with zero total responsibility keeps its previous variance
    and receives weight 0, so the weight vector keeps its length.
    """
    weights, variances = _m_step_update(
        _diff_sq(group, model.means), gamma, model.variances, cfg.variance_floor
    )
    return replace(model, weights=weights, variances=variances)


def run_em(group: BinGroup, cfg: EmConfig) -> GmmModel:
    """Fit one bin group: alternate E and M steps from the observed priors.

    Stops when the absolute change of the total log-likelihood drops below
    ``cfg.loglik_tol`` or after ``cfg.max_steps`` M-steps.  The trace holds
    the log-likelihood evaluated before the first M-step and after each
    subsequent one.
    """
    means, variances, weights = init_priors(group, cfg)
    diff_sq = _diff_sq(group, means)

    gamma, loglik = _posteriors(diff_sq, variances, weights)
    trace = [loglik]
    converged = False
    steps = 0
    for _ in range(cfg.max_steps):
        weights, variances = _m_step_update(diff_sq, gamma, variances, cfg.variance_floor)
        steps += 1
        gamma, loglik = _posteriors(diff_sq, variances, weights)
        trace.append(loglik)
        if abs(trace[-1] - trace[-2]) < cfg.loglik_tol:
            converged = True
            break
    return GmmModel(
        means=means,
        variances=variances,
        weights=weights,
        count=group.count,
        converged=converged,
        steps_taken=steps,
        loglik_trace=trace,
    )


def is_undetermined(model: GmmModel, cfg: EmConfig, rtol: float = 1e-8) -> bool:
    """Whether the fit is degenerate and should be replaced by fallback weights.

    Degenerate means: any non-finite weight or variance, every variance
    pinned at the floor simultaneously, or a log-likelihood decrease beyond
    the relative tolerance.
    """
    if not (np.isfinite(model.weights).all() and np.isfinite(model.variances).all()):
        return True
    if np.all(model.variances <= cfg.variance_floor):
        return True
    trace = model.loglik_trace
    for prev, cur in zip(trace[:-1], trace[1:]):
        if cur < prev - rtol * abs(prev):
            return True
    return False
