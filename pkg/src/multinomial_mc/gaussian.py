"""Gaussian (squared-loss) matrix completion baseline and its class-probability mapping."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .loss import SliceProblem
from .solver import FitReport, SolverConfig, solve_slice
from .tensor import AtomicDecomposition, ObservationSet, entry_values

SIGMA_FLOOR = 1e-6


@dataclass
class GaussianFit:
    decomposition: AtomicDecomposition
    sigma_hat: float
    report: Optional[FitReport] = None

    def __post_init__(self):
        if not self.sigma_hat > 0:
            raise ValueError("sigma_hat must be positive")

    def means(self, rows, cols) -> np.ndarray:
        return entry_values(self.decomposition, rows, cols)


def fit_gaussian(obs: ObservationSet, config: SolverConfig,
                 init: Optional[AtomicDecomposition] = None) -> GaussianFit:
    """Minimize ``(1/n) sum (Y_i - X_i)^2 + lam ||X||_*`` with labels read as reals.

    ``sigma_hat`` is the standard deviation of the training residuals, floored
    at ``SIGMA_FLOOR``.
    """
    if obs.n == 0:
        raise ValueError("no observations to fit")
    report = solve_slice(SliceProblem.squared(obs), config, init)
    fitted = entry_values(report.decomposition, obs.rows, obs.cols)
    resid = obs.labels - fitted
    sigma = float(np.std(resid)) if obs.n > 1 else 0.0
    return GaussianFit(report.decomposition, max(sigma, SIGMA_FLOOR), report)


def gaussian_bin_probabilities(means, sigma: float, n_classes: int) -> np.ndarray:
    """Class probabilities from a normal law ``N(mean, sigma^2)`` binned at ``j + 0.5``.

    Class ``j`` receives the mass of ``[j - 0.5, j + 0.5)``; the first and last
    classes absorb the tails. Returns an array of shape ``means.shape + (K,)``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    means = np.asarray(means, dtype=float)
    cuts = np.arange(1, n_classes) + 0.5
    cdf = ndtr((cuts - means[..., None]) / sigma)
    lower = np.concatenate([np.zeros(means.shape + (1,)), cdf], axis=-1)
    upper = np.concatenate([cdf, np.ones(means.shape + (1,))], axis=-1)
    return np.maximum(upper - lower, 0.0)


def gaussian_class_probs(fit: GaussianFit, rows, cols, n_classes: int) -> np.ndarray:
    """Estimated class probabilities at the entries ``(rows[i], cols[i])``."""
    return gaussian_bin_probabilities(fit.means(rows, cols), fit.sigma_hat, n_classes)
