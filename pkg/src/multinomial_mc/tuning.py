"""Choice of the regularization parameter: theoretical value and k-fold cross-validation."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .gaussian import GaussianFit, fit_gaussian, gaussian_class_probs
from .links import ConditionalLogitLink
from .loss import SliceProblem
from .solver import SolverConfig, solve_tensor
from .tensor import AtomicDecomposition, ObservationSet, entry_values

LOGISTIC = "logistic"
GAUSSIAN = "gaussian"
GRID_RATIO = 1000.0


def lambda_from_constant(lipschitz: float, nu: float, n: int, m1: int, m2: int) -> float:
    """``6 L sqrt(2 nu log(m1 + m2) / (min(m1, m2) n))``."""
    if min(lipschitz, nu, n, m1, m2) <= 0:
        raise ValueError("all arguments must be positive")
    d = m1 + m2
    m = min(m1, m2)
    return 6.0 * lipschitz * math.sqrt(2.0 * nu * math.log(d) / (m * n))


def theoretical_lambda(link: ConditionalLogitLink, gamma: float, nu: float, n: int,
                       m1: int, m2: int) -> float:
    """Regularization level with the high-probability risk guarantee, using ``L_gamma`` of ``link``."""
    return lambda_from_constant(link.constants(gamma).L, nu, n, m1, m2)


def grid_size(n: int) -> int:
    """``ceil(0.6 log n)`` with the natural logarithm, at least 1."""
    return max(1, math.ceil(0.6 * math.log(n)))


def lambda_grid(ceiling: float, n: int, ratio: float = GRID_RATIO) -> np.ndarray:
    """Decreasing geometric grid from ``ceiling`` down to ``ceiling / ratio``."""
    if not ceiling > 0:
        raise ValueError("ceiling must be positive")
    size = grid_size(n)
    if size == 1:
        return np.array([ceiling])
    return ceiling * np.geomspace(1.0, 1.0 / ratio, size)


def null_threshold(obs: ObservationSet, model: str,
                   link: Optional[ConditionalLogitLink] = None) -> float:
    """Smallest lambda for which the fitted model is zero (largest over slices)."""
    if model == GAUSSIAN:
        return SliceProblem.squared(obs).null_threshold()
    link = link or ConditionalLogitLink(obs.n_classes)
    return max(SliceProblem.multinomial(obs, l, link).null_threshold()
               for l in range(1, link.n_slices + 1))


def fit_model(obs: ObservationSet, model: str, config: SolverConfig,
              link: Optional[ConditionalLogitLink] = None, init=None):
    """Fit one model at ``config.lam``.

    Returns a list of per-slice :class:`FitReport` for the logistic model and a
    :class:`GaussianFit` for the Gaussian one; ``init`` is a previous result of
    the same kind used as warm start.
    """
    if model == GAUSSIAN:
        return fit_gaussian(obs, config, init.decomposition if init is not None else None)
    if model != LOGISTIC:
        raise ValueError(f"unknown model {model!r}")
    link = link or ConditionalLogitLink(obs.n_classes)
    inits = [r.decomposition for r in init] if init is not None else None
    return solve_tensor(obs, link, config, inits)


def slice_decompositions(fitted) -> list[AtomicDecomposition]:
    if isinstance(fitted, GaussianFit):
        return [fitted.decomposition]
    return [r.decomposition for r in fitted]


def predict_probabilities(fitted, rows, cols, n_classes: int,
                          link: Optional[ConditionalLogitLink] = None) -> np.ndarray:
    """Class probabilities of a fitted model at the given entries, shape ``(len(rows), K)``."""
    if isinstance(fitted, GaussianFit):
        return gaussian_class_probs(fitted, rows, cols, n_classes)
    link = link or ConditionalLogitLink(n_classes)
    x = np.column_stack([entry_values(d, rows, cols) for d in slice_decompositions(fitted)])
    return link.class_probabilities(x)


def validation_score(fitted, obs: ObservationSet, model: str,
                     link: Optional[ConditionalLogitLink] = None) -> float:
    """Mean held-out negative log-likelihood (logistic) or squared error (Gaussian)."""
    if obs.n == 0:
        raise ValueError("empty validation set")
    if model == GAUSSIAN:
        pred = fitted.means(obs.rows, obs.cols)
        return float(np.mean((obs.labels - pred) ** 2))
    link = link or ConditionalLogitLink(obs.n_classes)
    x = np.column_stack([entry_values(d, obs.rows, obs.cols) for d in slice_decompositions(fitted)])
    logp = link.log_probabilities(x)
    return float(-np.mean(logp[np.arange(obs.n), obs.labels - 1]))


def fold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Deterministic partition of ``range(n)`` into ``folds`` nearly equal parts."""
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


@dataclass
class CVResult:
    best_lambda: float
    lambdas: np.ndarray
    scores: np.ndarray
    fold_scores: np.ndarray
    ceiling: float

    @property
    def best_index(self) -> int:
        return int(np.flatnonzero(self.lambdas == self.best_lambda)[0])


def fit_path(obs: ObservationSet, model: str, lambdas: Sequence[float], config: SolverConfig,
             link: Optional[ConditionalLogitLink] = None) -> list:
    """Fits along a decreasing lambda sequence, each warm-started from the previous one."""
    fits, prev = [], None
    for lam in lambdas:
        prev = fit_model(obs, model, replace(config, lam=float(lam)), link, prev)
        fits.append(prev)
    return fits


def cross_validate(obs: ObservationSet, model: str = LOGISTIC,
                   link: Optional[ConditionalLogitLink] = None,
                   config: Optional[SolverConfig] = None, folds: int = 5, seed: int = 0,
                   threads: int = 1, lambdas: Optional[Sequence[float]] = None,
                   patience: Optional[int] = 2) -> CVResult:
    """K-fold cross-validation over the geometric lambda grid.

    The grid starts at the largest null threshold over the full data and the
    training part of every fold, so the first grid point gives the zero model
    everywhere. All folds walk the grid together, each warm-started from its
    own previous fit. With ``patience`` set, the walk stops once the mean
    validation score has risen at ``patience`` consecutive grid points; the
    skipped points get an infinite score. Ties go to the larger lambda.
    """
    if obs.n < folds:
        raise ValueError("fewer observations than folds")
    if model == LOGISTIC:
        link = link or ConditionalLogitLink(obs.n_classes)
    parts = fold_indices(obs.n, folds, seed)
    trains, vals = [], []
    for k in range(folds):
        mask = np.ones(obs.n, dtype=bool)
        mask[parts[k]] = False
        if parts[k].size == 0:
            raise ValueError("a fold has an empty validation set")
        trains.append(obs.subset(mask))
        vals.append(obs.subset(parts[k]))
    ceiling = max([null_threshold(obs, model, link)] +
                  [null_threshold(t, model, link) for t in trains])
    if lambdas is None:
        lambdas = lambda_grid(ceiling, obs.n)
    lambdas = np.sort(np.asarray(lambdas, dtype=float))[::-1]
    base = config or SolverConfig(lam=float(lambdas[0]))
    fold_scores = np.full((folds, lambdas.size), np.inf)
    prev = [None] * folds

    def step(k, lam):
        fit = fit_model(trains[k], model, replace(base, lam=float(lam)), link, prev[k])
        return fit, validation_score(fit, vals[k], model, link)

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        rises = 0
        for i, lam in enumerate(lambdas):
            if pool is not None:
                results = list(pool.map(lambda k: step(k, lam), range(folds)))
            else:
                results = [step(k, lam) for k in range(folds)]
            for k, (fit, score) in enumerate(results):
                prev[k] = fit
                fold_scores[k, i] = score
            if i > 0:
                rising = fold_scores[:, i].mean() > fold_scores[:, i - 1].mean()
                rises = rises + 1 if rising else 0
                if patience is not None and rises >= patience:
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    scores = fold_scores.mean(axis=0)
    best = int(np.argmin(scores))  # first minimum on a decreasing grid = largest lambda
    return CVResult(float(lambdas[best]), lambdas, scores, fold_scores, float(ceiling))
