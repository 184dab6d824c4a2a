"""Simulation, MovieLens and timing protocols behind the reproduction tables."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import (MOVIELENS_URL, SyntheticSpec, binarize_one_vs_rest, generate_truth,
                   load_movielens, sample_observations, split)
from .evaluation import EvalReport, evaluate
from .gaussian import GaussianFit, gaussian_bin_probabilities
from .links import ConditionalLogitLink
from .loss import SliceProblem
from .solver import SolverConfig, solve_slice
from .tensor import ObservationSet, ParameterTensor, reconstruct
from .tuning import (GAUSSIAN, LOGISTIC, cross_validate, fit_model, fit_path, lambda_grid,
                     null_threshold, predict_probabilities, slice_decompositions,
                     validation_score)

logger = logging.getLogger(__name__)

MODELS = (LOGISTIC, GAUSSIAN)
TABLE2_N = (10_000, 50_000, 250_000, 500_000)
BENCH_SIZES = ((1000, 100_000), (3000, 1_000_000))
BENCH_LAMBDA_FRACTION = 0.1


def replicate_seeds(seed: int) -> tuple[int, int, int]:
    """Independent seeds for the truth, the training sample and the test sample."""
    a, b, c = np.random.SeedSequence(seed).generate_state(3)
    return int(a), int(b), int(c)


def full_probabilities(fitted, link: Optional[ConditionalLogitLink], n_classes: int) -> np.ndarray:
    """Estimated class probabilities at every entry, shape ``(m1, m2, K)``."""
    if isinstance(fitted, GaussianFit):
        return gaussian_bin_probabilities(reconstruct(fitted.decomposition), fitted.sigma_hat,
                                          n_classes)
    slices = np.stack([reconstruct(d) for d in slice_decompositions(fitted)], axis=-1)
    return link.class_probabilities(slices)


def _final_fit(obs, model, cv, config, link):
    return fit_path(obs, model, cv.lambdas[:cv.best_index + 1], config, link)[-1]


def run_simulation(m1: int, m2: int, n_classes: int, n: int, seed: int, folds: int = 5,
                   n_test: int = 100_000, epsilon: Optional[float] = None, threads: int = 1,
                   gamma_scale: Optional[float] = None,
                   models: Sequence[str] = MODELS) -> list[EvalReport]:
    """One synthetic replicate: cross-validate and fit each model, then score it.

    Prediction error is measured on ``n_test`` fresh draws from the same
    model; KL and Hellinger compare the estimated and true class
    probabilities over all ``m1 m2`` entries.
    """
    s_truth, s_train, s_test = replicate_seeds(seed)
    kw = {} if gamma_scale is None else {"gamma_scale": gamma_scale}
    truth = generate_truth(SyntheticSpec(m1, m2, n_classes, seed=s_truth, **kw))
    link = ConditionalLogitLink(n_classes)
    train = sample_observations(truth, None, n, seed=s_train, link=link)
    test = sample_observations(truth, None, n_test, seed=s_test, link=link)
    true_probs = link.class_probabilities(truth.vectors())
    reports = []
    for model in models:
        t0 = time.perf_counter()
        config = SolverConfig(lam=1.0, epsilon=epsilon, seed=seed)
        cv = cross_validate(train, model, link if model == LOGISTIC else None, config,
                            folds=folds, seed=s_train, threads=threads)
        fitted = _final_fit(train, model, cv, config, link if model == LOGISTIC else None)
        est = full_probabilities(fitted, link, n_classes)
        test_probs = est[test.rows, test.cols]
        estimate = None
        if model == LOGISTIC:
            estimate = ParameterTensor(np.stack([reconstruct(d) for d in slice_decompositions(fitted)]))
        reports.append(evaluate(model, test_probs, test, true_probs, est, estimate,
                                truth if estimate is not None else None,
                                lam=cv.best_lambda, n=n, seed=seed,
                                wall_time=time.perf_counter() - t0))
        logger.info("%s m=%dx%d K=%d n=%d seed=%d err=%.4f kl=%.4f", model, m1, m2,
                    n_classes, n, seed, reports[-1].prediction_error, reports[-1].kl)
    return reports


class MovieLensMissing(FileNotFoundError):
    def __init__(self, path):
        super().__init__(f"MovieLens 100k ratings not found at {path}; download {MOVIELENS_URL}, "
                         "unzip it and point --data (or ML100K_PATH) at ml-100k/u.data")


def _holdout_fit(train: ObservationSet, val: ObservationSet, model: str, config: SolverConfig):
    """Path over the grid on ``train``; returns the fit with the best validation score."""
    link = ConditionalLogitLink(train.n_classes) if model == LOGISTIC else None
    lambdas = lambda_grid(null_threshold(train, model, link), train.n)
    best, best_score, best_lam, prev, rises, last = None, np.inf, None, None, 0, np.inf
    for lam in lambdas:
        prev = fit_model(train, model, replace(config, lam=float(lam)), link, prev)
        score = validation_score(prev, val, model, link)
        if score < best_score:
            best, best_score, best_lam = prev, score, float(lam)
        rises = rises + 1 if score > last else 0
        last = score
        if rises >= 2:
            break
    return best, best_lam, link


def run_movielens(path, seed: int = 0, epsilon: Optional[float] = None,
                  targets: Iterable[int] = (1, 2, 3, 4, 5),
                  multinomial: bool = True) -> list[dict]:
    """One-vs-rest and multinomial prediction errors on MovieLens 100k.

    20% of the ratings form the test set; the rest is split 80/20 into
    training and validation sets, and lambda is picked on the validation set.
    """
    if not Path(path).is_file():
        raise MovieLensMissing(path)
    obs = load_movielens(path)
    train, val, test = split(obs, 0.2, 0.2, seed=seed)
    config = SolverConfig(lam=1.0, epsilon=epsilon, seed=seed)
    rows = []
    tasks = [(t, binarize_one_vs_rest(train, t), binarize_one_vs_rest(val, t),
              binarize_one_vs_rest(test, t)) for t in targets]
    if multinomial:
        tasks.append(("all", train, val, test))
    for target, tr, va, te in tasks:
        row = {"target": target, "seed": seed, "n_train": tr.n, "n_test": te.n}
        for model in MODELS:
            fitted, lam, link = _holdout_fit(tr, va, model, config)
            probs = predict_probabilities(fitted, te.rows, te.cols, te.n_classes, link)
            row[f"{model}_error"] = evaluate(model, probs, te).prediction_error
            row[f"{model}_lambda"] = lam
        logger.info("movielens %s: %s", target, row)
        rows.append(row)
    return rows


@dataclass
class BenchRow:
    size: int
    n: int
    wall_time: float
    peak_atoms: int
    iterations: int
    lam: float
    converged: bool


def bench(sizes: Sequence[tuple[int, int]] = BENCH_SIZES, seed: int = 0,
          lam_fraction: float = BENCH_LAMBDA_FRACTION,
          epsilon: Optional[float] = None) -> list[BenchRow]:
    """Time one binary-case solve per ``(size, n)`` on a square synthetic grid.

    Lambda is ``lam_fraction`` times the null threshold of the sample. Timing
    covers building the problem and solving it, not data generation. A size
    that runs out of memory ends the run with the rows gathered so far.
    """
    rows = []
    for size, n in sizes:
        try:
            truth = generate_truth(SyntheticSpec(size, size, 2, seed=seed))
            obs = sample_observations(truth, None, n, seed=seed + 1)
            del truth
            t0 = time.perf_counter()
            problem = SliceProblem.multinomial(obs, 1)
            lam = lam_fraction * problem.null_threshold()
            rep = solve_slice(problem, SolverConfig(lam=lam, epsilon=epsilon, seed=seed))
            rows.append(BenchRow(size, n, time.perf_counter() - t0, rep.peak_atoms,
                                 rep.iterations, lam, rep.converged))
        except MemoryError:
            logger.error("out of memory at size %d, n %d; returning partial results", size, n)
            break
    return rows
