"""Scikit-learn style estimators.

Samples are matrix entries: ``X`` is an ``(n, 2)`` integer array of 0-based
``(row, col)`` indices and ``y`` holds the 1-based labels observed there.

Examples
--------
>>> import numpy as np
>>> from multinomial_mc.estimators import LogisticMatrixCompletion
>>> X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * 5)
>>> y = np.array([1, 2, 2, 1] * 5)
>>> est = LogisticMatrixCompletion(lam=0.01).fit(X, y)
>>> est.predict_proba([[0, 0]]).shape
(1, 2)
"""
from __future__ import annotations

import warnings
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted

from .gaussian import GaussianFit
from .links import ConditionalLogitLink
from .solver import SolverConfig, reports_to_tensor
from .tensor import ParameterTensor
from .tuning import (GAUSSIAN, LOGISTIC, CVResult, cross_validate, fit_model, fit_path,
                     predict_probabilities)
from .validation import check_entries, to_observations


class _MatrixCompletionBase(ClassifierMixin, BaseEstimator):
    _model = LOGISTIC

    def __init__(self, lam="cv", folds: int = 5, epsilon: Optional[float] = None,
                 max_outer_iters: int = 2000, shape: Optional[tuple] = None,
                 n_classes: Optional[int] = None, random_state: int = 0, n_jobs: int = 1):
        self.lam = lam
        self.folds = folds
        self.epsilon = epsilon
        self.max_outer_iters = max_outer_iters
        self.shape = shape
        self.n_classes = n_classes
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _config(self, lam: float) -> SolverConfig:
        return SolverConfig(lam=lam, epsilon=self.epsilon,
                            max_outer_iters=self.max_outer_iters, seed=self.random_state)

    def fit(self, X, y):
        """Fit at a fixed ``lam`` or, with ``lam="cv"``, at the cross-validated value.

        After cross-validation the final fit on all data follows the grid down
        to the selected value, each point warm-started from the previous one.
        """
        obs = to_observations(X, y, self.shape, self.n_classes)
        link = ConditionalLogitLink(obs.n_classes) if self._model == LOGISTIC else None
        self.cv_result_: Optional[CVResult] = None
        if isinstance(self.lam, str):
            if self.lam != "cv":
                raise ValueError(f"lam must be a positive float or 'cv', got {self.lam!r}")
            cv = cross_validate(obs, self._model, link, self._config(1.0), folds=self.folds,
                                seed=self.random_state, threads=self.n_jobs)
            self.cv_result_ = cv
            self.lam_ = cv.best_lambda
            fitted = fit_path(obs, self._model, cv.lambdas[:cv.best_index + 1],
                              self._config(self.lam_), link)[-1]
        else:
            self.lam_ = float(self.lam)
            fitted = fit_model(obs, self._model, self._config(self.lam_), link)
        self.fitted_ = fitted
        self.shape_ = obs.shape
        self.n_classes_ = obs.n_classes
        self.classes_ = np.arange(1, obs.n_classes + 1)
        reports = [fitted.report] if isinstance(fitted, GaussianFit) else fitted
        if not all(r.converged for r in reports):
            warnings.warn("solver stopped at the iteration cap before certifying optimality",
                          ConvergenceWarning)
        return self

    def predict_proba(self, X) -> np.ndarray:
        """Class probabilities, shape ``(n, K)``; column ``j`` is label ``j + 1``."""
        check_is_fitted(self, "fitted_")
        X = check_entries(X, self.shape_)
        return predict_probabilities(self.fitted_, X[:, 0], X[:, 1], self.n_classes_)

    def predict(self, X) -> np.ndarray:
        """Most probable label; ties go to the smaller label."""
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def fit_reports(self) -> list:
        check_is_fitted(self, "fitted_")
        if isinstance(self.fitted_, GaussianFit):
            return [self.fitted_.report]
        return list(self.fitted_)


class LogisticMatrixCompletion(_MatrixCompletionBase):
    """Nuclear-norm penalized likelihood under the conditional multinomial logit link.

    Parameters
    ----------
    lam : float or "cv"
        Regularization level. ``"cv"`` runs k-fold cross-validation over a
        geometric grid below the null-solution threshold.
    folds : int
        Number of cross-validation folds.
    epsilon : float, optional
        Stopping tolerance; defaults to ``1e-4`` times the loss at zero.
    max_outer_iters : int
        Cap on outer solver steps per slice.
    shape : tuple, optional
        Grid shape ``(m1, m2)``; inferred from the largest indices if omitted.
    n_classes : int, optional
        Alphabet size ``K``; inferred from the largest label if omitted.
    random_state : int
        Seeds fold assignment and the singular-vector start.
    n_jobs : int
        Threads used across folds.

    Attributes
    ----------
    lam_ : float
    cv_result_ : CVResult or None
    fitted_ : list of FitReport, one per slice
    classes_ : ndarray
    """

    _model = LOGISTIC

    def tensor(self) -> ParameterTensor:
        """Dense estimate of the ``K - 1`` parameter slices."""
        check_is_fitted(self, "fitted_")
        return reports_to_tensor(self.fitted_)


class GaussianMatrixCompletion(_MatrixCompletionBase):
    """Squared-loss nuclear-norm completion with labels read as real numbers.

    Class probabilities come from a normal law around the completed value,
    binned at half-integers. Parameters are those of
    :class:`LogisticMatrixCompletion`.
    """

    _model = GAUSSIAN

    def predict_mean(self, X) -> np.ndarray:
        check_is_fitted(self, "fitted_")
        X = check_entries(X, self.shape_)
        return self.fitted_.means(X[:, 0], X[:, 1])
