"""Per-slice empirical objectives and their sparse gradients.

Under the conditional logit link the negative log-likelihood separates over
slices. Slice ``l`` only sees records with label ``>= l``; at a distinct entry
with ``s`` records of label ``l`` and ``t`` records of label ``>= l`` it reads

    (1/n) * (s * softplus(-x) + (t - s) * softplus(x))

i.e. a weighted binomial logit. The squared loss reads ``(1/n) sum (Y_i - x)^2``.
In both cases ``n`` counts every record, duplicates included.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import svds
from scipy.special import expit

from .links import ConditionalLogitLink, softplus
from .tensor import ObservationSet, StructuralError

MULTINOMIAL = "multinomial"
SQUARED = "squared"


@dataclass(frozen=True, eq=False)
class SliceProblem:
    """Smooth part ``Psi`` of one slice sub-problem, evaluated on observed entries only.

    ``rows``/``cols`` list the distinct entries that carry a nonzero term, in
    row-major order. For the multinomial kind ``success``/``trials`` hold the
    counts ``s``/``t`` above; for the squared kind ``trials`` is the record count
    per entry, ``success`` the sum of labels and ``sq_sum`` the sum of squared
    labels.
    """

    kind: str
    shape: tuple
    n: int
    rows: np.ndarray
    cols: np.ndarray
    success: np.ndarray
    trials: np.ndarray
    slice_index: int = 1
    sq_sum: float = 0.0
    _indptr: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in (MULTINOMIAL, SQUARED):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.n <= 0:
            raise ValueError("the problem has no observations")
        indptr = np.zeros(self.shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.rows, minlength=self.shape[0]), out=indptr[1:])
        object.__setattr__(self, "_indptr", indptr)

    @classmethod
    def multinomial(cls, obs: ObservationSet, slice_index: int,
                    link: ConditionalLogitLink | None = None) -> "SliceProblem":
        link = link or ConditionalLogitLink(obs.n_classes)
        if link.n_classes != obs.n_classes:
            raise StructuralError("link and observations disagree on the number of classes")
        if not 1 <= slice_index <= link.n_slices:
            raise ValueError(f"slice index must lie in 1..{link.n_slices}")
        g = obs.grouped
        success = g.counts[:, slice_index - 1].astype(float)
        trials = g.counts[:, slice_index - 1:].sum(axis=1).astype(float)
        keep = trials > 0
        return cls(MULTINOMIAL, obs.shape, obs.n, g.rows[keep], g.cols[keep],
                   success[keep], trials[keep], slice_index)

    @classmethod
    def squared(cls, obs: ObservationSet) -> "SliceProblem":
        g = obs.grouped
        labels = np.arange(1, obs.n_classes + 1, dtype=float)
        trials = g.counts.sum(axis=1).astype(float)
        return cls(SQUARED, obs.shape, obs.n, g.rows, g.cols, g.counts @ labels, trials,
                   sq_sum=float(g.counts.sum(axis=0) @ labels ** 2))

    @property
    def n_entries(self) -> int:
        return int(self.rows.size)

    def _check(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_entries,):
            raise StructuralError(f"expected {self.n_entries} entry values, got {values.shape}")
        return values

    def objective(self, values) -> float:
        """``Psi`` at a matrix whose observed entries take ``values`` (aligned with ``rows``/``cols``)."""
        x = self._check(values)
        if self.kind == MULTINOMIAL:
            # s softplus(-x) + (t - s) softplus(x) == t softplus(x) - s x
            total = self.trials @ softplus(x) - self.success @ x
        else:
            total = self.sq_sum - 2.0 * (self.success @ x) + self.trials @ (x * x)
        return float(total / self.n)

    def entry_gradient(self, values) -> np.ndarray:
        """Partial derivatives of ``Psi`` with respect to the observed entry values."""
        x = self._check(values)
        if self.kind == MULTINOMIAL:
            return (self.trials * expit(x) - self.success) / self.n
        return 2.0 * (self.trials * x - self.success) / self.n

    def entry_curvature(self, values) -> np.ndarray:
        """Second derivatives of ``Psi`` with respect to each entry value."""
        x = self._check(values)
        if self.kind == MULTINOMIAL:
            p = expit(x)
            return self.trials * p * (1.0 - p) / self.n
        return 2.0 * self.trials / self.n

    def directional(self, values, direction):
        """First and second derivatives of ``b -> Psi(values + b * direction)`` at ``b = 0``."""
        x = self._check(values)
        if self.kind == MULTINOMIAL:
            p = expit(x)
            g = (self.trials * p - self.success) @ direction
            h = (self.trials * p * (1.0 - p)) @ (direction * direction)
        else:
            g = 2.0 * (self.trials * x - self.success) @ direction
            h = 2.0 * self.trials @ (direction * direction)
        return g / self.n, h / self.n

    def as_matrix(self, entry_data) -> sp.csr_matrix:
        """Sparse ``m1 x m2`` matrix with ``entry_data`` on the observed entries."""
        return sp.csr_matrix((np.asarray(entry_data, dtype=float), self.cols, self._indptr),
                             shape=self.shape)

    def gradient(self, values) -> sp.csr_matrix:
        """Gradient of ``Psi``; its support is the observed entry set."""
        return self.as_matrix(self.entry_gradient(values))

    def value_at_zero(self) -> float:
        return self.objective(np.zeros(self.n_entries))

    def null_threshold(self) -> float:
        """``||grad Psi(0)||_op``: the penalized estimator is zero for any larger lambda."""
        return gradient_operator_norm(self.gradient(np.zeros(self.n_entries)))


def gradient_operator_norm(grad) -> float:
    """Largest singular value of a (sparse) matrix."""
    if sp.issparse(grad):
        grad = grad.tocsr()
        if grad.nnz == 0:
            return 0.0
        if min(grad.shape) <= 2:
            return float(np.linalg.norm(grad.toarray(), 2))
        s = svds(grad, k=1, return_singular_vectors=False, tol=1e-12,
                 v0=np.ones(min(grad.shape)), random_state=0)
        return float(s[0])
    grad = np.asarray(grad, dtype=float)
    if grad.size == 0:
        return 0.0
    return float(np.linalg.norm(grad, 2))
