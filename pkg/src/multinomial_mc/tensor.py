"""Core data types: observations, parameter tensors and atomic decompositions.

Row and column indices are 0-based throughout the package; class labels are
1-based (``1..K``), matching the usual way ratings are written down.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

ATOM_NORM_TOL = 1e-10


class StructuralError(ValueError):
    """Raised on shape or index mismatches between objects."""


@dataclass(frozen=True)
class ObservationSet:
    """Sampled entries ``(k, k', Y)`` of an ``m1 x m2`` matrix with labels in ``1..K``.

    Records are kept as given (duplicates allowed, since entries are sampled
    with replacement). The grouped view, one record per distinct entry with
    per-class counts, is computed on first use.
    """

    n_rows: int
    n_cols: int
    n_classes: int
    rows: np.ndarray
    cols: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.int64)
        cols = np.ascontiguousarray(self.cols, dtype=np.int64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if not (rows.ndim == cols.ndim == labels.ndim == 1):
            raise StructuralError("rows, cols and labels must be 1-d arrays")
        if not (rows.shape == cols.shape == labels.shape):
            raise StructuralError("rows, cols and labels must have equal length")
        if self.n_classes < 2:
            raise StructuralError("at least two classes are required")
        if rows.size:
            if rows.min() < 0 or rows.max() >= self.n_rows:
                raise StructuralError("row index out of range")
            if cols.min() < 0 or cols.max() >= self.n_cols:
                raise StructuralError("column index out of range")
            if labels.min() < 1 or labels.max() > self.n_classes:
                raise StructuralError(f"labels must lie in 1..{self.n_classes}")
        for name, arr in (("rows", rows), ("cols", cols), ("labels", labels)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return int(self.rows.size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def __len__(self) -> int:
        return self.n

    def subset(self, index) -> "ObservationSet":
        """Observation set restricted to the records selected by ``index``."""
        return ObservationSet(self.n_rows, self.n_cols, self.n_classes,
                              self.rows[index], self.cols[index], self.labels[index])

    def with_labels(self, labels, n_classes: int) -> "ObservationSet":
        return ObservationSet(self.n_rows, self.n_cols, n_classes, self.rows, self.cols, labels)

    @cached_property
    def grouped(self) -> "GroupedEntries":
        return GroupedEntries.from_records(self)


@dataclass(frozen=True)
class GroupedEntries:
    """Distinct observed entries in row-major order with per-class counts.

    ``counts[e, j - 1]`` is the number of records at entry ``e`` with label ``j``.
    ``inverse`` maps each original record to its entry.
    """

    rows: np.ndarray
    cols: np.ndarray
    counts: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_records(cls, obs: ObservationSet) -> "GroupedEntries":
        flat = obs.rows * obs.n_cols + obs.cols
        keys, inverse = np.unique(flat, return_inverse=True)
        counts = np.zeros((keys.size, obs.n_classes), dtype=np.int64)
        np.add.at(counts, (inverse, obs.labels - 1), 1)
        return cls(keys // obs.n_cols, keys % obs.n_cols, counts, inverse)

    @property
    def size(self) -> int:
        return int(self.rows.size)


@dataclass(frozen=True)
class ParameterTensor:
    """The ``K - 1`` slices ``X^1..X^q`` of a tensor parameter, stacked as ``(q, m1, m2)``."""

    slices: np.ndarray
    gamma: Optional[float] = None

    def __post_init__(self):
        slices = np.asarray(self.slices, dtype=float)
        if slices.ndim == 2:
            slices = slices[None]
        if slices.ndim != 3:
            raise StructuralError("slices must be a (q, m1, m2) array")
        if self.gamma is not None:
            if self.gamma <= 0:
                raise ValueError("gamma must be positive")
            if slices.size and np.abs(slices).max() > self.gamma:
                raise ValueError("sup-norm of the tensor exceeds gamma")
        object.__setattr__(self, "slices", slices)

    @property
    def n_slices(self) -> int:
        return self.slices.shape[0]

    @property
    def n_classes(self) -> int:
        return self.n_slices + 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.slices.shape[1:]

    def entries(self, rows, cols) -> np.ndarray:
        """Parameter vectors at the given entries, shape ``(len(rows), q)``."""
        return self.slices[:, rows, cols].T

    def vectors(self) -> np.ndarray:
        """All parameter vectors as an ``(m1, m2, q)`` array."""
        return np.moveaxis(self.slices, 0, -1)

    def sup_norm(self) -> float:
        return float(np.abs(self.slices).max()) if self.slices.size else 0.0


def _unit(vec: np.ndarray, name: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=float).ravel()
    nrm = np.linalg.norm(vec)
    if not np.isfinite(nrm) or nrm == 0.0:
        raise StructuralError(f"{name} must be a nonzero finite vector")
    if abs(nrm - 1.0) > ATOM_NORM_TOL:
        vec = vec / nrm
    return vec


@dataclass(frozen=True)
class Atom:
    """Normalized rank-one matrix ``u v^T``; vectors are renormalized on construction."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", _unit(self.u, "u"))
        object.__setattr__(self, "v", _unit(self.v, "v"))

    def matrix(self) -> np.ndarray:
        return np.outer(self.u, self.v)


@dataclass(frozen=True)
class AtomicDecomposition:
    """Nonnegative weighted sum of normalized rank-one atoms.

    Atoms are stored column-wise: ``left[:, k]`` and ``right[:, k]`` are the unit
    vectors of atom ``k`` and ``weights[k] >= 0`` its weight.
    """

    left: np.ndarray
    right: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        left = np.array(self.left, dtype=float, ndmin=2)
        right = np.array(self.right, dtype=float, ndmin=2)
        weights = np.array(self.weights, dtype=float, ndmin=1)
        if left.shape[1] != weights.size or right.shape[1] != weights.size:
            raise StructuralError("atom count mismatch between vectors and weights")
        if np.any(weights < 0):
            raise ValueError("atom weights must be nonnegative")
        if weights.size:
            for name, mat in (("left", left), ("right", right)):
                norms = np.linalg.norm(mat, axis=0)
                if np.any(norms == 0):
                    raise StructuralError(f"{name} atom vector is zero")
                bad = np.abs(norms - 1.0) > ATOM_NORM_TOL
                if np.any(bad):
                    mat[:, bad] /= norms[bad]
        for arr in (left, right, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def empty(cls, m1: int, m2: int) -> "AtomicDecomposition":
        return cls(np.zeros((m1, 0)), np.zeros((m2, 0)), np.zeros(0))

    @classmethod
    def from_atoms(cls, atoms: Sequence[Atom], weights: Iterable[float]) -> "AtomicDecomposition":
        atoms = list(atoms)
        weights = list(weights)
        if len(atoms) != len(weights):
            raise StructuralError("one weight per atom is required")
        if not atoms:
            raise StructuralError("use AtomicDecomposition.empty for an empty decomposition")
        m1, m2 = atoms[0].u.size, atoms[0].v.size
        if any(a.u.size != m1 or a.v.size != m2 for a in atoms):
            raise StructuralError("atoms have inconsistent shapes")
        return cls(np.column_stack([a.u for a in atoms]),
                   np.column_stack([a.v for a in atoms]), weights)

    @classmethod
    def from_matrix(cls, X: np.ndarray, tol: float = 0.0) -> "AtomicDecomposition":
        """SVD-based decomposition; singular values ``<= tol`` are dropped."""
        U, s, Vt = np.linalg.svd(np.asarray(X, dtype=float), full_matrices=False)
        keep = s > tol
        return cls(U[:, keep], Vt[keep].T, s[keep])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.left.shape[0], self.right.shape[0])

    @property
    def n_atoms(self) -> int:
        return int(self.weights.size)

    @property
    def atoms(self) -> list[Atom]:
        return [Atom(self.left[:, k], self.right[:, k]) for k in range(self.n_atoms)]

    def l1_norm(self) -> float:
        return float(self.weights.sum())

    def compact(self, tol: float = 1e-9) -> "AtomicDecomposition":
        """Merge atoms whose vector pairs are colinear within ``tol``.

        ``u v^T`` and ``(-u)(-v)^T`` are the same atom; a pair with opposite
        orientation is merged by subtraction and the survivor flipped if its
        weight turns negative. The reconstructed matrix is unchanged.
        """
        left, right, w = [], [], []
        for k in range(self.n_atoms):
            u, v, wk = self.left[:, k], self.right[:, k], self.weights[k]
            for idx in range(len(w)):
                cu, cv = left[idx] @ u, right[idx] @ v
                if abs(cu) >= 1 - tol and abs(cv) >= 1 - tol:
                    w[idx] += np.sign(cu * cv) * wk
                    break
            else:
                left.append(u.copy())
                right.append(v.copy())
                w.append(wk)
        for idx in range(len(w)):
            if w[idx] < 0:
                left[idx] = -left[idx]
                w[idx] = -w[idx]
        keep = [i for i in range(len(w)) if w[i] > 0]
        if not keep:
            return AtomicDecomposition.empty(*self.shape)
        return AtomicDecomposition(np.column_stack([left[i] for i in keep]),
                                   np.column_stack([right[i] for i in keep]),
                                   [w[i] for i in keep])


def reconstruct(decomp: AtomicDecomposition) -> np.ndarray:
    """Dense matrix ``sum_k w_k u_k v_k^T``."""
    return (decomp.left * decomp.weights) @ decomp.right.T


def entry_values(decomp: AtomicDecomposition, rows, cols, chunk: int = 1 << 16) -> np.ndarray:
    """Values of the reconstructed matrix at the entries ``(rows[i], cols[i])``.

    Costs ``O(len(rows) * n_atoms)`` without forming the dense matrix.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.shape != cols.shape:
        raise StructuralError("rows and cols must have the same length")
    m1, m2 = decomp.shape
    if rows.size and (rows.min() < 0 or rows.max() >= m1 or cols.min() < 0 or cols.max() >= m2):
        raise StructuralError("entry index out of range")
    out = np.zeros(rows.size)
    if decomp.n_atoms == 0:
        return out
    scaled = decomp.left * decomp.weights
    for start in range(0, rows.size, chunk):
        sl = slice(start, start + chunk)
        out[sl] = np.einsum("ij,ij->i", scaled[rows[sl]], decomp.right[cols[sl]])
    return out


def nuclear_norm(X: np.ndarray) -> float:
    return float(np.linalg.svd(np.asarray(X, dtype=float), compute_uv=False).sum())
