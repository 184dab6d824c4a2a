"""Input checks shared by the estimators and the command line."""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.utils.validation import check_array, column_or_1d

from .tensor import ObservationSet


def check_entries(X, shape: Optional[tuple] = None) -> np.ndarray:
    """Validate an ``(n, 2)`` array of 0-based ``(row, col)`` indices.

    Returns an int64 copy. Indices must be nonnegative integers and, when
    ``shape`` is given, lie inside it.
    """
    X = check_array(X, dtype=None, ensure_2d=True, ensure_min_samples=1)
    if X.shape[1] != 2:
        raise ValueError(f"expected 2 columns (row, col), got {X.shape[1]}")
    if not np.issubdtype(X.dtype, np.integer):
        if not np.all(np.isfinite(X)) or np.any(X != np.round(X)):
            raise ValueError("entry indices must be integers")
    X = X.astype(np.int64)
    if X.min() < 0:
        raise ValueError("entry indices must be nonnegative")
    if shape is not None and (X[:, 0].max() >= shape[0] or X[:, 1].max() >= shape[1]):
        raise ValueError(f"entry indices outside the {shape[0]}x{shape[1]} grid")
    return X


def check_labels(y, n_samples: int, n_classes: Optional[int] = None) -> np.ndarray:
    """Validate 1-based integer labels; ``n_classes`` defaults to ``max(y)``."""
    y = column_or_1d(np.asarray(y), warn=True)
    if y.size != n_samples:
        raise ValueError(f"{n_samples} entries but {y.size} labels")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.isfinite(y)) or np.any(y != np.round(y)):
            raise ValueError("labels must be integers")
    y = y.astype(np.int64)
    top = n_classes if n_classes is not None else int(y.max())
    if y.min() < 1 or y.max() > top:
        raise ValueError(f"labels must lie in 1..{top}")
    return y


def to_observations(X, y, shape: Optional[tuple] = None,
                    n_classes: Optional[int] = None) -> ObservationSet:
    """Build an :class:`ObservationSet`; the grid shape defaults to ``max index + 1``."""
    X = check_entries(X, shape)
    y = check_labels(y, X.shape[0], n_classes)
    if shape is None:
        shape = (int(X[:, 0].max()) + 1, int(X[:, 1].max()) + 1)
    K = n_classes if n_classes is not None else max(2, int(y.max()))
    return ObservationSet(int(shape[0]), int(shape[1]), K, X[:, 0], X[:, 1], y)
