"""Saving and loading fitted models as ``.npz`` archives.

Keys: ``model`` (``logistic`` or ``gaussian``), ``n_classes``, ``shape``,
``lam``, ``n_slices`` and, per slice ``l`` (0-based), ``left_l``, ``right_l``,
``weights_l`` holding the atomic decomposition. Gaussian models add
``sigma_hat``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .gaussian import GaussianFit
from .tensor import AtomicDecomposition
from .tuning import GAUSSIAN, LOGISTIC, slice_decompositions


@dataclass
class SavedModel:
    model: str
    n_classes: int
    lam: float
    decompositions: list
    sigma_hat: Optional[float] = None

    def fitted(self):
        """Object accepted by :func:`multinomial_mc.tuning.predict_probabilities`."""
        if self.model == GAUSSIAN:
            return GaussianFit(self.decompositions[0], self.sigma_hat)
        return [_Slice(d) for d in self.decompositions]


@dataclass
class _Slice:
    decomposition: AtomicDecomposition


def save_model(path, fitted, n_classes: int, lam: float) -> None:
    decomps = slice_decompositions(fitted)
    arrays = {"model": np.array(GAUSSIAN if isinstance(fitted, GaussianFit) else LOGISTIC),
              "n_classes": np.array(n_classes), "lam": np.array(lam),
              "shape": np.array(decomps[0].shape), "n_slices": np.array(len(decomps))}
    for l, d in enumerate(decomps):
        arrays[f"left_{l}"] = d.left
        arrays[f"right_{l}"] = d.right
        arrays[f"weights_{l}"] = d.weights
    if isinstance(fitted, GaussianFit):
        arrays["sigma_hat"] = np.array(fitted.sigma_hat)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> SavedModel:
    with np.load(path, allow_pickle=False) as z:
        model = str(z["model"])
        decomps = [AtomicDecomposition(z[f"left_{l}"], z[f"right_{l}"], z[f"weights_{l}"])
                   for l in range(int(z["n_slices"]))]
        sigma = float(z["sigma_hat"]) if "sigma_hat" in z.files else None
        return SavedModel(model, int(z["n_classes"]), float(z["lam"]), decomps, sigma)
