"""Conditional multinomial logit link.

For ``K`` classes the link maps ``x = (x^1, ..., x^{K-1})`` to

    P(Y = 1)             = sigmoid(x^1)
    P(Y = j | Y > j - 1) = sigmoid(x^j),   j = 2..K-1

so that ``f^j(x) = prod_l g^l_j(x^l)`` with one factor per slice:

    g^l_j(x) = sigmoid(x)    if l == j
               sigmoid(-x)   if l < j   (every l for j == K)
               1             if l > j

The binomial logit model is the ``K = 2`` instance.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy import optimize
from scipy.special import expit

from .tensor import ParameterTensor, StructuralError


class LinkConstants(NamedTuple):
    H: float
    L: float
    K: float
    K_is_estimate: bool


def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


class ConditionalLogitLink:
    """K-class conditional logit link with per-slice factors."""

    def __init__(self, n_classes: int):
        if n_classes < 2:
            raise ValueError("n_classes must be at least 2")
        self.n_classes = int(n_classes)
        self._constants_cache = {}

    @property
    def n_slices(self) -> int:
        return self.n_classes - 1

    def __repr__(self):
        return f"ConditionalLogitLink(n_classes={self.n_classes})"

    def __eq__(self, other):
        return isinstance(other, ConditionalLogitLink) and other.n_classes == self.n_classes

    def __hash__(self):
        return hash(("ConditionalLogitLink", self.n_classes))

    def _check(self, slice_index, label):
        if not 1 <= slice_index <= self.n_slices:
            raise ValueError(f"slice index must lie in 1..{self.n_slices}")
        if not 1 <= label <= self.n_classes:
            raise ValueError(f"label must lie in 1..{self.n_classes}")

    def log_probabilities(self, x) -> np.ndarray:
        """Log class probabilities for parameter vectors ``x`` of shape ``(..., q)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_slices:
            raise StructuralError(f"expected parameter vectors of length {self.n_slices}")
        if not np.all(np.isfinite(x)):
            raise ValueError("parameters must be finite")
        cum = np.cumsum(softplus(x), axis=-1)
        out = np.empty(x.shape[:-1] + (self.n_classes,))
        out[..., :-1] = x - cum
        out[..., -1] = -cum[..., -1]
        return out

    def class_probabilities(self, x) -> np.ndarray:
        """Class probabilities ``(f^1(x), ..., f^K(x))``; last axis of ``x`` has length ``q``.

        Evaluated as products of sigmoids, so dyadic values such as those at
        ``x = 0`` are exact.
        """
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_slices:
            raise StructuralError(f"expected parameter vectors of length {self.n_slices}")
        if not np.all(np.isfinite(x)):
            raise ValueError("parameters must be finite")
        rest = np.cumprod(expit(-x), axis=-1)
        out = np.empty(x.shape[:-1] + (self.n_classes,))
        out[..., 0] = expit(x[..., 0])
        out[..., 1:-1] = expit(x[..., 1:]) * rest[..., :-1]
        out[..., -1] = rest[..., -1]
        return out

    def factor(self, slice_index: int, label: int, x):
        """The factor ``g^l_j(x)``."""
        return np.exp(-self.neg_log_lik_factor(slice_index, label, x))

    def neg_log_lik_factor(self, slice_index: int, label: int, x):
        """``-log g^l_j(x)``; convex in ``x``."""
        self._check(slice_index, label)
        x = np.asarray(x, dtype=float)
        if slice_index == label:
            return softplus(-x)
        if slice_index < label:
            return softplus(x)
        return np.zeros_like(x)

    def score(self, slice_index: int, label: int, x):
        """Log-derivative ``(g^l_j)'(x) / g^l_j(x)``."""
        self._check(slice_index, label)
        x = np.asarray(x, dtype=float)
        if slice_index == label:
            return expit(-x)
        if slice_index < label:
            return -expit(x)
        return np.zeros_like(x)

    def constants(self, gamma: float) -> LinkConstants:
        """Constants ``H_gamma``, ``L_gamma`` and ``K_gamma`` on the box ``|x| <= gamma``.

        ``H`` and ``L`` are the tight values ``2 softplus(gamma)`` and
        ``sigmoid(gamma)``. For two classes ``K`` is the closed form
        ``sigmoid(gamma) (1 - sigmoid(gamma)) / 8``, a valid lower bound on the
        infimum (the infimum itself is twice that). For more classes no closed
        form is available and ``K`` is a multistart numerical estimate of the
        infimum of the Hellinger-to-Euclidean ratio (flagged as such). Any
        smaller positive constant is also admissible.
        """
        if not gamma > 0:
            raise ValueError("gamma must be positive")
        gamma = float(gamma)
        if gamma not in self._constants_cache:
            self._constants_cache[gamma] = self._compute_constants(gamma)
        return self._constants_cache[gamma]

    def _compute_constants(self, gamma: float) -> LinkConstants:
        H = 2.0 * float(softplus(gamma))
        L = float(expit(gamma))
        if self.n_classes == 2:
            return LinkConstants(H, L, L * (1.0 - L) / 8.0, False)
        return LinkConstants(H, L, self._estimate_k(gamma), True)

    def _hellinger_ratio(self, z: np.ndarray) -> float:
        q = self.n_slices
        x, y = z[:q], z[q:]
        d2 = float(np.sum((x - y) ** 2))
        if d2 < 1e-16:
            # removable singularity at x == y; evaluate at a nearby point
            y = y + 1e-6
            d2 = float(np.sum((x - y) ** 2))
        p = self.class_probabilities(x)
        r = self.class_probabilities(y)
        return float(np.sum((np.sqrt(p) - np.sqrt(r)) ** 2) / d2)

    def _estimate_k(self, gamma: float, n_starts: int = 32, seed: int = 0) -> float:
        q = self.n_slices
        rng = np.random.default_rng(seed)
        bounds = [(-gamma, gamma)] * (2 * q)
        starts = list(rng.uniform(-gamma, gamma, size=(n_starts, 2 * q)))
        # corners of the box for x, with y a small step inside along each axis
        for bits in range(2 ** q):
            corner = np.array([gamma if (bits >> i) & 1 else -gamma for i in range(q)])
            inner = corner - 0.5 * gamma * np.sign(corner)
            starts.append(np.concatenate([corner, inner]))
        best = np.inf
        for z0 in starts:
            best = min(best, self._hellinger_ratio(z0))
            res = optimize.minimize(self._hellinger_ratio, z0, method="L-BFGS-B", bounds=bounds)
            best = min(best, float(res.fun))
        return best


def hellinger_sq_probs(P: np.ndarray, Q: np.ndarray) -> float:
    """Squared Hellinger distance between two ``(..., K)`` probability arrays, averaged over entries."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise StructuralError("probability arrays must have the same shape")
    n_entries = P.size // P.shape[-1]
    return float(np.sum((np.sqrt(P) - np.sqrt(Q)) ** 2) / n_entries)


def kl_probs(P: np.ndarray, Q: np.ndarray, floor: float = 1e-300) -> float:
    """Kullback-Leibler divergence ``KL(P || Q)`` averaged over entries.

    ``Q`` is floored at ``floor`` so that a numerically vanishing estimate
    gives a large but finite value.
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise StructuralError("probability arrays must have the same shape")
    n_entries = P.size // P.shape[-1]
    mask = P > 0
    terms = P[mask] * (np.log(P[mask]) - np.log(np.maximum(Q[mask], floor)))
    return float(max(terms.sum(), 0.0) / n_entries)


def _tensor_probs(link: ConditionalLogitLink, X: ParameterTensor) -> np.ndarray:
    if X.n_slices != link.n_slices:
        raise StructuralError("tensor slice count does not match the link")
    return link.class_probabilities(X.vectors())


def hellinger_sq(link: ConditionalLogitLink, X: ParameterTensor, X2: ParameterTensor) -> float:
    """Squared Hellinger distance between ``f(X)`` and ``f(X2)`` averaged over all entries."""
    if X.slices.shape != X2.slices.shape:
        raise StructuralError("tensor shapes differ")
    return hellinger_sq_probs(_tensor_probs(link, X), _tensor_probs(link, X2))


def kl_divergence(link: ConditionalLogitLink, X: ParameterTensor, X2: ParameterTensor) -> float:
    """``KL(f(X) || f(X2))`` averaged over all entries."""
    if X.slices.shape != X2.slices.shape:
        raise StructuralError("tensor shapes differ")
    P = link.log_probabilities(X.vectors())
    Q = link.log_probabilities(X2.vectors())
    n_entries = P.size // P.shape[-1]
    return float(max(np.sum(np.exp(P) * (P - Q)), 0.0) / n_entries)
