"""Synthetic data, sampling distributions, MovieLens ingestion, splits and the dataset container."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .links import ConditionalLogitLink
from .tensor import ObservationSet, ParameterTensor

DEFAULT_ALPHAS = (2.0, 1.0, 0.5, 0.25, 0.1)
DEFAULT_GAMMA_SCALE = 0.65

CONTAINER_MAGIC = b"MMCDATA1"
MOVIELENS_URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"


class DataFormatError(ValueError):
    """Malformed or out-of-range input data."""


@dataclass(frozen=True)
class SyntheticSpec:
    m1: int
    m2: int
    n_classes: int = 2
    gamma_scale: float = DEFAULT_GAMMA_SCALE
    alphas: tuple = DEFAULT_ALPHAS
    seed: int = 0

    def __post_init__(self):
        if self.m1 < 1 or self.m2 < 1:
            raise ValueError("dimensions must be positive")
        if self.n_classes < 2:
            raise ValueError("at least two classes are required")
        if not self.gamma_scale > 0:
            raise ValueError("gamma_scale must be positive")
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))


def calibrated_offsets(n_classes: int) -> np.ndarray:
    """Slice offsets making every class equally likely at a zero rank-part.

    ``sigmoid(eta_l) = 1 / (K - l + 1)``, i.e. ``eta_l = -log(K - l)``.
    """
    return -np.log(n_classes - np.arange(1, n_classes))


def _unit_columns(rng, dim, count):
    mat = rng.standard_normal((dim, count))
    return mat / np.linalg.norm(mat, axis=0)


def generate_truth(spec: SyntheticSpec) -> ParameterTensor:
    """Low-rank truth: ``X^l = Gamma sqrt(m1 m2) sum_k alpha_k u_k v_k^T + eta_l``.

    Unit vectors are drawn uniformly on the spheres, independently per slice.
    """
    rng = np.random.default_rng(spec.seed)
    alphas = np.asarray(spec.alphas)
    scale = spec.gamma_scale * np.sqrt(spec.m1 * spec.m2)
    eta = calibrated_offsets(spec.n_classes)
    slices = np.empty((spec.n_classes - 1, spec.m1, spec.m2))
    for l in range(spec.n_classes - 1):
        U = _unit_columns(rng, spec.m1, alphas.size)
        V = _unit_columns(rng, spec.m2, alphas.size)
        slices[l] = scale * (U * alphas) @ V.T + eta[l]
    return ParameterTensor(slices)


@dataclass(frozen=True)
class SamplingDistribution:
    """Entry sampling law ``pi``: a mixture of a row-by-column product and the uniform law.

    ``pi = (1 - mix) * r c^T + mix / (m1 m2)``. ``mu`` and ``nu`` are the
    constants with ``min pi >= mu / (m1 m2)`` and
    ``max(row, column marginals) <= nu / min(m1, m2)``.
    """

    kind: str
    row_weights: np.ndarray
    col_weights: np.ndarray
    mix: float = 1.0
    mu: float = field(init=False)
    nu: float = field(init=False)

    def __post_init__(self):
        r = np.asarray(self.row_weights, dtype=float)
        c = np.asarray(self.col_weights, dtype=float)
        if np.any(r < 0) or np.any(c < 0) or r.sum() == 0 or c.sum() == 0:
            raise ValueError("weights must be nonnegative and not all zero")
        r, c = r / r.sum(), c / c.sum()
        object.__setattr__(self, "row_weights", r)
        object.__setattr__(self, "col_weights", c)
        m1, m2 = r.size, c.size
        t = self.mix
        mu = m1 * m2 * ((1 - t) * r.min() * c.min() + t / (m1 * m2))
        rows = (1 - t) * r + t / m1
        cols = (1 - t) * c + t / m2
        nu = min(m1, m2) * max(rows.max(), cols.max())
        object.__setattr__(self, "mu", float(mu))
        object.__setattr__(self, "nu", float(nu))
        if not (mu > 0 and nu > 0):
            raise ValueError("degenerate sampling distribution")

    @classmethod
    def uniform(cls, m1: int, m2: int) -> "SamplingDistribution":
        return cls("uniform", np.ones(m1), np.ones(m2), mix=1.0)

    @classmethod
    def row_column_product(cls, m1: int, m2: int, seed: int = 0, spread: float = 3.0,
                           min_mu: float = 0.3) -> "SamplingDistribution":
        """Product law with log-uniform weights in ``[1, spread]``, mixed with the
        uniform law just enough to guarantee ``mu >= min_mu``."""
        rng = np.random.default_rng(seed)
        r = np.exp(rng.uniform(0.0, np.log(spread), m1))
        c = np.exp(rng.uniform(0.0, np.log(spread), m2))
        base = m1 * m2 * r.min() * c.min() / (r.sum() * c.sum())
        mix = 0.0 if base >= min_mu else (min_mu - base) / (1.0 - base)
        return cls("row-column-product", r, c, mix=mix)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.row_weights.size, self.col_weights.size)

    def probabilities(self) -> np.ndarray:
        m1, m2 = self.shape
        return (1 - self.mix) * np.outer(self.row_weights, self.col_weights) + self.mix / (m1 * m2)

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        m1, m2 = self.shape
        if self.mix >= 1.0:
            return rng.integers(0, m1, n), rng.integers(0, m2, n)
        rows = rng.choice(m1, size=n, p=self.row_weights)
        cols = rng.choice(m2, size=n, p=self.col_weights)
        unif = rng.random(n) < self.mix
        k = int(unif.sum())
        rows[unif] = rng.integers(0, m1, k)
        cols[unif] = rng.integers(0, m2, k)
        return rows, cols


def sample_labels(probs: np.ndarray, rng) -> np.ndarray:
    """One draw per row of ``probs`` (shape ``(n, K)``); labels are 1-based."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    return (u[:, None] >= cdf[:, :-1]).sum(axis=1) + 1


def sample_observations(truth: ParameterTensor, dist: Optional[SamplingDistribution],
                        n: int, seed: int = 0,
                        link: Optional[ConditionalLogitLink] = None) -> ObservationSet:
    """Draw ``n`` entries i.i.d. from ``dist`` (uniform if None) and a label at each from ``f(truth)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    m1, m2 = truth.shape
    link = link or ConditionalLogitLink(truth.n_classes)
    dist = dist or SamplingDistribution.uniform(m1, m2)
    if dist.shape != (m1, m2):
        raise ValueError("sampling distribution and truth have different shapes")
    rng = np.random.default_rng(seed)
    rows, cols = dist.sample(n, rng)
    labels = sample_labels(link.class_probabilities(truth.entries(rows, cols)), rng)
    return ObservationSet(m1, m2, link.n_classes, rows, cols, labels)


def load_movielens(path) -> ObservationSet:
    """Parse a MovieLens ``u.data`` file (``user<TAB>item<TAB>rating<TAB>timestamp``).

    User and item ids are 1-based in the file and become 0-based indices.
    """
    path = Path(path)
    users, items, ratings = [], [], []
    with path.open("r", encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataFormatError(f"{path}:{lineno}: expected 4 tab-separated fields")
            try:
                user, item, rating = int(parts[0]), int(parts[1]), int(parts[2])
                int(parts[3])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if user < 1 or item < 1:
                raise DataFormatError(f"{path}:{lineno}: ids must be positive")
            if not 1 <= rating <= 5:
                raise DataFormatError(f"{path}:{lineno}: rating {rating} outside 1-5")
            users.append(user)
            items.append(item)
            ratings.append(rating)
    if not users:
        raise DataFormatError(f"{path}: no records")
    users = np.asarray(users)
    items = np.asarray(items)
    return ObservationSet(int(users.max()), int(items.max()), 5, users - 1, items - 1, ratings)


def split(obs: ObservationSet, test_frac: float = 0.2, val_frac: float = 0.2, seed: int = 0):
    """Random record-level split into ``(train, validation, test)``.

    ``test_frac`` of the records go to the test set and ``val_frac`` of the
    remainder to the validation set.
    """
    if not (0 < test_frac < 1 and 0 <= val_frac < 1):
        raise ValueError("fractions must lie in (0, 1)")
    n = obs.n
    n_test = int(round(n * test_frac))
    n_val = int(round((n - n_test) * val_frac))
    n_train = n - n_test - n_val
    if n_test == 0 or n_train == 0 or (val_frac > 0 and n_val == 0):
        raise ValueError("split produces an empty part")
    perm = np.random.default_rng(seed).permutation(n)
    test = perm[:n_test]
    val = perm[n_test:n_test + n_val]
    train = perm[n_test + n_val:]
    return obs.subset(np.sort(train)), obs.subset(np.sort(val)), obs.subset(np.sort(test))


def binarize_one_vs_rest(obs: ObservationSet, target: int) -> ObservationSet:
    """Two-class view: label ``target`` becomes class 1, every other label class 2."""
    if not 1 <= target <= obs.n_classes:
        raise ValueError(f"target must lie in 1..{obs.n_classes}")
    return obs.with_labels(np.where(obs.labels == target, 1, 2), 2)


def save_dataset(path, obs: ObservationSet, meta: Optional[dict] = None) -> None:
    """Write the binary container.

    Layout: 8-byte magic ``MMCDATA1``; little-endian u32 header length; UTF-8
    JSON header (``m1``, ``m2``, ``classes``, ``n`` plus ``meta``); then ``n``
    little-endian u32 triples ``(row, col, label)`` with 0-based indices and
    1-based labels.
    """
    header = {"m1": obs.n_rows, "m2": obs.n_cols, "classes": obs.n_classes, "n": obs.n,
              "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    triples = np.empty((obs.n, 3), dtype="<u4")
    triples[:, 0], triples[:, 1], triples[:, 2] = obs.rows, obs.cols, obs.labels
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(triples.tobytes())


def load_dataset(path) -> tuple[ObservationSet, dict]:
    """Read a container written by :func:`save_dataset`; returns ``(observations, meta)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != CONTAINER_MAGIC:
        raise DataFormatError(f"{path}: not a dataset container")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: bad header: {exc}") from None
    body = raw[12 + hlen:]
    if len(body) != 12 * header["n"]:
        raise DataFormatError(f"{path}: expected {header['n']} records")
    triples = np.frombuffer(body, dtype="<u4").reshape(-1, 3).astype(np.int64)
    obs = ObservationSet(header["m1"], header["m2"], header["classes"],
                         triples[:, 0], triples[:, 1], triples[:, 2])
    return obs, header["meta"]


def spec_to_dict(spec: SyntheticSpec) -> dict:
    return asdict(spec)
