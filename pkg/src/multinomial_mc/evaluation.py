"""Metrics and comparison reports."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .links import hellinger_sq_probs, kl_probs
from .tensor import ObservationSet, ParameterTensor, StructuralError

REPORT_FIELDS = (
    "model", "kl", "kl_per_class", "hellinger_sq", "frobenius_sq_normalized",
    "prediction_error", "lam", "n", "m1", "m2", "classes", "seed", "wall_time", "test_id",
)


def prediction_error(probs, labels) -> float:
    """Fraction of observations whose most probable class differs from the label.

    ``probs`` has shape ``(n, K)`` and labels are 1-based. Ties go to the
    smallest class index.
    """
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty test set")
    if probs.shape[0] != labels.size:
        raise StructuralError("one probability row per label is required")
    return float(np.mean(np.argmax(probs, axis=1) + 1 != labels))


def confusion_counts(probs, labels, n_classes: int) -> np.ndarray:
    """``counts[true - 1, predicted - 1]``."""
    pred = np.argmax(np.asarray(probs), axis=1)
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (np.asarray(labels) - 1, pred), 1)
    return counts


def frobenius_error(estimate: ParameterTensor, truth: ParameterTensor) -> float:
    """``sum_l ||X^l - Y^l||_F^2 / (m1 m2)``."""
    if estimate.slices.shape != truth.slices.shape:
        raise StructuralError("tensor shapes differ")
    m1, m2 = truth.shape
    return float(np.sum((estimate.slices - truth.slices) ** 2) / (m1 * m2))


def testset_fingerprint(obs: ObservationSet) -> str:
    """Short fingerprint identifying a test set."""
    h = hashlib.sha1()
    for arr in (obs.rows, obs.cols, obs.labels):
        h.update(np.ascontiguousarray(arr, dtype=np.int64).tobytes())
    return h.hexdigest()[:12]


@dataclass
class EvalReport:
    model: str
    prediction_error: float
    kl: float = float("nan")
    hellinger_sq: float = float("nan")
    frobenius_sq_normalized: float = float("nan")
    confusion: Optional[list] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.prediction_error <= 1.0:
            raise ValueError("prediction error must lie in [0, 1]")
        if np.isfinite(self.kl) and np.isfinite(self.hellinger_sq):
            # Hellinger never exceeds KL; allow rounding slack
            if self.hellinger_sq > self.kl + 1e-12:
                raise ValueError("inconsistent report: hellinger_sq > kl")

    @property
    def kl_per_class(self) -> float:
        return self.kl / self.meta.get("classes", 1)

    def row(self) -> dict:
        out = {"model": self.model, "kl": self.kl, "kl_per_class": self.kl_per_class,
               "hellinger_sq": self.hellinger_sq,
               "frobenius_sq_normalized": self.frobenius_sq_normalized,
               "prediction_error": self.prediction_error}
        for key in REPORT_FIELDS:
            if key not in out:
                out[key] = self.meta.get(key, "")
        return out

    def to_json(self) -> str:
        data = self.row()
        data["confusion"] = self.confusion
        data["meta"] = self.meta
        return json.dumps(data, default=_json_default, sort_keys=True)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def evaluate(model: str, test_probs, test: ObservationSet, true_probs=None, est_probs=None,
             estimate: Optional[ParameterTensor] = None, truth: Optional[ParameterTensor] = None,
             **meta) -> EvalReport:
    """Build a report from held-out probabilities and, for simulations, full probability maps.

    ``true_probs``/``est_probs`` are ``(m1, m2, K)`` arrays over all entries;
    KL and Hellinger are averaged over the ``m1 m2`` entries.
    """
    kl = hel = frob = float("nan")
    if true_probs is not None and est_probs is not None:
        kl = kl_probs(true_probs, est_probs)
        hel = hellinger_sq_probs(true_probs, est_probs)
    if estimate is not None and truth is not None:
        frob = frobenius_error(estimate, truth)
    meta.setdefault("classes", test.n_classes)
    meta.setdefault("test_id", testset_fingerprint(test))
    meta.setdefault("m1", test.n_rows)
    meta.setdefault("m2", test.n_cols)
    return EvalReport(model, prediction_error(test_probs, test.labels), kl, hel, frob,
                      confusion_counts(test_probs, test.labels, test.n_classes).tolist(), meta)


def compare_models(logistic: EvalReport, gaussian: EvalReport) -> list[dict]:
    """Paired rows for the two models plus a ``difference`` row (Gaussian minus logistic)."""
    if logistic.meta.get("test_id") != gaussian.meta.get("test_id"):
        raise ValueError("reports were computed on different test sets")
    rows = [logistic.row(), gaussian.row()]
    diff = dict(rows[0])
    diff["model"] = "difference"
    for key in ("kl", "kl_per_class", "hellinger_sq", "frobenius_sq_normalized", "prediction_error"):
        diff[key] = rows[1][key] - rows[0][key]
    rows.append(diff)
    return rows


def write_csv(rows: Sequence[dict], fh, fields: Optional[Sequence[str]] = None) -> None:
    """Write rows as RFC-4180 CSV with a header line."""
    fields = list(fields or (rows[0].keys() if rows else REPORT_FIELDS))
    writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\r\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)


def read_csv(fh) -> list[dict]:
    """Read rows written by :func:`write_csv`; numeric-looking fields become floats."""
    out = []
    for row in csv.DictReader(fh):
        parsed = {}
        for key, val in row.items():
            try:
                parsed[key] = float(val)
            except ValueError:
                parsed[key] = val
        out.append(parsed)
    return out


def rows_to_csv(rows: Sequence[dict], fields: Optional[Sequence[str]] = None) -> str:
    buf = io.StringIO()
    write_csv(rows, buf, fields)
    return buf.getvalue()
