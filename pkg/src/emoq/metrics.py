"""Evaluation metrics: reconstruction cosine, recall, codebook entropy, JS divergence, Top-2, Macro-F1."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, NormalizationError, ValidationError
from .formats import report_csv
from .rvq import CodeSequence

ALL = "ALL"


@dataclass
class EvalReport:
    """Metric rows keyed by (layer, emotion, metric) plus a config echo."""

    config: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def add(self, layer, emotion, metric, value):
        value = float(value)
        if not math.isfinite(value):
            raise ValidationError(f"non-finite value for {(layer, emotion, metric)}")
        self.rows.append((layer, emotion, metric, value))

    def flag(self, layer, emotion, metric, reason):
        self.flags.append({"layer": layer, "emotion": emotion, "metric": metric, "reason": reason})

    def get(self, layer, emotion, metric) -> float:
        for row in self.rows:
            if row[:3] == (layer, emotion, metric):
                return row[3]
        raise KeyError((layer, emotion, metric))

    def select(self, metric=None, emotion=None, layer=None):
        return [
            r
            for r in self.rows
            if (metric is None or r[2] == metric) and (emotion is None or r[1] == emotion) and (layer is None or r[0] == layer)
        ]

    def extend(self, other: EvalReport):
        self.rows.extend(other.rows)
        self.flags.extend(other.flags)

    def to_csv(self) -> str:
        return report_csv(self.rows)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "rows": [{"layer": l, "emotion": e, "metric": m, "value": v} for l, e, m, v in self.rows],
            "flags": self.flags,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# -------------------------------------------------------- reconstruction


def cosine_rows(a, b) -> np.ndarray:
    """Row-wise cosine in float64; zero-norm rows raise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    na = np.sqrt((a * a).sum(axis=1))
    nb = np.sqrt((b * b).sum(axis=1))
    for name, norms in (("original", na), ("reconstructed", nb)):
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise DegenerateInputError(f"{name} row {int(zero[0])} has zero norm")
    return (a * b).sum(axis=1) / (na * nb)


def cosine_fidelity(orig, recon):
    """Per-row cosine between originals and reconstructions, and its mean.

    Accepts embedding sets or plain arrays.
    """
    a = getattr(orig, "vectors", orig)
    b = getattr(recon, "vectors", recon)
    cos = cosine_rows(a, b)
    return cos, float(cos.mean()) if cos.size else float("nan")


# ---------------------------------------------------------- classification


def _labels(pred, truth, n_classes):
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValidationError(f"pred and truth must be aligned 1-D arrays, got {pred.shape} and {truth.shape}")
    if pred.size == 0:
        raise ValidationError("empty label arrays")
    for arr in (pred, truth):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValidationError(f"labels outside [0, {n_classes})")
    return pred, truth


@dataclass
class RecallResult:
    per_class: np.ndarray
    defined: np.ndarray
    macro: float


def primary_recall(pred, truth, n_classes: int = 4) -> RecallResult:
    """TP_c / count_c per class; classes absent from truth are NaN and left out of the macro mean."""
    pred, truth = _labels(pred, truth, n_classes)
    counts = np.bincount(truth, minlength=n_classes)
    tp = np.bincount(truth[pred == truth], minlength=n_classes)
    defined = counts > 0
    per = np.full(n_classes, np.nan)
    per[defined] = tp[defined] / counts[defined]
    return RecallResult(per, defined, float(per[defined].mean()))


@dataclass
class F1Result:
    per_class: np.ndarray
    absent: np.ndarray
    macro: float


def macro_f1(pred, truth, n_classes: int = 4) -> F1Result:
    """Unweighted mean of per-class F1. A class never predicted and never true scores 0 and is flagged."""
    pred, truth = _labels(pred, truth, n_classes)
    tp = np.bincount(truth[pred == truth], minlength=n_classes).astype(np.float64)
    n_pred = np.bincount(pred, minlength=n_classes)
    n_true = np.bincount(truth, minlength=n_classes)
    denom = n_pred + n_true
    absent = denom == 0
    per = np.zeros(n_classes)
    per[~absent] = 2 * tp[~absent] / denom[~absent]
    return F1Result(per, absent, float(per.mean()))


# --------------------------------------------------------------- entropy


def normalized_entropy(counts, entries: int) -> float:
    """(-sum p ln p) / ln K over empirical usage counts; 0 ln 0 = 0 and K = 1 gives 0."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValidationError("no codes emitted")
    if entries == 1:
        return 0.0
    p = counts[counts > 0] / total
    h = -(p * np.log(p)).sum() / math.log(entries)
    return float(min(max(h, 0.0), 1.0))


def codebook_entropy(codes: CodeSequence, stage: int) -> float:
    """Normalized usage entropy of stage ``stage`` (1-based, like depth)."""
    if not 1 <= stage <= codes.n_stages:
        raise ValidationError(f"stage must be in [1, {codes.n_stages}], got {stage}")
    if codes.n_rows == 0:
        raise ValidationError("no codes emitted")
    counts = np.bincount(codes.indices[:, stage - 1], minlength=codes.entries)
    return normalized_entropy(counts, codes.entries)


# --------------------------------------------------------- distributions


def _as_prob(v, name):
    v = np.asarray(getattr(v, "probs", v), dtype=np.float64)
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise NormalizationError(f"{name} has negative or non-finite entries")
    if abs(v.sum(axis=-1) - 1.0).max() > 1e-6:
        raise NormalizationError(f"{name} does not sum to 1 (sum={v.sum(axis=-1)})")
    return v


def _kl2(p, m):
    # p > 0 implies m > 0, so only p's support contributes
    out = np.zeros_like(p)
    mask = p > 0
    out[mask] = p[mask] * np.log2(p[mask] / m[mask])
    return out.sum(axis=-1)


def js_divergence(p, q):
    """Base-2 Jensen-Shannon divergence in [0, 1]. Works row-wise on 2-D input."""
    p = _as_prob(p, "p")
    q = _as_prob(q, "q")
    if p.shape != q.shape:
        raise ValidationError(f"support mismatch {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)
    js = 0.5 * _kl2(p, m) + 0.5 * _kl2(q, m)
    js = np.clip(js, 0.0, 1.0)
    return float(js) if js.ndim == 0 else js


def top2_set(v) -> frozenset:
    """Indices of the two largest entries; rank ties go to the lowest index."""
    v = np.asarray(getattr(v, "probs", v), dtype=np.float64)
    if v.size < 2:
        raise ValidationError("Top-2 needs at least two classes")
    order = np.argsort(-v, kind="stable")
    return frozenset((int(order[0]), int(order[1])))


def top2_scores(pred, truth) -> np.ndarray:
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if pred.shape != truth.shape:
        raise ValidationError(f"pred and truth not aligned: {pred.shape} vs {truth.shape}")
    if pred.shape[1] < 2:
        raise ValidationError("Top-2 needs at least two classes")
    return np.array([float(top2_set(a) == top2_set(b)) for a, b in zip(pred, truth)])


def top2_set_accuracy(pred, truth) -> float:
    """Share of items whose unordered top-2 sets agree."""
    scores = top2_scores(pred, truth)
    if scores.size == 0:
        raise ValidationError("empty input")
    return float(scores.mean())
