"""Linear softmax probe trained by full-batch gradient descent."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DEFAULT_TAXONOMY, EmbeddingSet, Level, Taxonomy
from .errors import ClassCoverageError, PreconditionError, ShapeError, ValidationError
from .formats import probe_from_bytes, probe_to_bytes, writable


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 500
    learning_rate: float = 1.0
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or not self.learning_rate > 0 or self.l2 < 0:
            raise ValidationError(f"invalid probe config {self}")


@dataclass(frozen=True, eq=False)
class LinearProbe:
    weights: np.ndarray  # C x D, float32
    bias: np.ndarray  # C, float32
    taxonomy: Taxonomy = DEFAULT_TAXONOMY
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float32)
        b = np.array(self.bias, dtype=np.float32)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ShapeError(f"weights {w.shape} and bias {b.shape} disagree")
        if w.shape[0] != len(self.taxonomy):
            raise ValidationError(f"probe has {w.shape[0]} classes, taxonomy has {len(self.taxonomy)}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValidationError("probe parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, LinearProbe)
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.bias, other.bias)
        )


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(w, b, x, y_onehot, l2):
    """Mean cross-entropy + l2 * ||W||^2 and its gradients with respect to W and b."""
    n = x.shape[0]
    logits = x @ w.T + b
    shift = logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(logits - shift).sum(axis=1, keepdims=True)) + shift
    log_p = logits - log_norm
    loss = -(y_onehot * log_p).sum() / n + l2 * (w * w).sum()
    delta = (np.exp(log_p) - y_onehot) / n
    return loss, delta.T @ x + 2 * l2 * w, delta.sum(axis=0)


def probe_train(train: EmbeddingSet, cfg: ProbeConfig | None = None) -> LinearProbe:
    """Fit a multinomial logistic regression on utterance-level vectors.

    Features are standardized for the optimization and the scaling is folded
    back into the returned weights. Parameters start at zero. A step that
    raises the loss is retried with half the learning rate, so the recorded
    loss curve never increases.
    """
    cfg = cfg or ProbeConfig()
    if train.level is not Level.UTTERANCE:
        raise PreconditionError("probe training expects utterance-level embeddings (pool frames first)")
    n_classes = len(train.taxonomy)
    y = train.labels()
    counts = np.bincount(y, minlength=n_classes)
    if np.any(counts == 0):
        missing = [train.taxonomy.name_of(c) for c in np.flatnonzero(counts == 0)]
        raise ClassCoverageError(f"no training examples for class(es) {missing}")

    x = train.vectors.astype(np.float64)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    xs = (x - mu) / sd
    onehot = np.eye(n_classes)[y]

    w = np.zeros((n_classes, x.shape[1]))
    b = np.zeros(n_classes)
    lr = cfg.learning_rate
    loss, gw, gb = loss_and_grad(w, b, xs, onehot, cfg.l2)
    losses = [float(loss)]
    for _ in range(cfg.epochs):
        while True:
            w_new = w - lr * gw
            b_new = b - lr * gb
            new_loss, new_gw, new_gb = loss_and_grad(w_new, b_new, xs, onehot, cfg.l2)
            if new_loss <= loss or lr < 1e-12:
                break
            lr *= 0.5
        if new_loss > loss:
            break
        w, b, loss, gw, gb = w_new, b_new, new_loss, new_gw, new_gb
        losses.append(float(loss))

    w_out = w / sd
    b_out = b - w_out @ mu
    meta = {
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "learning_rate": cfg.learning_rate,
        "final_learning_rate": lr,
        "l2": cfg.l2,
        "losses": losses,
        "final_loss": losses[-1],
    }
    return LinearProbe(w_out, b_out, train.taxonomy, meta)


def probe_logits(probe: LinearProbe, x) -> np.ndarray:
    x = np.asarray(getattr(x, "vectors", x), dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != probe.dim:
        raise ShapeError(f"input dim {x.shape[-1]} does not match probe dim {probe.dim}")
    return x @ probe.weights.astype(np.float64).T + probe.bias.astype(np.float64)


def probe_predict(probe: LinearProbe, x):
    """Hard labels (argmax, lowest id on ties) and softmax distributions for each row."""
    logits = probe_logits(probe, x)
    return np.argmax(logits, axis=1).astype(np.int64), softmax(logits)


def write_probe(probe: LinearProbe, path) -> None:
    writable(path).write_bytes(probe_to_bytes(probe.weights, probe.bias))


def read_probe(path, taxonomy: Taxonomy | None = None) -> LinearProbe:
    w, b = probe_from_bytes(Path(path).read_bytes())
    if taxonomy is None:
        taxonomy = DEFAULT_TAXONOMY if w.shape[0] == len(DEFAULT_TAXONOMY) else Taxonomy(tuple(f"class{i}" for i in range(w.shape[0])))
    return LinearProbe(w, b, taxonomy)
