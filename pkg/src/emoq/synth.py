"""Deterministic synthetic emotion-clustered embedding corpora."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DEFAULT_EMOTIONS, EmbeddingSet, Level, SoftLabel, Taxonomy, Utterance, argmax_lowest
from .errors import ValidationError
from .seeds import derive_rng

# share of ambiguous items drawn as an even 50/50 mix; the rest take a
# primary share from PRIMARY_SHARES uniformly
EVEN_MIX_PROB = 0.5
PRIMARY_SHARES = (0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 4
    dim: int = 64
    per_class: int = 500
    separation: float = 4.0
    ambiguity: float = 0.3
    frames: tuple[int, int] = (4, 8)
    sigma: float = 1.0
    seed: int = 0
    corpus: str = "synth"

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValidationError("need at least two classes")
        if self.dim < self.n_classes - 1:
            raise ValidationError(
                f"dim={self.dim} cannot hold {self.n_classes} distinct simplex vertices (needs dim >= {self.n_classes - 1})"
            )
        if not self.separation > 0:
            raise ValidationError("separation must be > 0")
        if not 0 <= self.ambiguity <= 1:
            raise ValidationError("ambiguity fraction must be in [0, 1]")
        lo, hi = self.frames
        if not 1 <= lo <= hi:
            raise ValidationError(f"invalid frames-per-utterance range {self.frames}")
        if self.per_class < 1 or not self.sigma > 0:
            raise ValidationError("per_class and sigma must be positive")


def simplex_means(n_classes: int, dim: int, separation: float, sigma: float = 1.0) -> np.ndarray:
    """Vertices of a regular simplex centred at the origin, pairwise distance ``separation * sigma``."""
    centred = np.eye(n_classes) - 1.0 / n_classes
    q, _ = np.linalg.qr(centred.T)
    coords = centred @ q[:, : n_classes - 1]
    coords *= separation * sigma / np.sqrt(2.0)
    out = np.zeros((n_classes, dim))
    out[:, : n_classes - 1] = coords
    return out


def generate(spec: SynthSpec, taxonomy: Taxonomy | None = None) -> EmbeddingSet:
    """Frame-level set with hard and soft labels.

    Pure utterances draw every frame from their class Gaussian. Ambiguous
    ones mix two classes: each frame comes from the primary class with
    probability equal to its share, and the soft label is the mixing weights.
    """
    if taxonomy is None:
        names = DEFAULT_EMOTIONS if spec.n_classes == len(DEFAULT_EMOTIONS) else tuple(f"class{i}" for i in range(spec.n_classes))
        taxonomy = Taxonomy(names)
    if len(taxonomy) != spec.n_classes:
        raise ValidationError("taxonomy size does not match spec.n_classes")
    rng = derive_rng(spec.seed, "synth")
    means = simplex_means(spec.n_classes, spec.dim, spec.separation, spec.sigma)
    n_amb = int(round(spec.ambiguity * spec.per_class))
    blocks = []
    utts = []
    row = 0
    for c in range(spec.n_classes):
        amb = np.zeros(spec.per_class, dtype=bool)
        amb[rng.permutation(spec.per_class)[:n_amb]] = True
        for j in range(spec.per_class):
            n_frames = int(rng.integers(spec.frames[0], spec.frames[1] + 1))
            probs = np.zeros(spec.n_classes)
            if amb[j]:
                other = [k for k in range(spec.n_classes) if k != c]
                second = other[int(rng.integers(len(other)))]
                share = 0.5 if rng.random() < EVEN_MIX_PROB else PRIMARY_SHARES[int(rng.integers(len(PRIMARY_SHARES)))]
                probs[c] = share
                probs[second] = 1.0 - share
                comp = np.where(rng.random(n_frames) < share, c, second)
            else:
                probs[c] = 1.0
                comp = np.full(n_frames, c)
            frames = means[comp] + spec.sigma * rng.standard_normal((n_frames, spec.dim))
            blocks.append(frames)
            soft = SoftLabel(probs)
            utts.append(
                Utterance(
                    uid=f"{spec.corpus}_{c}_{j:05d}",
                    label=argmax_lowest(soft.probs),
                    frames=(row, row + n_frames),
                    corpus=spec.corpus,
                    soft=soft,
                )
            )
            row += n_frames
    return EmbeddingSet(np.concatenate(blocks).astype(np.float32), tuple(utts), Level.FRAME, taxonomy)
