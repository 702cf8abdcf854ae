"""Emo-Q: classify an embedding by which emotion-specialized stack reconstructs it best (cosine)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DEFAULT_TAXONOMY, EmbeddingSet, Level, Taxonomy, pooled_rows
from .errors import DegenerateInputError, ShapeError, ValidationError
from .formats import read_codebook
from .metrics import EvalReport, cosine_rows, macro_f1, primary_recall
from .rvq import RvqStack, decode, encode_array
from .trainer import KMeansConfig, TrainingRegime, train_rvq


@dataclass(frozen=True)
class RouterBank:
    """One stack per emotion label (index = label id), routed at a fixed depth."""

    stacks: tuple[RvqStack, ...]
    depth: int
    normalize: bool = True
    taxonomy: Taxonomy = DEFAULT_TAXONOMY

    def __post_init__(self):
        stacks = tuple(self.stacks)
        object.__setattr__(self, "stacks", stacks)
        if len(stacks) != len(self.taxonomy):
            raise ValidationError(f"bank has {len(stacks)} stacks for {len(self.taxonomy)} labels")
        shapes = {s.codebooks.shape for s in stacks}
        if len(shapes) != 1:
            raise ShapeError(f"bank stacks differ in shape: {sorted(shapes)}")
        if not 1 <= self.depth <= stacks[0].n_stages:
            raise ValidationError(f"routing depth must be in [1, {stacks[0].n_stages}], got {self.depth}")

    @property
    def dim(self) -> int:
        return self.stacks[0].dim

    def at_depth(self, depth: int) -> RouterBank:
        return RouterBank(self.stacks, depth, self.normalize, self.taxonomy)


@dataclass
class RouteResult:
    label: int
    scores: np.ndarray
    codes: np.ndarray  # C x depth


def _unit_rows(x):
    norms = np.sqrt((x * x).sum(axis=1))
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateInputError(f"row {int(zero[0])} has zero norm")
    return x / norms[:, None]


def route_rows(x, bank: RouterBank):
    """Route every row of ``x``; returns (labels, C-column cosine scores, per-stack codes)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != bank.dim:
        raise ShapeError(f"input dim {x.shape[-1]} does not match bank dim {bank.dim}")
    z = _unit_rows(x) if bank.normalize else x
    if not bank.normalize:
        _unit_rows(x)
    scores = np.empty((x.shape[0], len(bank.stacks)))
    codes = []
    for i, stack in enumerate(bank.stacks):
        c, _ = encode_array(z, stack, bank.depth)
        recon = decode(c, stack, bank.depth)
        scores[:, i] = cosine_rows(z, recon)
        codes.append(c)
    # argmax returns the first maximum, i.e. the lowest label id on ties
    return np.argmax(scores, axis=1).astype(np.int64), scores, codes


def route_depth_scores(x, bank: RouterBank, depths):
    """Cosine scores (len(depths) x N x C) for several routing depths from one encode per stack.

    Greedy encoding is prefix-consistent, so a depth-d route only needs the
    first d codes of the full-depth encode.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != bank.dim:
        raise ShapeError(f"input dim {x.shape[-1]} does not match bank dim {bank.dim}")
    z = _unit_rows(x) if bank.normalize else x
    if not bank.normalize:
        _unit_rows(x)
    depths = list(depths)
    top = max(depths)
    out = np.empty((len(depths), x.shape[0], len(bank.stacks)))
    for i, stack in enumerate(bank.stacks):
        codes, _ = encode_array(z, stack, top)
        recon = np.zeros_like(z)
        for d in range(1, top + 1):
            recon += stack.codebooks[d - 1][codes[:, d - 1]].astype(np.float64)
            if d in depths:
                out[depths.index(d), :, i] = cosine_rows(z, recon)
    return out


def route(z, bank: RouterBank) -> RouteResult:
    labels, scores, codes = route_rows(np.asarray(z, dtype=np.float64).reshape(1, -1), bank)
    return RouteResult(int(labels[0]), scores[0], np.stack([c[0] for c in codes]))


def _majority(votes, n_classes):
    counts = np.bincount(votes, minlength=n_classes)
    return int(np.argmax(counts))


def route_batch(
    eset: EmbeddingSet,
    bank: RouterBank,
    baseline_f1: float | None = None,
    frame_vote: bool = False,
):
    """Route every utterance; returns (predicted labels, report with Macro-F1 and its delta to a baseline).

    Frame-level sets are mean-pooled first unless ``frame_vote`` is set, in
    which case each frame is routed and the utterance takes the majority label.
    """
    n_classes = len(bank.taxonomy)
    if eset.level is Level.FRAME and frame_vote:
        frame_labels, _, _ = route_rows(eset.vectors, bank)
        pred = np.array(
            [_majority(frame_labels[u.frames[0] : u.frames[1]], n_classes) for u in eset.utterances], dtype=np.int64
        )
    else:
        pred, _, _ = route_rows(pooled_rows(eset), bank)
    truth = eset.labels()
    f1 = macro_f1(pred, truth, n_classes)
    recall = primary_recall(pred, truth, n_classes)
    report = EvalReport(
        config={
            "L": bank.stacks[0].n_stages,
            "K": bank.stacks[0].entries,
            "depth": bank.depth,
            "normalize": bank.normalize,
            "frame_vote": frame_vote,
            "regime": bank.stacks[0].regime.name.lower(),
            "bias_percent": bank.stacks[0].bias_percent,
        }
    )
    report.add(bank.depth, "ALL", "macro_f1", f1.macro)
    for c in range(n_classes):
        name = bank.taxonomy.name_of(c)
        report.add(bank.depth, name, "f1", f1.per_class[c])
        if recall.defined[c]:
            report.add(bank.depth, name, "recall", recall.per_class[c])
        else:
            report.flag(bank.depth, name, "recall", "class absent from truth")
    if baseline_f1 is not None:
        report.add(bank.depth, "ALL", "baseline_macro_f1", baseline_f1)
        report.add(bank.depth, "ALL", "delta_macro_f1", f1.macro - baseline_f1)
    return pred, report


def build_bank(
    train: EmbeddingSet,
    n_stages: int,
    entries: int,
    budget: int,
    bias_percent: int = 100,
    depth: int = 1,
    normalize: bool = True,
    seed: int = 0,
    kmeans: KMeansConfig | None = None,
    stack_fn=None,
) -> RouterBank:
    """Train one emotion-biased stack per label (``bias_percent=100`` gives emotion-specific stacks).

    With ``normalize`` the training vectors are L2-normalized first, matching
    how ``route`` normalizes its inputs.
    """
    if normalize:
        train = train.with_vectors(_unit_rows(train.vectors.astype(np.float64)).astype(np.float32))
    stack_fn = stack_fn or train_rvq
    stacks = []
    for c in range(len(train.taxonomy)):
        regime = TrainingRegime.biased(c, bias_percent, budget, seed=seed) if bias_percent < 100 else TrainingRegime.specific(c, budget, seed=seed)
        stacks.append(stack_fn(train, regime, n_stages, entries, kmeans))
    return RouterBank(tuple(stacks), depth, normalize, train.taxonomy)


def load_bank(directory, depth: int, normalize: bool = True, taxonomy: Taxonomy = DEFAULT_TAXONOMY) -> RouterBank:
    """Load ``<emotion>.rvqc`` for every emotion of ``taxonomy`` from ``directory``."""
    directory = Path(directory)
    stacks = []
    for name in taxonomy.names:
        path = directory / f"{name}.rvqc"
        if not path.exists():
            raise ValidationError(f"bank directory {directory} has no codebook for {name!r} (expected {path.name})")
        stacks.append(read_codebook(path, len(taxonomy)))
    return RouterBank(tuple(stacks), depth, normalize, taxonomy)
