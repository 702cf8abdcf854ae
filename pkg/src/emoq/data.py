"""Core domain types: emotion taxonomy, soft labels, utterances and embedding sets."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ManifestError, PreconditionError, ValidationError

DEFAULT_EMOTIONS = ("angry", "happy", "neutral", "sad")


class Level(str, Enum):
    FRAME = "frame"
    UTTERANCE = "utterance"


@dataclass(frozen=True)
class Taxonomy:
    """Ordered emotion names; a label id is the position in ``names``."""

    names: tuple[str, ...] = DEFAULT_EMOTIONS

    def __post_init__(self):
        norm = tuple(str(n).strip().lower() for n in self.names)
        if not norm:
            raise ValidationError("taxonomy must contain at least one emotion")
        if len(set(norm)) != len(norm):
            raise ValidationError(f"duplicate emotion names in taxonomy: {norm}")
        object.__setattr__(self, "names", norm)

    def __len__(self):
        return len(self.names)

    def id_of(self, name: str) -> int:
        key = str(name).strip().lower()
        try:
            return self.names.index(key)
        except ValueError:
            raise ManifestError(f"unknown emotion {name!r}; taxonomy is {list(self.names)}") from None

    def name_of(self, label_id: int) -> str:
        if not 0 <= label_id < len(self.names):
            raise ValidationError(f"label id {label_id} outside [0, {len(self.names)})")
        return self.names[label_id]


DEFAULT_TAXONOMY = Taxonomy()


def argmax_lowest(v) -> int:
    """Argmax with ties resolved toward the lowest index."""
    v = np.asarray(v)
    return int(np.flatnonzero(v == v.max())[0])


def renormalize(votes) -> np.ndarray:
    """Turn raw vote counts (or an unnormalized distribution) into a probability vector."""
    v = np.asarray(votes, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError("soft label must be a non-empty vector")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise ValidationError(f"soft label entries must be finite and non-negative, got {v.tolist()}")
    total = v.sum()
    if total <= 0:
        raise ValidationError("soft label has zero total mass")
    # already-normalized input passes through untouched so renormalization is idempotent
    if abs(total - 1.0) <= 1e-12:
        return v.copy()
    return v / total


@dataclass(frozen=True, eq=False)
class SoftLabel:
    probs: np.ndarray

    def __post_init__(self):
        p = renormalize(self.probs)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_votes(cls, votes) -> SoftLabel:
        return cls(np.asarray(votes, dtype=np.float64))

    def __eq__(self, other):
        return isinstance(other, SoftLabel) and np.array_equal(self.probs, other.probs)

    @property
    def primary(self) -> int:
        return argmax_lowest(self.probs)

    @property
    def max_share(self) -> float:
        return float(self.probs.max())


class Stratum(str, Enum):
    LOW = "low"
    HIGH = "high"


def ambiguity_stratum(soft: SoftLabel) -> Stratum:
    # a dominant emotion needs a strict majority
    return Stratum.LOW if soft.max_share > 0.5 else Stratum.HIGH


@dataclass(frozen=True)
class Utterance:
    uid: str
    label: int
    frames: tuple[int, int]
    corpus: str = ""
    soft: SoftLabel | None = None

    @property
    def n_frames(self) -> int:
        return self.frames[1] - self.frames[0]


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """An N x D float32 matrix plus the utterance manifest that indexes its rows.

    Immutable after construction; the vector array is flagged read-only.
    """

    vectors: np.ndarray
    utterances: tuple[Utterance, ...]
    level: Level = Level.FRAME
    taxonomy: Taxonomy = DEFAULT_TAXONOMY

    def __post_init__(self):
        v = np.asarray(self.vectors)
        if v.ndim != 2 or v.shape[1] < 1:
            raise ValidationError(f"vectors must be an N x D matrix with D >= 1, got shape {v.shape}")
        if v.dtype != np.float32:
            v = v.astype(np.float32)
        elif v.flags.writeable:
            v = v.copy()
        if not np.all(np.isfinite(v)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(v), axis=1))[0])
            raise ValidationError(f"vector row {bad} is not finite")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "utterances", tuple(self.utterances))
        object.__setattr__(self, "level", Level(self.level))
        _check_manifest(self.utterances, v.shape[0], len(self.taxonomy), self.level)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def n_rows(self) -> int:
        return self.vectors.shape[0]

    def __len__(self):
        return len(self.utterances)

    def labels(self) -> np.ndarray:
        return np.array([u.label for u in self.utterances], dtype=np.int64)

    def soft_matrix(self) -> np.ndarray:
        missing = [u.uid for u in self.utterances if u.soft is None]
        if missing:
            raise PreconditionError(f"utterances without soft labels: {missing[:10]}")
        return np.stack([u.soft.probs for u in self.utterances]) if self.utterances else np.zeros((0, len(self.taxonomy)))

    def row_labels(self) -> np.ndarray:
        """Hard label of every row (frames inherit their utterance's label)."""
        out = np.empty(self.n_rows, dtype=np.int64)
        for u in self.utterances:
            out[u.frames[0] : u.frames[1]] = u.label
        return out

    def with_vectors(self, vectors) -> EmbeddingSet:
        """Same manifest, new row matrix (e.g. a reconstruction)."""
        return replace(self, vectors=vectors)

    def subset(self, indices: Iterable[int]) -> EmbeddingSet:
        """Utterances at ``indices`` (in the given order) with their rows packed contiguously."""
        utts = [self.utterances[i] for i in indices]
        blocks = []
        new_utts = []
        start = 0
        for u in utts:
            blocks.append(self.vectors[u.frames[0] : u.frames[1]])
            new_utts.append(replace(u, frames=(start, start + u.n_frames)))
            start += u.n_frames
        vecs = np.concatenate(blocks) if blocks else np.zeros((0, self.dim), dtype=np.float32)
        return EmbeddingSet(vecs, tuple(new_utts), self.level, self.taxonomy)

    def by_label(self, label: int) -> EmbeddingSet:
        return self.subset([i for i, u in enumerate(self.utterances) if u.label == label])


def _check_manifest(utts: Sequence[Utterance], n_rows: int, n_classes: int, level: Level):
    seen = set()
    spans = []
    for u in utts:
        if u.uid in seen:
            raise ManifestError(f"duplicate uid {u.uid!r}")
        seen.add(u.uid)
        start, end = u.frames
        if end <= start:
            raise ManifestError(f"utterance {u.uid!r} has empty frame range [{start}, {end})")
        if start < 0 or end > n_rows:
            raise ManifestError(f"utterance {u.uid!r} frame range [{start}, {end}) outside [0, {n_rows})")
        if level is Level.UTTERANCE and end - start != 1:
            raise ManifestError(f"utterance-level set but {u.uid!r} spans {end - start} rows")
        if not 0 <= u.label < n_classes:
            raise ManifestError(f"utterance {u.uid!r} label {u.label} outside [0, {n_classes})")
        if u.soft is not None and u.soft.probs.size != n_classes:
            raise ManifestError(f"utterance {u.uid!r} soft label has {u.soft.probs.size} entries, expected {n_classes}")
        spans.append((start, end, u.uid))
    spans.sort()
    for (s0, e0, a), (s1, e1, b) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ManifestError(f"utterances {a!r} and {b!r} overlap")


def pool_utterance(eset: EmbeddingSet) -> EmbeddingSet:
    """Mean-pool the frames of each utterance into one row (64-bit accumulation)."""
    if eset.level is not Level.FRAME:
        raise PreconditionError("pool_utterance expects a frame-level set")
    out = np.empty((len(eset.utterances), eset.dim), dtype=np.float64)
    for i, u in enumerate(eset.utterances):
        start, end = u.frames
        if end <= start:
            raise ManifestError(f"utterance {u.uid!r} has an empty frame range")
        out[i] = eset.vectors[start:end].astype(np.float64).sum(axis=0) / (end - start)
    utts = tuple(replace(u, frames=(i, i + 1)) for i, u in enumerate(eset.utterances))
    return EmbeddingSet(out.astype(np.float32), utts, Level.UTTERANCE, eset.taxonomy)


def pooled_rows(eset: EmbeddingSet, rows=None) -> np.ndarray:
    """Float64 per-utterance means of ``rows`` (defaults to the set's own vectors)."""
    rows = eset.vectors if rows is None else rows
    if eset.level is Level.UTTERANCE:
        return np.asarray(rows, dtype=np.float64).copy()
    out = np.empty((len(eset.utterances), rows.shape[1]), dtype=np.float64)
    for i, u in enumerate(eset.utterances):
        out[i] = np.asarray(rows[u.frames[0] : u.frames[1]], dtype=np.float64).sum(axis=0) / u.n_frames
    return out


def stratify(eset: EmbeddingSet) -> tuple[EmbeddingSet, EmbeddingSet]:
    """Split into (low, high) ambiguity subsets by the dominant vote share."""
    missing = [u.uid for u in eset.utterances if u.soft is None]
    if missing:
        raise PreconditionError(f"stratify needs soft labels; missing for: {missing}")
    low = [i for i, u in enumerate(eset.utterances) if ambiguity_stratum(u.soft) is Stratum.LOW]
    high = [i for i, u in enumerate(eset.utterances) if ambiguity_stratum(u.soft) is Stratum.HIGH]
    return eset.subset(low), eset.subset(high)


# ------------------------------------------------------------------ manifest


def manifest_records(eset: EmbeddingSet) -> list[dict]:
    return [
        {
            "uid": u.uid,
            "label": eset.taxonomy.name_of(u.label),
            "soft": None if u.soft is None else [float(p) for p in u.soft.probs],
            "frames": [int(u.frames[0]), int(u.frames[1])],
            "corpus": u.corpus,
        }
        for u in eset.utterances
    ]


def write_manifest(eset: EmbeddingSet, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in manifest_records(eset):
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_manifest(path, taxonomy: Taxonomy = DEFAULT_TAXONOMY) -> list[Utterance]:
    utts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                soft = rec.get("soft")
                frames = rec["frames"]
                if len(frames) != 2:
                    raise ValueError("frames must be [start, end]")
                utts.append(
                    Utterance(
                        uid=str(rec["uid"]),
                        label=taxonomy.id_of(rec["label"]),
                        frames=(int(frames[0]), int(frames[1])),
                        corpus=str(rec.get("corpus", "")),
                        soft=None if soft is None else SoftLabel(np.asarray(soft, dtype=np.float64)),
                    )
                )
            except ManifestError as exc:
                raise ManifestError(f"{Path(path).name}:{lineno}: {exc}") from None
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"{Path(path).name}:{lineno}: malformed record ({exc})") from None
    return utts


def infer_level(utts: Sequence[Utterance], n_rows: int) -> Level:
    if len(utts) == n_rows and all(u.n_frames == 1 for u in utts):
        return Level.UTTERANCE
    return Level.FRAME
