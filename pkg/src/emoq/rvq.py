"""Residual vector quantization: stacks, greedy encoding, prefix reconstruction, bitrate."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import _accel
from .data import DEFAULT_TAXONOMY, EmbeddingSet, Level, Taxonomy, Utterance
from .errors import ShapeError, ValidationError


class Regime(IntEnum):
    BALANCED = 0
    SPECIFIC = 1
    BIASED = 2


@dataclass(frozen=True, eq=False)
class RvqStack:
    """L codebooks of K float32 codewords each, plus the regime that produced them."""

    codebooks: np.ndarray
    regime: Regime = Regime.BALANCED
    target: int | None = None
    bias_percent: int | None = None
    seed: int = 0

    def __post_init__(self):
        cb = np.asarray(self.codebooks)
        if cb.ndim != 3 or min(cb.shape) < 1:
            raise ShapeError(f"codebooks must be L x K x D with every axis >= 1, got {cb.shape}")
        cb = np.array(cb, dtype=np.float32, copy=True)
        if not np.all(np.isfinite(cb)):
            raise ValidationError("codebooks contain non-finite values")
        cb.setflags(write=False)
        object.__setattr__(self, "codebooks", cb)
        object.__setattr__(self, "regime", Regime(self.regime))
        if self.regime is not Regime.BALANCED and self.target is None:
            raise ValidationError(f"{self.regime.name.lower()} stack needs a target emotion")

    @property
    def n_stages(self) -> int:
        return self.codebooks.shape[0]

    @property
    def entries(self) -> int:
        return self.codebooks.shape[1]

    @property
    def dim(self) -> int:
        return self.codebooks.shape[2]

    def fingerprint(self) -> str:
        return hashlib.sha256(self.codebooks.tobytes()).hexdigest()[:16]

    def truncated(self, depth: int) -> RvqStack:
        _check_depth(depth, self.n_stages)
        return RvqStack(self.codebooks[:depth], self.regime, self.target, self.bias_percent, self.seed)

    def __eq__(self, other):
        return (
            isinstance(other, RvqStack)
            and np.array_equal(self.codebooks, other.codebooks)
            and (self.regime, self.target, self.bias_percent, self.seed)
            == (other.regime, other.target, other.bias_percent, other.seed)
        )


@dataclass(frozen=True, eq=False)
class CodeSequence:
    """N x L stage indices. ``utterances`` optionally carries the source manifest."""

    indices: np.ndarray
    entries: int
    stack_id: str = ""
    utterances: tuple[Utterance, ...] | None = None
    level: Level = Level.FRAME
    taxonomy: Taxonomy = DEFAULT_TAXONOMY

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64, copy=True)
        if idx.ndim != 2:
            raise ShapeError(f"indices must be N x L, got shape {idx.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= self.entries):
            raise ValidationError(f"code index outside [0, {self.entries})")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def n_rows(self) -> int:
        return self.indices.shape[0]

    @property
    def n_stages(self) -> int:
        return self.indices.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, CodeSequence)
            and self.entries == other.entries
            and np.array_equal(self.indices, other.indices)
        )


def _check_depth(depth, n_stages):
    if not isinstance(depth, (int, np.integer)) or not 1 <= depth <= n_stages:
        raise ValidationError(f"depth must be in [1, {n_stages}], got {depth}")


def encode_array(x, stack: RvqStack, depth: int | None = None):
    """Greedy encode of raw rows; returns (codes, final residual in float64)."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != stack.dim:
        raise ShapeError(f"input dim {x.shape[-1] if x.ndim else None} does not match stack dim {stack.dim}")
    depth = stack.n_stages if depth is None else depth
    _check_depth(depth, stack.n_stages)
    return _accel.rvq_encode(x, stack.codebooks[:depth])


def encode(eset: EmbeddingSet, stack: RvqStack, depth: int | None = None) -> CodeSequence:
    codes, _ = encode_array(eset.vectors, stack, depth)
    return CodeSequence(codes, stack.entries, stack.fingerprint(), eset.utterances, eset.level, eset.taxonomy)


def decode(codes, stack: RvqStack, depth: int) -> np.ndarray:
    """Float64 sum of the chosen codewords over stages 1..depth, in stage order."""
    idx = codes.indices if isinstance(codes, CodeSequence) else np.asarray(codes)
    _check_depth(depth, min(stack.n_stages, idx.shape[1]))
    out = np.zeros((idx.shape[0], stack.dim), dtype=np.float64)
    for s in range(depth):
        out += stack.codebooks[s][idx[:, s]].astype(np.float64)
    return out


def reconstruct(codes: CodeSequence, stack: RvqStack, depth: int, like: EmbeddingSet | None = None) -> EmbeddingSet:
    """Reconstruction at ``depth`` as an embedding set carrying the source manifest."""
    if like is not None:
        utts, level, tax = like.utterances, like.level, like.taxonomy
    elif codes.utterances is not None:
        utts, level, tax = codes.utterances, codes.level, codes.taxonomy
    else:
        raise ValidationError("reconstruct needs a manifest (pass like= or encode from an EmbeddingSet)")
    return EmbeddingSet(decode(codes, stack, depth).astype(np.float32), utts, level, tax)


def bits_per_index(entries: int) -> int:
    """ceil(log2 K), exact in integers; a single-entry codebook costs nothing."""
    if entries < 1:
        raise ValidationError("codebook needs at least one entry")
    return (entries - 1).bit_length()


def nominal_bitrate(stack_or_entries, depth: int, frame_rate_hz: float = 50.0) -> float:
    """depth * ceil(log2 K) * frame rate, in bits per second."""
    entries = stack_or_entries.entries if isinstance(stack_or_entries, RvqStack) else int(stack_or_entries)
    if isinstance(stack_or_entries, RvqStack):
        _check_depth(depth, stack_or_entries.n_stages)
    elif depth < 1:
        raise ValidationError(f"depth must be >= 1, got {depth}")
    if not frame_rate_hz > 0:
        raise ValidationError("frame rate must be positive")
    return float(depth * bits_per_index(entries) * frame_rate_hz)


def continuous_bitrate(dim: int, frame_rate_hz: float = 50.0, bits_per_value: int = 32) -> float:
    return float(dim * bits_per_value * frame_rate_hz)
