"""Little-endian binary formats for embeddings (EMBV), codebooks (RVQC), codes (RVQI) and probes (PRBE)."""

from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

from .data import (
    DEFAULT_TAXONOMY,
    EmbeddingSet,
    Level,
    Taxonomy,
    infer_level,
    read_manifest,
    write_manifest,
)
from .errors import FormatError, ValidationError
from .rvq import CodeSequence, Regime, RvqStack

EMB_MAGIC = b"EMBV"
EMB_HEADER = struct.Struct("<4sHBQI")
CB_MAGIC = b"RVQC"
CB_HEADER = struct.Struct("<4sHIIIBBBQ")
CODE_MAGIC = b"RVQI"
CODE_HEADER = struct.Struct("<4sHQII")
PROBE_MAGIC = b"PRBE"
PROBE_HEADER = struct.Struct("<4sHII")

VERSION = 1
DTYPE_F32 = 0
NONE_U8 = 255

_F32 = np.dtype("<f4")


def _read_header(buf: bytes, header: struct.Struct, magic: bytes, what: str):
    if len(buf) < header.size:
        raise FormatError(f"{what} header truncated: {len(buf)} of {header.size} bytes", offset=len(buf))
    fields = header.unpack_from(buf, 0)
    if fields[0] != magic:
        raise FormatError(f"bad {what} magic {fields[0]!r}, expected {magic!r}", offset=0)
    if fields[1] != VERSION:
        raise FormatError(f"unsupported {what} version {fields[1]}", offset=4)
    return fields


def _check_length(buf: bytes, expected: int, what: str):
    if len(buf) < expected:
        raise FormatError(f"{what} payload truncated: file has {len(buf)} bytes, needs {expected}", offset=len(buf))
    if len(buf) > expected:
        raise FormatError(f"{what} has {len(buf) - expected} trailing bytes", offset=expected)


# ---------------------------------------------------------------- embeddings


def writable(path) -> Path:
    """``path`` as a Path, with its parent directory created if needed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def embeddings_to_bytes(vectors) -> bytes:
    v = np.ascontiguousarray(vectors, dtype=_F32)
    return EMB_HEADER.pack(EMB_MAGIC, VERSION, DTYPE_F32, v.shape[0], v.shape[1]) + v.tobytes()


def embeddings_from_bytes(buf: bytes) -> np.ndarray:
    _, _, dtype, n_rows, dim = _read_header(buf, EMB_HEADER, EMB_MAGIC, "embedding file")
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype}", offset=6)
    _check_length(buf, EMB_HEADER.size + n_rows * dim * 4, "embedding file")
    return np.frombuffer(buf, dtype=_F32, count=n_rows * dim, offset=EMB_HEADER.size).reshape(n_rows, dim).astype(np.float32)


def default_manifest_path(path) -> Path:
    return Path(path).with_suffix(".jsonl")


def write_embeddings(eset: EmbeddingSet, path, manifest_path=None) -> None:
    """Write the matrix to ``path`` and the manifest as JSON lines next to it."""
    writable(path).write_bytes(embeddings_to_bytes(eset.vectors))
    write_manifest(eset, manifest_path or default_manifest_path(path))


def read_embeddings(path, manifest_path=None, taxonomy: Taxonomy = DEFAULT_TAXONOMY, level: Level | None = None) -> EmbeddingSet:
    vectors = embeddings_from_bytes(Path(path).read_bytes())
    utts = read_manifest(manifest_path or default_manifest_path(path), taxonomy)
    if level is None:
        level = infer_level(utts, vectors.shape[0])
    return EmbeddingSet(vectors, tuple(utts), level, taxonomy)


# ----------------------------------------------------------------- codebooks


def codebook_to_bytes(stack: RvqStack) -> bytes:
    header = CB_HEADER.pack(
        CB_MAGIC,
        VERSION,
        stack.n_stages,
        stack.entries,
        stack.dim,
        int(stack.regime),
        NONE_U8 if stack.target is None else stack.target,
        NONE_U8 if stack.bias_percent is None else stack.bias_percent,
        stack.seed,
    )
    return header + np.ascontiguousarray(stack.codebooks, dtype=_F32).tobytes()


def codebook_from_bytes(buf: bytes, n_classes: int = len(DEFAULT_TAXONOMY)) -> RvqStack:
    _, _, n_stages, entries, dim, tag, target, bias, seed = _read_header(buf, CB_HEADER, CB_MAGIC, "codebook file")
    try:
        regime = Regime(tag)
    except ValueError:
        raise FormatError(f"unknown regime tag {tag}", offset=18) from None
    if regime is not Regime.BALANCED and not target < n_classes:
        raise FormatError(f"regime {regime.name.lower()} with target {target} outside [0, {n_classes})", offset=19)
    _check_length(buf, CB_HEADER.size + n_stages * entries * dim * 4, "codebook file")
    books = np.frombuffer(buf, dtype=_F32, count=n_stages * entries * dim, offset=CB_HEADER.size)
    return RvqStack(
        books.reshape(n_stages, entries, dim),
        regime,
        None if target == NONE_U8 else target,
        None if bias == NONE_U8 else bias,
        seed,
    )


def write_codebook(stack: RvqStack, path) -> int:
    """Write ``stack``; returns the file size in bytes."""
    data = codebook_to_bytes(stack)
    writable(path).write_bytes(data)
    return len(data)


def read_codebook(path, n_classes: int = len(DEFAULT_TAXONOMY)) -> RvqStack:
    return codebook_from_bytes(Path(path).read_bytes(), n_classes)


def codebook_payload_bytes(n_stages: int, entries: int, dim: int) -> int:
    return n_stages * entries * dim * 4


# --------------------------------------------------------------------- codes


def index_width(entries: int) -> int:
    if entries < 1:
        raise ValidationError("codebook needs at least one entry")
    if entries <= 1 << 8:
        return 1
    if entries <= 1 << 16:
        return 2
    return 4


_INDEX_DTYPES = {1: np.dtype("u1"), 2: np.dtype("<u2"), 4: np.dtype("<u4")}


def codes_to_bytes(codes: CodeSequence) -> bytes:
    dt = _INDEX_DTYPES[index_width(codes.entries)]
    header = CODE_HEADER.pack(CODE_MAGIC, VERSION, codes.n_rows, codes.n_stages, codes.entries)
    return header + np.ascontiguousarray(codes.indices, dtype=dt).tobytes()


def codes_from_bytes(buf: bytes) -> CodeSequence:
    _, _, n_rows, n_stages, entries = _read_header(buf, CODE_HEADER, CODE_MAGIC, "code file")
    if entries < 1:
        raise FormatError("code file declares an empty codebook", offset=18)
    width = index_width(entries)
    _check_length(buf, CODE_HEADER.size + n_rows * n_stages * width, "code file")
    idx = np.frombuffer(buf, dtype=_INDEX_DTYPES[width], count=n_rows * n_stages, offset=CODE_HEADER.size)
    idx = idx.reshape(n_rows, n_stages).astype(np.int64)
    if idx.size and idx.max() >= entries:
        bad = int(np.argmax(idx.ravel() >= entries))
        raise FormatError(f"code index {idx.ravel()[bad]} >= K={entries}", offset=CODE_HEADER.size + bad * width)
    return CodeSequence(idx, entries)


def write_codes(codes: CodeSequence, path) -> None:
    writable(path).write_bytes(codes_to_bytes(codes))


def read_codes(path) -> CodeSequence:
    return codes_from_bytes(Path(path).read_bytes())


# -------------------------------------------------------------------- probes


def probe_to_bytes(weights, bias) -> bytes:
    w = np.ascontiguousarray(weights, dtype=_F32)
    b = np.ascontiguousarray(bias, dtype=_F32)
    if w.ndim != 2 or b.shape != (w.shape[0],):
        raise ValidationError(f"probe weights {w.shape} and bias {b.shape} disagree")
    return PROBE_HEADER.pack(PROBE_MAGIC, VERSION, w.shape[0], w.shape[1]) + w.tobytes() + b.tobytes()


def probe_from_bytes(buf: bytes):
    _, _, n_classes, dim = _read_header(buf, PROBE_HEADER, PROBE_MAGIC, "probe file")
    _check_length(buf, PROBE_HEADER.size + (n_classes * dim + n_classes) * 4, "probe file")
    w = np.frombuffer(buf, dtype=_F32, count=n_classes * dim, offset=PROBE_HEADER.size)
    b = np.frombuffer(buf, dtype=_F32, count=n_classes, offset=PROBE_HEADER.size + n_classes * dim * 4)
    return w.reshape(n_classes, dim).astype(np.float32), b.astype(np.float32)


# ------------------------------------------------------------------- results


def report_csv(rows) -> str:
    """``layer,emotion,metric,value`` CSV text; values in repr form so reruns are byte-stable."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["layer", "emotion", "metric", "value"])
    for layer, emotion, metric, value in rows:
        writer.writerow([layer, emotion, metric, repr(float(value))])
    return out.getvalue()


def write_json(obj, path) -> None:
    writable(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
