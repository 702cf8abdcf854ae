"""Root-seed splitting: every component draws from ``derive_rng(root, label, ...)``."""

import zlib

import numpy as np


def _key(parts) -> list[int]:
    return [zlib.crc32(str(p).encode("utf-8")) for p in parts]


def derive_seed(root: int, *labels) -> int:
    """A 63-bit seed derived from ``root`` and a fixed label path."""
    ss = np.random.SeedSequence(int(root), spawn_key=tuple(_key(labels)))
    return int(ss.generate_state(1, dtype=np.uint64)[0]) >> 1


def derive_rng(root: int, *labels) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(root), spawn_key=tuple(_key(labels))))
