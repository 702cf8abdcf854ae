"""Hot kernels: nearest-codeword search, greedy residual encoding, cluster sums.

Each kernel exists twice, a numba ``@njit`` version and a pure-numpy version.
Both accumulate squared distances coordinate by coordinate in float64 and
break ties toward the lowest index, so the two paths return bit-identical
results.

A running float64 sum can round two equal distances apart (the same squared
terms in a different coordinate order) or two different distances together.
So whenever another codeword lands within the summation error bound of the
best one, the candidates are re-scored with an exactly rounded sum of their
squared terms, and the lowest index wins among equal exact scores. Set ``EMOQ_DISABLE_NUMBA=1`` (or run without numba installed) to use
the numpy path.
"""

import math
import os

import numpy as np

# the bundled TBB is too old and warns on every parallel launch
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

_DISABLED = os.environ.get("EMOQ_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by EMOQ_DISABLE_NUMBA")
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

# rows x codewords budget per numpy chunk
_CHUNK_ELEMS = 1 << 20
_EPS = float(np.finfo(np.float64).eps)


# ---------------------------------------------------------------- numpy path


def _near_tie_threshold(best_d, dim):
    # plain recursive summation of dim non-negative terms is within
    # (dim - 1) * eps relative of the exact sum; leave a generous margin
    return best_d * (1.0 + 4.0 * (dim + 1) * _EPS)


def _refine_numpy(row, codebook, candidates):
    best, best_d = -1, np.inf
    for c in candidates:
        exact = math.fsum(((row - codebook[c]) ** 2).tolist())
        if exact < best_d:
            best, best_d = int(c), exact
    return best, best_d


def nearest_codeword_numpy(x, codebook):
    n, d = x.shape
    k = codebook.shape[0]
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    step = max(1, _CHUNK_ELEMS // max(k, 1))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        acc = np.zeros((hi - lo, k), dtype=np.float64)
        for j in range(d):
            diff = x[lo:hi, j, None] - codebook[None, :, j]
            acc += diff * diff
        best = np.argmin(acc, axis=1)
        best_d = acc[np.arange(hi - lo), best]
        idx[lo:hi] = best
        dist[lo:hi] = best_d
        near = acc <= _near_tie_threshold(best_d, d)[:, None]
        for r in np.flatnonzero(near.sum(axis=1) > 1):
            idx[lo + r], dist[lo + r] = _refine_numpy(x[lo + r], codebook, np.flatnonzero(near[r]))
    return idx, dist


def rvq_encode_numpy(x, books):
    n_stages = books.shape[0]
    residual = x.copy()
    codes = np.empty((x.shape[0], n_stages), dtype=np.int64)
    for stage in range(n_stages):
        idx, _ = nearest_codeword_numpy(residual, books[stage])
        codes[:, stage] = idx
        residual -= books[stage][idx]
    return codes, residual


def cluster_sums_numpy(x, labels, k):
    sums = np.zeros((k, x.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, x)
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    return sums, counts


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def _fsum_sq_dist(a, b):
        # Shewchuk partials with CPython's correctly rounded final step, so the
        # result is bit-identical to math.fsum over the same terms
        partials = np.empty(a.shape[0] + 64, dtype=np.float64)
        n = 0
        for j in range(a.shape[0]):
            diff = a[j] - b[j]
            x = diff * diff
            i = 0
            for m in range(n):
                y = partials[m]
                if abs(x) < abs(y):
                    x, y = y, x
                hi = x + y
                lo = y - (hi - x)
                if lo != 0.0:
                    partials[i] = lo
                    i += 1
                x = hi
            n = i
            if x != 0.0:
                partials[n] = x
                n += 1
        hi = 0.0
        lo = 0.0
        if n > 0:
            n -= 1
            hi = partials[n]
            while n > 0:
                x = hi
                n -= 1
                y = partials[n]
                hi = x + y
                lo = y - (hi - x)
                if lo != 0.0:
                    break
            if n > 0 and ((lo < 0.0 and partials[n - 1] < 0.0) or (lo > 0.0 and partials[n - 1] > 0.0)):
                y = lo * 2.0
                x = hi + y
                if y == x - hi:
                    hi = x
        return hi

    @njit(cache=True, inline="always")
    def _plain_sq_dist(a, b):
        acc = 0.0
        for j in range(a.shape[0]):
            diff = a[j] - b[j]
            acc += diff * diff
        return acc

    @njit(cache=True)
    def _nearest_row(r, book):
        k, d = book.shape
        best = 0
        best_d = np.inf
        second = np.inf
        for c in range(k):
            acc = _plain_sq_dist(r, book[c])
            if acc < best_d:
                second = best_d
                best_d = acc
                best = c
            elif acc < second:
                second = acc
        thresh = best_d * (1.0 + 4.0 * (d + 1) * 2.220446049250313e-16)
        if second <= thresh:
            best_exact = np.inf
            for c in range(k):
                if _plain_sq_dist(r, book[c]) <= thresh:
                    exact = _fsum_sq_dist(r, book[c])
                    if exact < best_exact:
                        best_exact = exact
                        best = c
            best_d = best_exact
        return best, best_d

    @njit(cache=True, parallel=True)
    def nearest_codeword_numba(x, codebook):
        n = x.shape[0]
        idx = np.empty(n, dtype=np.int64)
        dist = np.empty(n, dtype=np.float64)
        for i in prange(n):
            idx[i], dist[i] = _nearest_row(x[i], codebook)
        return idx, dist

    @njit(cache=True, parallel=True)
    def rvq_encode_numba(x, books):
        n, d = x.shape
        n_stages = books.shape[0]
        codes = np.empty((n, n_stages), dtype=np.int64)
        residual = x.copy()
        for i in prange(n):
            for s in range(n_stages):
                best, _ = _nearest_row(residual[i], books[s])
                codes[i, s] = best
                for j in range(d):
                    residual[i, j] -= books[s, best, j]
        return codes, residual

    @njit(cache=True)
    def cluster_sums_numba(x, labels, k):
        n, d = x.shape
        sums = np.zeros((k, d), dtype=np.float64)
        counts = np.zeros(k, dtype=np.int64)
        # sequential row order keeps the reduction bit-stable
        for i in range(n):
            c = labels[i]
            counts[c] += 1
            for j in range(d):
                sums[c, j] += x[i, j]
        return sums, counts

    _nearest = nearest_codeword_numba
    _encode = rvq_encode_numba
    _sums = cluster_sums_numba
    BACKEND = "numba"
else:
    _nearest = nearest_codeword_numpy
    _encode = rvq_encode_numpy
    _sums = cluster_sums_numpy
    BACKEND = "numpy"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def nearest_codeword(x, codebook):
    """Index of and squared distance to the nearest row of ``codebook`` for each row of ``x``."""
    return _nearest(_f64(x), _f64(codebook))


def rvq_encode(x, books):
    """Greedy residual encoding of ``x`` through ``books`` (L x K x D); returns (codes, residual)."""
    return _encode(_f64(x), _f64(books))


def cluster_sums(x, labels, k):
    return _sums(_f64(x), np.ascontiguousarray(labels, dtype=np.int64), int(k))
