"""The numba and numpy kernels must agree bit for bit."""

import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from emoq import _accel

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not available")

vals = st.floats(-50, 50, allow_nan=False)


@needs_numba
@given(
    st.tuples(st.integers(1, 30), st.integers(1, 9), st.integers(1, 6)).flatmap(
        lambda nkd: st.tuples(
            hnp.arrays(np.float64, (nkd[0], nkd[2]), elements=vals),
            hnp.arrays(np.float64, (nkd[1], nkd[2]), elements=vals),
        )
    )
)
def test_nearest_codeword_backends_agree(arrs):
    x, book = arrs
    a = _accel.nearest_codeword_numpy(x, book)
    b = _accel.nearest_codeword_numba(x, book)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@needs_numba
def test_encode_and_sums_backends_agree():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((500, 12))
    books = rng.standard_normal((4, 8, 12))
    c1, r1 = _accel.rvq_encode_numpy(x, books)
    c2, r2 = _accel.rvq_encode_numba(x, books)
    assert np.array_equal(c1, c2) and np.array_equal(r1, r2)
    labels = rng.integers(8, size=500)
    s1, n1 = _accel.cluster_sums_numpy(x, labels, 8)
    s2, n2 = _accel.cluster_sums_numba(x, labels, 8)
    assert np.array_equal(s1, s2) and np.array_equal(n1, n2)


def test_ties_go_to_lowest_index():
    book = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    x = np.array([[0.5, 0.5], [1.0, 0.0]])
    for fn in [_accel.nearest_codeword_numpy] + ([_accel.nearest_codeword_numba] if _accel.HAVE_NUMBA else []):
        idx, _ = fn(x, book)
        assert idx.tolist() == [0, 0]


def both_backends():
    return [_accel.nearest_codeword_numpy] + ([_accel.nearest_codeword_numba] if _accel.HAVE_NUMBA else [])


def test_permuted_codeword_is_an_exact_tie():
    # the same squared terms summed in a different order must still tie
    rng = np.random.default_rng(8)
    for _ in range(200):
        d = int(rng.integers(2, 40))
        c0 = rng.standard_normal(d)
        book = np.stack([c0, rng.permutation(c0)])
        x = np.full((1, d), rng.standard_normal() * 10)
        for fn in both_backends():
            assert fn(x, book)[0][0] == 0


def test_distance_gap_below_float64_resolution():
    # the exact distances differ by ~5e-76 at a round-half-even boundary;
    # codeword 1 is strictly closer
    h = float.fromhex
    t = h("0x1.7880d00000000p-127")
    x = np.array([[4.0, 0.0, h("0x1.03dbe6e5dd9c7p+2")]])
    book = np.array([[t, t, t], [t, 0.0, t]])
    for fn in both_backends():
        assert fn(x, book)[0][0] == 1


@needs_numba
@given(hnp.arrays(np.float64, st.integers(1, 60), elements=st.floats(-1e150, 1e150)), st.randoms())
def test_exact_distance_matches_math_fsum(a, rnd):
    b = np.array([rnd.choice([0.0, 1e-300, -2.5, 1e140]) for _ in range(a.size)])
    assert _accel._fsum_sq_dist(a, b) == math.fsum(((a - b) ** 2).tolist())


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, EMOQ_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from emoq import _accel; print(_accel.BACKEND, _accel.HAVE_NUMBA)"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.split() == ["numpy", "False"]
