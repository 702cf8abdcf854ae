"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--rows 30000] [--dim 64] [--stages 8] [--entries 32] [--repeat 3]

Both paths are imported from the same module, so the numba flag in the
environment does not matter here. Outputs are checked for equality before
anything is timed.
"""

import argparse
import time

import numpy as np

from emoq import _accel


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=30000)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--stages", type=int, default=8)
    ap.add_argument("--entries", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal((args.rows, args.dim))
    books = rng.standard_normal((args.stages, args.entries, args.dim)) / np.arange(1, args.stages + 1)[:, None, None]
    labels = rng.integers(args.entries, size=args.rows)

    cases = {
        "nearest_codeword": (
            lambda: _accel.nearest_codeword_numpy(x, books[0]),
            getattr(_accel, "nearest_codeword_numba", None) and (lambda: _accel.nearest_codeword_numba(x, books[0])),
        ),
        "rvq_encode": (
            lambda: _accel.rvq_encode_numpy(x, books),
            getattr(_accel, "rvq_encode_numba", None) and (lambda: _accel.rvq_encode_numba(x, books)),
        ),
        "cluster_sums": (
            lambda: _accel.cluster_sums_numpy(x, labels, args.entries),
            getattr(_accel, "cluster_sums_numba", None) and (lambda: _accel.cluster_sums_numba(x, labels, args.entries)),
        ),
    }

    print(f"rows={args.rows} dim={args.dim} stages={args.stages} entries={args.entries} numba={_accel.HAVE_NUMBA}")
    print(f"{'kernel':<18}{'numpy s':>10}{'numba s':>10}{'speedup':>10}")
    for name, (np_fn, nb_fn) in cases.items():
        t_np = best_of(np_fn, args.repeat)
        if nb_fn is None:
            print(f"{name:<18}{t_np:>10.4f}{'-':>10}{'-':>10}")
            continue
        ref = np_fn()
        got = nb_fn()  # also triggers compilation
        same = all(np.array_equal(a, b) for a, b in zip(ref, got))
        if not same:
            raise SystemExit(f"{name}: numba and numpy outputs differ")
        t_nb = best_of(nb_fn, args.repeat)
        print(f"{name:<18}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
