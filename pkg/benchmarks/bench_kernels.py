"""Time the numba and numpy kernel variants side by side.

    python benchmarks/bench_kernels.py [--size N] [--repeat R]

Both variants are importable in one process regardless of NESTQUANT_NUMBA;
the flag only decides which one the library dispatches to.
"""
import argparse
import time

import numpy as np

from nestquant import kernels


def best_of(fn, repeat):
    fn()  # warm-up (and numba compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=11_157_504)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    n = args.size

    cases = []
    for k in (4, 5, 8):
        cap = 64 // k
        nwords = -(-n // cap)
        pattern = rng.integers(0, 1 << k, size=n).astype(np.uint64)
        words = kernels.pack_words_np(pattern, k, cap, nwords)
        cases.append((f"pack k={k}", lambda f, p=pattern, k=k, c=cap, w=nwords: f(p, k, c, w),
                      kernels.pack_words_nb, kernels.pack_words_np))
        cases.append((f"unpack k={k}", lambda f, w=words, k=k, c=cap: f(w, k, c, n),
                      kernels.unpack_words_nb, kernels.unpack_words_np))
    rows = rng.normal(size=(n // 1024, 1024)) * 8
    cases.append(("adaptive rows", lambda f: f(rows), kernels.adaptive_rows_nb, kernels.adaptive_rows_np))

    print(f"{n} elements, best of {args.repeat}")
    print(f"{'kernel':<16}{'numba s':>10}{'numpy s':>10}{'speedup':>9}")
    for name, call, nb, npy in cases:
        t_nb = best_of(lambda: call(nb), args.repeat)
        t_np = best_of(lambda: call(npy), args.repeat)
        print(f"{name:<16}{t_nb:>10.4f}{t_np:>10.4f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
