"""Timing comparison of the numba kernels against the pure-numpy fallbacks.

Run: python benchmarks/bench_backend.py
The active backend for library calls is chosen by CREFLOW_BACKEND; this
script times both implementations directly regardless of that setting.
"""

import time

import numpy as np

from creflow import backend


def _time(fn, *args, repeats=5, inner=20):
    fn(*args)  # warm-up (includes JIT compilation for the numba path)
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        best = min(best, (time.perf_counter() - start) / inner)
    return best


def main():
    rng = np.random.default_rng(0)
    cases = []

    x0s = rng.standard_normal((32, 16))
    logp = np.log(np.full(32, 1.0 / 32))
    xts = rng.standard_normal((4096, 16))
    cases.append(("gauss_logweights_batch (4096x32 atoms, d=16)",
                  "gauss_logweights_batch", (x0s, logp, xts, 0.3)))

    positions = rng.uniform(0, 64, (32, 2))
    radii = np.full(32, 2.5)
    cases.append(("sweep_disc_mask (T=32, 64x64 grid)",
                  "sweep_disc_mask", (positions, radii, 64, 64)))

    print(f"active backend: {backend.BACKEND}")
    header = f"{'kernel':45s} {'numpy':>12s} {'numba':>12s} {'speedup':>9s}"
    print(header)
    print("-" * len(header))
    for label, name, args in cases:
        t_np = _time(backend._numpy_impls[name], *args)
        if backend._numba_impls is None:
            print(f"{label:45s} {t_np * 1e3:10.3f}ms {'n/a':>12s} {'n/a':>9s}")
            continue
        t_nb = _time(backend._numba_impls[name], *args)
        out_np = backend._numpy_impls[name](*args)
        out_nb = backend._numba_impls[name](*args)
        assert np.allclose(np.asarray(out_np, dtype=float), np.asarray(out_nb, dtype=float),
                           rtol=1e-10, atol=1e-12)
        print(f"{label:45s} {t_np * 1e3:10.3f}ms {t_nb * 1e3:10.3f}ms {t_np / t_nb:8.2f}x")


if __name__ == "__main__":
    main()
