"""Time the compiled kernels against their numpy twins.

    python benchmarks/bench_kernels.py --sites 200000 --repeat 5

Each kernel is run once per backend to warm up (numba compiles on first
call), then timed; the best of ``--repeat`` runs is reported together with
the largest difference between the two backends' results.
"""

import argparse
import time

import numpy as np

from gaugedress import _accel
from gaugedress.kernels import nudft_accumulate, ray_integral, spinor_jet_bilinears


def best_time(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def flat(r):
    parts = r if isinstance(r, tuple) else (r,)
    return np.concatenate([np.ravel(x) for x in parts])


def compare(name, fn, repeat):
    results, times = {}, {}
    saved = _accel.USE_NUMBA
    backends = [True, False] if _accel.HAVE_NUMBA else [False]
    for flag in backends:
        _accel.USE_NUMBA = flag
        label = "numba" if flag else "numpy"
        results[label] = fn()
        times[label] = best_time(fn, repeat)
    _accel.USE_NUMBA = saved
    line = f"{name:16s}" + "".join(f"  {k} {v * 1e3:9.2f} ms" for k, v in times.items())
    if len(results) == 2:
        diff = np.max(np.abs(flat(results["numba"]) - flat(results["numpy"])))
        line += f"  speedup {times['numpy'] / times['numba']:6.1f}x  max diff {diff:.1e}"
    print(line, flush=True)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sites", type=int, default=200_000, help="sites for the per-site kernels")
    p.add_argument("--grid", type=int, default=24, help="extent per axis for the ray kernel")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    threads = _accel.set_threads(args.threads)
    print(f"numba available: {_accel.HAVE_NUMBA}, threads: {threads}")
    rng = np.random.default_rng(args.seed)
    n = args.sites

    U = rng.normal(size=(n, 4)) + 1j * rng.normal(size=(n, 4))
    dU = rng.normal(size=(4, n, 4)) + 1j * rng.normal(size=(4, n, 4))
    compare("jet bilinears", lambda: spinor_jet_bilinears(U, dU), args.repeat)

    nt, nw = 16, max(1, n // 16)
    slab = rng.normal(size=(nt, nw, 4)) + 1j * rng.normal(size=(nt, nw, 4))
    times = np.sort(rng.uniform(-5, 5, nt))
    omega = rng.uniform(-3, 3, nw)

    def nudft():
        out = np.zeros((nw, 4), dtype=complex)
        nudft_accumulate(slab, times, omega, 0.5, out)
        return out

    compare("nudft", nudft, args.repeat)

    g = args.grid
    f = rng.normal(size=(g, g, g, g))
    curv = rng.normal(size=(4, g, g, g, g))
    direction = (0.6, 0.3, -0.2, 0.7)
    compare("ray", lambda: ray_integral(f, (0.5,) * 4, direction, 0.25, curv), args.repeat)


if __name__ == "__main__":
    main()
