"""Timing comparison: compiled kernels versus the pure-numpy fallback.

Runs the same composite fit in two subprocesses — one with numba enabled,
one with ``DAFM_DISABLE_NUMBA=1`` — and reports wall times.  Subprocesses
are required because the backend is chosen at import time.

Usage: python3 benchmarks/bench_modes.py [--n 80] [--t 80] [--reps 3]
"""

import argparse
import os
import subprocess
import sys
import textwrap

_WORKLOAD = textwrap.dedent(
    """
    import time
    import numpy as np
    from dafm import FitConfig, QuantileGrid, fit_dafm
    from dafm._accel import NUMBA_ENABLED
    from dafm.simgen import ErrorDist, gen_location_shift

    panel, _ = gen_location_shift({n}, {t}, ErrorDist.gaussian(), seed=0)
    grid = QuantileGrid((0.1, 0.3, 0.5, 0.7, 0.9))
    cfg = FitConfig(r=4, tol=1e-5)

    fit_dafm(panel, grid, cfg)  # warm-up: compilation and caches
    times = []
    for _ in range({reps}):
        t0 = time.perf_counter()
        fit = fit_dafm(panel, grid, cfg)
        times.append(time.perf_counter() - t0)
    backend = "numba" if NUMBA_ENABLED else "numpy"
    print("%s,%d,%.17g,%.6f" % (backend, {reps}, fit.objective, min(times)))
    """
)


def _run(disable_numba, n, t, reps):
    env = dict(os.environ)
    if disable_numba:
        env["DAFM_DISABLE_NUMBA"] = "1"
    else:
        env.pop("DAFM_DISABLE_NUMBA", None)
    out = subprocess.run(
        [sys.executable, "-c", _WORKLOAD.format(n=n, t=t, reps=reps)],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    backend, _, objective, best = out.stdout.strip().splitlines()[-1].split(",")
    return backend, float(objective), float(best)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=80)
    ap.add_argument("--t", type=int, default=80)
    ap.add_argument("--reps", type=int, default=3)
    args = ap.parse_args()

    print(f"panel {args.t}x{args.n}, 5-level grid, r=4, best of {args.reps}")
    results = {}
    for disable in (False, True):
        backend, objective, best = _run(disable, args.n, args.t, args.reps)
        results[backend] = (objective, best)
        print(f"  {backend:6s}  {best:8.3f}s  objective={objective:.12g}")

    if set(results) == {"numba", "numpy"}:
        obj_nb, t_nb = results["numba"]
        obj_np, t_np = results["numpy"]
        print(f"speedup (numpy/numba): {t_np / t_nb:.2f}x")
        gap = abs(obj_nb - obj_np) / max(abs(obj_np), 1e-12)
        print(f"relative objective gap between backends: {gap:.3g}")
    else:
        print("note: numba unavailable in this environment; one backend only")


if __name__ == "__main__":
    main()
