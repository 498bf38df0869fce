#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-Python fallback.

Times the RK4 forward sweep and the adjoint sweep on problems of increasing
size, plus one end-to-end fixed-structure solve per backend.  Run:

    python benchmarks/bench_backends.py
"""

import time

import numpy as np

from timecrisis._backend import _pykernels
from timecrisis.catalog import catalog
from timecrisis.maps import PolynomialMap

try:
    from timecrisis._backend import _core
except ImportError:
    _core = None


def timeit(fn, min_time=0.2):
    fn()  # warm up
    reps = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(reps):
            fn()
        dt = time.perf_counter() - t0
        if dt >= min_time or reps >= 1 << 20:
            return dt / reps
        reps *= 2


def sweep_case(n, m, cells, substeps, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        row = []
        for _ in range(4):
            e = tuple(int(v) for v in rng.integers(0, 2, size=n + m))
            row.append((float(rng.normal() * 0.2), e))
        rows.append(row)
    f = PolynomialMap(n + m, n, rows)
    off, co, ex = f.pack()
    x0 = rng.normal(size=n) * 0.1
    u = rng.normal(size=(cells, m)) * 0.5
    slopes = rng.uniform(0.5, 1.5, size=cells)
    hs = np.full(cells, 1.0 / cells)
    seeds = np.zeros((cells * substeps + 1, n))
    seeds[-1] = 1.0
    return (off, co, ex, n, m, x0, u, slopes, hs, substeps), seeds


def bench_kernels():
    print(f"{'case':<28}{'python':>12}{'compiled':>12}{'speedup':>9}")
    for n, m, cells, S in ((1, 1, 1000, 1), (2, 1, 1000, 1), (3, 2, 2000, 2)):
        fwd_args, seeds = sweep_case(n, m, cells, S)

        t_py = timeit(lambda: _pykernels.rk4_forward(*fwd_args))
        label = f"forward n={n} m={m} C={cells} S={S}"
        if _core is None:
            print(f"{label:<28}{t_py * 1e3:>10.2f}ms{'-':>12}{'-':>9}")
        else:
            t_c = timeit(lambda: _core.rk4_forward(*fwd_args))
            print(f"{label:<28}{t_py * 1e3:>10.2f}ms{t_c * 1e3:>10.3f}ms{t_py / t_c:>8.0f}x")

        states = _pykernels.rk4_forward(*fwd_args)
        adj_args = fwd_args[:6] + (fwd_args[6], fwd_args[7], fwd_args[8], S, seeds)
        adj_args = (fwd_args[0], fwd_args[1], fwd_args[2], n, m, states,
                    fwd_args[6], fwd_args[7], fwd_args[8], S, seeds)
        t_py = timeit(lambda: _pykernels.rk4_adjoint(*adj_args))
        label = f"adjoint n={n} m={m} C={cells} S={S}"
        if _core is None:
            print(f"{label:<28}{t_py * 1e3:>10.2f}ms{'-':>12}{'-':>9}")
        else:
            t_c = timeit(lambda: _core.rk4_adjoint(*adj_args))
            print(f"{label:<28}{t_py * 1e3:>10.2f}ms{t_c * 1e3:>10.3f}ms{t_py / t_c:>8.0f}x")


def bench_solve():
    import os
    import subprocess
    import sys

    code = r"""
import time
from timecrisis.catalog import catalog
from timecrisis.simulate import ControlSignal
from timecrisis.solve import SolverOptions, solve_fixed_structure
import timecrisis
spec = catalog("quad_payoff_1d")
init = ControlSignal.constant(0.5, 1000, 0.0, 2.0, "normalized")
t0 = time.perf_counter()
sol = solve_fixed_structure(spec, 1, init, (1.5,), SolverOptions())
print(f"{timecrisis.KERNEL_BACKEND}: {time.perf_counter() - t0:.2f}s "
      f"(converged={sol.converged}, objective={sol.objective:.6f})")
"""
    print("\nend-to-end solve (quad_payoff_1d, defaults):")
    backends = ["python"] + (["c"] if _core is not None else [])
    for backend in backends:
        env = dict(os.environ, TIMECRISIS_BACKEND=backend)
        subprocess.run([sys.executable, "-c", code], env=env, check=True)


if __name__ == "__main__":
    if _core is None:
        print("compiled kernels not built; showing pure-Python timings only\n")
    bench_kernels()
    bench_solve()
