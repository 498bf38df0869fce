import os
import subprocess
import sys

import numpy as np
import pytest

from timecrisis._backend import _pykernels, generic
from timecrisis.maps import PolynomialMap, SmoothMap

try:
    from timecrisis._backend import _core
except ImportError:
    _core = None

needs_core = pytest.mark.skipif(_core is None, reason="compiled kernels not built")


def random_poly_dynamics(rng, n, m, terms_per_output=5, max_power=2):
    rows = []
    for _ in range(n):
        row = []
        for _ in range(terms_per_output):
            e = tuple(int(v) for v in rng.integers(0, max_power, size=n + m))
            row.append((float(rng.normal() * 0.3), e))
        rows.append(row)
    return PolynomialMap(n + m, n, rows)


def sweep_inputs(rng, n, m, C, S):
    x0 = rng.normal(size=n) * 0.1
    u = rng.normal(size=(C, m)) * 0.5
    slopes = rng.uniform(0.5, 1.5, size=C)
    hs = np.full(C, 0.01)
    seeds = rng.normal(size=(C * S + 1, n)) * (rng.random((C * S + 1, 1)) < 0.2)
    return x0, u, slopes, hs, seeds


@needs_core
@pytest.mark.parametrize("n,m,C,S", [(1, 1, 30, 1), (2, 1, 25, 2), (3, 2, 20, 3)])
def test_backends_bitwise_identical(n, m, C, S):
    rng = np.random.default_rng(100 + n * 10 + m)
    f = random_poly_dynamics(rng, n, m)
    off, co, ex = f.pack()
    x0, u, slopes, hs, seeds = sweep_inputs(rng, n, m, C, S)
    sc = _core.rk4_forward(off, co, ex, n, m, x0, u, slopes, hs, S)
    sp = _pykernels.rk4_forward(off, co, ex, n, m, x0, u, slopes, hs, S)
    assert np.array_equal(sc, sp)
    ac = _core.rk4_adjoint(off, co, ex, n, m, sc, u, slopes, hs, S, seeds)
    ap = _pykernels.rk4_adjoint(off, co, ex, n, m, sp, u, slopes, hs, S, seeds)
    for a, b in zip(ac, ap):
        assert np.array_equal(a, b)


def test_python_kernel_adjoint_matches_finite_differences():
    rng = np.random.default_rng(7)
    n, m, C, S = 2, 1, 12, 1
    f = random_poly_dynamics(rng, n, m)
    off, co, ex = f.pack()
    x0, u, slopes, hs, seeds = sweep_inputs(rng, n, m, C, S)

    def functional(uv, sl):
        st = _pykernels.rk4_forward(off, co, ex, n, m, x0, uv, sl, hs, S)
        return float(np.sum(seeds * st))

    xbar0, ubar, wbar = _pykernels.rk4_adjoint(off, co, ex, n, m,
        _pykernels.rk4_forward(off, co, ex, n, m, x0, u, slopes, hs, S),
        u, slopes, hs, S, seeds)
    h = 1e-6
    for c in (0, 5, 11):
        up, um = u.copy(), u.copy()
        up[c, 0] += h
        um[c, 0] -= h
        fd = (functional(up, slopes) - functional(um, slopes)) / (2 * h)
        assert ubar[c, 0] == pytest.approx(fd, rel=1e-6, abs=1e-9)
        sp_, sm_ = slopes.copy(), slopes.copy()
        sp_[c] += h
        sm_[c] -= h
        fd_w = (functional(u, sp_) - functional(u, sm_)) / (2 * h)
        assert wbar[c] == pytest.approx(fd_w, rel=1e-6, abs=1e-9)


def test_generic_kernels_match_polynomial_path():
    rng = np.random.default_rng(3)
    n, m, C, S = 2, 1, 15, 2
    poly = random_poly_dynamics(rng, n, m)
    wrapped = SmoothMap(n + m, n, poly.value, poly.jacobian, poly.hessian, order=2)
    x0, u, slopes, hs, seeds = sweep_inputs(rng, n, m, C, S)
    off, co, ex = poly.pack()
    sp = _pykernels.rk4_forward(off, co, ex, n, m, x0, u, slopes, hs, S)
    sg = generic.rk4_forward(wrapped, n, m, x0, u, slopes, hs, S)
    assert np.allclose(sp, sg, atol=1e-14, rtol=0)
    ap = _pykernels.rk4_adjoint(off, co, ex, n, m, sp, u, slopes, hs, S, seeds)
    ag = generic.rk4_adjoint(wrapped, n, m, sg, u, slopes, hs, S, seeds)
    for a, b in zip(ap, ag):
        assert np.allclose(a, b, atol=1e-13, rtol=1e-12)


def test_backend_env_override():
    code = (
        "import timecrisis; print(timecrisis.KERNEL_BACKEND)"
    )
    env = dict(os.environ, TIMECRISIS_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"


@needs_core
def test_solver_results_identical_across_backends():
    code = r"""
import numpy as np
from timecrisis.catalog import catalog
from timecrisis.simulate import ControlSignal
from timecrisis.solve import SolverOptions, solve_fixed_structure
spec = catalog("linear_payoff_1d")
init = ControlSignal.constant(0.5, 200, 0.0, 2.0, "normalized")
sol = solve_fixed_structure(spec, 1, init, (1.5,), SolverOptions(n_arc=100, max_inner=400))
print(repr(float(sol.tau[0])), repr(float(sol.objective)))
"""
    outs = []
    for backend in ("c", "python"):
        env = dict(os.environ, TIMECRISIS_BACKEND=backend)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
        outs.append(res.stdout)
    assert outs[0] == outs[1]
