"""Kernel backend selection.

The compiled ``_core`` extension is used when importable; otherwise the
pure-Python kernels take over.  Override with TIMECRISIS_BACKEND=c|python.
Non-polynomial dynamics always route through the generic callable sweeps.
"""

from __future__ import annotations

import os

import numpy as np

from ..maps import PolynomialMap
from . import generic


def _select():
    choice = os.environ.get("TIMECRISIS_BACKEND", "auto").lower()
    if choice not in ("auto", "c", "python"):
        raise ValueError(f"TIMECRISIS_BACKEND must be auto, c or python (got {choice!r})")
    if choice in ("auto", "c"):
        try:
            from . import _core

            return _core, "c"
        except ImportError:
            if choice == "c":
                raise ImportError(
                    "TIMECRISIS_BACKEND=c requested but the compiled kernel "
                    "extension is not built; install with `pip install -e .`"
                )
    from . import _pykernels

    return _pykernels, "python"


_impl, BACKEND = _select()


def _pack(f: PolynomialMap):
    cached = getattr(f, "_kernel_pack", None)
    if cached is None:
        cached = f.pack()
        object.__setattr__(f, "_kernel_pack", cached)
    return cached


def forward_sweep(f, x0, u_cells, slopes, hs, substeps=1):
    """Node states of RK4 on dx/ds = slope_c * f(x, u_c), cell by cell."""
    x0 = np.asarray(x0, dtype=float)
    u_cells = np.ascontiguousarray(u_cells, dtype=float)
    slopes = np.ascontiguousarray(slopes, dtype=float)
    hs = np.ascontiguousarray(hs, dtype=float)
    n = x0.shape[0]
    m = u_cells.shape[1]
    if f.in_dim != n + m:
        raise ValueError(f"dynamics expects {f.in_dim} inputs, state+control give {n + m}")
    if isinstance(f, PolynomialMap):
        off, co, ex = _pack(f)
        return _impl.rk4_forward(off, co, ex, n, m, x0, u_cells, slopes, hs, int(substeps))
    return generic.rk4_forward(f, n, m, x0, u_cells, slopes, hs, int(substeps))


def adjoint_sweep(f, states, u_cells, slopes, hs, substeps, seeds):
    """Reverse-mode gradients of sum_k seeds[k] . x_k through the forward sweep."""
    states = np.ascontiguousarray(states, dtype=float)
    u_cells = np.ascontiguousarray(u_cells, dtype=float)
    slopes = np.ascontiguousarray(slopes, dtype=float)
    hs = np.ascontiguousarray(hs, dtype=float)
    seeds = np.ascontiguousarray(seeds, dtype=float)
    n = states.shape[1]
    m = u_cells.shape[1]
    if isinstance(f, PolynomialMap):
        off, co, ex = _pack(f)
        return _impl.rk4_adjoint(
            off, co, ex, n, m, states, u_cells, slopes, hs, int(substeps), seeds
        )
    return generic.rk4_adjoint(f, n, m, states, u_cells, slopes, hs, int(substeps), seeds)
