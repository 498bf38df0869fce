"""RK4 forward/adjoint sweeps for arbitrary SmoothMap dynamics.

Used when the dynamics is not a PolynomialMap and therefore cannot be packed
for the compiled kernels.  Mirrors the numerics of ``_pykernels`` (same
scheme, same stage structure) using the map's callable evaluators.
"""

from __future__ import annotations

import numpy as np


def rk4_forward(f, n, m, x0, u_cells, slopes, hs, substeps):
    ncells = u_cells.shape[0]
    states = np.empty((ncells * substeps + 1, n))
    x = np.asarray(x0, dtype=float).copy()
    states[0] = x
    node = 0
    for c in range(ncells):
        u = u_cells[c]
        w = slopes[c]
        h = hs[c] / substeps

        def fval(xx):
            return f.value(np.concatenate([xx, u]))

        for _ in range(substeps):
            f1 = fval(x)
            f2 = fval(x + (h / 2.0) * (w * f1))
            f3 = fval(x + (h / 2.0) * (w * f2))
            f4 = fval(x + h * (w * f3))
            x = x + (h / 6.0) * (w * (f1 + 2.0 * f2 + 2.0 * f3 + f4))
            node += 1
            states[node] = x
    return states


def rk4_adjoint(f, n, m, states, u_cells, slopes, hs, substeps, seeds):
    ncells = u_cells.shape[0]
    ubar = np.zeros((ncells, m))
    wbar = np.zeros(ncells)
    node = ncells * substeps
    xbar = seeds[node].astype(float).copy()
    for c in range(ncells - 1, -1, -1):
        u = u_cells[c]
        w = slopes[c]
        h = hs[c] / substeps
        for _ in range(substeps):
            node -= 1
            x = states[node]
            z1 = np.concatenate([x, u])
            f1 = f.value(z1)
            x2 = x + (h / 2.0) * (w * f1)
            z2 = np.concatenate([x2, u])
            f2 = f.value(z2)
            x3 = x + (h / 2.0) * (w * f2)
            z3 = np.concatenate([x3, u])
            f3 = f.value(z3)
            x4 = x + h * (w * f3)
            z4 = np.concatenate([x4, u])
            f4 = f.value(z4)
            j1 = f.jacobian(z1)
            j2 = f.jacobian(z2)
            j3 = f.jacobian(z3)
            j4 = f.jacobian(z4)
            kb4 = (h / 6.0) * xbar
            kb3 = (h / 3.0) * xbar + h * (w * j4[:, :n].T @ kb4)
            kb2 = (h / 3.0) * xbar + (h / 2.0) * (w * j3[:, :n].T @ kb3)
            kb1 = (h / 6.0) * xbar + (h / 2.0) * (w * j2[:, :n].T @ kb2)
            xbar = xbar + w * (
                j1[:, :n].T @ kb1 + j2[:, :n].T @ kb2 + j3[:, :n].T @ kb3 + j4[:, :n].T @ kb4
            )
            ubar[c] += w * (
                j1[:, n:].T @ kb1 + j2[:, n:].T @ kb2 + j3[:, n:].T @ kb3 + j4[:, n:].T @ kb4
            )
            wbar[c] += f1 @ kb1 + f2 @ kb2 + f3 @ kb3 + f4 @ kb4
            xbar = xbar + seeds[node]
    return xbar, ubar, wbar
