"""Pure-Python RK4 forward/adjoint sweeps over packed polynomial dynamics.

Fallback for the compiled ``_core`` extension.  The arithmetic here is kept
operation-for-operation identical to the C kernel (same association order, no
vector shortcuts) so both backends produce bitwise-equal trajectories and
gradients.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def _poly_value(offsets, coefs, exps, z, out):
    nout = len(out)
    dim = len(z)
    for o in range(nout):
        acc = 0.0
        for t in range(offsets[o], offsets[o + 1]):
            p = coefs[t]
            row = exps[t]
            for i in range(dim):
                e = row[i]
                for _ in range(e):
                    p *= z[i]
            acc += p
        out[o] = acc


def _poly_jacobian(offsets, coefs, exps, z, jac):
    nout = len(jac)
    dim = len(z)
    for o in range(nout):
        jrow = jac[o]
        for i in range(dim):
            jrow[i] = 0.0
        for t in range(offsets[o], offsets[o + 1]):
            row = exps[t]
            for k in range(dim):
                ek = row[k]
                if ek == 0:
                    continue
                p = coefs[t] * ek
                for i in range(dim):
                    e = row[i]
                    if i == k:
                        e -= 1
                    for _ in range(e):
                        p *= z[i]
                jrow[k] += p


def rk4_forward(offsets, coefs, exps, n, m, x0, u_cells, slopes, hs, substeps):
    """Integrate dx/ds = slope_c * f(x, u_c) across cells with RK4.

    ``u_cells``: (C, m) per-cell controls; ``slopes``/``hs``: (C,) per-cell
    slope factor and cell width in the integration variable.  Returns node
    states, shape (C*substeps + 1, n).
    """
    offsets = np.ascontiguousarray(offsets, dtype=np.int64).tolist()
    coefs = np.ascontiguousarray(coefs, dtype=np.float64).tolist()
    exps = np.ascontiguousarray(exps, dtype=np.int64).tolist()
    ncells = int(u_cells.shape[0])
    states = np.empty((ncells * substeps + 1, n))
    x = [float(v) for v in x0]
    states[0] = x
    z = [0.0] * (n + m)
    f1 = [0.0] * n
    f2 = [0.0] * n
    f3 = [0.0] * n
    f4 = [0.0] * n
    xs = [0.0] * n
    u_list = u_cells.tolist()
    slopes_l = [float(v) for v in slopes]
    hs_l = [float(v) for v in hs]
    node = 0
    for c in range(ncells):
        uc = u_list[c]
        for i in range(m):
            z[n + i] = uc[i]
        w = slopes_l[c]
        h = hs_l[c] / substeps
        for _ in range(substeps):
            for i in range(n):
                z[i] = x[i]
            _poly_value(offsets, coefs, exps, z, f1)
            for i in range(n):
                xs[i] = x[i] + (h / 2.0) * (w * f1[i])
                z[i] = xs[i]
            _poly_value(offsets, coefs, exps, z, f2)
            for i in range(n):
                xs[i] = x[i] + (h / 2.0) * (w * f2[i])
                z[i] = xs[i]
            _poly_value(offsets, coefs, exps, z, f3)
            for i in range(n):
                xs[i] = x[i] + h * (w * f3[i])
                z[i] = xs[i]
            _poly_value(offsets, coefs, exps, z, f4)
            for i in range(n):
                acc = f1[i] + 2.0 * f2[i] + 2.0 * f3[i] + f4[i]
                x[i] = x[i] + (h / 6.0) * (w * acc)
            node += 1
            states[node] = x
    return states


def rk4_adjoint(offsets, coefs, exps, n, m, states, u_cells, slopes, hs, substeps, seeds):
    """Exact reverse-mode sweep of :func:`rk4_forward`.

    ``seeds``: (C*substeps + 1, n) adjoint sources added at the nodes (the
    gradient of ``sum_k seeds[k] . x_k``).  Returns ``(xbar0, ubar, wbar)``:
    the adjoint at the initial state, per-cell control gradients (C, m) and
    per-cell slope gradients (C,).
    """
    offsets = np.ascontiguousarray(offsets, dtype=np.int64).tolist()
    coefs = np.ascontiguousarray(coefs, dtype=np.float64).tolist()
    exps = np.ascontiguousarray(exps, dtype=np.int64).tolist()
    ncells = int(u_cells.shape[0])
    nodes = states.tolist()
    seeds_l = seeds.tolist()
    u_list = u_cells.tolist()
    slopes_l = [float(v) for v in slopes]
    hs_l = [float(v) for v in hs]
    ubar = np.zeros((ncells, m))
    wbar = np.zeros(ncells)
    dim = n + m
    z = [0.0] * dim
    f1 = [0.0] * n
    f2 = [0.0] * n
    f3 = [0.0] * n
    f4 = [0.0] * n
    x2 = [0.0] * n
    x3 = [0.0] * n
    x4 = [0.0] * n
    jac = [[0.0] * dim for _ in range(n)]
    j1 = [[0.0] * dim for _ in range(n)]
    j2 = [[0.0] * dim for _ in range(n)]
    j3 = [[0.0] * dim for _ in range(n)]
    j4 = [[0.0] * dim for _ in range(n)]
    kb1 = [0.0] * n
    kb2 = [0.0] * n
    kb3 = [0.0] * n
    kb4 = [0.0] * n
    node = ncells * substeps
    xbar = [float(v) for v in seeds_l[node]]
    for c in range(ncells - 1, -1, -1):
        uc = u_list[c]
        for i in range(m):
            z[n + i] = uc[i]
        w = slopes_l[c]
        h = hs_l[c] / substeps
        ub = ubar[c]
        wsum = 0.0
        for _ in range(substeps):
            node -= 1
            x = nodes[node]
            # recompute the forward stages of this substep
            for i in range(n):
                z[i] = x[i]
            _poly_value(offsets, coefs, exps, z, f1)
            _poly_jacobian(offsets, coefs, exps, z, j1)
            for i in range(n):
                x2[i] = x[i] + (h / 2.0) * (w * f1[i])
                z[i] = x2[i]
            _poly_value(offsets, coefs, exps, z, f2)
            _poly_jacobian(offsets, coefs, exps, z, j2)
            for i in range(n):
                x3[i] = x[i] + (h / 2.0) * (w * f2[i])
                z[i] = x3[i]
            _poly_value(offsets, coefs, exps, z, f3)
            _poly_jacobian(offsets, coefs, exps, z, j3)
            for i in range(n):
                x4[i] = x[i] + h * (w * f3[i])
                z[i] = x4[i]
            _poly_value(offsets, coefs, exps, z, f4)
            _poly_jacobian(offsets, coefs, exps, z, j4)
            # reverse the stage combination
            for i in range(n):
                kb4[i] = (h / 6.0) * xbar[i]
            for i in range(n):
                acc = 0.0
                for r in range(n):
                    acc += w * j4[r][i] * kb4[r]
                kb3[i] = (h / 3.0) * xbar[i] + h * acc
            for i in range(n):
                acc = 0.0
                for r in range(n):
                    acc += w * j3[r][i] * kb3[r]
                kb2[i] = (h / 3.0) * xbar[i] + (h / 2.0) * acc
            for i in range(n):
                acc = 0.0
                for r in range(n):
                    acc += w * j2[r][i] * kb2[r]
                kb1[i] = (h / 6.0) * xbar[i] + (h / 2.0) * acc
            for i in range(n):
                acc = 0.0
                for r in range(n):
                    acc += w * (j1[r][i] * kb1[r] + j2[r][i] * kb2[r])
                    acc += w * (j3[r][i] * kb3[r] + j4[r][i] * kb4[r])
                xbar[i] = xbar[i] + acc
            for i in range(m):
                acc = 0.0
                for r in range(n):
                    acc += w * (j1[r][n + i] * kb1[r] + j2[r][n + i] * kb2[r])
                    acc += w * (j3[r][n + i] * kb3[r] + j4[r][n + i] * kb4[r])
                ub[i] += acc
            for r in range(n):
                wsum += f1[r] * kb1[r] + f2[r] * kb2[r] + f3[r] * kb3[r] + f4[r] * kb4[r]
            sd = seeds_l[node]
            for i in range(n):
                xbar[i] = xbar[i] + sd[i]
        wbar[c] = wsum
    return np.asarray(xbar), ubar, wbar
