# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled RK4 forward/adjoint sweeps over packed polynomial dynamics.

Operation-for-operation identical to ``_pykernels`` (same association order,
no FMA contraction: built with -ffp-contract=off) so both backends produce
bitwise-equal trajectories and gradients.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "c"


cdef inline void _poly_value(const long long[::1] offsets, const double[::1] coefs,
                             const long long[:, ::1] exps, const double* z, int dim,
                             double* out, int nout) noexcept nogil:
    cdef int o, i, e, t, rep
    cdef double acc, p
    for o in range(nout):
        acc = 0.0
        for t in range(offsets[o], offsets[o + 1]):
            p = coefs[t]
            for i in range(dim):
                e = <int> exps[t, i]
                for rep in range(e):
                    p *= z[i]
            acc += p
        out[o] = acc


cdef inline void _poly_jacobian(const long long[::1] offsets, const double[::1] coefs,
                                const long long[:, ::1] exps, const double* z, int dim,
                                double* jac, int nout) noexcept nogil:
    cdef int o, i, k, e, t, rep, ek
    cdef double p
    for o in range(nout):
        for i in range(dim):
            jac[o * dim + i] = 0.0
        for t in range(offsets[o], offsets[o + 1]):
            for k in range(dim):
                ek = <int> exps[t, k]
                if ek == 0:
                    continue
                p = coefs[t] * ek
                for i in range(dim):
                    e = <int> exps[t, i]
                    if i == k:
                        e -= 1
                    for rep in range(e):
                        p *= z[i]
                jac[o * dim + k] += p


def rk4_forward(offsets_in, coefs_in, exps_in, int n, int m, x0_in, u_cells_in,
                slopes_in, hs_in, int substeps):
    """See ``_pykernels.rk4_forward``."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] offsets = np.ascontiguousarray(offsets_in, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] coefs = np.ascontiguousarray(coefs_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] exps = np.ascontiguousarray(exps_in, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x0 = np.ascontiguousarray(x0_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] u_cells = np.ascontiguousarray(u_cells_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] slopes = np.ascontiguousarray(slopes_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] hs = np.ascontiguousarray(hs_in, dtype=np.float64)

    cdef int ncells = u_cells.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] states = np.empty((ncells * substeps + 1, n))
    cdef const long long[::1] off_v = offsets
    cdef const double[::1] coef_v = coefs
    cdef const long long[:, ::1] exps_v = exps
    cdef double[:, ::1] states_v = states
    cdef const double[:, ::1] u_v = u_cells
    cdef const double[::1] slopes_v = slopes
    cdef const double[::1] hs_v = hs

    cdef int dim = n + m
    cdef cnp.ndarray[cnp.float64_t, ndim=1] buf = np.empty(dim + 6 * n)
    cdef double* z = <double*> buf.data
    cdef double* f1 = z + dim
    cdef double* f2 = f1 + n
    cdef double* f3 = f2 + n
    cdef double* f4 = f3 + n
    cdef double* xs = f4 + n
    cdef double* x = xs + n

    cdef int c, i, s, node
    cdef double w, h, acc
    for i in range(n):
        x[i] = x0[i]
        states_v[0, i] = x[i]
    node = 0
    with nogil:
        for c in range(ncells):
            for i in range(m):
                z[n + i] = u_v[c, i]
            w = slopes_v[c]
            h = hs_v[c] / substeps
            for s in range(substeps):
                for i in range(n):
                    z[i] = x[i]
                _poly_value(off_v, coef_v, exps_v, z, dim, f1, n)
                for i in range(n):
                    xs[i] = x[i] + (h / 2.0) * (w * f1[i])
                    z[i] = xs[i]
                _poly_value(off_v, coef_v, exps_v, z, dim, f2, n)
                for i in range(n):
                    xs[i] = x[i] + (h / 2.0) * (w * f2[i])
                    z[i] = xs[i]
                _poly_value(off_v, coef_v, exps_v, z, dim, f3, n)
                for i in range(n):
                    xs[i] = x[i] + h * (w * f3[i])
                    z[i] = xs[i]
                _poly_value(off_v, coef_v, exps_v, z, dim, f4, n)
                for i in range(n):
                    acc = f1[i] + 2.0 * f2[i] + 2.0 * f3[i] + f4[i]
                    x[i] = x[i] + (h / 6.0) * (w * acc)
                node += 1
                for i in range(n):
                    states_v[node, i] = x[i]
    return states


def rk4_adjoint(offsets_in, coefs_in, exps_in, int n, int m, states_in, u_cells_in,
                slopes_in, hs_in, int substeps, seeds_in):
    """See ``_pykernels.rk4_adjoint``."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] offsets = np.ascontiguousarray(offsets_in, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] coefs = np.ascontiguousarray(coefs_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] exps = np.ascontiguousarray(exps_in, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] states = np.ascontiguousarray(states_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] u_cells = np.ascontiguousarray(u_cells_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] slopes = np.ascontiguousarray(slopes_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] hs = np.ascontiguousarray(hs_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] seeds = np.ascontiguousarray(seeds_in, dtype=np.float64)

    cdef int ncells = u_cells.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xbar_out = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ubar = np.zeros((ncells, m))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wbar = np.zeros(ncells)

    cdef const long long[::1] off_v = offsets
    cdef const double[::1] coef_v = coefs
    cdef const long long[:, ::1] exps_v = exps
    cdef const double[:, ::1] states_v = states
    cdef const double[:, ::1] u_v = u_cells
    cdef const double[::1] slopes_v = slopes
    cdef const double[::1] hs_v = hs
    cdef const double[:, ::1] seeds_v = seeds
    cdef double[:, ::1] ubar_v = ubar
    cdef double[::1] wbar_v = wbar

    cdef int dim = n + m
    cdef cnp.ndarray[cnp.float64_t, ndim=1] buf = np.empty(dim + 8 * n + 4 * n + 4 * n * dim)
    cdef double* z = <double*> buf.data
    cdef double* f1 = z + dim
    cdef double* f2 = f1 + n
    cdef double* f3 = f2 + n
    cdef double* f4 = f3 + n
    cdef double* x2 = f4 + n
    cdef double* x3 = x2 + n
    cdef double* x4 = x3 + n
    cdef double* xbar = x4 + n
    cdef double* kb1 = xbar + n
    cdef double* kb2 = kb1 + n
    cdef double* kb3 = kb2 + n
    cdef double* kb4 = kb3 + n
    cdef double* j1 = kb4 + n
    cdef double* j2 = j1 + n * dim
    cdef double* j3 = j2 + n * dim
    cdef double* j4 = j3 + n * dim

    cdef int c, i, s, node, rr
    cdef double w, h, acc, wsum
    node = ncells * substeps
    for i in range(n):
        xbar[i] = seeds_v[node, i]
    with nogil:
        for c in range(ncells - 1, -1, -1):
            for i in range(m):
                z[n + i] = u_v[c, i]
            w = slopes_v[c]
            h = hs_v[c] / substeps
            wsum = 0.0
            for s in range(substeps):
                node -= 1
                # recompute the forward stages of this substep
                for i in range(n):
                    z[i] = states_v[node, i]
                _poly_value(off_v, coef_v, exps_v, z, dim, f1, n)
                _poly_jacobian(off_v, coef_v, exps_v, z, dim, j1, n)
                for i in range(n):
                    x2[i] = states_v[node, i] + (h / 2.0) * (w * f1[i])
                    z[i] = x2[i]
                _poly_value(off_v, coef_v, exps_v, z, dim, f2, n)
                _poly_jacobian(off_v, coef_v, exps_v, z, dim, j2, n)
                for i in range(n):
                    x3[i] = states_v[node, i] + (h / 2.0) * (w * f2[i])
                    z[i] = x3[i]
                _poly_value(off_v, coef_v, exps_v, z, dim, f3, n)
                _poly_jacobian(off_v, coef_v, exps_v, z, dim, j3, n)
                for i in range(n):
                    x4[i] = states_v[node, i] + h * (w * f3[i])
                    z[i] = x4[i]
                _poly_value(off_v, coef_v, exps_v, z, dim, f4, n)
                _poly_jacobian(off_v, coef_v, exps_v, z, dim, j4, n)
                # reverse the stage combination
                for i in range(n):
                    kb4[i] = (h / 6.0) * xbar[i]
                for i in range(n):
                    acc = 0.0
                    for rr in range(n):
                        acc += w * j4[rr * dim + i] * kb4[rr]
                    kb3[i] = (h / 3.0) * xbar[i] + h * acc
                for i in range(n):
                    acc = 0.0
                    for rr in range(n):
                        acc += w * j3[rr * dim + i] * kb3[rr]
                    kb2[i] = (h / 3.0) * xbar[i] + (h / 2.0) * acc
                for i in range(n):
                    acc = 0.0
                    for rr in range(n):
                        acc += w * j2[rr * dim + i] * kb2[rr]
                    kb1[i] = (h / 6.0) * xbar[i] + (h / 2.0) * acc
                for i in range(n):
                    acc = 0.0
                    for rr in range(n):
                        acc += w * (j1[rr * dim + i] * kb1[rr] + j2[rr * dim + i] * kb2[rr])
                        acc += w * (j3[rr * dim + i] * kb3[rr] + j4[rr * dim + i] * kb4[rr])
                    xbar[i] = xbar[i] + acc
                for i in range(m):
                    acc = 0.0
                    for rr in range(n):
                        acc += w * (j1[rr * dim + n + i] * kb1[rr] + j2[rr * dim + n + i] * kb2[rr])
                        acc += w * (j3[rr * dim + n + i] * kb3[rr] + j4[rr * dim + n + i] * kb4[rr])
                    ubar_v[c, i] += acc
                for rr in range(n):
                    wsum += f1[rr] * kb1[rr] + f2[rr] * kb2[rr] + f3[rr] * kb3[rr] + f4[rr] * kb4[rr]
                for i in range(n):
                    xbar[i] = xbar[i] + seeds_v[node, i]
            wbar_v[c] = wsum
    for i in range(n):
        xbar_out[i] = xbar[i]
    return xbar_out, ubar, wbar
