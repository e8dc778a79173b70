# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels.

Same semantics as `_kernels_py` (the reference backend); see that module for
the contracts. These loops dominate the runtime of the pseudo-data
optimization, where the power-iteration scan runs thousands of times per
gradient step.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

COMPILED = True


def power_iteration_scan(t, theta0s, int n_iters, double shift=0.0, double tol=0.0):
    cdef cnp.ndarray[cnp.float64_t, ndim=3] tt = np.ascontiguousarray(t, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] th = np.ascontiguousarray(theta0s, dtype=np.float64).copy()
    cdef int k = tt.shape[0]
    cdef int L = th.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] u = np.empty(k, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] obj = np.empty(L, dtype=np.float64)
    cdef int it, col, a, b, c
    cdef double acc, nrm, s, moved, diff

    for col in range(L):
        for it in range(n_iters):
            for a in range(k):
                acc = shift * th[a, col]
                for b in range(k):
                    s = 0.0
                    for c in range(k):
                        s += tt[a, b, c] * th[c, col]
                    acc += s * th[b, col]
                u[a] = acc
            nrm = 0.0
            for a in range(k):
                nrm += u[a] * u[a]
            nrm = sqrt(nrm)
            moved = 0.0
            if nrm > 0.0:
                for a in range(k):
                    diff = u[a] / nrm - th[a, col]
                    moved += diff * diff
                    th[a, col] = u[a] / nrm
            if sqrt(moved) <= tol:
                break
        acc = 0.0
        for a in range(k):
            s = 0.0
            for b in range(k):
                nrm = 0.0
                for c in range(k):
                    nrm += tt[a, b, c] * th[c, col]
                s += nrm * th[b, col]
            acc += s * th[a, col]
        obj[col] = acc
    return th, obj


def power_iteration_tape(t, theta0, int n_iters, double shift=0.0, double tol=0.0):
    cdef cnp.ndarray[cnp.float64_t, ndim=3] tt = np.ascontiguousarray(t, dtype=np.float64)
    cdef int k = tt.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] thetas = np.empty((n_iters + 1, k), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] norms = np.empty(n_iters, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] theta = np.ascontiguousarray(theta0, dtype=np.float64).copy()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] u = np.empty(k, dtype=np.float64)
    cdef int it, a, b, c, m
    cdef double acc, nrm, s, moved, diff

    for a in range(k):
        thetas[0, a] = theta[a]
    m = 0
    for it in range(n_iters):
        for a in range(k):
            acc = shift * theta[a]
            for b in range(k):
                s = 0.0
                for c in range(k):
                    s += tt[a, b, c] * theta[c]
                acc += s * theta[b]
            u[a] = acc
        nrm = 0.0
        for a in range(k):
            nrm += u[a] * u[a]
        nrm = sqrt(nrm)
        norms[it] = nrm
        moved = 0.0
        if nrm > 0.0:
            for a in range(k):
                diff = u[a] / nrm - theta[a]
                moved += diff * diff
                theta[a] = u[a] / nrm
        for a in range(k):
            thetas[it + 1, a] = theta[a]
        m = it + 1
        if sqrt(moved) <= tol:
            break
    return thetas[:m + 1], norms[:m]


def power_iteration_backward(t, thetas, norms, vbar, double shift=0.0):
    cdef cnp.ndarray[cnp.float64_t, ndim=3] tt = np.ascontiguousarray(t, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] th = np.ascontiguousarray(thetas, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] nn = np.ascontiguousarray(norms, dtype=np.float64)
    cdef int k = tt.shape[0]
    cdef int n_iters = nn.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] tbar = np.zeros((k, k, k), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tb = np.ascontiguousarray(vbar, dtype=np.float64).copy()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ubar = np.empty(k, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tb_new = np.empty(k, dtype=np.float64)
    cdef int it, a, b, c
    cdef double dot, nrm, acc

    for it in range(n_iters - 1, -1, -1):
        nrm = nn[it]
        if nrm == 0.0:
            continue
        dot = 0.0
        for a in range(k):
            dot += th[it + 1, a] * tb[a]
        for a in range(k):
            ubar[a] = (tb[a] - th[it + 1, a] * dot) / nrm
        for a in range(k):
            for b in range(k):
                for c in range(k):
                    tbar[a, b, c] += ubar[a] * th[it, b] * th[it, c]
        # tb_new[l] = sum_am t[a,l,m] ubar[a] th[it,m] + sum_ab t[a,b,l] ubar[a] th[it,b]
        for b in range(k):
            acc = shift * ubar[b]
            for a in range(k):
                for c in range(k):
                    acc += tt[a, b, c] * ubar[a] * th[it, c]
            for a in range(k):
                for c in range(k):
                    acc += tt[a, c, b] * ubar[a] * th[it, c]
            tb_new[b] = acc
        for a in range(k):
            tb[a] = tb_new[a]
    return tbar


def triple_mean(y, weights):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] yy = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ww = np.ascontiguousarray(weights, dtype=np.float64)
    cdef int k = yy.shape[0]
    cdef int n = yy.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.zeros((k, k, k), dtype=np.float64)
    cdef int col, a, b, c
    cdef double wa, wab

    for col in range(n):
        for a in range(k):
            wa = ww[col] * yy[a, col]
            for b in range(k):
                wab = wa * yy[b, col]
                for c in range(k):
                    out[a, b, c] += wab * yy[c, col]
    return out


def cross_pair_vec(c, rows, y, weights):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cc = np.ascontiguousarray(c, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] rr = np.ascontiguousarray(rows, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] yy = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ww = np.ascontiguousarray(weights, dtype=np.float64)
    cdef int d = cc.shape[0]
    cdef int n = cc.shape[1]
    cdef int k = rr.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.zeros((k, k, k), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] s2 = np.empty((k, k), dtype=np.float64)
    cdef int col, row, a, b, m
    cdef double cv, wa

    for col in range(n):
        for a in range(k):
            for b in range(k):
                s2[a, b] = 0.0
        for row in range(d):
            cv = cc[row, col]
            if cv == 0.0:
                continue
            for a in range(k):
                wa = cv * rr[row, a]
                for b in range(k):
                    s2[a, b] += wa * rr[row, b]
        for a in range(k):
            for b in range(k):
                wa = ww[col] * s2[a, b]
                for m in range(k):
                    out[a, b, m] += wa * yy[m, col]
    return out
