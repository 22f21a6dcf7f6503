# cython: boundscheck=False, cdivision=True, initializedcheck=False
# wraparound stays on: negative .shape indices on inferred ndarrays segfault
# without it, and the hot loops below only ever use nonnegative indices.
"""Compiled metric kernels: max-metric point distances, weighted window
distances and the bump-convolution accumulator. Mirrors _metric_py."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, exp, round

cnp.import_array()

BACKEND = "cython"


cdef inline double _cdist(double a, double b, bint circle) nogil:
    cdef double diff = a - b
    if circle:
        diff -= round(diff)
    return fabs(diff)


cdef inline double _point_dist(const double[:, :, ::1] A, const double[:, :, ::1] B,
                               Py_ssize_t i, Py_ssize_t j, Py_ssize_t k, Py_ssize_t kb,
                               Py_ssize_t dd, bint circle) nogil:
    cdef double m = 0.0, c
    cdef Py_ssize_t l
    for l in range(dd):
        c = _cdist(A[i, k, l], B[j, kb, l], circle)
        if c > m:
            m = c
    return m


cdef inline double _bump(double t) nogil:
    if t >= 1.0 or t <= -1.0:
        return 0.0
    return exp(1.0 / (t * t - 1.0))


def point_dist(a, b, bint circle):
    # keep these untyped: negative .shape indices on inferred ndarrays are
    # unsafe under wraparound=False
    cdef object arr_a = np.ascontiguousarray(a, dtype=np.float64)
    cdef object arr_b = np.ascontiguousarray(b, dtype=np.float64)
    if arr_a.shape != arr_b.shape:
        arr_a, arr_b = np.broadcast_arrays(arr_a, arr_b)
    shape = arr_a.shape[:-1]
    arr_a = np.ascontiguousarray(arr_a.reshape(-1, arr_a.shape[-1]))
    arr_b = np.ascontiguousarray(arr_b.reshape(-1, arr_b.shape[-1]))
    cdef const double[:, ::1] av = arr_a
    cdef const double[:, ::1] bv = arr_b
    cdef Py_ssize_t n = av.shape[0]
    cdef Py_ssize_t dd = av.shape[1]
    cdef Py_ssize_t i, l
    out = np.empty(n)
    cdef double[::1] ov = out
    cdef double m, c
    with nogil:
        for i in range(n):
            m = 0.0
            for l in range(dd):
                c = _cdist(av[i, l], bv[i, l], circle)
                if c > m:
                    m = c
            ov[i] = m
    return out.reshape(shape)


def rowwise_d1(A, B, weights, bint circle):
    cdef const double[:, :, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, :, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = Av.shape[0], W = Av.shape[1], dd = Av.shape[2], i, k
    out = np.empty(n)
    cdef double[::1] ov = out
    cdef double s
    with nogil:
        for i in range(n):
            s = 0.0
            for k in range(W):
                s += wv[k] * _point_dist(Av, Bv, i, i, k, k, dd, circle)
            ov[i] = s
    return out


def rowwise_dinf(A, B, bint circle):
    vals, _ = rowwise_dinf_argmax(A, B, circle)
    return vals


def rowwise_dinf_argmax(A, B, bint circle):
    cdef const double[:, :, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, :, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    cdef Py_ssize_t n = Av.shape[0], W = Av.shape[1], dd = Av.shape[2], i, k
    vals = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    cdef double[::1] vv = vals
    cdef long long[::1] iv = idx
    cdef double m, c
    cdef Py_ssize_t best
    with nogil:
        for i in range(n):
            m = -1.0
            best = 0
            for k in range(W):
                c = _point_dist(Av, Bv, i, i, k, k, dd, circle)
                if c > m:
                    m = c
                    best = k
            vv[i] = m
            iv[i] = best
    return vals, idx


def pairwise_d1(A, B, weights, bint circle):
    cdef const double[:, :, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, :, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = Av.shape[0], m = Bv.shape[0], W = Av.shape[1], dd = Av.shape[2]
    cdef Py_ssize_t i, j, k
    out = np.empty((n, m))
    cdef double[:, ::1] ov = out
    cdef double s
    with nogil:
        for i in range(n):
            for j in range(m):
                s = 0.0
                for k in range(W):
                    s += wv[k] * _point_dist(Av, Bv, i, j, k, k, dd, circle)
                ov[i, j] = s
    return out


def bump_convolve(XW, YW, weights, phi, double r, bint circle):
    cdef const double[:, :, ::1] Xv = np.ascontiguousarray(XW, dtype=np.float64)
    cdef const double[:, :, ::1] Yv = np.ascontiguousarray(YW, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(weights, dtype=np.float64)
    cdef object phi_arr = np.ascontiguousarray(phi, dtype=np.float64)
    if phi_arr.ndim == 1:
        phi_arr = phi_arr[:, None]
    cdef const double[:, ::1] pv = np.ascontiguousarray(phi_arr)
    cdef Py_ssize_t n = Xv.shape[0], m = Yv.shape[0], W = Xv.shape[1], dd = Xv.shape[2]
    cdef Py_ssize_t C = pv.shape[1], i, s, k, c
    num = np.zeros((n, C))
    den = np.zeros(n)
    hits = np.zeros(n, dtype=np.int64)
    s_rho2 = np.zeros(n)
    s_y2 = np.zeros((n, C))
    s_yrho = np.zeros((n, C))
    cdef double[:, ::1] numv = num
    cdef double[::1] denv = den
    cdef long long[::1] hv = hits
    cdef double[::1] r2v = s_rho2
    cdef double[:, ::1] y2v = s_y2
    cdef double[:, ::1] yrv = s_yrho
    cdef double d1, rho, y
    with nogil:
        for i in range(n):
            for s in range(m):
                d1 = 0.0
                for k in range(W):
                    d1 += wv[k] * _point_dist(Xv, Yv, i, s, k, k, dd, circle)
                rho = _bump(d1 / r)
                if rho > 0.0:
                    hv[i] += 1
                    denv[i] += rho
                    r2v[i] += rho * rho
                    for c in range(C):
                        y = pv[s, c] * rho
                        numv[i, c] += y
                        y2v[i, c] += y * y
                        yrv[i, c] += y * rho
    return num, den, hits, s_rho2, s_y2, s_yrho
