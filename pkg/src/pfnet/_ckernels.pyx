# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops in :mod:`pfnet._pykernels`."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, cos, sin, INFINITY, isfinite

cnp.import_array()


def log_convolve(a, b, Py_ssize_t out_len):
    cdef double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    out = np.full(out_len, -np.inf)
    cdef double[::1] ov = out
    cdef Py_ssize_t na = av.shape[0], nb = bv.shape[0]
    cdef Py_ssize_t i, j, lo, hi
    cdef double mx, t, s
    for j in range(out_len):
        lo = j - nb + 1
        if lo < 0:
            lo = 0
        hi = j if j < na - 1 else na - 1
        mx = -INFINITY
        for i in range(lo, hi + 1):
            t = av[i] + bv[j - i]
            if t > mx:
                mx = t
        if not isfinite(mx):
            continue
        s = 0.0
        for i in range(lo, hi + 1):
            t = av[i] + bv[j - i]
            if t > -INFINITY:
                s += exp(t - mx)
        ov[j] = mx + log(s)
    return out


def convolve_truncated(p, q, Py_ssize_t out_len):
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    out = np.zeros(out_len)
    cdef double[::1] ov = out
    cdef Py_ssize_t np_ = pv.shape[0], nq = qv.shape[0]
    cdef Py_ssize_t i, k, top
    cdef double pi_
    if out_len == 0 or nq == 0:
        return out
    # raw pointers let the compiler vectorize the inner axpy
    cdef double* o = &ov[0]
    cdef double* qq = &qv[0]
    for i in range(min(np_, out_len)):
        pi_ = pv[i]
        if pi_ == 0.0:
            continue
        top = out_len - i
        if top > nq:
            top = nq
        for k in range(top):
            o[i + k] += pi_ * qq[k]
    return out


def char_sum(pmf, theta):
    cdef double[::1] pv = np.ascontiguousarray(pmf, dtype=np.float64)
    th_arr = np.ascontiguousarray(np.atleast_1d(theta), dtype=np.float64)
    cdef double[::1] tv = th_arr
    cdef Py_ssize_t nt = tv.shape[0], n = pv.shape[0]
    re = np.zeros(nt)
    im = np.zeros(nt)
    cdef double[::1] rv = re
    cdef double[::1] iv = im
    cdef Py_ssize_t t, x
    cdef double c, s, cr, ci, step_c, step_s, tmp, sr, si
    for t in range(nt):
        step_c = cos(tv[t])
        step_s = sin(tv[t])
        cr = 1.0
        ci = 0.0
        sr = 0.0
        si = 0.0
        for x in range(n):
            if x % 64 == 0:
                # reseed the rotation to bound accumulated rounding
                cr = cos(x * tv[t])
                ci = sin(x * tv[t])
            sr += pv[x] * cr
            si += pv[x] * ci
            tmp = cr * step_c - ci * step_s
            ci = cr * step_s + ci * step_c
            cr = tmp
        rv[t] = sr
        iv[t] = si
    return re + 1j * im
