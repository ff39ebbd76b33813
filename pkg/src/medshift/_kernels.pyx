# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled inner loops for IRLS and stratum accumulation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs

cnp.import_array()


cdef inline double _expit_log1pexp(double x, double* lp) nogil:
    # one exp(-|x|) serves both expit(x) and log(1 + e^x)
    cdef double t = exp(-fabs(x))
    if x >= 0:
        lp[0] = x + log1p(t)
        return 1.0 / (1.0 + t)
    lp[0] = log1p(t)
    return t / (1.0 + t)


def irls_pass(const double[:, ::1] X, const double[::1] y, const double[::1] w,
              const double[::1] offset, const double[::1] beta):
    cdef Py_ssize_t n = X.shape[0], k = X.shape[1], i, a, b
    cdef double eta, p, lp, wi, r, v, ll = 0.0
    grad_arr = np.zeros(k)
    hess_arr = np.zeros((k, k))
    cdef double[::1] grad = grad_arr
    cdef double[:, ::1] hess = hess_arr
    with nogil:
        for i in range(n):
            eta = offset[i]
            for a in range(k):
                eta = eta + X[i, a] * beta[a]
            p = _expit_log1pexp(eta, &lp)
            wi = w[i]
            ll = ll + wi * (y[i] * eta - lp)
            r = wi * (y[i] - p)
            v = wi * p * (1.0 - p)
            for a in range(k):
                grad[a] = grad[a] + X[i, a] * r
                for b in range(a + 1):
                    hess[a, b] = hess[a, b] + X[i, a] * X[i, b] * v
        for a in range(k):
            for b in range(a):
                hess[b, a] = hess[a, b]
    return ll, grad_arr, hess_arr


def stratum_sums(const cnp.intp_t[::1] key, const double[::1] y, const double[::1] w,
                 Py_ssize_t n_keys):
    cdef Py_ssize_t n = key.shape[0], i
    sw_arr = np.zeros(n_keys)
    swy_arr = np.zeros(n_keys)
    cdef double[::1] sw = sw_arr
    cdef double[::1] swy = swy_arr
    cdef cnp.intp_t kk
    with nogil:
        for i in range(n):
            kk = key[i]
            sw[kk] = sw[kk] + w[i]
            swy[kk] = swy[kk] + w[i] * y[i]
    return sw_arr, swy_arr
