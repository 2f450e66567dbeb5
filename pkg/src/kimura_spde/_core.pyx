# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: scaled modified Bessel functions and the Kimura kernel.

The Python fallback in ``_fallback.py`` implements the same algorithms with
numpy; ``_backend.py`` picks whichever is importable.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, tgamma, fabs, log, pow, M_PI, M_LN2

cnp.import_array()

cdef double SERIES_TOL = 1e-17
cdef int SERIES_MAX = 600
cdef double SMALL_ARG = 1e-6


cdef inline double _ive_series(double order, double x) noexcept nogil:
    cdef double half = 0.5 * x
    cdef double q = half * half
    cdef double term, total
    cdef int m
    if order == 0.0:
        term = 1.0
    else:
        term = exp(order * (log(x) - M_LN2) - log(tgamma(order + 1.0)))
    total = term
    for m in range(1, SERIES_MAX):
        term *= q / (m * (m + order))
        total += term
        if term < SERIES_TOL * total:
            break
    return total * exp(-x)


cdef inline double _ive_asymptotic(double order, double x) noexcept nogil:
    cdef double mu = 4.0 * order * order
    cdef double term = 1.0
    cdef double total = 1.0
    cdef double prev = 1.0
    cdef double nxt
    cdef int k
    for k in range(1, 200):
        nxt = -term * (mu - (2.0 * k - 1.0) * (2.0 * k - 1.0)) / (8.0 * k * x)
        if fabs(nxt) > fabs(term):
            break
        term = nxt
        total += term
        if fabs(term) < 1e-17 * fabs(total):
            break
    return total / sqrt(2.0 * M_PI * x)


cdef inline double ive_scalar(double order, double x, double switch) noexcept nogil:
    if x == 0.0:
        return 1.0 if order == 0.0 else 0.0
    if x < switch:
        return _ive_series(order, x)
    return _ive_asymptotic(order, x)


cdef inline double q_nu_scalar(double nu, double z, double w, double t,
                               double switch) noexcept nogil:
    cdef double alpha = 1.0 - nu
    cdef double sz = sqrt(z)
    cdef double sw = sqrt(w)
    cdef double x = 2.0 * sz * sw / t
    cdef double gap
    if x < SMALL_ARG:
        # leading term of the series; avoids 0/0 as w or z -> 0
        return pow(z, alpha) * pow(t, -1.0 - alpha) * exp(-(z + w) / t) / tgamma(1.0 + alpha)
    gap = sz - sw
    return pow(z / w, 0.5 * alpha) / t * exp(-gap * gap / t) * ive_scalar(alpha, x, switch)


def ive_array(double order, double[::1] x, double switch=30.0):
    """e^{-x} I_order(x) for a contiguous float64 array."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out
    with nogil:
        for i in range(n):
            res[i] = ive_scalar(order, x[i], switch)
    return out


def q_nu_array(double nu, double[::1] z, double[::1] w, double[::1] t,
               double switch=30.0):
    """Kimura kernel q_nu on equal-length contiguous arrays."""
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out
    with nogil:
        for i in range(n):
            res[i] = q_nu_scalar(nu, z[i], w[i], t[i], switch)
    return out


def q0_squared_weighted(double[::1] z, double[::1] w, double[::1] t,
                        double[::1] weight, double switch=30.0):
    """Sum over nodes of weight * q0(z, w, t)**2, one value per call."""
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t i
    cdef double acc = 0.0
    cdef double q
    with nogil:
        for i in range(n):
            q = q_nu_scalar(0.0, z[i], w[i], t[i], switch)
            acc += weight[i] * q * q
    return acc
