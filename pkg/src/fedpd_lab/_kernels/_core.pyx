# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the data-backed loss families (hot inner loops).

Same contract as `py_kernels`; per-sample accumulation order is ascending,
so batch gradients over the full index range match the plain gradient
bit-for-bit.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log1p

BACKEND_NAME = "compiled"

cnp.import_array()


cdef inline double _sig(double t) nogil:
    # stable 1 / (1 + exp(-t))
    cdef double e
    if t >= 0.0:
        return 1.0 / (1.0 + exp(-t))
    e = exp(t)
    return e / (1.0 + e)


cdef inline double _log1pexp(double t) nogil:
    # stable log(1 + exp(t))
    if t > 0.0:
        return t + log1p(exp(-t))
    return log1p(exp(t))


def penlog_value(double[:, ::1] Z, double[::1] x, double alpha, double beta):
    cdef Py_ssize_t m = Z.shape[0], d = Z.shape[1]
    cdef Py_ssize_t k, j
    cdef double z, acc = 0.0, pen = 0.0, q
    with nogil:
        for k in range(m):
            z = 0.0
            for j in range(d):
                z += Z[k, j] * x[j]
            acc += _log1pexp(-z)
        for j in range(d):
            q = alpha * x[j] * x[j]
            pen += q / (1.0 + q)
    return acc / m + beta * pen


cdef void _penlog_accumulate(double[:, ::1] Z, cnp.int64_t[::1] idx, double[::1] x,
                             double alpha, double beta, double[::1] out) nogil:
    cdef Py_ssize_t nb = idx.shape[0], d = Z.shape[1]
    cdef Py_ssize_t t, k, j
    cdef double z, c, s
    for j in range(d):
        out[j] = 0.0
    for t in range(nb):
        k = idx[t]
        z = 0.0
        for j in range(d):
            z += Z[k, j] * x[j]
        c = -_sig(-z)
        for j in range(d):
            out[j] += c * Z[k, j]
    for j in range(d):
        out[j] /= nb
        s = 1.0 + alpha * x[j] * x[j]
        out[j] += (2.0 * alpha * beta) * x[j] / (s * s)


def penlog_batch_grad(double[:, ::1] Z, cnp.int64_t[::1] idx, double[::1] x,
                      double alpha, double beta):
    out = np.empty(Z.shape[1])
    cdef double[::1] mv = out
    with nogil:
        _penlog_accumulate(Z, idx, x, alpha, beta, mv)
    return out


def penlog_grad(double[:, ::1] Z, double[::1] x, double alpha, double beta):
    idx = np.arange(Z.shape[0], dtype=np.int64)
    return penlog_batch_grad(Z, idx, x, alpha, beta)


def siglog_value(double[:, ::1] A, double[::1] b, double[::1] x):
    cdef Py_ssize_t m = A.shape[0], d = A.shape[1]
    cdef Py_ssize_t k, j
    cdef double t, acc = 0.0
    with nogil:
        for k in range(m):
            t = -b[k]
            for j in range(d):
                t += A[k, j] * x[j]
            acc += _sig(t)
    return acc / m


def siglog_batch_grad(double[:, ::1] A, double[::1] b, cnp.int64_t[::1] idx, double[::1] x):
    cdef Py_ssize_t nb = idx.shape[0], d = A.shape[1]
    cdef Py_ssize_t t, k, j
    cdef double z, s, c
    out = np.zeros(d)
    cdef double[::1] mv = out
    with nogil:
        for t in range(nb):
            k = idx[t]
            z = -b[k]
            for j in range(d):
                z += A[k, j] * x[j]
            s = _sig(z)
            c = s * (1.0 - s)
            for j in range(d):
                mv[j] += c * A[k, j]
        for j in range(d):
            mv[j] /= nb
    return out


def siglog_grad(double[:, ::1] A, double[::1] b, double[::1] x):
    idx = np.arange(A.shape[0], dtype=np.int64)
    return siglog_batch_grad(A, b, idx, x)
