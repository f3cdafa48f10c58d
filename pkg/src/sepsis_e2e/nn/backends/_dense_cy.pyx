# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Sequential C kernels for the dense network hot path.

Same call surface as dense_py; weight matrices are (out_dim, in_dim).
Sums run in plain nested-loop order with no threading and no BLAS, so
repeated runs are bit-identical.
"""

from libc.math cimport exp, log

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef double CLAMP = 1e-12


def affine(double[:, ::1] x, double[:, ::1] w, double[::1] b):
    cdef Py_ssize_t nb = x.shape[0], ni = x.shape[1], no = w.shape[0]
    if w.shape[1] != ni or b.shape[0] != no:
        raise ValueError("affine: shape mismatch")
    out_arr = np.empty((nb, no), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double acc
    with nogil:
        for i in range(nb):
            for j in range(no):
                acc = b[j]
                for k in range(ni):
                    acc += x[i, k] * w[j, k]
                out[i, j] = acc
    return out_arr


def affine_backward(double[:, ::1] x, double[:, ::1] w, double[:, ::1] dy):
    cdef Py_ssize_t nb = x.shape[0], ni = x.shape[1], no = w.shape[0]
    if w.shape[1] != ni or dy.shape[0] != nb or dy.shape[1] != no:
        raise ValueError("affine_backward: shape mismatch")
    dx_arr = np.zeros((nb, ni), dtype=np.float64)
    dw_arr = np.zeros((no, ni), dtype=np.float64)
    db_arr = np.zeros(no, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[:, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t i, j, k
    cdef double dv
    with nogil:
        for i in range(nb):
            for k in range(no):
                dv = dy[i, k]
                for j in range(ni):
                    dx[i, j] += dv * w[k, j]
                    dw[k, j] += dv * x[i, j]
                db[k] += dv
    return dx_arr, dw_arr, db_arr


def relu(double[:, ::1] z):
    cdef Py_ssize_t nb = z.shape[0], nc = z.shape[1]
    out_arr = np.empty((nb, nc), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(nb):
            for j in range(nc):
                out[i, j] = z[i, j] if z[i, j] > 0.0 else 0.0
    return out_arr


def relu_backward(double[:, ::1] z, double[:, ::1] da):
    cdef Py_ssize_t nb = z.shape[0], nc = z.shape[1]
    if da.shape[0] != nb or da.shape[1] != nc:
        raise ValueError("relu_backward: shape mismatch")
    out_arr = np.empty((nb, nc), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(nb):
            for j in range(nc):
                out[i, j] = da[i, j] if z[i, j] > 0.0 else 0.0
    return out_arr


def elementwise_mul(double[:, ::1] a, double[:, ::1] m):
    cdef Py_ssize_t nb = a.shape[0], nc = a.shape[1]
    if m.shape[0] != nb or m.shape[1] != nc:
        raise ValueError("elementwise_mul: shape mismatch")
    out_arr = np.empty((nb, nc), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(nb):
            for j in range(nc):
                out[i, j] = a[i, j] * m[i, j]
    return out_arr


def softmax_ce(double[:, ::1] logits, cnp.int64_t[::1] labels):
    """Row-wise stable softmax plus cross entropy.

    Returns (probs, losses, dlogits) where dlogits is the per-sample
    gradient softmax(logits) - onehot(labels), unscaled.
    """
    cdef Py_ssize_t nb = logits.shape[0], nk = logits.shape[1]
    if labels.shape[0] != nb:
        raise ValueError("softmax_ce: shape mismatch")
    probs_arr = np.empty((nb, nk), dtype=np.float64)
    losses_arr = np.empty(nb, dtype=np.float64)
    dlogits_arr = np.empty((nb, nk), dtype=np.float64)
    cdef double[:, ::1] probs = probs_arr
    cdef double[::1] losses = losses_arr
    cdef double[:, ::1] dlogits = dlogits_arr
    cdef Py_ssize_t i, k, y
    cdef double m, s, e, p
    with nogil:
        for i in range(nb):
            m = logits[i, 0]
            for k in range(1, nk):
                if logits[i, k] > m:
                    m = logits[i, k]
            s = 0.0
            for k in range(nk):
                e = exp(logits[i, k] - m)
                probs[i, k] = e
                s += e
            for k in range(nk):
                probs[i, k] /= s
            y = labels[i]
            p = probs[i, y]
            if p < CLAMP:
                p = CLAMP
            elif p > 1.0 - CLAMP:
                p = 1.0 - CLAMP
            losses[i] = -log(p)
            for k in range(nk):
                dlogits[i, k] = probs[i, k] - (1.0 if k == y else 0.0)
    return probs_arr, losses_arr, dlogits_arr


def sgd_update_flat(double[::1] params, double[::1] grads, double lr):
    cdef Py_ssize_t n = params.shape[0]
    if grads.shape[0] != n:
        raise ValueError("sgd_update_flat: shape mismatch")
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            params[i] -= lr * grads[i]
