# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the dense layer-chain hot path.

Same contract as the NumPy backend, but with the per-layer affine and
rectifier loops in C. The win is largest at small batches, where NumPy's
per-call overhead dominates the arithmetic; at larger batches BLAS matmul
is faster than scalar loops, so the wrappers cross over to it.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "cython"

# Batch size at which BLAS-backed matmul overtakes the scalar C loops.
DEF BLAS_CROSSOVER = 8


cdef void _affine_forward(const double[:, ::1] w, const double[::1] b,
                          const double[:, ::1] x, double[:, ::1] out,
                          bint relu) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t din = x.shape[1]
    cdef Py_ssize_t dout = w.shape[0]
    cdef Py_ssize_t i, o, j
    cdef double acc
    for i in range(n):
        for o in range(dout):
            acc = b[o]
            for j in range(din):
                acc += w[o, j] * x[i, j]
            if relu and acc < 0.0:
                acc = 0.0
            out[i, o] = acc


cdef void _affine_backward(const double[:, ::1] w, const double[:, ::1] a_prev,
                           const double[:, ::1] a_out, const double[:, ::1] g_out,
                           bint relu, double[:, ::1] dw, double[::1] db,
                           double[:, ::1] g_prev) noexcept nogil:
    cdef Py_ssize_t n = a_prev.shape[0]
    cdef Py_ssize_t din = a_prev.shape[1]
    cdef Py_ssize_t dout = w.shape[0]
    cdef Py_ssize_t i, o, j
    cdef double g
    for i in range(n):
        for o in range(dout):
            g = g_out[i, o]
            if relu and a_out[i, o] <= 0.0:
                g = 0.0
            if g == 0.0:
                continue
            db[o] += g
            for j in range(din):
                dw[o, j] += g * a_prev[i, j]
            for j in range(din):
                g_prev[i, j] += g * w[o, j]


def chain_forward(list ws, list bs, acts, x):
    """Run a batch through an affine chain, returning per-layer activations."""
    cdef Py_ssize_t k, n
    a = np.ascontiguousarray(x, dtype=np.float64)
    n = a.shape[0]
    outs = []
    if n >= BLAS_CROSSOVER:
        for k in range(len(ws)):
            z = a @ ws[k].T
            z += bs[k]
            if acts[k]:
                np.maximum(z, 0.0, out=z)
            outs.append(z)
            a = z
        return outs
    for k in range(len(ws)):
        w = ws[k]
        out = np.empty((n, w.shape[0]), dtype=np.float64)
        _affine_forward(w, bs[k], a, out, 1 if acts[k] else 0)
        outs.append(out)
        a = out
    return outs


def chain_backward(list ws, acts, x, list outs, gout, list dws, list dbs):
    """Backpropagate through an affine chain, accumulating parameter grads."""
    cdef Py_ssize_t k
    x = np.ascontiguousarray(x, dtype=np.float64)
    g = np.ascontiguousarray(gout, dtype=np.float64)
    if g.shape[0] >= BLAS_CROSSOVER:
        for k in range(len(ws) - 1, -1, -1):
            if acts[k]:
                g = np.where(outs[k] > 0.0, g, 0.0)
            a_prev = outs[k - 1] if k > 0 else x
            dws[k] += g.T @ a_prev
            dbs[k] += g.sum(axis=0)
            g = g @ ws[k]
        return g
    for k in range(len(ws) - 1, -1, -1):
        a_prev = outs[k - 1] if k > 0 else x
        w = ws[k]
        g_prev = np.zeros((g.shape[0], w.shape[1]), dtype=np.float64)
        _affine_backward(w, a_prev, outs[k], g, 1 if acts[k] else 0,
                         dws[k], dbs[k], g_prev)
        g = g_prev
    return g
