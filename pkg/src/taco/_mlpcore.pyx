# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense MLP kernels; same contract as ``taco._mlp_py``.

Matrix products go through the BLAS shipped with scipy; bias, ReLU and the
bias-gradient reductions are fused C loops, which removes most of the
per-call numpy overhead that dominates at these layer widths.
"""

import numpy as np

from scipy.linalg.cython_blas cimport dgemm


def n_params(sizes):
    return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))


def mlp_forward(const double[::1] params, sizes, x):
    cdef double[:, ::1] h = np.ascontiguousarray(x, dtype=np.float64)
    cdef int B = h.shape[0]
    cdef int L = len(sizes) - 1
    cdef int li, i, j, fin, fout
    cdef Py_ssize_t off = 0
    cdef double one = 1.0
    cdef double[:, ::1] zv
    cdef double[:, ::1] av
    inputs = []
    pre = []
    out = None
    for li in range(L):
        fin = sizes[li]
        fout = sizes[li + 1]
        z = np.empty((B, fout))
        zv = z
        for i in range(B):
            for j in range(fout):
                zv[i, j] = params[off + fin * fout + j]
        if B > 0:
            dgemm(b'T', b'N', &fout, &B, &fin, &one, <double*>&params[off], &fin,
                  &h[0, 0], &fin, &one, &zv[0, 0], &fout)
        inputs.append(np.asarray(h))
        pre.append(z)
        off += fin * fout + fout
        if li < L - 1:
            a = np.empty((B, fout))
            av = a
            for i in range(B):
                for j in range(fout):
                    av[i, j] = zv[i, j] if zv[i, j] > 0.0 else 0.0
            h = av
        else:
            out = z
    return out, (inputs, pre)


def mlp_backward(const double[::1] params, sizes, cache, dout, bint want_params=True,
                 bint want_input=False):
    inputs, pre = cache
    cdef int L = len(sizes) - 1
    cdef int li, i, j, fin, fout, B
    cdef double one = 1.0, zero = 0.0, acc
    cdef Py_ssize_t o
    cdef double[:, ::1] dz = np.ascontiguousarray(dout, dtype=np.float64)
    cdef double[:, ::1] zpre
    cdef double[:, ::1] xin
    cdef double[:, ::1] nxt
    cdef double[::1] gv
    B = dz.shape[0]
    offsets = []
    o = 0
    for li in range(L):
        offsets.append(o)
        o += sizes[li] * sizes[li + 1] + sizes[li + 1]
    grad = np.zeros(o) if want_params else None
    if want_params:
        gv = grad
    dx = None
    for li in range(L - 1, -1, -1):
        fin = sizes[li]
        fout = sizes[li + 1]
        o = offsets[li]
        if li < L - 1:
            zpre = pre[li]
            for i in range(B):
                for j in range(fout):
                    if zpre[i, j] <= 0.0:
                        dz[i, j] = 0.0
        if want_params and B > 0:
            xin = inputs[li]
            dgemm(b'N', b'T', &fin, &fout, &B, &one, &xin[0, 0], &fin,
                  &dz[0, 0], &fout, &zero, &gv[o], &fin)
            for j in range(fout):
                acc = 0.0
                for i in range(B):
                    acc = acc + dz[i, j]
                gv[o + fin * fout + j] = acc
        if li > 0 or want_input:
            nx = np.zeros((B, fin))
            nxt = nx
            if B > 0:
                dgemm(b'N', b'N', &fin, &B, &fout, &one, <double*>&params[o], &fin,
                      &dz[0, 0], &fout, &zero, &nxt[0, 0], &fin)
            dz = nxt
    if want_input:
        dx = np.asarray(dz)
    return grad, dx
