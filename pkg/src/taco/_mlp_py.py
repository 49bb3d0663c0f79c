"""Pure-numpy dense MLP kernels over flat parameter vectors.

Layout of one network inside its flat slice: for every layer, the weight
matrix (fan_out x fan_in, row-major) followed by the bias (fan_out).
Hidden layers use ReLU, the output layer is linear.
"""

import numpy as np


def n_params(sizes):
    return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))


def mlp_forward(params, sizes, x):
    """Returns ``(out, cache)``; ``cache`` holds each layer's input and pre-activation."""
    h = x
    inputs, pre = [], []
    off = 0
    last = len(sizes) - 2
    for li in range(len(sizes) - 1):
        fin, fout = sizes[li], sizes[li + 1]
        W = params[off:off + fin * fout].reshape(fout, fin)
        off += fin * fout
        b = params[off:off + fout]
        off += fout
        z = h @ W.T + b
        inputs.append(h)
        pre.append(z)
        h = np.maximum(z, 0.0) if li < last else z
    return h, (inputs, pre)


def mlp_backward(params, sizes, cache, dout, want_params=True, want_input=False):
    """Backpropagates ``dout`` (batch x out). Returns ``(dparams or None, dx or None)``."""
    inputs, pre = cache
    L = len(sizes) - 1
    offsets = []
    off = 0
    for li in range(L):
        offsets.append(off)
        off += sizes[li] * sizes[li + 1] + sizes[li + 1]
    grad = np.zeros(off) if want_params else None
    dz = dout
    dx = None
    for li in range(L - 1, -1, -1):
        fin, fout = sizes[li], sizes[li + 1]
        o = offsets[li]
        if li < L - 1:
            dz = dz * (pre[li] > 0.0)
        if want_params:
            grad[o:o + fin * fout] = (dz.T @ inputs[li]).ravel()
            grad[o + fin * fout:o + fin * fout + fout] = dz.sum(axis=0)
        if li > 0 or want_input:
            W = params[o:o + fin * fout].reshape(fout, fin)
            dz = dz @ W
    if want_input:
        dx = dz
    return grad, dx
