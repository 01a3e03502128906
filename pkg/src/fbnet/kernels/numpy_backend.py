"""Direct 2-D cross-correlation kernels in pure numpy.

Fallback used when the compiled extension is unavailable. Each kernel tap
(ki, kj) touches a strided view of the padded input, so the whole
convolution is k*k small GEMMs via tensordot. Semantics are the plain
direct definition: out[n,o,i,j] = sum_{c,ki,kj} w[o,c,ki,kj] *
x[n,c, i*stride + ki*dilation - padding, j*stride + kj*dilation - padding],
with out-of-range input positions contributing zero.
"""

import numpy as np


def out_size(size, k, stride, padding, dilation):
    span = size + 2 * padding - dilation * (k - 1) - 1
    if span < 0:
        return 0
    return span // stride + 1


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _tap_view(xp, ki, kj, stride, dilation, ho, wo):
    # strided view of the padded input aligned with output positions for tap (ki, kj)
    return xp[
        :,
        :,
        ki * dilation : ki * dilation + (ho - 1) * stride + 1 : stride,
        kj * dilation : kj * dilation + (wo - 1) * stride + 1 : stride,
    ]


def conv2d_forward(x, w, stride, padding, dilation):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = out_size(h, kh, stride, padding, dilation)
    wo = out_size(wd, kw, stride, padding, dilation)
    xp = _pad(x, padding)
    acc = np.zeros((o, n, ho, wo), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            xs = _tap_view(xp, ki, kj, stride, dilation, ho, wo)
            acc += np.tensordot(w[:, :, ki, kj], xs, axes=([1], [1]))
    return np.ascontiguousarray(acc.transpose(1, 0, 2, 3))


def conv2d_grad_input(gy, w, x_shape, stride, padding, dilation):
    n, c, h, wd = x_shape
    _, _, kh, kw = w.shape
    ho, wo = gy.shape[2], gy.shape[3]
    gxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=gy.dtype)
    for ki in range(kh):
        for kj in range(kw):
            t = np.tensordot(w[:, :, ki, kj], gy, axes=([0], [1]))  # (C, N, Ho, Wo)
            dest = _tap_view(gxp, ki, kj, stride, dilation, ho, wo)
            dest += t.transpose(1, 0, 2, 3)
    if padding:
        gxp = gxp[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(gxp)


def conv2d_grad_weight(gy, x, w_shape, stride, padding, dilation):
    o, c, kh, kw = w_shape
    ho, wo = gy.shape[2], gy.shape[3]
    xp = _pad(x, padding)
    gw = np.empty(w_shape, dtype=gy.dtype)
    for ki in range(kh):
        for kj in range(kw):
            xs = _tap_view(xp, ki, kj, stride, dilation, ho, wo)
            gw[:, :, ki, kj] = np.tensordot(gy, xs, axes=([0, 2, 3], [0, 2, 3]))
    return gw
