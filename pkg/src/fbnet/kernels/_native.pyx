# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled direct 2-D cross-correlation kernels (float32/float64).

Same contract as numpy_backend, same tap decomposition: each of the k*k
kernel taps is one GEMM over (channels x output positions). Here the
tap gather runs as a tight nogil copy from a padded buffer into
contiguous scratch and the GEMM goes straight to BLAS, so there are no
per-tap temporaries or layout fixups.
"""

import numpy as np

from scipy.linalg.cython_blas cimport dgemm, sgemm

ctypedef fused real:
    float
    double


cdef void _gemm(char ta, char tb, int m, int n, int k, real alpha,
                real* a, int lda, real* b, int ldb, real beta,
                real* c, int ldc) noexcept nogil:
    if real is float:
        sgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)
    else:
        dgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


cdef void _gather_tap(real[:, :, :, ::1] xp, real[:, ::1] xt,
                      Py_ssize_t ki, Py_ssize_t kj, Py_ssize_t stride,
                      Py_ssize_t dilation, Py_ssize_t ho, Py_ssize_t wo) noexcept nogil:
    # xt[c, n*ho*wo + i*wo + j] = xp[n, c, i*stride + ki*dilation, j*stride + kj*dilation]
    cdef Py_ssize_t N = xp.shape[0], C = xp.shape[1]
    cdef Py_ssize_t n, c, i, j, ih, col
    for c in range(C):
        for n in range(N):
            for i in range(ho):
                ih = i * stride + ki * dilation
                col = (n * ho + i) * wo
                for j in range(wo):
                    xt[c, col + j] = xp[n, c, ih, j * stride + kj * dilation]


cdef void _scatter_tap_add(real[:, ::1] gt, real[:, :, :, ::1] gxp,
                           Py_ssize_t ki, Py_ssize_t kj, Py_ssize_t stride,
                           Py_ssize_t dilation, Py_ssize_t ho, Py_ssize_t wo) noexcept nogil:
    # inverse of _gather_tap, accumulating
    cdef Py_ssize_t N = gxp.shape[0], C = gxp.shape[1]
    cdef Py_ssize_t n, c, i, j, ih, col
    for c in range(C):
        for n in range(N):
            for i in range(ho):
                ih = i * stride + ki * dilation
                col = (n * ho + i) * wo
                for j in range(wo):
                    gxp[n, c, ih, j * stride + kj * dilation] += gt[c, col + j]


def _out_size(Py_ssize_t size, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t padding,
              Py_ssize_t dilation):
    cdef Py_ssize_t span = size + 2 * padding - dilation * (k - 1) - 1
    return span // stride + 1 if span >= 0 else 0


def _padded(x, Py_ssize_t padding):
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                   int stride, int padding, int dilation):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = _out_size(H, kh, stride, padding, dilation)
    cdef Py_ssize_t wo = _out_size(W, kw, stride, padding, dilation)
    dtype = np.float32 if real is float else np.float64
    if ho == 0 or wo == 0:
        return np.zeros((N, O, ho, wo), dtype=dtype)
    cdef Py_ssize_t M = N * ho * wo

    cdef real[:, :, :, ::1] xp = _padded(np.asarray(x), padding)
    cdef real[:, ::1] xt = np.empty((C, M), dtype=dtype)
    cdef real[:, ::1] out2 = np.zeros((O, M), dtype=dtype)
    wt_np = np.empty((kh, kw, O, C), dtype=dtype)
    for ki in range(kh):
        for kj in range(kw):
            wt_np[ki, kj] = np.asarray(w)[:, :, ki, kj]
    cdef real[:, :, :, ::1] wt = wt_np

    cdef Py_ssize_t ki2, kj2
    with nogil:
        for ki2 in range(kh):
            for kj2 in range(kw):
                _gather_tap(xp, xt, ki2, kj2, stride, dilation, ho, wo)
                # out2(O,M) += wt[tap](O,C) @ xt(C,M), row-major via column-major swap
                _gemm(c'n', c'n', <int>M, <int>O, <int>C, <real>1.0,
                      &xt[0, 0], <int>M, &wt[ki2, kj2, 0, 0], <int>C,
                      <real>1.0, &out2[0, 0], <int>M)
    return np.ascontiguousarray(np.asarray(out2).reshape(O, N, ho, wo).transpose(1, 0, 2, 3))


def conv2d_grad_input(real[:, :, :, ::1] gy, real[:, :, :, ::1] w,
                      x_shape, int stride, int padding, int dilation):
    cdef Py_ssize_t N = x_shape[0], C = x_shape[1], H = x_shape[2], W = x_shape[3]
    cdef Py_ssize_t O = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    dtype = np.float32 if real is float else np.float64
    gxp_np = np.zeros((N, C, H + 2 * padding, W + 2 * padding), dtype=dtype)
    if ho == 0 or wo == 0:
        return gxp_np[:, :, padding : padding + H, padding : padding + W].copy()
    cdef Py_ssize_t M = N * ho * wo

    cdef real[:, :, :, ::1] gxp = gxp_np
    cdef real[:, ::1] gy2 = np.ascontiguousarray(
        np.asarray(gy).transpose(1, 0, 2, 3).reshape(O, M)
    )
    cdef real[:, ::1] gt = np.empty((C, M), dtype=dtype)
    wt_np = np.empty((kh, kw, O, C), dtype=dtype)
    for ki in range(kh):
        for kj in range(kw):
            wt_np[ki, kj] = np.asarray(w)[:, :, ki, kj]
    cdef real[:, :, :, ::1] wt = wt_np

    cdef Py_ssize_t ki2, kj2
    with nogil:
        for ki2 in range(kh):
            for kj2 in range(kw):
                # gt(C,M) = wt[tap]^T(C,O) @ gy2(O,M)
                _gemm(c'n', c't', <int>M, <int>C, <int>O, <real>1.0,
                      &gy2[0, 0], <int>M, &wt[ki2, kj2, 0, 0], <int>C,
                      <real>0.0, &gt[0, 0], <int>M)
                _scatter_tap_add(gt, gxp, ki2, kj2, stride, dilation, ho, wo)
    if padding:
        return np.ascontiguousarray(gxp_np[:, :, padding:-padding, padding:-padding])
    return gxp_np


def conv2d_grad_weight(real[:, :, :, ::1] gy, real[:, :, :, ::1] x,
                       w_shape, int stride, int padding, int dilation):
    cdef Py_ssize_t O = w_shape[0], C = w_shape[1], kh = w_shape[2], kw = w_shape[3]
    cdef Py_ssize_t N = x.shape[0], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    dtype = np.float32 if real is float else np.float64
    gw_np = np.zeros(tuple(w_shape), dtype=dtype)
    if ho == 0 or wo == 0:
        return gw_np
    cdef Py_ssize_t M = N * ho * wo

    cdef real[:, :, :, ::1] xp = _padded(np.asarray(x), padding)
    cdef real[:, ::1] xt = np.empty((C, M), dtype=dtype)
    cdef real[:, ::1] gy2 = np.ascontiguousarray(
        np.asarray(gy).transpose(1, 0, 2, 3).reshape(O, M)
    )
    cdef real[:, ::1] gwt = np.empty((O, C), dtype=dtype)
    cdef Py_ssize_t ki2, kj2

    for ki2 in range(kh):
        for kj2 in range(kw):
            with nogil:
                _gather_tap(xp, xt, ki2, kj2, stride, dilation, ho, wo)
                # gwt(O,C) = gy2(O,M) @ xt(C,M)^T
                _gemm(c't', c'n', <int>C, <int>O, <int>M, <real>1.0,
                      &xt[0, 0], <int>M, &gy2[0, 0], <int>M,
                      <real>0.0, &gwt[0, 0], <int>C)
            gw_np[:, :, ki2, kj2] = np.asarray(gwt)
    return gw_np
