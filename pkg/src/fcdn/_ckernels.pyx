# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: FIR filtering, pairwise PLV and the 1xk temporal
convolution used by every conv layer of the network."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt
cimport scipy.linalg.cython_blas as blas

cnp.import_array()

BACKEND = "cython"

ctypedef fused real:
    float
    double


def fir_filter(x, taps):
    """Causal direct-form FIR along the last axis of a 2-D float64 array."""
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] h = np.ascontiguousarray(taps, dtype=np.float64)
    cdef Py_ssize_t rows = xv.shape[0], n = xv.shape[1], L = h.shape[0]
    out = np.zeros((rows, n), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef Py_ssize_t r, i, j, jmax
    cdef double acc
    with nogil:
        for r in range(rows):
            for i in range(n):
                acc = 0.0
                jmax = L if i + 1 > L else i + 1
                for j in range(jmax):
                    acc = acc + h[j] * xv[r, i - j]
                y[r, i] = acc
    return out


def plv_pairs(phases):
    """Pairwise phase-locking magnitudes for a (K, M) phase array."""
    cdef double[:, ::1] ph = np.ascontiguousarray(phases, dtype=np.float64)
    cdef Py_ssize_t K = ph.shape[0], M = ph.shape[1]
    c_arr = np.empty((K, M), dtype=np.float64)
    s_arr = np.empty((K, M), dtype=np.float64)
    cdef double[:, ::1] c = c_arr
    cdef double[:, ::1] s = s_arr
    out = np.ones((K, K), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t a, b, t
    cdef double re, im, v
    with nogil:
        for a in range(K):
            for t in range(M):
                c[a, t] = cos(ph[a, t])
                s[a, t] = sin(ph[a, t])
        for a in range(K):
            for b in range(a + 1, K):
                re = 0.0
                im = 0.0
                for t in range(M):
                    # e^{j(pa - pb)}
                    re = re + c[a, t] * c[b, t] + s[a, t] * s[b, t]
                    im = im + s[a, t] * c[b, t] - c[a, t] * s[b, t]
                v = sqrt(re * re + im * im) / M
                if v > 1.0:
                    v = 1.0
                o[a, b] = v
                o[b, a] = v
    return out


cdef extern from *:
    """
    #ifndef FCDN_IM2COL_LIMIT
    #define FCDN_IM2COL_LIMIT (1 << 22)
    #endif
    """
    Py_ssize_t FCDN_IM2COL_LIMIT


cdef inline void _gemm_rm(char ta, char tb, int M, int N, int K, real alpha,
                          real *A, int lda, real *B, int ldb, real beta,
                          real *C, int ldc) noexcept nogil:
    # row-major C = op(A) op(B) expressed as column-major C^T = op(B)^T op(A)^T
    if real is float:
        blas.sgemm(&tb, &ta, &N, &M, &K, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)
    else:
        blas.dgemm(&tb, &ta, &N, &M, &K, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


cdef inline Py_ssize_t _rows_per_chunk(Py_ssize_t ck, Py_ssize_t wo, Py_ssize_t H) noexcept nogil:
    cdef Py_ssize_t r = FCDN_IM2COL_LIMIT // (ck * wo if ck * wo > 0 else 1)
    if r < 1:
        r = 1
    if r > H:
        r = H
    return r


cdef void _im2col(real[:, :, :, ::1] x, Py_ssize_t b, Py_ssize_t h0, Py_ssize_t nh,
                  Py_ssize_t k, Py_ssize_t wo, real *col) noexcept nogil:
    # col[(ci, j), (h, t)] = x[b, ci, h0 + h, t + j]
    cdef Py_ssize_t Cin = x.shape[1], ci, j, h, t, n = nh * wo
    cdef real *dst
    cdef real *src
    for ci in range(Cin):
        for j in range(k):
            for h in range(nh):
                dst = col + (ci * k + j) * n + h * wo
                src = &x[b, ci, h0 + h, j]
                for t in range(wo):
                    dst[t] = src[t]


cdef void _col2im(real *col, Py_ssize_t b, Py_ssize_t h0, Py_ssize_t nh,
                  Py_ssize_t k, Py_ssize_t wo, real[:, :, :, ::1] gx) noexcept nogil:
    cdef Py_ssize_t Cin = gx.shape[1], ci, j, h, t, n = nh * wo
    cdef real *src
    cdef real *dst
    for ci in range(Cin):
        for j in range(k):
            for h in range(nh):
                src = col + (ci * k + j) * n + h * wo
                dst = &gx[b, ci, h0 + h, j]
                for t in range(wo):
                    dst[t] += src[t]


cdef void _fwd(real[:, :, :, ::1] x, real[:, :, ::1] w, real[:, :, :, ::1] y, real *col) noexcept nogil:
    cdef Py_ssize_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2]
    cdef Py_ssize_t Cout = w.shape[0], k = w.shape[2], Wo = y.shape[3]
    cdef Py_ssize_t ck = Cin * k, step = _rows_per_chunk(ck, Wo, H)
    cdef Py_ssize_t b, h0, nh
    for b in range(B):
        h0 = 0
        while h0 < H:
            nh = step if h0 + step <= H else H - h0
            _im2col(x, b, h0, nh, k, Wo, col)
            # y[b, :, h0:h0+nh, :] viewed as (Cout, nh*Wo) with row stride H*Wo
            _gemm_rm(c'N', c'N', <int>Cout, <int>(nh * Wo), <int>ck, 1,
                     &w[0, 0, 0], <int>ck, col, <int>(nh * Wo), 0,
                     &y[b, 0, h0, 0], <int>(H * Wo))
            h0 += nh


cdef void _bwd(real[:, :, :, ::1] x, real[:, :, ::1] w, real[:, :, :, ::1] gy,
               real[:, :, :, ::1] gx, real[:, :, ::1] gw, real *col) noexcept nogil:
    cdef Py_ssize_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2]
    cdef Py_ssize_t Cout = w.shape[0], k = w.shape[2], Wo = gy.shape[3]
    cdef Py_ssize_t ck = Cin * k, step = _rows_per_chunk(ck, Wo, H)
    cdef Py_ssize_t b, h0, nh
    for b in range(B):
        h0 = 0
        while h0 < H:
            nh = step if h0 + step <= H else H - h0
            _im2col(x, b, h0, nh, k, Wo, col)
            # gw (Cout, ck) += gy_chunk (Cout, n) @ col^T
            _gemm_rm(c'N', c'T', <int>Cout, <int>ck, <int>(nh * Wo), 1,
                     &gy[b, 0, h0, 0], <int>(H * Wo), col, <int>(nh * Wo), 1,
                     &gw[0, 0, 0], <int>ck)
            # col grad (ck, n) = w^T @ gy_chunk, folded back onto gx
            _gemm_rm(c'T', c'N', <int>ck, <int>(nh * Wo), <int>Cout, 1,
                     &w[0, 0, 0], <int>ck, &gy[b, 0, h0, 0], <int>(H * Wo), 0,
                     col, <int>(nh * Wo))
            _col2im(col, b, h0, nh, k, Wo, gx)
            h0 += nh


def _col_buffer(x, w, wo):
    ck = w.shape[1] * w.shape[2]
    rows = max(1, min(x.shape[2], (1 << 22) // max(ck * wo, 1)))
    return np.empty(max(ck * rows * wo, 1), dtype=x.dtype)


def conv_time_forward(x, w):
    """Valid 1xk convolution along the last axis.

    x: (B, Cin, H, W), w: (Cout, Cin, k) -> (B, Cout, H, W - k + 1)
    """
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    wo = x.shape[3] - w.shape[2] + 1
    y = np.empty((x.shape[0], w.shape[0], x.shape[2], wo), dtype=x.dtype)
    if wo <= 0 or y.size == 0:
        return np.zeros((x.shape[0], w.shape[0], x.shape[2], max(wo, 0)), dtype=x.dtype)
    col = _col_buffer(x, w, wo)
    cdef float[::1] cf
    cdef double[::1] cd
    if x.dtype == np.float32:
        cf = col
        _fwd[float](x, w, y, &cf[0])
    elif x.dtype == np.float64:
        cd = col
        _fwd[double](x, w, y, &cd[0])
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return y


def conv_time_backward(x, w, gy):
    """Gradients of :func:`conv_time_forward` w.r.t. input and weight."""
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    gy = np.ascontiguousarray(gy, dtype=x.dtype)
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    if gy.size == 0:
        return gx, gw
    col = _col_buffer(x, w, gy.shape[3])
    cdef float[::1] cf
    cdef double[::1] cd
    if x.dtype == np.float32:
        cf = col
        _bwd[float](x, w, gy, gx, gw, &cf[0])
    elif x.dtype == np.float64:
        cd = col
        _bwd[double](x, w, gy, gx, gw, &cd[0])
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return gx, gw
