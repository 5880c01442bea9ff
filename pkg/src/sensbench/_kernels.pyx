# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: moving-average decomposition and full training epochs.

Matrix products go through the BLAS bundled with scipy so each epoch runs
without returning to the interpreter between mini-batches.
"""

import numpy as np

from libc.math cimport tanh
from libc.stdlib cimport free, malloc
from scipy.linalg.cython_blas cimport dgemm


cdef inline void _gemm(char ta, char tb, int m, int n, int k, double alpha,
                       const double* A, int lda, const double* B, int ldb,
                       double beta, double* C, int ldc) noexcept nogil:
    # Row-major C[m, n] = alpha * op(A) op(B) + beta * C via column-major dgemm on the transposes.
    dgemm(&tb, &ta, &n, &m, &k, &alpha, <double*>B, &ldb, <double*>A, &lda, &beta, C, &ldc)


def moving_average(x, int kernel):
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], L = xv.shape[1], k = xv.shape[2]
    out = np.empty((n, L, k), dtype=np.float64)
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t a, t, f, s
    cdef int j, half = (kernel - 1) // 2
    cdef double c, acc
    with nogil:
        for a in range(n):
            for t in range(L):
                for f in range(k):
                    c = xv[a, t, f]
                    acc = 0.0
                    for j in range(-half, half + 1):
                        s = t + j
                        if s < 0:
                            s = 0
                        elif s > L - 1:
                            s = L - 1
                        acc = acc + (xv[a, s, f] - c)
                    ov[a, t, f] = c + acc / kernel
    return out


cdef void _gather(const double[:, ::1] src, const long long[::1] order, Py_ssize_t start,
                  Py_ssize_t B, double* dst) noexcept nogil:
    cdef Py_ssize_t r, c, P = src.shape[1]
    for r in range(B):
        for c in range(P):
            dst[r * P + c] = src[order[start + r], c]


def linear_epoch(T, S, Y, Wt, Ws, b, order, int batch_size, double lr, double l2):
    cdef const double[:, ::1] Tv = T
    cdef const double[:, ::1] Sv = S
    cdef const double[:, ::1] Yv = Y
    cdef double[:, ::1] Wtv = Wt
    cdef double[:, ::1] Wsv = Ws
    cdef double[::1] bv = b
    cdef const long long[::1] ov = np.ascontiguousarray(order, dtype=np.int64)
    cdef Py_ssize_t N = Yv.shape[0], H = Yv.shape[1], P = Tv.shape[1]
    cdef Py_ssize_t Bmax = batch_size if batch_size < N else N
    cdef double* Tb = <double*>malloc(Bmax * P * sizeof(double))
    cdef double* Sb = <double*>malloc(Bmax * P * sizeof(double))
    cdef double* Yb = <double*>malloc(Bmax * H * sizeof(double))
    cdef double* E = <double*>malloc(Bmax * H * sizeof(double))
    cdef double* gWt = <double*>malloc(H * P * sizeof(double))
    cdef double* gWs = <double*>malloc(H * P * sizeof(double))
    cdef double* gb = <double*>malloc(H * sizeof(double))
    cdef Py_ssize_t s, B, r, h, p
    cdef double total = 0.0, scale, e
    if not (Tb and Sb and Yb and E and gWt and gWs and gb):
        free(Tb); free(Sb); free(Yb); free(E); free(gWt); free(gWs); free(gb)
        raise MemoryError()
    try:
        with nogil:
            s = 0
            while s < N:
                B = batch_size if s + batch_size <= N else N - s
                _gather(Tv, ov, s, B, Tb)
                _gather(Sv, ov, s, B, Sb)
                _gather(Yv, ov, s, B, Yb)
                _gemm(b'N', b'T', B, H, P, 1.0, Tb, P, &Wtv[0, 0], P, 0.0, E, H)
                _gemm(b'N', b'T', B, H, P, 1.0, Sb, P, &Wsv[0, 0], P, 1.0, E, H)
                scale = 2.0 / (B * H)
                for h in range(H):
                    gb[h] = 0.0
                for r in range(B):
                    for h in range(H):
                        e = E[r * H + h] + bv[h] - Yb[r * H + h]
                        total += e * e
                        E[r * H + h] = e * scale
                        gb[h] += E[r * H + h]
                _gemm(b'T', b'N', H, P, B, 1.0, E, H, Tb, P, 0.0, gWt, P)
                _gemm(b'T', b'N', H, P, B, 1.0, E, H, Sb, P, 0.0, gWs, P)
                for h in range(H):
                    for p in range(P):
                        if l2 != 0.0:
                            gWt[h * P + p] += 2.0 * l2 * Wtv[h, p]
                            gWs[h * P + p] += 2.0 * l2 * Wsv[h, p]
                        Wtv[h, p] -= lr * gWt[h * P + p]
                        Wsv[h, p] -= lr * gWs[h * P + p]
                    bv[h] -= lr * gb[h]
                s += B
    finally:
        free(Tb); free(Sb); free(Yb); free(E); free(gWt); free(gWs); free(gb)
    return total / (N * H)


def mlp_epoch(Z, Y, W1, b1, W2, b2, order, int batch_size, double lr, double l2):
    cdef const double[:, ::1] Zv = Z
    cdef const double[:, ::1] Yv = Y
    cdef double[:, ::1] W1v = W1
    cdef double[::1] b1v = b1
    cdef double[:, ::1] W2v = W2
    cdef double[::1] b2v = b2
    cdef const long long[::1] ov = np.ascontiguousarray(order, dtype=np.int64)
    cdef Py_ssize_t N = Yv.shape[0], H = Yv.shape[1], P = Zv.shape[1], M = W1v.shape[0]
    cdef Py_ssize_t Bmax = batch_size if batch_size < N else N
    cdef double* Zb = <double*>malloc(Bmax * P * sizeof(double))
    cdef double* Yb = <double*>malloc(Bmax * H * sizeof(double))
    cdef double* Hh = <double*>malloc(Bmax * M * sizeof(double))
    cdef double* E = <double*>malloc(Bmax * H * sizeof(double))
    cdef double* dA = <double*>malloc(Bmax * M * sizeof(double))
    cdef double* gW1 = <double*>malloc(M * P * sizeof(double))
    cdef double* gW2 = <double*>malloc(H * M * sizeof(double))
    cdef double* gb1 = <double*>malloc(M * sizeof(double))
    cdef double* gb2 = <double*>malloc(H * sizeof(double))
    cdef Py_ssize_t s, B, r, h, m, p
    cdef double total = 0.0, scale, e, a
    if not (Zb and Yb and Hh and E and dA and gW1 and gW2 and gb1 and gb2):
        free(Zb); free(Yb); free(Hh); free(E); free(dA); free(gW1); free(gW2); free(gb1); free(gb2)
        raise MemoryError()
    try:
        with nogil:
            s = 0
            while s < N:
                B = batch_size if s + batch_size <= N else N - s
                _gather(Zv, ov, s, B, Zb)
                _gather(Yv, ov, s, B, Yb)
                _gemm(b'N', b'T', B, M, P, 1.0, Zb, P, &W1v[0, 0], P, 0.0, Hh, M)
                for r in range(B):
                    for m in range(M):
                        Hh[r * M + m] = tanh(Hh[r * M + m] + b1v[m])
                _gemm(b'N', b'T', B, H, M, 1.0, Hh, M, &W2v[0, 0], M, 0.0, E, H)
                scale = 2.0 / (B * H)
                for h in range(H):
                    gb2[h] = 0.0
                for r in range(B):
                    for h in range(H):
                        e = E[r * H + h] + b2v[h] - Yb[r * H + h]
                        total += e * e
                        E[r * H + h] = e * scale
                        gb2[h] += E[r * H + h]
                _gemm(b'T', b'N', H, M, B, 1.0, E, H, Hh, M, 0.0, gW2, M)
                _gemm(b'N', b'N', B, M, H, 1.0, E, H, &W2v[0, 0], M, 0.0, dA, M)
                for m in range(M):
                    gb1[m] = 0.0
                for r in range(B):
                    for m in range(M):
                        a = Hh[r * M + m]
                        dA[r * M + m] = dA[r * M + m] * (1.0 - a * a)
                        gb1[m] += dA[r * M + m]
                _gemm(b'T', b'N', M, P, B, 1.0, dA, M, Zb, P, 0.0, gW1, P)
                for m in range(M):
                    for p in range(P):
                        if l2 != 0.0:
                            gW1[m * P + p] += 2.0 * l2 * W1v[m, p]
                        W1v[m, p] -= lr * gW1[m * P + p]
                    b1v[m] -= lr * gb1[m]
                for h in range(H):
                    for m in range(M):
                        if l2 != 0.0:
                            gW2[h * M + m] += 2.0 * l2 * W2v[h, m]
                        W2v[h, m] -= lr * gW2[h * M + m]
                    b2v[h] -= lr * gb2[h]
                s += B
    finally:
        free(Zb); free(Yb); free(Hh); free(E); free(dA); free(gW1); free(gW2); free(gb1); free(gb2)
    return total / (N * H)
