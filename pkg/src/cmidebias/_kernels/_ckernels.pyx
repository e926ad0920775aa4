# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``."""

import numpy as np

from libc.math cimport exp, sqrt, tanh, isfinite
from libc.stdint cimport uint64_t, int64_t
from scipy.linalg.cython_blas cimport sgemm

from ._pykernels import stream_key

cdef uint64_t GOLDEN = <uint64_t>0x9E3779B97F4A7C15ULL
cdef uint64_t M1 = <uint64_t>0xBF58476D1CE4E5B9ULL
cdef uint64_t M2 = <uint64_t>0x94D049BB133111EBULL
cdef double INV53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * M1
    z = (z ^ (z >> 27)) * M2
    return z ^ (z >> 31)


cdef inline double _u(uint64_t key, uint64_t ctr) noexcept nogil:
    return <double>(_mix(key + ctr * GOLDEN) >> 11) * INV53


def uniforms(seed, stream, Py_ssize_t start, Py_ssize_t n):
    cdef uint64_t key = stream_key(seed, stream)
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            o[i] = _u(key, <uint64_t>(start + i + 1))
    return out


def weighted_draws(seed, stream, Py_ssize_t n_draws, double[::1] cum_q, Py_ssize_t[::1] offsets,
                   Py_ssize_t[::1] members):
    cdef uint64_t k1 = stream_key(seed, stream)
    cdef uint64_t k2 = stream_key(seed, stream + 1)
    cdef Py_ssize_t nk = cum_q.shape[0]
    cdef Py_ssize_t last = 0, i, lo, hi, mid, k
    cdef double prev = 0.0, u1, u2
    cdef int64_t cnt, j
    if offsets.shape[0] != nk + 1 or offsets[0] != 0 or offsets[nk] > members.shape[0]:
        raise ValueError("stratum offsets must have one more entry than strata and fit the member list")
    for i in range(nk):
        if offsets[i + 1] < offsets[i]:
            raise ValueError("stratum offsets must be non-decreasing")
    for i in range(nk):
        if cum_q[i] - prev > 0:
            last = i
        prev = cum_q[i]
    out = np.empty(n_draws, dtype=np.intp)
    cdef Py_ssize_t[::1] o = out
    with nogil:
        for i in range(n_draws):
            u1 = _u(k1, <uint64_t>(i + 1))
            u2 = _u(k2, <uint64_t>(i + 1))
            lo = 0
            hi = nk
            while lo < hi:
                mid = (lo + hi) >> 1
                if cum_q[mid] > u1:
                    hi = mid
                else:
                    lo = mid + 1
            k = lo if lo < last else last
            cnt = offsets[k + 1] - offsets[k]
            j = <int64_t>(u2 * <double>cnt)
            if j > cnt - 1:
                j = cnt - 1
            o[i] = members[offsets[k] + j]
    return out


def knn_donors(seed, stream, Py_ssize_t[:, ::1] nbrs):
    cdef uint64_t key = stream_key(seed, stream)
    cdef Py_ssize_t n = nbrs.shape[0], k = nbrs.shape[1], i
    cdef int64_t j
    out = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] o = out
    with nogil:
        for i in range(n):
            j = <int64_t>(_u(key, <uint64_t>(i + 1)) * <double>k)
            if j > k - 1:
                j = k - 1
            o[i] = nbrs[i, j]
    return out


# ---------------------------------------------------------------------------
# critic


cdef inline void _mm(bint ta, bint tb, int M, int N, int K, float* A, int lda, float* B, int ldb,
                     float beta, float* C) noexcept nogil:
    # row-major C (M x N) = op(A) op(B) + beta C
    cdef char cta = b'T' if ta else b'N'
    cdef char ctb = b'T' if tb else b'N'
    cdef float alpha = 1.0
    cdef int ldc = N
    sgemm(&ctb, &cta, &N, &M, &K, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


cdef void _forward(float* flat, Py_ssize_t* dims, Py_ssize_t nl, Py_ssize_t rows, float** hs, float** pre,
                   int act) noexcept nogil:
    cdef Py_ssize_t l, i, j, o = 0, a, b
    cdef float* w
    cdef float* bias
    cdef float* A
    cdef float* H
    for l in range(nl):
        a = dims[l]
        b = dims[l + 1]
        w = flat + o
        bias = flat + o + a * b
        o += a * b + b
        A = pre[l]
        if b == 1:
            for i in range(rows):
                A[i] = 0.0
                for j in range(a):
                    A[i] += hs[l][i * a + j] * w[j]
        else:
            _mm(False, False, <int>rows, <int>b, <int>a, hs[l], <int>a, w, <int>b, 0.0, A)
        H = hs[l + 1]
        for i in range(rows):
            for j in range(b):
                A[i * b + j] += bias[j]
        if l == nl - 1:
            for i in range(rows * b):
                H[i] = A[i]
        elif act == 0:
            for i in range(rows * b):
                H[i] = A[i] if A[i] > 0.0 else 0.0
        else:
            for i in range(rows * b):
                H[i] = tanh(A[i])


def _check_net(Py_ssize_t n_params, Py_ssize_t[::1] dims, Py_ssize_t n_inputs):
    cdef Py_ssize_t nl = dims.shape[0] - 1, l, size = 0
    if nl < 1 or nl > 63:
        raise ValueError("the critic needs between 1 and 63 layers")
    for l in range(nl):
        if dims[l] <= 0:
            raise ValueError("layer widths must be positive")
        size += dims[l] * dims[l + 1] + dims[l + 1]
    if dims[nl] != 1 or dims[0] != n_inputs or size != n_params:
        raise ValueError("parameter vector, layer widths and input width disagree")


def _alloc(Py_ssize_t[::1] dims, Py_ssize_t rows):
    cdef Py_ssize_t nl = dims.shape[0] - 1
    hs = [np.zeros(rows * dims[l], dtype=np.float32) for l in range(nl + 1)]
    pre = [np.zeros(rows * dims[l + 1], dtype=np.float32) for l in range(nl)]
    return hs, pre


def critic_forward(float[::1] flat, Py_ssize_t[::1] dims, float[:, ::1] z, int act):
    cdef Py_ssize_t nl = dims.shape[0] - 1, rows = z.shape[0], l
    _check_net(flat.shape[0], dims, z.shape[1])
    hs_arr, pre_arr = _alloc(dims, rows)
    hs_arr[0][:] = np.asarray(z).ravel()
    cdef float* hs[64]
    cdef float* pre[64]
    cdef float[::1] tmp
    for l in range(nl + 1):
        tmp = hs_arr[l]
        hs[l] = &tmp[0]
    for l in range(nl):
        tmp = pre_arr[l]
        pre[l] = &tmp[0]
    with nogil:
        _forward(&flat[0], &dims[0], nl, rows, hs, pre, act)
    return hs_arr[nl].copy()


def critic_epoch(float[::1] flat, float[::1] m, float[::1] v, Py_ssize_t[::1] dims, float[:, ::1] zb,
                 float[::1] c, float[::1] cm, Py_ssize_t[::1] perm, Py_ssize_t batch_size, double lr,
                 double ema_decay, int act, long t, double ema):
    cdef Py_ssize_t nl = dims.shape[0] - 1
    cdef Py_ssize_t n = zb.shape[0], p1 = zb.shape[1], rows_max = 2 * batch_size
    cdef Py_ssize_t P = flat.shape[0], maxw = 0, l, i, j, s, bsz, rows, r, a, b, o
    _check_net(P, dims, p1 + 1)
    if m.shape[0] != P or v.shape[0] != P:
        raise ValueError("Adam moments must match the parameter vector")
    if c.shape[0] != n or cm.shape[0] != n or perm.shape[0] != n:
        raise ValueError("click columns and minibatch order must have one entry per row")
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    for i in range(n):
        if perm[i] < 0 or perm[i] >= n:
            raise ValueError("minibatch order holds an out-of-range row")
    for l in range(nl + 1):
        if dims[l] > maxw:
            maxw = dims[l]
    hs_arr, pre_arr = _alloc(dims, rows_max)
    grad_arr = np.zeros(P, dtype=np.float32)
    d_arr = np.zeros(rows_max * maxw, dtype=np.float32)
    dh_arr = np.zeros(rows_max * maxw, dtype=np.float32)
    cdef float* hs[64]
    cdef float* pre[64]
    cdef Py_ssize_t woff[64]
    cdef float[::1] tmp
    for l in range(nl + 1):
        tmp = hs_arr[l]
        hs[l] = &tmp[0]
    for l in range(nl):
        tmp = pre_arr[l]
        pre[l] = &tmp[0]
    o = 0
    for l in range(nl):
        woff[l] = o
        o += dims[l] * dims[l + 1] + dims[l + 1]
    cdef float[::1] gv = grad_arr
    cdef float[::1] dv = d_arr
    cdef float[::1] dhv = dh_arr
    cdef float* grad = &gv[0]
    cdef float* d = &dv[0]
    cdef float* dh = &dhv[0]
    cdef float* swap
    cdef float* fp = &flat[0]
    cdef float* mp = &m[0]
    cdef float* vp = &v[0]
    cdef float* H0
    cdef float* T
    cdef double mean_et, step, epsc, b1 = 0.9, b2 = 0.999, eps = 1e-8, b1t, b2t, inv
    cdef bint bad = False
    s = 0
    with nogil:
        while s < n:
            bsz = batch_size if s + batch_size <= n else n - s
            rows = 2 * bsz
            H0 = hs[0]
            for i in range(bsz):
                r = perm[s + i]
                for j in range(p1):
                    H0[i * (p1 + 1) + j] = zb[r, j]
                    H0[(bsz + i) * (p1 + 1) + j] = zb[r, j]
                H0[i * (p1 + 1) + p1] = c[r]
                H0[(bsz + i) * (p1 + 1) + p1] = cm[r]
            _forward(fp, &dims[0], nl, rows, hs, pre, act)
            T = hs[nl]
            mean_et = 0.0
            for i in range(rows):
                if not isfinite(T[i]):
                    bad = True
            for i in range(bsz):
                mean_et += exp(T[bsz + i])
            mean_et /= bsz
            if bad or not isfinite(mean_et):
                bad = True
                break
            if ema < 0:
                ema = mean_et
            else:
                ema = ema_decay * ema + (1.0 - ema_decay) * mean_et
            inv = 1.0 / (bsz * ema)
            for i in range(bsz):
                d[i] = -1.0 / bsz
                d[bsz + i] = exp(T[bsz + i]) * inv
            for l in range(nl - 1, -1, -1):
                a = dims[l]
                b = dims[l + 1]
                # weight gradient H_l^T d, bias gradient column sums of d
                if b == 1:
                    for j in range(a):
                        grad[woff[l] + j] = 0.0
                    for i in range(rows):
                        for j in range(a):
                            grad[woff[l] + j] += hs[l][i * a + j] * d[i]
                else:
                    _mm(True, False, <int>a, <int>b, <int>rows, hs[l], <int>a, d, <int>b, 0.0, grad + woff[l])
                for j in range(b):
                    grad[woff[l] + a * b + j] = 0.0
                for i in range(rows):
                    for j in range(b):
                        grad[woff[l] + a * b + j] += d[i * b + j]
                if l > 0:
                    if b == 1:
                        # outer product; gemm with k=1 is slow
                        for i in range(rows):
                            for j in range(a):
                                dh[i * a + j] = d[i] * fp[woff[l] + j]
                    else:
                        _mm(False, True, <int>rows, <int>a, <int>b, d, <int>b, fp + woff[l], <int>b, 0.0, dh)
                    if act == 0:
                        for i in range(rows * a):
                            if pre[l - 1][i] <= 0.0:
                                dh[i] = 0.0
                    else:
                        for i in range(rows * a):
                            dh[i] = dh[i] * (1.0 - hs[l][i] * hs[l][i])
                    swap = d
                    d = dh
                    dh = swap
            t += 1
            b1t = 1.0 - b1 ** t
            b2t = 1.0 - b2 ** t
            step = lr * sqrt(b2t) / b1t
            epsc = eps * sqrt(b2t)
            for i in range(P):
                mp[i] = <float>(b1 * <double>mp[i] + (1.0 - b1) * <double>grad[i])
                vp[i] = <float>(b2 * <double>vp[i] + (1.0 - b2) * <double>grad[i] * <double>grad[i])
                fp[i] = <float>(<double>fp[i] - step * <double>mp[i] / (sqrt(<double>vp[i]) + epsc))
            s += batch_size
    if bad:
        return t, float("nan")
    return t, ema


# ---------------------------------------------------------------------------
# stumps


def best_stump(double[:, ::1] xs, Py_ssize_t[:, ::1] order, double[::1] g, double[::1] h, double gt, double ht,
               double l2):
    cdef Py_ssize_t n = xs.shape[0], d = xs.shape[1], f, j, o0, o1
    cdef double parent = gt * gt / (ht + l2)
    cdef double gl, hl, gain, gr, best_gain = 0.0, thr = 0.0, bgl = 0.0, bhl = 0.0
    cdef Py_ssize_t bf = -1
    if order.shape[0] != n or order.shape[1] != d or g.shape[0] != n or h.shape[0] != n:
        raise ValueError("sort order, gradients and hessians must align with the feature matrix")
    with nogil:
        for f in range(d):
            gl = 0.0
            hl = 0.0
            for j in range(n - 1):
                o0 = order[j, f]
                o1 = order[j + 1, f]
                gl = gl + g[o0]
                hl = hl + h[o0]
                if xs[o0, f] < xs[o1, f]:
                    gr = gt - gl
                    gain = gl * gl / (hl + l2) + gr * gr / (ht - hl + l2) - parent
                    if gain > best_gain:
                        best_gain = gain
                        bf = f
                        thr = 0.5 * (xs[o0, f] + xs[o1, f])
                        bgl = gl
                        bhl = hl
    return (bf, thr, best_gain, bgl, bhl)
