# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, tanh

cnp.import_array()


def loo_reshape(G, double alpha):
    cdef double[:, ::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef Py_ssize_t n = g.shape[0], d = g.shape[1], i, j
    out_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] s = np.zeros(d)
    cdef double scale = alpha / (n - 1)
    with nogil:
        for i in range(n):
            for j in range(d):
                s[j] += g[i, j]
        for i in range(n):
            for j in range(d):
                out[i, j] = g[i, j] - scale * (s[j] - g[i, j])
    return out_arr


def loo_baselines(G):
    cdef double[:, ::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef Py_ssize_t n = g.shape[0], d = g.shape[1], i, j
    out_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] s = np.zeros(d)
    cdef double inv = 1.0 / (n - 1)
    with nogil:
        for i in range(n):
            for j in range(d):
                s[j] += g[i, j]
        for i in range(n):
            for j in range(d):
                out[i, j] = (s[j] - g[i, j]) * inv
    return out_arr


cdef inline double _softmax_inplace(double* s, Py_ssize_t K, Py_ssize_t y) noexcept nogil:
    # turns scores into probabilities, returns the cross-entropy at label y
    cdef Py_ssize_t k
    cdef double mx = s[0], z = 0.0, sy
    for k in range(1, K):
        if s[k] > mx:
            mx = s[k]
    for k in range(K):
        s[k] -= mx
    sy = s[y]
    for k in range(K):
        s[k] = exp(s[k])
        z += s[k]
    for k in range(K):
        s[k] /= z
    return log(z) - sy


def softmax_xent_grads(W, b, X, y):
    cdef double[:, ::1] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef double[::1] bb = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef long long[::1] lab = np.ascontiguousarray(y, dtype=np.int64)
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], K = w.shape[0]
    cdef Py_ssize_t i, j, k
    grads_arr = np.empty((n, K * d + K))
    losses_arr = np.empty(n)
    cdef double[:, ::1] grads = grads_arr
    cdef double[::1] losses = losses_arr
    cdef double[::1] s = np.empty(K)
    cdef double acc, dk
    with nogil:
        for i in range(n):
            for k in range(K):
                acc = bb[k]
                for j in range(d):
                    acc = acc + w[k, j] * x[i, j]
                s[k] = acc
            losses[i] = _softmax_inplace(&s[0], K, lab[i])
            for k in range(K):
                dk = s[k] - (1.0 if k == lab[i] else 0.0)
                for j in range(d):
                    grads[i, k * d + j] = dk * x[i, j]
                grads[i, K * d + k] = dk
    return grads_arr, losses_arr


def mlp1_grads(W1, b1, W2, b2, X, y, bint relu):
    cdef double[:, ::1] w1 = np.ascontiguousarray(W1, dtype=np.float64)
    cdef double[::1] c1 = np.ascontiguousarray(b1, dtype=np.float64)
    cdef double[:, ::1] w2 = np.ascontiguousarray(W2, dtype=np.float64)
    cdef double[::1] c2 = np.ascontiguousarray(b2, dtype=np.float64)
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef long long[::1] lab = np.ascontiguousarray(y, dtype=np.int64)
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], h = w1.shape[0], K = w2.shape[0]
    cdef Py_ssize_t i, j, k, r, o1 = h * d, o2 = h * d + h, o3 = h * d + h + K * h
    grads_arr = np.empty((n, o3 + K))
    losses_arr = np.empty(n)
    cdef double[:, ::1] grads = grads_arr
    cdef double[::1] losses = losses_arr
    cdef double[::1] pre = np.empty(h)
    cdef double[::1] act = np.empty(h)
    cdef double[::1] s = np.empty(K)
    cdef double acc, dk, dr
    with nogil:
        for i in range(n):
            for r in range(h):
                acc = c1[r]
                for j in range(d):
                    acc = acc + w1[r, j] * x[i, j]
                pre[r] = acc
                if relu:
                    act[r] = acc if acc > 0.0 else 0.0
                else:
                    act[r] = tanh(acc)
            for k in range(K):
                acc = c2[k]
                for r in range(h):
                    acc = acc + w2[k, r] * act[r]
                s[k] = acc
            losses[i] = _softmax_inplace(&s[0], K, lab[i])
            for k in range(K):
                s[k] = s[k] - (1.0 if k == lab[i] else 0.0)
                for r in range(h):
                    grads[i, o2 + k * h + r] = s[k] * act[r]
                grads[i, o3 + k] = s[k]
            for r in range(h):
                acc = 0.0
                for k in range(K):
                    acc = acc + s[k] * w2[k, r]
                if relu:
                    dr = acc if pre[r] > 0.0 else 0.0
                else:
                    dr = acc * (1.0 - act[r] * act[r])
                for j in range(d):
                    grads[i, r * d + j] = dr * x[i, j]
                grads[i, o1 + r] = dr
    return grads_arr, losses_arr


def score_networked_batch(outcomes, offsets, rewards, probs, double alpha, double beta):
    cdef long long[:, ::1] xs = np.ascontiguousarray(outcomes, dtype=np.int64)
    cdef long long[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef double[::1] f = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef double[::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef Py_ssize_t T = xs.shape[0], K = p.shape[0], m = off.shape[0] - 1
    cdef Py_ssize_t t, u, i, k, nu
    cdef double n = <double>(off[m] - off[0])
    est_arr = np.zeros((T, K))
    cdef double[:, ::1] est = est_arr
    cdef double[:, ::1] agg = np.empty((m, K))
    cdef double[::1] total = np.empty(K)
    cdef double sf, coef, csum, wu, fi
    with nogil:
        for t in range(T):
            for k in range(K):
                total[k] = 0.0
            for u in range(m):
                nu = off[u + 1] - off[u]
                sf = 0.0
                for i in range(off[u], off[u + 1]):
                    sf = sf + f[xs[t, i]]
                for k in range(K):
                    agg[u, k] = 0.0
                csum = 0.0
                for i in range(off[u], off[u + 1]):
                    fi = f[xs[t, i]]
                    coef = fi - alpha * (sf - fi) / (nu - 1)
                    agg[u, xs[t, i]] += coef
                    csum = csum + coef
                for k in range(K):
                    agg[u, k] = agg[u, k] / nu - (csum / nu) * p[k]
                    total[k] += nu * agg[u, k]
            for u in range(m):
                nu = off[u + 1] - off[u]
                wu = nu / n
                for k in range(K):
                    est[t, k] += wu * agg[u, k]
                    if beta != 0.0:
                        est[t, k] -= wu * beta * (total[k] - nu * agg[u, k]) / (n - nu)
    return est_arr
