"""Numba-compiled versions of the hot numeric kernels.

Loop-level twins of :mod:`reltune.kernels.numpy_impl`. ``fastmath`` stays
off and loops are sequential: results must be deterministic for a fixed
backend. ``cache=True`` persists compiled code next to the source tree so
repeat runs skip compilation.
"""

import numpy as np
from numba import njit

from .numpy_impl import LEAKY_SLOPE

njit_kwargs = {
    "cache": True,
    "nogil": True,
}


@njit(**njit_kwargs)
def gat_forward(feats, W, a, mask):
    B, n, f = feats.shape
    h = W.shape[1]
    a_src = a[:h]
    a_dst = a[h:]
    hw = np.empty((B, n, h))
    raw = np.empty((B, n, n))
    alpha = np.zeros((B, n, n))
    pre = np.empty((B, n, h))
    out = np.empty((B, n, h))
    for b in range(B):
        hw[b] = feats[b] @ W
        s = hw[b] @ a_src
        t = hw[b] @ a_dst
        for i in range(n):
            mx = -np.inf
            for j in range(n):
                r = s[i] + t[j]
                raw[b, i, j] = r
                if mask[i, j] > 0.0:
                    e = r if r >= 0.0 else LEAKY_SLOPE * r
                    if e > mx:
                        mx = e
            denom = 0.0
            for j in range(n):
                if mask[i, j] > 0.0:
                    r = raw[b, i, j]
                    e = r if r >= 0.0 else LEAKY_SLOPE * r
                    w = np.exp(e - mx)
                    alpha[b, i, j] = w
                    denom += w
            for j in range(n):
                alpha[b, i, j] /= denom
        pre[b] = alpha[b] @ hw[b]
        for i in range(n):
            for k in range(h):
                p = pre[b, i, k]
                out[b, i, k] = p if p > 0.0 else np.expm1(p)
    return out, (hw, raw, alpha, pre)


@njit(**njit_kwargs)
def gat_backward(grad_out, feats, W, a, mask, cache):
    hw, raw, alpha, pre = cache
    B, n, f = feats.shape
    h = W.shape[1]
    a_src = a[:h]
    a_dst = a[h:]
    dfeats = np.empty((B, n, f))
    dW = np.zeros((f, h))
    da = np.zeros(2 * h)
    for b in range(B):
        dpre = np.empty((n, h))
        for i in range(n):
            for k in range(h):
                p = pre[b, i, k]
                g = 1.0 if p > 0.0 else np.exp(p)
                dpre[i, k] = grad_out[b, i, k] * g
        dalpha = dpre @ hw[b].T
        dhw = alpha[b].T @ dpre
        ds = np.zeros(n)
        dt = np.zeros(n)
        for i in range(n):
            row = 0.0
            for j in range(n):
                row += alpha[b, i, j] * dalpha[i, j]
            for j in range(n):
                if mask[i, j] > 0.0:
                    de = alpha[b, i, j] * (dalpha[i, j] - row)
                    slope = 1.0 if raw[b, i, j] >= 0.0 else LEAKY_SLOPE
                    dr = de * slope
                    ds[i] += dr
                    dt[j] += dr
        for i in range(n):
            for k in range(h):
                dhw[i, k] += ds[i] * a_src[k] + dt[i] * a_dst[k]
                da[k] += hw[b, i, k] * ds[i]
                da[h + k] += hw[b, i, k] * dt[i]
        dW += feats[b].T @ dhw
        dfeats[b] = dhw @ W.T
    return dfeats, dW, da


@njit(**njit_kwargs)
def pairwise_sq_dists(A, B):
    m, d = A.shape
    k = B.shape[0]
    out = np.empty((m, k))
    for i in range(m):
        for j in range(k):
            acc = 0.0
            for c in range(d):
                diff = A[i, c] - B[j, c]
                acc += diff * diff
            out[i, j] = acc
    return out


@njit(**njit_kwargs)
def rbf_mean(Q, Z, sigma):
    m, d = Q.shape
    k = Z.shape[0]
    inv = 1.0 / (2.0 * sigma * sigma)
    out = np.empty(m)
    for i in range(m):
        acc = 0.0
        for j in range(k):
            d2 = 0.0
            for c in range(d):
                diff = Q[i, c] - Z[j, c]
                d2 += diff * diff
            acc += np.exp(-d2 * inv)
        out[i] = acc / k
    return out
