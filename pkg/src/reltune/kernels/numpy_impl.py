"""Pure-numpy implementations of the hot numeric kernels.

This is the fallback backend; :mod:`reltune.kernels.numba_impl` provides
JIT-compiled loop versions of the same functions. Both compute the same
math in float64 (results agree to ~1e-12; summation order differs), and
the active backend is chosen once at import time from the
``RELTUNE_BACKEND`` environment variable.
"""

import numpy as np

LEAKY_SLOPE = 0.2


def gat_forward(feats, W, a, mask):
    """Single-head graph-attention layer over a batch of node features.

    feats : (B, n, f) node feature matrices, one graph instance per sample
    W     : (f, h) linear map
    a     : (2h,) attention vector, split into center / neighbor halves
    mask  : (n, n) float 0/1 neighborhood matrix, self-loops included

    Attention per center node i over allowed neighbors j:
    ``softmax_j(LeakyReLU(a[:h] . W e_i + a[h:] . W e_j))``; the new node
    state is ``ELU(sum_j alpha_ij W e_j)``.

    Returns ``(out, (hw, raw, alpha, pre))`` where the tuple caches the
    intermediates needed by :func:`gat_backward`.
    """
    h = W.shape[1]
    hw = feats @ W                                  # (B, n, h)
    s = hw @ a[:h]                                  # (B, n) center scores
    t = hw @ a[h:]                                  # (B, n) neighbor scores
    raw = s[:, :, None] + t[:, None, :]             # (B, n, n)
    act = np.where(raw >= 0.0, raw, LEAKY_SLOPE * raw)
    act = np.where(mask > 0.0, act, -np.inf)
    mx = act.max(axis=2, keepdims=True)             # rows have >= 1 entry (self)
    ex = np.exp(act - mx)
    alpha = ex / ex.sum(axis=2, keepdims=True)
    pre = alpha @ hw                                # (B, n, h)
    out = np.where(pre > 0.0, pre, np.expm1(pre))   # ELU
    return out, (hw, raw, alpha, pre)


def gat_backward(grad_out, feats, W, a, mask, cache):
    """Gradient of :func:`gat_forward` w.r.t. its inputs and weights.

    Returns ``(grad_feats, grad_W, grad_a)``; weight gradients are summed
    over the batch, ``grad_feats`` keeps the batch axis.
    """
    hw, raw, alpha, pre = cache
    h = W.shape[1]
    dpre = grad_out * np.where(pre > 0.0, 1.0, np.exp(pre))
    dalpha = dpre @ np.swapaxes(hw, 1, 2)           # (B, n, n)
    dhw = np.swapaxes(alpha, 1, 2) @ dpre           # aggregation path
    # softmax rows; alpha is exactly 0 off-mask, so de vanishes there
    row = (alpha * dalpha).sum(axis=2, keepdims=True)
    de = alpha * (dalpha - row)
    draw = de * np.where(raw >= 0.0, 1.0, LEAKY_SLOPE)
    ds = draw.sum(axis=2)                           # (B, n) center share
    dt = draw.sum(axis=1)                           # (B, n) neighbor share
    dhw = dhw + ds[:, :, None] * a[None, None, :h] + dt[:, :, None] * a[None, None, h:]
    da = np.concatenate([
        np.einsum("bnh,bn->h", hw, ds),
        np.einsum("bnh,bn->h", hw, dt),
    ])
    dW = np.einsum("bnf,bnh->fh", feats, dhw)
    dfeats = dhw @ W.T
    return dfeats, dW, da


def pairwise_sq_dists(A, B):
    """Squared Euclidean distances between the rows of A (m, d) and B (k, d)."""
    aa = (A * A).sum(axis=1)[:, None]
    bb = (B * B).sum(axis=1)[None, :]
    d2 = aa + bb - 2.0 * (A @ B.T)
    return np.maximum(d2, 0.0)


def rbf_mean(Q, Z, sigma):
    """Mean RBF similarity of each query row in Q (m, d) to the rows of Z (k, d).

    ``(1/k) sum_j exp(-||q - z_j||^2 / (2 sigma^2))``
    """
    d2 = pairwise_sq_dists(Q, Z)
    return np.exp(-d2 / (2.0 * sigma * sigma)).mean(axis=1)
