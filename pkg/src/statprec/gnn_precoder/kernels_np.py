"""Vectorized numpy kernels for the graph precoder.

Feature tensors have shape (batch, n_antennas, n_users, width).  Each
graph layer mixes three terms per (antenna n, user j) node: a shared
projection of the node's own feature, an aggregate over the other
antennas of the same user, and an attention-weighted aggregate over the
other users at the same antenna.  Attention scores are inner products of
query/key projections averaged over antennas.

The backward passes recompute what they need from the saved layer inputs
rather than keeping every intermediate.
"""

import numpy as np


def gat_layer_forward(feats, s, t, q, k, u, alpha, beta, relu):
    """One graph layer.  feats: (b, n, j, m_in) -> (b, n, j, m_out)."""
    n = feats.shape[1]
    sf = feats @ s.T
    fsum = feats.sum(axis=1, keepdims=True)
    tf = (fsum - feats) @ t.T
    qn = feats @ q.T
    kn = feats @ k.T
    un = feats @ u.T
    att = np.einsum("bnjm,bnkm->bjkm", qn, kn) / n
    mix = np.einsum("bjkm,bnkm->bnjm", att, un)
    diag = np.einsum("bjjm->bjm", att)
    mix -= diag[:, None, :, :] * un
    pre = sf + alpha * tf + beta * mix
    if relu:
        return np.maximum(pre, 0.0)
    return pre


def gat_layer_backward(feats, dout, s, t, q, k, u, alpha, beta, relu):
    """Gradients of one graph layer.

    Returns (dfeats, ds, dt, dq, dk, du).  dout is the gradient at the
    layer output; internals are recomputed from feats.
    """
    n = feats.shape[1]
    n_users = feats.shape[2]
    qn = feats @ q.T
    kn = feats @ k.T
    un = feats @ u.T
    att = np.einsum("bnjm,bnkm->bjkm", qn, kn) / n
    diag = np.einsum("bjjm->bjm", att)

    if relu:
        fsum = feats.sum(axis=1, keepdims=True)
        sf = feats @ s.T
        tf = (fsum - feats) @ t.T
        mix = np.einsum("bjkm,bnkm->bnjm", att, un)
        mix -= diag[:, None, :, :] * un
        pre = sf + alpha * tf + beta * mix
        dpre = np.where(pre > 0.0, dout, 0.0)
    else:
        fsum = feats.sum(axis=1, keepdims=True)
        dpre = dout

    ds = np.einsum("bnjo,bnji->oi", dpre, feats)
    dfeats = dpre @ s

    dtf = alpha * dpre
    dt = np.einsum("bnjo,bnji->oi", dtf, fsum - feats)
    dfeats += (dtf.sum(axis=1, keepdims=True) - dtf) @ t

    dmix = beta * dpre
    datt = np.einsum("bnjm,bnkm->bjkm", dmix, un)
    idx = np.arange(n_users)
    datt[:, idx, idx, :] = 0.0
    dun = np.einsum("bjkm,bnjm->bnkm", att, dmix)
    dun -= dmix * diag[:, None, :, :]
    dqn = np.einsum("bjkm,bnkm->bnjm", datt, kn) / n
    dkn = np.einsum("bjkm,bnjm->bnkm", datt, qn) / n

    dq = np.einsum("bnjo,bnji->oi", dqn, feats)
    dk = np.einsum("bnjo,bnji->oi", dkn, feats)
    du = np.einsum("bnjo,bnji->oi", dun, feats)
    dfeats += dqn @ q + dkn @ k + dun @ u
    return dfeats, ds, dt, dq, dk, du


def sum_rate_batch(channels, precoders, sigma2):
    """Per-scenario sum rate in bits.

    channels: (b, j, n) complex, precoders: (b, n, j) complex, sigma2:
    (b,) noise variances.  The effective link gain is the plain
    transpose product h_j^T v_k.
    """
    t = channels @ precoders  # (b, j, j), t[j, k] = h_j^T v_k
    p = np.abs(t) ** 2
    sig = np.einsum("bjj->bj", p)
    den = p.sum(axis=2) - sig + sigma2[:, None]
    return np.sum(np.log2(1.0 + sig / den), axis=1)


def sum_rate_grad_batch(channels, precoders, sigma2):
    """Sum rate and its gradient with respect to the precoders.

    Returns (rates, grads) with grads (b, n, j) complex in the
    real-pair convention: d rate / d Re(v) = Re(grad), d rate / d Im(v)
    = Im(grad).
    """
    t = channels @ precoders
    p = np.abs(t) ** 2
    sig = np.einsum("bjj->bj", p)
    den = p.sum(axis=2) - sig + sigma2[:, None]
    snr = sig / den
    rates = np.sum(np.log2(1.0 + snr), axis=1)

    # d rate / d p[j, l]: own-signal term on the diagonal, interference
    # penalty elsewhere
    inv = 1.0 / (np.log(2.0) * (1.0 + snr) * den)  # (b, j)
    coef = np.repeat((-inv * snr)[:, :, None], p.shape[2], axis=2)
    bidx = np.arange(p.shape[1])
    coef[:, bidx, bidx] = inv
    grads = 2.0 * np.einsum("bjn,bjl->bnl", np.conj(channels), coef * t)
    return rates, grads
