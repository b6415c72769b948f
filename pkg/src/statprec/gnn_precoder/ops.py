"""Forward and backward passes of the graph precoder.

All entry points accept one scenario (rows of shape (n_users, n)) or a
batch (batch, n_users, n).  The heavy layer and rate kernels dispatch to
the backend selected at import (see statprec.backend); everything here
is glue: feature extraction, power normalization, and the hand-rolled
chain rule through both.
"""

import numpy as np

from ..backend import USE_NUMBA

if USE_NUMBA:
    from . import kernels_nb as kernels
else:
    from . import kernels_np as kernels


class NonFiniteActivations(RuntimeError):
    """A forward pass produced inf/nan; carries the failing layer index."""

    def __init__(self, layer_index):
        super().__init__(
            "non-finite activations after graph layer %d" % layer_index)
        self.layer_index = layer_index


def _prelu(z, slope):
    return np.where(z > 0.0, z, slope * z)


def extract_features(model, rows):
    """Covariance rows -> initial feature tensor (b, n, j, 2).

    Returns (feats, cache); the cache carries what the backward pass
    needs.  rows: (b, j, n) complex.
    """
    n = model.n_antennas
    x = np.concatenate([rows.real, rows.imag], axis=-1)  # (b, j, 2n)
    z = x @ model.w_in.T + model.b_in
    g = _prelu(z, model.slope[0])
    feats = np.stack([g[..., :n], g[..., n:]], axis=-1)  # (b, j, n, 2)
    feats = np.ascontiguousarray(feats.transpose(0, 2, 1, 3))
    return feats, (x, z)


def extract_features_backward(model, cache, dfeats):
    """Gradients of the front end.  dfeats: (b, n, j, 2)."""
    x, z = cache
    n = model.n_antennas
    dg = np.concatenate([dfeats[..., 0].transpose(0, 2, 1),
                         dfeats[..., 1].transpose(0, 2, 1)], axis=-1)
    slope = model.slope[0]
    dz = np.where(z > 0.0, dg, slope * dg)
    dslope = np.sum(dg * np.where(z > 0.0, 0.0, z))
    dw = np.einsum("bjo,bji->oi", dz, x)
    db = dz.sum(axis=(0, 1))
    return dw, db, np.array([dslope])


def layer_forward(feats, layer, alpha, beta, relu):
    """One graph layer on (b, n, j, m_in) features."""
    return kernels.gat_layer_forward(feats, layer.s, layer.t, layer.q,
                                     layer.k, layer.u, alpha, beta, relu)


def _forward_feats(model, rows, check_finite=False):
    feats, cache = extract_features(model, rows)
    trace = [feats]
    for i, layer in enumerate(model.layers):
        relu = model.activations[i] == "relu"
        feats = layer_forward(feats, layer, model.alpha, model.beta, relu)
        if check_finite and not np.all(np.isfinite(feats)):
            raise NonFiniteActivations(i)
        trace.append(feats)
    return trace, cache


def _normalize(out, power):
    """Read complex columns off the last layer and scale to the budget."""
    raw = out[..., 0] + 1j * out[..., 1]  # (b, n, j)
    norms = np.sqrt(np.sum(np.abs(raw) ** 2, axis=(1, 2)))
    if np.any(norms == 0.0):
        raise ValueError("precoder collapsed to zero; cannot normalize")
    return np.sqrt(power) * raw / norms[:, None, None], raw, norms


def forward(model, rows, power=1.0):
    """Precoder for given covariance rows.

    rows: (j, n) or (b, j, n) complex; returns (n, j) or (b, n, j) with
    squared Frobenius norm equal to power.
    """
    single = rows.ndim == 2
    batch = rows[None] if single else rows
    trace, _ = _forward_feats(model, batch)
    v, _, _ = _normalize(trace[-1], power)
    return v[0] if single else v


def sum_rate(channels, precoders, sigma2):
    """Sum rate in bits for one scenario or a batch.

    channels: (j, n) or (b, j, n); precoders likewise transposed;
    sigma2: scalar or (b,) positive noise variances.
    """
    single = channels.ndim == 2
    h = channels[None] if single else channels
    v = precoders[None] if single else precoders
    s2 = np.atleast_1d(np.asarray(sigma2, dtype=np.float64))
    if s2.size == 1:
        s2 = np.full(h.shape[0], s2[0])
    if np.any(s2 <= 0.0):
        raise ValueError("noise variance must be positive")
    rates = kernels.sum_rate_batch(
        np.ascontiguousarray(h), np.ascontiguousarray(v), s2)
    return float(rates[0]) if single else rates


def gradient(model, rows, channels, sigma2, power=1.0):
    """Loss, parameter gradients, and mean rate for a batch.

    Loss is the negative mean sum rate over the batch.  rows and
    channels: (b, j, n) complex; sigma2: (b,) positive.  Returns
    (loss, grads, mean_rate) with grads keyed like model.params().
    """
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    b = rows.shape[0]
    trace, cache = _forward_feats(model, rows, check_finite=True)
    v, raw, norms = _normalize(trace[-1], power)

    rates, grate = kernels.sum_rate_grad_batch(
        np.ascontiguousarray(channels), np.ascontiguousarray(v), sigma2)
    mean_rate = float(rates.mean())
    loss = -mean_rate
    dv = -grate / b

    # through the power normalization: v = sqrt(power) raw / |raw|
    scale = np.sqrt(power) / norms
    inner = np.sum(dv.real * raw.real + dv.imag * raw.imag, axis=(1, 2))
    draw = scale[:, None, None] * dv \
        - (scale * inner / norms ** 2)[:, None, None] * raw
    dfeats = np.stack([draw.real, draw.imag], axis=-1)

    grads = {}
    for i in range(model.n_layers - 1, -1, -1):
        layer = model.layers[i]
        relu = model.activations[i] == "relu"
        dfeats, ds, dt, dq, dk, du = kernels.gat_layer_backward(
            trace[i], dfeats, layer.s, layer.t, layer.q, layer.k, layer.u,
            model.alpha, model.beta, relu)
        grads["layer%d.s" % i] = ds
        grads["layer%d.t" % i] = dt
        grads["layer%d.q" % i] = dq
        grads["layer%d.k" % i] = dk
        grads["layer%d.u" % i] = du
    dw, db, dslope = extract_features_backward(model, cache, dfeats)
    grads["input.w"] = dw
    grads["input.b"] = db
    grads["input.slope"] = dslope
    return loss, grads, mean_rate
