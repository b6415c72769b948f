"""Numba-compiled kernels, loop-fused twins of kernels_np.

Projection-type contractions go through np.dot (BLAS); the attention
scores and neighbor mixing, which are small and awkward to vectorize
without temporaries, are explicit fused loops.  Forward runs scenarios
in parallel (each writes a disjoint output slice); backward stays serial
over the batch so parameter-gradient accumulation is deterministic.
Results agree with the numpy versions to floating-point roundoff.
"""

import math

import numpy as np
from numba import njit, prange


@njit(cache=True)
def _user_sums(fb):
    """Sum features over antennas: (n, j, m) -> (j, m)."""
    n, n_users, m = fb.shape
    out = np.zeros((n_users, m))
    for nn in range(n):
        for jj in range(n_users):
            for i in range(m):
                out[jj, i] += fb[nn, jj, i]
    return out


@njit(cache=True)
def _attention(qn, kn, n, n_users, m_out):
    """att[j, k, o] = mean_n qn[(n,j), o] * kn[(n,k), o]."""
    att = np.zeros((n_users, n_users, m_out))
    for nn in range(n):
        base = nn * n_users
        for jj in range(n_users):
            for kk in range(n_users):
                for o in range(m_out):
                    att[jj, kk, o] += qn[base + jj, o] * kn[base + kk, o]
    return att / n


@njit(cache=True)
def _pre_activation(sf, tsum, tflat, un, att, alpha, beta, n, n_users,
                    m_out):
    pre = np.empty((n * n_users, m_out))
    for nn in range(n):
        base = nn * n_users
        for jj in range(n_users):
            row = base + jj
            for o in range(m_out):
                acc = 0.0
                for kk in range(n_users):
                    if kk != jj:
                        acc += att[jj, kk, o] * un[base + kk, o]
                pre[row, o] = sf[row, o] \
                    + alpha * (tsum[jj, o] - tflat[row, o]) + beta * acc
    return pre


@njit(cache=True, parallel=True)
def gat_layer_forward(feats, s, t, q, k, u, alpha, beta, relu):
    b_n, n, n_users, m_in = feats.shape
    m_out = s.shape[0]
    s_t = np.ascontiguousarray(s.T)
    t_t = np.ascontiguousarray(t.T)
    q_t = np.ascontiguousarray(q.T)
    k_t = np.ascontiguousarray(k.T)
    u_t = np.ascontiguousarray(u.T)
    out = np.empty((b_n, n, n_users, m_out))
    for b in prange(b_n):
        fb = feats[b]
        flat = fb.reshape(n * n_users, m_in)
        sf = np.dot(flat, s_t)
        qn = np.dot(flat, q_t)
        kn = np.dot(flat, k_t)
        un = np.dot(flat, u_t)
        fsum = _user_sums(fb)
        tsum = np.dot(fsum, t_t)
        tflat = np.dot(flat, t_t)
        att = _attention(qn, kn, n, n_users, m_out)
        pre = _pre_activation(sf, tsum, tflat, un, att, alpha, beta, n,
                              n_users, m_out)
        for nn in range(n):
            base = nn * n_users
            for jj in range(n_users):
                for o in range(m_out):
                    v = pre[base + jj, o]
                    if relu and v < 0.0:
                        v = 0.0
                    out[b, nn, jj, o] = v
    return out


@njit(cache=True)
def gat_layer_backward(feats, dout, s, t, q, k, u, alpha, beta, relu):
    b_n, n, n_users, m_in = feats.shape
    m_out = s.shape[0]
    rows = n * n_users
    s_t = np.ascontiguousarray(s.T)
    t_t = np.ascontiguousarray(t.T)
    q_t = np.ascontiguousarray(q.T)
    k_t = np.ascontiguousarray(k.T)
    u_t = np.ascontiguousarray(u.T)
    dfeats = np.empty((b_n, n, n_users, m_in))
    ds = np.zeros((m_out, m_in))
    dt = np.zeros((m_out, m_in))
    dq = np.zeros((m_out, m_in))
    dk = np.zeros((m_out, m_in))
    du = np.zeros((m_out, m_in))
    for b in range(b_n):
        fb = feats[b]
        flat = fb.reshape(rows, m_in)
        qn = np.dot(flat, q_t)
        kn = np.dot(flat, k_t)
        un = np.dot(flat, u_t)
        fsum = _user_sums(fb)
        att = _attention(qn, kn, n, n_users, m_out)

        dpre = np.empty((rows, m_out))
        if relu:
            sf = np.dot(flat, s_t)
            tsum = np.dot(fsum, t_t)
            tflat = np.dot(flat, t_t)
            pre = _pre_activation(sf, tsum, tflat, un, att, alpha, beta,
                                  n, n_users, m_out)
            for nn in range(n):
                base = nn * n_users
                for jj in range(n_users):
                    row = base + jj
                    for o in range(m_out):
                        dpre[row, o] = dout[b, nn, jj, o] \
                            if pre[row, o] > 0.0 else 0.0
        else:
            for nn in range(n):
                base = nn * n_users
                for jj in range(n_users):
                    row = base + jj
                    for o in range(m_out):
                        dpre[row, o] = dout[b, nn, jj, o]

        # attention score gradient, diagonal excluded on both sides
        datt = np.zeros((n_users, n_users, m_out))
        for nn in range(n):
            base = nn * n_users
            for jj in range(n_users):
                for kk in range(n_users):
                    if kk != jj:
                        for o in range(m_out):
                            datt[jj, kk, o] += beta * dpre[base + jj, o] \
                                * un[base + kk, o]

        dun = np.empty((rows, m_out))
        dqn = np.empty((rows, m_out))
        dkn = np.empty((rows, m_out))
        for nn in range(n):
            base = nn * n_users
            for jj in range(n_users):
                for o in range(m_out):
                    acc_u = 0.0
                    acc_q = 0.0
                    acc_k = 0.0
                    for kk in range(n_users):
                        if kk != jj:
                            acc_u += beta * dpre[base + kk, o] \
                                * att[kk, jj, o]
                        acc_q += datt[jj, kk, o] * kn[base + kk, o]
                        acc_k += datt[kk, jj, o] * qn[base + kk, o]
                    dun[base + jj, o] = acc_u
                    dqn[base + jj, o] = acc_q / n
                    dkn[base + jj, o] = acc_k / n

        dpre_t = np.ascontiguousarray(dpre.T)
        ds += np.dot(dpre_t, flat)
        dq += np.dot(np.ascontiguousarray(dqn.T), flat)
        dk += np.dot(np.ascontiguousarray(dkn.T), flat)
        du += np.dot(np.ascontiguousarray(dun.T), flat)

        # T path: dtf = alpha * dpre against (fsum_j - f_nj)
        duser = np.zeros((n_users, m_out))
        for nn in range(n):
            base = nn * n_users
            for jj in range(n_users):
                for o in range(m_out):
                    duser[jj, o] += dpre[base + jj, o]
        duser_t = np.ascontiguousarray(duser.T)
        dt += alpha * (np.dot(duser_t, fsum) - np.dot(dpre_t, flat))

        dflat = np.dot(dpre, s) + np.dot(dqn, q) + np.dot(dkn, k) \
            + np.dot(dun, u)
        tback = np.dot(duser, t)  # (j, m_in), shared across antennas
        tdirect = np.dot(dpre, t)
        for nn in range(n):
            base = nn * n_users
            for jj in range(n_users):
                row = base + jj
                for i in range(m_in):
                    dfeats[b, nn, jj, i] = dflat[row, i] \
                        + alpha * (tback[jj, i] - tdirect[row, i])
    return dfeats, ds, dt, dq, dk, du


@njit(cache=True)
def sum_rate_batch(channels, precoders, sigma2):
    b_n, n_users, n = channels.shape
    rates = np.empty(b_n)
    ln2 = math.log(2.0)
    for b in range(b_n):
        total = 0.0
        for j in range(n_users):
            sig = 0.0
            interf = 0.0
            for l in range(n_users):
                acc = 0.0 + 0.0j
                for m in range(n):
                    acc += channels[b, j, m] * precoders[b, m, l]
                pw = acc.real * acc.real + acc.imag * acc.imag
                if l == j:
                    sig = pw
                else:
                    interf += pw
            total += math.log(1.0 + sig / (interf + sigma2[b])) / ln2
        rates[b] = total
    return rates


@njit(cache=True)
def sum_rate_grad_batch(channels, precoders, sigma2):
    b_n, n_users, n = channels.shape
    rates = np.empty(b_n)
    grads = np.zeros((b_n, n, n_users), dtype=np.complex128)
    ln2 = math.log(2.0)
    for b in range(b_n):
        t = np.empty((n_users, n_users), dtype=np.complex128)
        for j in range(n_users):
            for l in range(n_users):
                acc = 0.0 + 0.0j
                for m in range(n):
                    acc += channels[b, j, m] * precoders[b, m, l]
                t[j, l] = acc
        total = 0.0
        for j in range(n_users):
            sig = t[j, j].real ** 2 + t[j, j].imag ** 2
            den = sigma2[b]
            for l in range(n_users):
                if l != j:
                    den += t[j, l].real ** 2 + t[j, l].imag ** 2
            snr = sig / den
            total += math.log(1.0 + snr) / ln2
            inv = 1.0 / (ln2 * (1.0 + snr) * den)
            for l in range(n_users):
                coef = inv if l == j else -inv * snr
                scale = 2.0 * coef * t[j, l]
                for m in range(n):
                    grads[b, m, l] += scale * np.conj(channels[b, j, m])
        rates[b] = total
    return rates, grads
