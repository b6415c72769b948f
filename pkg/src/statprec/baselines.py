"""Weighted-MMSE precoder baselines and codebook feedback.

Two solvers share one block update: alternate MMSE receive filters u,
mean-square-error weights w, and a regularized least-squares precoder
solve under the sum power budget.  swmmse runs it on fresh channel draws
from per-user covariances with running averages (a stochastic method
that needs only statistics); iwmmse runs it on fixed channel estimates
until the sum rate stops improving.

Also here: least-squares channel estimation from pilots and DFT codebook
quantization for index feedback.
"""

import numpy as np

from .channels import covariance_factor

POWER_TOL = 1e-10
MAX_BRACKET_DOUBLINGS = 60


def _solve_precoder(a, b, power):
    """argmin_V sum_j ||...|| subject to ||V||_F^2 <= power.

    Solves (a + mu I) v_j = b_j with the smallest mu >= 0 meeting the
    budget.  a is Hermitian PSD (n x n), b is (n, j).
    """
    a = 0.5 * (a + a.conj().T)
    w, basis = np.linalg.eigh(a)
    w = np.clip(w, 0.0, None)
    c = basis.conj().T @ b
    c2 = np.sum(np.abs(c) ** 2, axis=1)
    mask = c2 > 0.0
    if not np.any(mask):
        return np.zeros_like(b)

    def total(mu):
        return float(np.sum(c2[mask] / (w[mask] + mu) ** 2))

    if w[mask].min() > 0.0 and total(0.0) <= power:
        mu = 0.0
    else:
        hi = 1.0
        doublings = 0
        while total(hi) > power:
            hi *= 2.0
            doublings += 1
            if doublings > MAX_BRACKET_DOUBLINGS:
                raise RuntimeError(
                    "power bisection failed to bracket the water level")
        lo = 0.0
        for _ in range(200):
            mu = 0.5 * (lo + hi)
            if total(mu) > power:
                lo = mu
            else:
                hi = mu
            if hi - lo <= POWER_TOL * max(1.0, hi):
                break
        mu = hi  # the feasible end of the bracket
    scale = np.zeros_like(w)
    scale[mask] = 1.0 / (w[mask] + mu)
    return basis @ (c * scale[:, None])


def _mmse_step(t, sigma2):
    """Receive filters and error weights from link gains t[j, k] = h_j^T v_k."""
    p = np.abs(t) ** 2
    den = p.sum(axis=1) + sigma2
    diag = np.diagonal(p)
    u = np.diagonal(t) / den
    e = 1.0 - diag / den
    w = 1.0 / e
    return u, w


def swmmse(covariances, power, sigma2, n_iters, rng, snapshots=None):
    """Stochastic WMMSE from channel statistics alone.

    Each iteration draws one channel per user from its covariance,
    updates filters and weights on the draw, folds the resulting normal
    equations into running averages, and re-solves the precoder.
    covariances: (j, n, n); returns V (n, j), or (V, {i: V_i}) recording
    the precoder after selected iteration counts when snapshots is a
    collection of 1-based iteration indices.
    """
    if n_iters < 1:
        raise ValueError("need at least one iteration")
    if sigma2 <= 0:
        raise ValueError("noise variance must be positive")
    covariances = np.asarray(covariances)
    n_users, n, _ = covariances.shape
    factors = np.stack([covariance_factor(c) for c in covariances])

    # deterministic start: statistically matched beams, equal power
    v = np.empty((n, n_users), dtype=np.complex128)
    for j in range(n_users):
        ww, basis = np.linalg.eigh(covariances[j])
        lead = np.conj(basis[:, -1])
        v[:, j] = np.sqrt(power / n_users) * lead / np.linalg.norm(lead)

    a_bar = np.zeros((n, n), dtype=np.complex128)
    b_bar = np.zeros((n, n_users), dtype=np.complex128)
    taken = {}
    wanted = set(int(i) for i in snapshots) if snapshots is not None else set()
    for it in range(1, n_iters + 1):
        z = (rng.standard_normal((n_users, n))
             + 1j * rng.standard_normal((n_users, n))) / np.sqrt(2.0)
        h = np.einsum("jnm,jm->jn", factors, z)
        t = h @ v
        u, w = _mmse_step(t, sigma2)
        g = np.conj(h)  # effective downlink direction per user
        coef = w * np.abs(u) ** 2
        a_i = (g.T * coef) @ np.conj(g)
        b_i = g.T * (w * u)
        a_bar += (a_i - a_bar) / it
        b_bar += (b_i - b_bar) / it
        v = _solve_precoder(a_bar, b_bar, power)
        if it in wanted:
            taken[it] = v.copy()
    if snapshots is not None:
        return v, taken
    return v


def _fixed_rate(h, v, sigma2):
    t = h @ v
    p = np.abs(t) ** 2
    sig = np.diagonal(p)
    den = p.sum(axis=1) - sig + sigma2
    return float(np.sum(np.log2(1.0 + sig / den)))


def iwmmse(estimates, power, sigma2, n_iters=300, tol=1e-10,
           return_trace=False):
    """Iterative WMMSE on fixed channel estimates.

    Starts at matched filters with equal power, iterates the block
    update, and stops early when the sum rate on the estimates improves
    by less than tol (relative).  The iterate sequence is monotone in
    that surrogate rate.  estimates: (j, n); returns V (n, j), plus the
    per-iteration rate trace when requested.
    """
    if n_iters < 1:
        raise ValueError("need at least one iteration")
    if sigma2 <= 0:
        raise ValueError("noise variance must be positive")
    h = np.asarray(estimates, dtype=np.complex128)
    n_users, n = h.shape

    v = np.empty((n, n_users), dtype=np.complex128)
    for j in range(n_users):
        norm = np.linalg.norm(h[j])
        if norm == 0.0:
            beam = np.zeros(n, dtype=np.complex128)
            beam[0] = 1.0
        else:
            beam = np.conj(h[j]) / norm
        v[:, j] = np.sqrt(power / n_users) * beam

    g = np.conj(h)
    rate = _fixed_rate(h, v, sigma2)
    trace = [rate]
    for _ in range(n_iters):
        t = h @ v
        u, w = _mmse_step(t, sigma2)
        coef = w * np.abs(u) ** 2
        a = (g.T * coef) @ np.conj(g)
        b = g.T * (w * u)
        v = _solve_precoder(a, b, power)
        new_rate = _fixed_rate(h, v, sigma2)
        trace.append(new_rate)
        if new_rate - rate <= tol * max(1.0, abs(rate)):
            rate = new_rate
            break
        rate = new_rate
    if return_trace:
        return v, trace
    return v


def ls_estimate(pilot, y):
    """Least-squares channel estimate P^H (P P^H)^{-1} y.

    y: (n_p,) or a stack (m, n_p).  The estimate lives in the row space
    of P; with n_p = n and orthogonal rows it is exact on noiseless
    observations.
    """
    p = pilot.matrix
    gram = p @ p.conj().T
    y = np.asarray(y, dtype=np.complex128)
    single = y.ndim == 1
    rhs = y[:, None] if single else y.T
    x = np.linalg.solve(gram, rhs)
    est = (p.conj().T @ x).T
    return est[0] if single else est


def build_dft_codebook(geometry, bits):
    """Unit-norm DFT beam codebook with 2^bits columns.

    ULA: column k has phases exp(2 pi i n k / K).  URA: the bit budget
    splits between the two dimensions in proportion to their log sizes,
    and the codebook is the Kronecker product of per-dimension grids.
    """
    if bits < 0:
        raise ValueError("bit budget must be nonnegative")

    def line(n, k_total):
        ant = np.arange(n)[:, None]
        idx = np.arange(k_total)[None, :]
        return np.exp(2j * np.pi * ant * idx / k_total) / np.sqrt(n)

    if geometry.kind == "ula":
        return line(geometry.n, 2 ** bits)
    if geometry.n_v == 1:
        bits_v = 0
    else:
        bits_v = int(np.floor(bits * np.log2(geometry.n_v)
                              / np.log2(geometry.n)))
    bits_h = bits - bits_v
    return np.kron(line(geometry.n_v, 2 ** bits_v),
                   line(geometry.n_h, 2 ** bits_h))


def dft_feedback(estimate, codebook):
    """Index of the codeword best aligned with the estimate.

    Ties resolve to the smallest index; invariant to scaling of the
    estimate.
    """
    score = np.abs(codebook.conj().T @ np.asarray(estimate))
    return int(np.argmax(score))
