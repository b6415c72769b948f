"""Gaussian mixture channel prior with structured spectral covariances.

Each mixture component is zero-mean with covariance C_k = Q^H diag(q_k) Q,
where Q collects the first n columns of an oversampled unitary DFT (2n x 2n
for a ULA; the Kronecker product of per-dimension doublings for a URA).
That makes every ULA component Hermitian Toeplitz and every URA component
block-Toeplitz, while fitting reduces to learning nonnegative spectra q_k.

The mixture doubles as a feedback codebook: with K = 2^B components, the
index of the most likely component given an observation is a B-bit message
from which the transmitter recovers a full covariance.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from . import serde
from .channels import geometry_from_dict, geometry_to_dict

log = logging.getLogger(__name__)

EM_MAX_ITERS = 300
EM_TOL = 1e-5
FLOOR_RATIO = 1e-6


class SpectralDictionary:
    """Oversampled DFT basis tying covariances to nonnegative spectra.

    The spectrum length is 2n for a ULA and 4n for a URA (doubled per
    dimension).  Q^H Q = I, and realized matrices are the top-left block
    of a circulant (2-level circulant for URAs), evaluated via FFTs.
    """

    def __init__(self, geometry):
        self.geometry = geometry
        if geometry.kind == "ula":
            self.spectrum_size = 2 * geometry.n
        else:
            self.spectrum_size = 4 * geometry.n
        # Sum_a |(Qh)_a|^2 = ||h||^2, so projections average to n over a
        # trace-n ensemble; this factor rescales them to spectra that
        # realize at trace n.
        self.scale = self.spectrum_size / geometry.n

    def transform(self, h):
        """Q h for one channel (n,) or a stack (..., n)."""
        g = self.geometry
        h = np.asarray(h, dtype=np.complex128)
        if g.kind == "ula":
            s = 2 * g.n
            return np.fft.fft(h, n=s, axis=-1) / np.sqrt(s)
        grid = h.reshape(h.shape[:-1] + (g.n_v, g.n_h))
        out = np.fft.fft2(grid, s=(2 * g.n_v, 2 * g.n_h), axes=(-2, -1))
        out /= np.sqrt(self.spectrum_size)
        return out.reshape(h.shape[:-1] + (self.spectrum_size,))

    def _spectrum_grid(self, q):
        """FFT of the spectrum, normalized: entry d is C[n, n+d]."""
        g = self.geometry
        q = np.asarray(q, dtype=np.float64)
        if g.kind == "ula":
            return np.fft.fft(q) / self.spectrum_size
        grid = q.reshape(2 * g.n_v, 2 * g.n_h)
        return np.fft.fft2(grid) / self.spectrum_size

    def first_row(self, q):
        """First row of the realized covariance, as a length-n vector."""
        g = self.geometry
        grid = self._spectrum_grid(q)
        if g.kind == "ula":
            return grid[: g.n].copy()
        return grid[: g.n_v, : g.n_h].reshape(g.n).copy()

    def realize(self, q):
        """Dense covariance Q^H diag(q) Q."""
        g = self.geometry
        grid = self._spectrum_grid(q)
        if g.kind == "ula":
            row = grid[: g.n]
            return scipy.linalg.toeplitz(np.conj(row), row)
        dv = (np.arange(g.n_v)[None, :] - np.arange(g.n_v)[:, None]) \
            % (2 * g.n_v)
        dh = (np.arange(g.n_h)[None, :] - np.arange(g.n_h)[:, None]) \
            % (2 * g.n_h)
        # blocks[v, v', h, h'] -> entry ((v,h), (v',h'))
        blocks = grid[dv][:, :, dh]
        return blocks.transpose(0, 2, 1, 3).reshape(g.n, g.n)

    def dense_matrix(self):
        """Explicit Q, shape (spectrum_size, n).  Small n only."""
        g = self.geometry

        def cols(n):
            k = np.arange(2 * n)[:, None]
            m = np.arange(n)[None, :]
            return np.exp(-2j * np.pi * k * m / (2 * n)) / np.sqrt(2 * n)

        if g.kind == "ula":
            return cols(g.n)
        return np.kron(cols(g.n_v), cols(g.n_h))


@dataclass
class ObservationFactorCache:
    """Per-(pilot, noise) factorizations shared across feedback queries.

    chol[k] is the Cholesky factor of S_k = P C_k P^H + sigma2 I, logdet[k]
    its log-determinant, and gain[k] = C_k P^H S_k^{-1}, the component's
    conditional-mean filter.  Building costs one n x n factorization per
    component; afterwards each query is O(K n_p^2).
    """

    pilot: object
    sigma2: float
    chol: np.ndarray
    logdet: np.ndarray
    gain: np.ndarray


class GmmModel:
    """Fitted mixture: weights, spectra, and the dictionary behind them."""

    def __init__(self, weights, spectra, dictionary, eps_floor):
        weights = np.asarray(weights, dtype=np.float64)
        spectra = np.asarray(spectra, dtype=np.float64)
        k = weights.shape[0]
        if k < 1 or (k & (k - 1)) != 0:
            raise ValueError("component count must be a power of two")
        if spectra.shape != (k, dictionary.spectrum_size):
            raise ValueError("spectra shape does not match dictionary")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-8:
            raise ValueError("weights must be a probability vector")
        if np.any(spectra <= 0):
            raise ValueError("spectra must be positive (floored)")
        self.weights = weights / weights.sum()
        self.spectra = spectra
        self.dictionary = dictionary
        self.eps_floor = float(eps_floor)
        self.fit_history = []
        self._covariances = None
        self._rows = None
        self._csi_chol = None
        self._obs_caches = []

    @property
    def n_components(self):
        return self.weights.shape[0]

    @property
    def bits(self):
        return int(round(np.log2(self.n_components)))

    @property
    def geometry(self):
        return self.dictionary.geometry

    def covariances(self):
        """Realized component covariances, (K, n, n), cached."""
        if self._covariances is None:
            self._covariances = np.stack(
                [self.dictionary.realize(q) for q in self.spectra])
        return self._covariances

    def covariance_rows(self):
        """First rows of the component covariances, (K, n), cached."""
        if self._rows is None:
            self._rows = np.stack(
                [self.dictionary.first_row(q) for q in self.spectra])
        return self._rows

    def _csi_factors(self):
        if self._csi_chol is None:
            covs = self.covariances()
            chol = np.stack([np.linalg.cholesky(c) for c in covs])
            logdet = 2.0 * np.sum(
                np.log(np.real(np.diagonal(chol, axis1=1, axis2=2))), axis=1)
            self._csi_chol = (chol, logdet)
        return self._csi_chol

    def observation_cache(self, pilot, sigma2):
        """Factor cache for one (pilot, noise variance) pair, memoized.

        Keyed on pilot identity and the exact sigma2 value; the pilot
        object is retained so the key stays valid.
        """
        for entry in self._obs_caches:
            if entry.pilot is pilot and entry.sigma2 == sigma2:
                return entry
        if sigma2 < 0:
            raise ValueError("noise variance must be nonnegative")
        p = pilot.matrix
        covs = self.covariances()
        n_p = p.shape[0]
        k = self.n_components
        chol = np.empty((k, n_p, n_p), dtype=np.complex128)
        logdet = np.empty(k)
        gain = np.empty((k, self.geometry.n, n_p), dtype=np.complex128)
        eye = np.eye(n_p)
        for i, cov in enumerate(covs):
            pc = p @ cov
            s = pc @ p.conj().T + sigma2 * eye
            s = 0.5 * (s + s.conj().T)
            chol[i] = np.linalg.cholesky(s)
            logdet[i] = 2.0 * np.sum(np.log(np.real(np.diag(chol[i]))))
            gain[i] = scipy.linalg.cho_solve((chol[i], True), pc).conj().T
        entry = ObservationFactorCache(pilot=pilot, sigma2=float(sigma2),
                                       chol=chol, logdet=logdet, gain=gain)
        self._obs_caches.append(entry)
        return entry


def _log_posteriors(weights, chol, logdet, vecs):
    """Unnormalized log p(k | v) for stacked vectors, shape (m, K)."""
    vecs = np.atleast_2d(vecs)
    m = vecs.shape[0]
    k = weights.shape[0]
    out = np.empty((m, k))
    rhs = vecs.T.astype(np.complex128, copy=False)
    for i in range(k):
        x = scipy.linalg.solve_triangular(chol[i], rhs, lower=True)
        quad = np.sum(np.abs(x) ** 2, axis=0)
        out[:, i] = np.log(weights[i]) - logdet[i] - quad
    return out


def responsibilities_obs(model, pilot, sigma2, y):
    """p(k | y) under y = P h + w.  y may be (n_p,) or a stack (m, n_p)."""
    cache = model.observation_cache(pilot, sigma2)
    logp = _log_posteriors(model.weights, cache.chol, cache.logdet, y)
    probs = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    return probs[0] if np.ndim(y) == 1 else probs


def responsibilities_csi(model, h):
    """p(k | h) under perfect channel knowledge."""
    chol, logdet = model._csi_factors()
    logp = _log_posteriors(model.weights, chol, logdet, h)
    probs = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    return probs[0] if np.ndim(h) == 1 else probs


def feedback_index_obs(model, pilot, sigma2, y):
    """B-bit feedback: index of the most likely component given y.

    Ties resolve to the smallest index.
    """
    cache = model.observation_cache(pilot, sigma2)
    logp = _log_posteriors(model.weights, cache.chol, cache.logdet, y)
    idx = np.argmax(logp, axis=1)
    return int(idx[0]) if np.ndim(y) == 1 else idx


def feedback_index_csi(model, h):
    chol, logdet = model._csi_factors()
    logp = _log_posteriors(model.weights, chol, logdet, h)
    idx = np.argmax(logp, axis=1)
    return int(idx[0]) if np.ndim(h) == 1 else idx


def gmm_channel_estimate(model, pilot, sigma2, y):
    """Conditional-mean channel estimate under the mixture prior.

    h_hat = sum_k p(k | y) C_k P^H S_k^{-1} y; the mixture of per-component
    linear MMSE filters.  Accepts a single y or a stack (m, n_p).
    """
    cache = model.observation_cache(pilot, sigma2)
    probs = responsibilities_obs(model, pilot, sigma2, y)
    y2 = np.atleast_2d(y)
    probs2 = np.atleast_2d(probs)
    # per-component filtered estimates, (K, m, n)
    filtered = np.einsum("knp,mp->kmn", cache.gain, y2)
    est = np.einsum("mk,kmn->mn", probs2, filtered)
    return est[0] if np.ndim(y) == 1 else est


def _component_logdensities(spectra, dictionary, channels):
    """Log CN(h; 0, C_k) for all samples and components, (m, K)."""
    m, n = channels.shape
    k = spectra.shape[0]
    out = np.empty((m, k))
    rhs = channels.T.astype(np.complex128, copy=False)
    const = n * np.log(np.pi)
    for i in range(k):
        cov = dictionary.realize(spectra[i])
        chol = np.linalg.cholesky(cov)
        logdet = 2.0 * np.sum(np.log(np.real(np.diag(chol))))
        x = scipy.linalg.solve_triangular(chol, rhs, lower=True)
        quad = np.sum(np.abs(x) ** 2, axis=0)
        out[:, i] = -(const + logdet + quad)
    return out


def _latent_update(spectra_k, dictionary, channels, resp_k, q_dense):
    """Exact M-step for one component via the latent circulant process.

    Writing h = Q^H x with x ~ CN(0, diag(q)) (the 2n-periodic extension),
    the conditional second moments E[|x_a|^2 | h] are available in closed
    form and their responsibility-weighted average is the new spectrum.
    Monotone in log-likelihood by construction.
    """
    q = spectra_k
    cov = dictionary.realize(q)
    chol = np.linalg.cholesky(cov)
    t = scipy.linalg.cho_solve((chol, True), channels.T)  # C^{-1} h, (n, m)
    s = dictionary.transform(t.T)  # Q C^{-1} h, (m, S)
    mean_sq = (q[None, :] ** 2) * np.abs(s) ** 2
    z = scipy.linalg.cho_solve((chol, True), q_dense.conj().T)  # (n, S)
    diag = np.real(np.einsum("an,na->a", q_dense, z))
    var = q - q ** 2 * diag
    r = resp_k.sum()
    return (resp_k @ mean_sq) / r + np.clip(var, 0.0, None)


def fit_em(channels, n_components, dictionary, rng, max_iters=EM_MAX_ITERS,
           tol=EM_TOL, m_step="latent", init_model=None):
    """Fit the mixture by EM over spectra and weights.

    channels: (m, n) complex dataset.  n_components must be a power of
    two.  m_step selects the spectrum update: "latent" treats channels as
    windowed circulant processes and is monotone in log-likelihood;
    "projection" reweights the raw DFT periodogram, which is cheaper but
    only approximate.  Stops when the relative log-likelihood change
    drops below tol.  Returns a GmmModel whose fit_history lists the
    per-iteration log-likelihood.
    """
    channels = np.asarray(channels, dtype=np.complex128)
    m, n = channels.shape
    k = int(n_components)
    if k < 1 or (k & (k - 1)) != 0:
        raise ValueError("component count must be a power of two")
    if m < k:
        raise ValueError("need at least one sample per component")
    if m_step not in ("latent", "projection"):
        raise ValueError("unknown m_step %r" % m_step)

    proj = np.abs(dictionary.transform(channels)) ** 2  # (m, S)
    q_global = dictionary.scale * proj.mean(axis=0)
    eps = FLOOR_RATIO * q_global.mean()

    if init_model is not None:
        if init_model.n_components != k:
            raise ValueError("resume model has a different component count")
        if init_model.dictionary.spectrum_size != dictionary.spectrum_size:
            raise ValueError("resume model has a different dictionary")
        spectra = init_model.spectra.copy()
        weights = init_model.weights.copy()
        eps = init_model.eps_floor
    else:
        jitter = rng.uniform(-0.5, 0.5, size=(k, dictionary.spectrum_size))
        spectra = np.maximum(q_global[None, :] * (1.0 + jitter), eps)
        weights = np.full(k, 1.0 / k)

    q_dense = dictionary.dense_matrix() if m_step == "latent" else None
    history = []
    for it in range(max_iters):
        logdens = _component_logdensities(spectra, dictionary, channels)
        joint = logdens + np.log(weights)[None, :]
        norm = logsumexp(joint, axis=1)
        loglik = float(norm.sum())
        resp = np.exp(joint - norm[:, None])
        history.append(loglik)
        log.debug("em iter %d loglik %.6f", it, loglik)
        if len(history) > 1:
            prev = history[-2]
            if abs(loglik - prev) <= tol * abs(prev):
                break

        r_sum = resp.sum(axis=0)
        if m_step == "projection":
            new = dictionary.scale * (resp.T @ proj) / r_sum[:, None]
        else:
            new = np.stack([
                _latent_update(spectra[i], dictionary, channels, resp[:, i],
                               q_dense)
                for i in range(k)])
        spectra = np.maximum(new, eps)
        weights = r_sum / m

    model = GmmModel(weights=weights, spectra=spectra, dictionary=dictionary,
                     eps_floor=eps)
    model.fit_history = history
    return model


def save_gmm(path, model, seed=None):
    base = str(path)
    for ext in (".bin", ".json"):
        if base.endswith(ext):
            base = base[: -len(ext)]
    serde.write_real(base + ".bin", [model.weights, model.spectra])
    serde.write_sidecar(base + ".json", {
        "kind": "gmm",
        "geometry": geometry_to_dict(model.geometry),
        "n_components": model.n_components,
        "bits": model.bits,
        "spectrum_size": model.dictionary.spectrum_size,
        "eps_floor": model.eps_floor,
        "seed": seed,
    })
    return base


def load_gmm(path):
    base = str(path)
    for ext in (".bin", ".json"):
        if base.endswith(ext):
            base = base[: -len(ext)]
    meta = serde.read_sidecar(base + ".json")
    if meta.get("kind") != "gmm":
        raise ValueError("not a mixture model file: %s" % path)
    geometry = geometry_from_dict(meta["geometry"])
    dictionary = SpectralDictionary(geometry)
    if dictionary.spectrum_size != meta["spectrum_size"]:
        raise ValueError("spectrum size does not match geometry")
    k = meta["n_components"]
    if k != 2 ** meta["bits"]:
        raise ValueError("component count must equal 2^bits")
    weights, spectra = serde.read_real(
        base + ".bin", [(k,), (k, dictionary.spectrum_size)])
    return GmmModel(weights=weights, spectra=spectra, dictionary=dictionary,
                    eps_floor=meta["eps_floor"])
