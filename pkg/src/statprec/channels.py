"""Synthetic channel model.

Channels are conditionally Gaussian: a user draws cluster parameters
(angle center and angular spread), those define a spatial covariance
through a Laplacian power density over a discrete angle grid, and the
channel is a zero-mean circularly-symmetric Gaussian draw from that
covariance.  Covariances are trace-normalized to the antenna count, so
E[||h||^2] = N by construction.

Uniform linear arrays use half-wavelength spacing.  Uniform rectangular
arrays are the Kronecker product of a vertical array (one-wavelength
spacing, driven by elevation) and a horizontal one (half-wavelength,
driven by azimuth), with antenna index n = v * n_h + h.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg

from . import serde

DEFAULT_GRID_SIZE = 720
DEFAULT_SPREAD = np.deg2rad(2.0)

# default ranges for drawing cluster centers
AZIMUTH_RANGE = (np.deg2rad(-60.0), np.deg2rad(60.0))
ELEVATION_RANGE = (np.deg2rad(-15.0), np.deg2rad(15.0))


@dataclass(frozen=True)
class ArrayGeometry:
    """Antenna array layout.

    kind is "ula" or "ura".  For a URA, n = n_v * n_h and the flat
    antenna index is n = v * n_h + h (vertical-major).
    """

    kind: str
    n: int
    n_v: int = 1
    n_h: int = 0

    def __post_init__(self):
        if self.kind not in ("ula", "ura"):
            raise ValueError("geometry kind must be 'ula' or 'ura'")
        if self.n < 1:
            raise ValueError("antenna count must be positive")
        if self.kind == "ula":
            object.__setattr__(self, "n_v", 1)
            object.__setattr__(self, "n_h", self.n)
        else:
            if self.n_v < 1 or self.n_h < 1 or self.n_v * self.n_h != self.n:
                raise ValueError("URA requires n == n_v * n_h")

    @classmethod
    def ula(cls, n):
        return cls("ula", n)

    @classmethod
    def ura(cls, n_v, n_h):
        return cls("ura", n_v * n_h, n_v, n_h)


def geometry_to_dict(geometry):
    return {"kind": geometry.kind, "n": geometry.n,
            "n_v": geometry.n_v, "n_h": geometry.n_h}


def geometry_from_dict(d):
    if d["kind"] == "ula":
        return ArrayGeometry.ula(d["n"])
    return ArrayGeometry.ura(d["n_v"], d["n_h"])


@dataclass(frozen=True)
class ClusterParameters:
    """One propagation cluster: angle centers, spreads, relative power.

    Angles are radians in [-pi/2, pi/2).  Elevation fields matter only
    for URAs.  Power weights a cluster inside a multi-cluster profile;
    the final covariance is trace-normalized regardless.
    """

    azimuth: float
    spread_az: float = DEFAULT_SPREAD
    elevation: float = 0.0
    spread_el: float = DEFAULT_SPREAD
    power: float = 1.0

    def __post_init__(self):
        for angle in (self.azimuth, self.elevation):
            if not (-np.pi / 2 <= angle < np.pi / 2):
                raise ValueError("cluster angle outside [-pi/2, pi/2)")
        if self.spread_az <= 0 or self.spread_el <= 0:
            raise ValueError("angular spread must be positive")
        if self.power <= 0:
            raise ValueError("cluster power must be positive")


@dataclass
class Scenario:
    """One downlink drop: per-user channels plus the generating statistics.

    channels has shape (n_users, n); genie_rows holds the first row of
    each user's true covariance, from which the full matrix is
    recoverable (see covariance_from_first_row).
    """

    channels: np.ndarray
    genie_rows: np.ndarray

    @property
    def n_users(self):
        return self.channels.shape[0]

    @property
    def n(self):
        return self.channels.shape[1]


@lru_cache(maxsize=32)
def _angle_grid(n, spacing, grid_size):
    """Angle grid over [-pi/2, pi/2) and the matching steering matrix."""
    theta = -np.pi / 2 + np.pi * np.arange(grid_size) / grid_size
    ant = np.arange(n)[:, None]
    steer = np.exp(2j * np.pi * spacing * ant * np.sin(theta)[None, :])
    return theta, steer


def _laplacian_weights(theta, center, spread):
    # subtract the minimum distance before exponentiating so tiny spreads
    # stay finite
    dist = np.abs(theta - center)
    w = np.exp(-np.sqrt(2.0) * (dist - dist.min()) / spread)
    return w / w.sum()


def _line_covariance(n, spacing, center, spread, grid_size):
    theta, steer = _angle_grid(n, spacing, grid_size)
    w = _laplacian_weights(theta, center, spread)
    c = (steer * w[None, :]) @ steer.conj().T
    return 0.5 * (c + c.conj().T)


def cluster_covariance(geometry, params, grid_size=DEFAULT_GRID_SIZE):
    """Spatial covariance for one cluster profile, trace-normalized to n.

    params is a ClusterParameters or a sequence of them; with several
    clusters the per-cluster covariances are mixed by their power fields.
    """
    if grid_size < 64:
        raise ValueError("angle grid too coarse (need >= 64 points)")
    if isinstance(params, ClusterParameters):
        params = (params,)
    if not params:
        raise ValueError("need at least one cluster")

    cov = np.zeros((geometry.n, geometry.n), dtype=np.complex128)
    for p in params:
        if geometry.kind == "ula":
            c = _line_covariance(geometry.n, 0.5, p.azimuth, p.spread_az,
                                 grid_size)
        else:
            c_v = _line_covariance(geometry.n_v, 1.0, p.elevation,
                                   p.spread_el, grid_size)
            c_h = _line_covariance(geometry.n_h, 0.5, p.azimuth,
                                   p.spread_az, grid_size)
            c = np.kron(c_v, c_h)
        cov += p.power * c
    return cov * (geometry.n / np.real(np.trace(cov)))


def covariance_factor(cov):
    """A factor L with L L^H = cov, for sampling.

    Uses Cholesky when the matrix is positive definite and an
    eigendecomposition otherwise.  Raises ValueError if an eigenvalue is
    below -1e-8 times the spectral norm.
    """
    cov = np.asarray(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        scale = max(np.abs(w).max(), np.finfo(float).tiny)
        if w.min() < -1e-8 * scale:
            raise ValueError("covariance is not positive semidefinite")
        return v * np.sqrt(np.clip(w, 0.0, None))[None, :]


def sample_channel(cov, rng, size=None):
    """Draw h ~ CN(0, cov).  With size, returns (size, n) stacked draws."""
    factor = covariance_factor(cov)
    n = factor.shape[0]
    count = 1 if size is None else int(size)
    z = (rng.standard_normal((n, count))
         + 1j * rng.standard_normal((n, count))) / np.sqrt(2.0)
    h = (factor @ z).T
    return h[0] if size is None else h


def default_cluster_sampler(geometry, rng, spread=DEFAULT_SPREAD):
    """One cluster with uniformly drawn azimuth (and elevation for URAs)."""
    azimuth = rng.uniform(*AZIMUTH_RANGE)
    elevation = rng.uniform(*ELEVATION_RANGE) if geometry.kind == "ura" else 0.0
    return ClusterParameters(azimuth=azimuth, spread_az=spread,
                             elevation=elevation, spread_el=spread)


def generate_dataset(geometry, count, rng, cluster_sampler=None,
                     grid_size=DEFAULT_GRID_SIZE):
    """Draw count independent channels, one fresh cluster profile each."""
    if count < 1:
        raise ValueError("dataset size must be positive")
    sampler = cluster_sampler or default_cluster_sampler
    out = np.empty((count, geometry.n), dtype=np.complex128)
    for m in range(count):
        params = sampler(geometry, rng)
        cov = cluster_covariance(geometry, params, grid_size)
        out[m] = sample_channel(cov, rng)
    return out


def generate_scenarios(geometry, count, n_users, rng, cluster_sampler=None,
                       grid_size=DEFAULT_GRID_SIZE):
    """Draw count multi-user drops, keeping each user's true covariance row."""
    if count < 1 or n_users < 1:
        raise ValueError("scenario count and user count must be positive")
    sampler = cluster_sampler or default_cluster_sampler
    scenarios = []
    for _ in range(count):
        channels = np.empty((n_users, geometry.n), dtype=np.complex128)
        rows = np.empty((n_users, geometry.n), dtype=np.complex128)
        for j in range(n_users):
            params = sampler(geometry, rng)
            cov = cluster_covariance(geometry, params, grid_size)
            channels[j] = sample_channel(cov, rng)
            rows[j] = cov[0]
        scenarios.append(Scenario(channels=channels, genie_rows=rows))
    return scenarios


def covariance_from_first_row(geometry, row):
    """Rebuild a full covariance from its first row.

    ULA covariances are Hermitian Toeplitz, so the first row determines
    everything.  URA covariances handled here are Kronecker products of
    per-dimension Toeplitz factors, which the first row also pins down
    (split along the axes, using that the leading entry is real
    positive).
    """
    row = np.asarray(row, dtype=np.complex128)
    if geometry.kind == "ula":
        return scipy.linalg.toeplitz(np.conj(row), row)
    grid = row.reshape(geometry.n_v, geometry.n_h)
    lead = np.real(grid[0, 0])
    if lead <= 0:
        raise ValueError("first covariance entry must be real positive")
    row_v = grid[:, 0]
    row_h = grid[0, :] / lead
    c_v = scipy.linalg.toeplitz(np.conj(row_v), row_v)
    c_h = scipy.linalg.toeplitz(np.conj(row_h), row_h)
    return np.kron(c_v, c_h)


def normalize_dataset(channels):
    """Rescale channels so the empirical mean of ||h||^2 equals n.

    Returns (scaled, scale).  A dataset whose power was tripled
    beforehand comes back with scale 1/sqrt(3) applied, i.e. the factor
    undoes the inflation.
    """
    channels = np.asarray(channels)
    mean_power = np.mean(np.sum(np.abs(channels) ** 2, axis=-1))
    if mean_power <= 0:
        raise ValueError("cannot normalize an all-zero dataset")
    scale = np.sqrt(channels.shape[-1] / mean_power)
    return channels * scale, scale


def normalize_scenarios(scenarios):
    """Apply one common power normalization across a scenario set.

    Channels scale by s, covariance rows by s^2, so the generative
    relation between them is preserved.  Returns (scenarios, scale).
    """
    stacked = np.concatenate([s.channels for s in scenarios], axis=0)
    _, scale = normalize_dataset(stacked)
    return scale_scenarios(scenarios, scale), scale


def scale_scenarios(scenarios, scale):
    """Rescale a scenario set by a known factor (channels s, rows s^2)."""
    return [Scenario(channels=s.channels * scale,
                     genie_rows=s.genie_rows * scale ** 2)
            for s in scenarios]


def _base(path):
    path = str(path)
    for ext in (".bin", ".json"):
        if path.endswith(ext):
            return path[: -len(ext)]
    return path


def save_channel_dataset(path, channels, geometry, seed=None, scale=1.0):
    base = _base(path)
    channels = np.asarray(channels, dtype=np.complex128)
    serde.write_complex(base + ".bin", [channels])
    serde.write_sidecar(base + ".json", {
        "kind": "channels",
        "geometry": geometry_to_dict(geometry),
        "count": int(channels.shape[0]),
        "seed": seed,
        "scale": float(scale),
    })
    return base


def load_channel_dataset(path):
    base = _base(path)
    meta = serde.read_sidecar(base + ".json")
    if meta.get("kind") != "channels":
        raise ValueError("not a channel dataset: %s" % path)
    geometry = geometry_from_dict(meta["geometry"])
    (channels,) = serde.read_complex(
        base + ".bin", [(meta["count"], geometry.n)])
    return channels, geometry, meta


def save_scenario_set(path, scenarios, geometry, seed=None, scale=1.0):
    """Write scenarios as (count, n_users, 2, n): channel then covariance row."""
    base = _base(path)
    count = len(scenarios)
    n_users = scenarios[0].n_users
    block = np.empty((count, n_users, 2, geometry.n), dtype=np.complex128)
    for d, s in enumerate(scenarios):
        if s.n_users != n_users:
            raise ValueError("scenario sets must share the user count")
        block[d, :, 0] = s.channels
        block[d, :, 1] = s.genie_rows
    serde.write_complex(base + ".bin", [block])
    serde.write_sidecar(base + ".json", {
        "kind": "scenarios",
        "geometry": geometry_to_dict(geometry),
        "count": count,
        "n_users": n_users,
        "seed": seed,
        "scale": float(scale),
    })
    return base


def load_scenario_set(path):
    base = _base(path)
    meta = serde.read_sidecar(base + ".json")
    if meta.get("kind") != "scenarios":
        raise ValueError("not a scenario set: %s" % path)
    geometry = geometry_from_dict(meta["geometry"])
    shape = (meta["count"], meta["n_users"], 2, geometry.n)
    (block,) = serde.read_complex(base + ".bin", [shape])
    scenarios = [Scenario(channels=block[d, :, 0].copy(),
                          genie_rows=block[d, :, 1].copy())
                 for d in range(meta["count"])]
    return scenarios, geometry, meta
