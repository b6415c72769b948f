"""Pilot matrices and noisy channel observations.

Training uses n_p <= n pilot symbols; the receive vector is y = P h + w
with w ~ CN(0, sigma^2 I).  P takes rows from the unitary DFT matching
the array layout, each row rescaled so its squared norm equals the
transmit power budget.  With n_p < n the observation is a compressed,
noisy look at the channel.
"""

from dataclasses import dataclass

import numpy as np

from .channels import ArrayGeometry


@dataclass(frozen=True)
class PilotMatrix:
    """Pilot block P (n_p x n) with its power budget and geometry."""

    matrix: np.ndarray
    power: float
    geometry: ArrayGeometry

    @property
    def n_pilots(self):
        return self.matrix.shape[0]

    @property
    def n(self):
        return self.matrix.shape[1]


def _unitary_dft(n):
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def _ula_rows(n, n_pilots, selection):
    if selection == "lowest":
        return np.arange(n_pilots)
    if selection == "equispaced":
        return (np.arange(n_pilots) * n) // n_pilots
    raise ValueError("unknown pilot row selection %r" % selection)


def _ura_order(n_v, n_h):
    # diagonal-major: sort 2-D DFT indices by total frequency, then by
    # vertical index, so low spatial frequencies in both dimensions come
    # first
    pairs = [(v + h, v, h) for v in range(n_v) for h in range(n_h)]
    pairs.sort()
    return [(v, h) for _, v, h in pairs]


def build_pilot_matrix(geometry, n_pilots, power=1.0, selection="lowest"):
    """Pilot block from the first n_pilots rows of the array's DFT basis.

    ULA rows come straight off the unitary DFT (lowest frequencies first,
    or equispaced when requested).  URA rows are Kronecker products of
    per-dimension DFT rows in diagonal-major order.  Rows are mutually
    orthogonal with squared norm equal to power.
    """
    if not 1 <= n_pilots <= geometry.n:
        raise ValueError("pilot count must be in [1, n]")
    if power <= 0:
        raise ValueError("pilot power must be positive")

    if geometry.kind == "ula":
        if selection not in ("lowest", "equispaced"):
            raise ValueError("unknown pilot row selection %r" % selection)
        dft = _unitary_dft(geometry.n)
        rows = dft[_ula_rows(geometry.n, n_pilots, selection)]
    else:
        if selection != "lowest":
            raise ValueError("URA pilots support only 'lowest' selection")
        dft_v = _unitary_dft(geometry.n_v)
        dft_h = _unitary_dft(geometry.n_h)
        order = _ura_order(geometry.n_v, geometry.n_h)[:n_pilots]
        rows = np.stack([np.kron(dft_v[v], dft_h[h]) for v, h in order])

    rows = rows * np.sqrt(power)
    return PilotMatrix(matrix=rows, power=float(power), geometry=geometry)


def observe(pilot, h, sigma2, rng, size=None):
    """y = P h + w with w ~ CN(0, sigma2 I).  size stacks repeated looks."""
    if sigma2 < 0:
        raise ValueError("noise variance must be nonnegative")
    y = pilot.matrix @ np.asarray(h)
    shape = (pilot.n_pilots,) if size is None else (int(size), pilot.n_pilots)
    noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return y + np.sqrt(sigma2 / 2.0) * noise
