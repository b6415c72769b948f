import numpy as np
import pytest

from statprec import pilots
from statprec.channels import ArrayGeometry

from conftest import random_channels


def test_rows_orthogonal_ula():
    g = ArrayGeometry.ula(16)
    for n_p in (1, 4, 8, 16):
        pm = pilots.build_pilot_matrix(g, n_p, power=1.0)
        gram = pm.matrix @ pm.matrix.conj().T
        assert np.max(np.abs(gram - np.eye(n_p))) < 1e-10


def test_rows_orthogonal_with_power():
    g = ArrayGeometry.ula(8)
    pm = pilots.build_pilot_matrix(g, 4, power=2.5)
    gram = pm.matrix @ pm.matrix.conj().T
    assert np.max(np.abs(gram - 2.5 * np.eye(4))) < 1e-10


def test_square_pilot_is_scaled_unitary():
    g = ArrayGeometry.ula(8)
    pm = pilots.build_pilot_matrix(g, 8, power=1.0)
    prod = pm.matrix.conj().T @ pm.matrix
    assert np.max(np.abs(prod - np.eye(8))) < 1e-10


def test_ura_rows_orthogonal():
    g = ArrayGeometry.ura(2, 4)
    pm = pilots.build_pilot_matrix(g, 4, power=1.0)
    gram = pm.matrix @ pm.matrix.conj().T
    assert np.max(np.abs(gram - np.eye(4))) < 1e-10


def test_selection_variants_differ():
    g = ArrayGeometry.ula(16)
    low = pilots.build_pilot_matrix(g, 4, 1.0, "lowest")
    eq = pilots.build_pilot_matrix(g, 4, 1.0, "equispaced")
    assert np.max(np.abs(low.matrix - eq.matrix)) > 1e-3
    gram = eq.matrix @ eq.matrix.conj().T
    assert np.max(np.abs(gram - np.eye(4))) < 1e-10


def test_observe_shapes_and_noise(rng):
    g = ArrayGeometry.ula(8)
    pm = pilots.build_pilot_matrix(g, 4, 1.0)
    h = random_channels(rng, 1, 8)[0]
    y0 = pilots.observe(pm, h, 0.0, rng)
    assert y0.shape == (4,)
    assert np.max(np.abs(y0 - pm.matrix @ h)) < 1e-14

    ys = pilots.observe(pm, h, 0.5, rng, size=20000)
    noise = ys - pm.matrix @ h
    assert abs(np.mean(np.abs(noise) ** 2) - 0.5) < 0.02


def test_invalid_inputs():
    g = ArrayGeometry.ula(8)
    with pytest.raises(ValueError):
        pilots.build_pilot_matrix(g, 0, 1.0)
    with pytest.raises(ValueError):
        pilots.build_pilot_matrix(g, 9, 1.0)
    with pytest.raises(ValueError):
        pilots.build_pilot_matrix(g, 4, -1.0)
    pm = pilots.build_pilot_matrix(g, 4, 1.0)
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        pilots.observe(pm, np.ones(8, dtype=complex), -0.1, rng)
