import numpy as np
import pytest

from statprec import baselines as bl
from statprec import pilots
from statprec.channels import ArrayGeometry, cluster_covariance, \
    ClusterParameters
from statprec.gnn_precoder import ops

from conftest import random_channels


def test_iwmmse_single_user_is_matched_filter(rng):
    h = random_channels(rng, 1, 8)
    v = bl.iwmmse(h, power=1.0, sigma2=0.1, n_iters=200)
    mrt = (h[0].conj() / np.linalg.norm(h[0]))[:, None]
    rate_v = ops.sum_rate(h, v, 0.1)
    rate_mrt = ops.sum_rate(h, mrt, 0.1)
    assert abs(rate_v - rate_mrt) < 1e-6


def test_iwmmse_power_and_monotone_trace(rng):
    h = random_channels(rng, 3, 8)
    v, trace = bl.iwmmse(h, 1.0, 0.2, n_iters=80, return_trace=True)
    assert abs(np.sum(np.abs(v) ** 2) - 1.0) < 1e-10
    for a, b in zip(trace, trace[1:]):
        assert b >= a - 1e-9 * max(1.0, abs(a))


def test_iwmmse_orthogonal_users_no_interference():
    h = np.zeros((2, 4), dtype=complex)
    h[0, 0] = 2.0
    h[1, 1] = 1.5
    v = bl.iwmmse(h, 1.0, 0.1, n_iters=100)
    cross = abs(h[0] @ v[:, 1]) + abs(h[1] @ v[:, 0])
    assert cross < 1e-8


def test_swmmse_rank_one_aligns_with_eigenbeam(rng):
    n = 8
    a = random_channels(rng, 1, n)[0]
    a *= np.sqrt(n) / np.linalg.norm(a)
    cov = np.outer(a, a.conj())[None, :, :]
    v = bl.swmmse(cov, 1.0, 0.1, n_iters=60, rng=np.random.default_rng(3))
    beam = v[:, 0] / np.linalg.norm(v[:, 0])
    align = abs(np.vdot(a / np.linalg.norm(a), beam.conj()))
    assert align > 0.999
    assert np.sum(np.abs(v) ** 2) <= 1.0 + 1e-10


def test_swmmse_deterministic_under_seed(rng):
    g = ArrayGeometry.ula(8)
    covs = np.stack([
        cluster_covariance(g, ClusterParameters(azimuth=az,
                                                spread_az=np.deg2rad(3.0)),
                           grid_size=180)
        for az in (-0.4, 0.2, 0.9)])
    v1 = bl.swmmse(covs, 1.0, 0.1, 50, np.random.default_rng(11))
    v2 = bl.swmmse(covs, 1.0, 0.1, 50, np.random.default_rng(11))
    assert np.array_equal(v1, v2)


def test_swmmse_snapshots(rng):
    g = ArrayGeometry.ula(6)
    covs = np.stack([
        cluster_covariance(g, ClusterParameters(azimuth=az,
                                                spread_az=np.deg2rad(3.0)),
                           grid_size=180)
        for az in (-0.5, 0.5)])
    v, snaps = bl.swmmse(covs, 1.0, 0.1, 30, np.random.default_rng(5),
                         snapshots=(10, 20, 30))
    assert sorted(snaps) == [10, 20, 30]
    assert np.array_equal(snaps[30], v)
    for key in snaps:
        assert np.sum(np.abs(snaps[key]) ** 2) <= 1.0 + 1e-10


def test_ls_estimate_consistency(rng):
    g = ArrayGeometry.ula(8)
    pm = pilots.build_pilot_matrix(g, 4, 1.0)
    h = random_channels(rng, 5, 8)
    y = h @ pm.matrix.T
    est = bl.ls_estimate(pm, y)
    assert est.shape == (5, 8)
    # the estimate reproduces the observation exactly
    assert np.max(np.abs(est @ pm.matrix.T - y)) < 1e-10

    full = pilots.build_pilot_matrix(g, 8, 1.0)
    y8 = h @ full.matrix.T
    est8 = bl.ls_estimate(full, y8)
    assert np.max(np.abs(est8 - h)) < 1e-10


def test_dft_codebook_ula():
    g = ArrayGeometry.ula(8)
    cb = bl.build_dft_codebook(g, 3)
    assert cb.shape == (8, 8)
    assert np.max(np.abs(np.linalg.norm(cb, axis=0) - 1.0)) < 1e-12
    # 2^3 = 8 = N makes the codebook unitary
    assert np.max(np.abs(cb.conj().T @ cb - np.eye(8))) < 1e-10
    wide = bl.build_dft_codebook(g, 5)
    assert wide.shape == (8, 32)


def test_dft_codebook_ura_bit_split():
    g = ArrayGeometry.ura(2, 4)
    cb = bl.build_dft_codebook(g, 3)
    assert cb.shape == (8, 8)
    assert np.max(np.abs(np.linalg.norm(cb, axis=0) - 1.0)) < 1e-12


def test_dft_feedback_picks_best_match(rng):
    g = ArrayGeometry.ula(8)
    cb = bl.build_dft_codebook(g, 4)
    k = 11
    est = 3.0 * cb[:, k]
    assert bl.dft_feedback(est, cb) == k
    noisy = est + 0.01 * random_channels(rng, 1, 8)[0]
    assert bl.dft_feedback(noisy, cb) == k


def test_solve_precoder_power(rng):
    # interference-coupled system drives the solver to the power budget
    j, n = 3, 6
    h = random_channels(rng, j, n)
    v = bl.iwmmse(h, 2.0, 0.05, n_iters=50)
    assert abs(np.sum(np.abs(v) ** 2) - 2.0) < 1e-8
