"""Desk-scale acceptance checks.

Testbed: ULA N=16, J=4, B=4 (K=16 components), n_p in {4, 8}, 400/100/200
train/val/test scenarios, 20000 fitting samples, precoder net with 3
hidden layers of width 64 trained 100 epochs.  Everything runs on CPU
with fixed seeds.  Each criterion below is one test emitting a single
pass/fail line.
"""

import time

import numpy as np
import pytest

from statprec import baselines as bl
from statprec import channels as ch
from statprec import eval_harness as ev
from statprec import gmm_prior as gp
from statprec import pilots
from statprec.gnn_precoder import kernels_np
from statprec.gnn_precoder import model as gm
from statprec.gnn_precoder import ops

from test_gnn_ops import naive_layer_forward


def emit(name, ok, detail):
    line = "criterion %s: %s (%s)" % (name, "PASS" if ok else "FAIL", detail)
    print(line)
    return ok


@pytest.fixture(scope="session")
def desk():
    """Build every desk-scale artifact once: data, mixture, two nets."""
    t0 = time.perf_counter()
    cfg = ev.SystemConfig(
        n=16, n_users=4, n_pilots=4, bits=4,
        snr_grid_db=(0.0, 5.0, 10.0, 15.0, 20.0), j_list=(4,),
        d_train=400, d_val=100, d_test=200, m_gmm=20000, seed=42,
        gnn_hidden_layers=3, gnn_hidden_dim=64, epochs=100,
        batch_size=4, lr=1.4e-2, lr_schedule="cosine", warmup_epochs=15,
        gnn_alpha=0.125, gnn_restarts=12,
        gnn_restart_lrs=(1.4e-2, 1.6e-2),
        swmmse_iters=300, iwmmse_iters=300)

    corpus, scale = ev.generate_corpus(cfg)
    dictionary = gp.SpectralDictionary(cfg.geometry)
    mix = gp.fit_em(corpus, 2 ** cfg.bits, dictionary,
                    ev.derived_rng(cfg.seed, ev._SEED_EM),
                    max_iters=cfg.em_max_iters, tol=cfg.em_tol)

    train_sc = ev.generate_split(cfg, "train", scale)
    val_sc = ev.generate_split(cfg, "val", scale)
    test_sc = ev.generate_split(cfg, "test", scale)

    models = ev.ModelBundle(gmm=mix)
    for mode in ("genie", "gmm"):
        net, history, restart = ev.train_precoder(mode, train_sc, val_sc,
                                                  cfg, models=models)
        models.gnn[mode] = net

    build_seconds = time.perf_counter() - t0
    return {"cfg": cfg, "scale": scale, "mix": mix, "models": models,
            "test": test_sc, "build_seconds": build_seconds,
            "dictionary": dictionary}


@pytest.fixture(scope="session")
def desk_eval_10db(desk):
    """Paired evaluation of all methods at the 10 dB operating point."""
    t0 = time.perf_counter()
    rep = ev.evaluate(list(ev.METHODS), desk["test"], desk["cfg"],
                      models=desk["models"], snr_grid_db=(10.0,))
    means = {r["method"]: r["mean_rate_bits"] for r in rep.rows}
    return means, time.perf_counter() - t0


def test_criterion_1a(desk, desk_eval_10db):
    means, eval_seconds = desk_eval_10db
    total_min = (desk["build_seconds"] + eval_seconds) / 60.0
    gnn = means["gnn-genie"]
    swm = means["swmmse-genie"]
    ok = gnn >= swm * 0.98 and total_min < 45.0
    assert emit("1a", ok,
                "gnn-genie %.4f vs swmmse-genie %.4f at 10 dB, "
                "total %.1f min" % (gnn, swm, total_min))


def test_criterion_1b(desk, desk_eval_10db):
    means, _ = desk_eval_10db
    margin = means["gnn-gmm-y"] - means["swmmse-gmm-y"]
    ok = margin > 0.0
    assert emit("1b", ok,
                "gnn-gmm-y %.4f vs swmmse-gmm-y %.4f, paired margin %+.4f"
                % (means["gnn-gmm-y"], means["swmmse-gmm-y"], margin))


def test_criterion_1c(desk, desk_eval_10db):
    means, _ = desk_eval_10db
    gnn = means["gnn-gmm-y"]
    ls = means["iwmmse-dft-ls"]
    est = means["iwmmse-dft-gmmest"]
    ok = gnn > ls and gnn > est
    assert emit("1c", ok,
                "gnn-gmm-y %.4f vs iwmmse-dft-ls %.4f, iwmmse-dft-gmmest "
                "%.4f at n_p=4" % (gnn, ls, est))


def test_criterion_1d(desk):
    cfg = desk["cfg"]
    worst = np.inf
    detail = []
    for n_p in (4, 8):
        cfg_np = ev.SystemConfig.from_dict(
            dict(cfg.to_dict(), n_pilots=n_p))
        rep = ev.evaluate(["gnn-gmm-h", "gnn-gmm-y"], desk["test"], cfg_np,
                          models=desk["models"])
        by = {(r["method"], r["snr_db"]): r["mean_rate_bits"]
              for r in rep.rows}
        for snr in cfg.snr_grid_db:
            h = by[("gnn-gmm-h", snr)]
            y = by[("gnn-gmm-y", snr)]
            worst = min(worst, h - 0.99 * y)
            detail.append("%gdB/np%d %+.3f" % (snr, n_p, h - y))
    ok = worst >= 0.0
    assert emit("1d", ok, "h-vs-y gaps " + " ".join(detail))


def test_criterion_1e(desk):
    sweep = ev.iteration_sweep("swmmse-gmm-y", desk["test"], desk["cfg"],
                               desk["models"], 10.0, (20, 100, 300))
    r20, r100, r300 = sweep[20], sweep[100], sweep[300]
    ok = r20 <= r100 * 1.01 and r100 <= r300 * 1.01
    assert emit("1e", ok,
                "swmmse-gmm-y rate at I_max 20/100/300 = "
                "%.4f / %.4f / %.4f" % (r20, r100, r300))


def test_criterion_2():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    model = gm.init_gnn(4, 2, 4, rng)  # three layers, width 4
    dims = [lay.s.shape for lay in model.layers]
    assert dims == [(4, 2), (4, 4), (2, 4)]
    rows = (rng.standard_normal((2, 2, 4))
            + 1j * rng.standard_normal((2, 2, 4)))
    chans = (rng.standard_normal((2, 2, 4))
             + 1j * rng.standard_normal((2, 2, 4)))
    sigma2 = rng.uniform(0.1, 1.0, 2)
    step = 1e-5

    _, grads, _ = ops.gradient(model, rows, chans, sigma2)
    checked = 0
    failures = 0
    for name, param in model.param_items():
        g = grads[name]
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            ref = g[idx]
            if abs(ref) <= 1e-8:
                continue
            orig = param[idx]
            param[idx] = orig + step
            up, _, _ = ops.gradient(model, rows, chans, sigma2)
            param[idx] = orig - step
            dn, _, _ = ops.gradient(model, rows, chans, sigma2)
            param[idx] = orig
            fd = (up - dn) / (2.0 * step)
            checked += 1
            if abs(fd - ref) / abs(ref) >= 1e-4:
                failures += 1
    elapsed = time.perf_counter() - t0
    frac = 1.0 - failures / max(checked, 1)
    ok = frac >= 0.99 and checked > 100 and elapsed < 60.0
    assert emit("2", ok,
                "%d/%d finite-difference coords within 1e-4 (%.2f%%), "
                "%.1f s" % (checked - failures, checked, 100 * frac,
                            elapsed))


def test_criterion_3(desk):
    t0 = time.perf_counter()
    lls = desk["mix"].fit_history
    drops = sum(1 for a, b in zip(lls, lls[1:]) if b < a - 1e-8 * abs(a))

    rng = np.random.default_rng(17)
    white = (rng.standard_normal((20000, 16))
             + 1j * rng.standard_normal((20000, 16))) / np.sqrt(2.0)
    single = gp.fit_em(white, 1, desk["dictionary"],
                       np.random.default_rng(18), max_iters=100)
    cov = single.covariances()[0]
    rel = np.linalg.norm(cov - np.eye(16)) / np.linalg.norm(np.eye(16))
    elapsed = time.perf_counter() - t0
    ok = drops == 0 and rel < 0.05 and elapsed < 300.0
    assert emit("3", ok,
                "%d loglik drops over %d desk iters, identity recovery "
                "%.3f rel, %.1f s" % (drops, len(lls), rel, elapsed))


def test_criterion_4(desk):
    t0 = time.perf_counter()
    rng = np.random.default_rng(23)
    trials = 1000
    cfg = desk["cfg"]
    net = desk["models"].gnn["genie"]

    # realized covariances: Hermitian, PSD, (block-)Toeplitz
    worst_struct = 0.0
    for g in (ch.ArrayGeometry.ula(16), ch.ArrayGeometry.ura(4, 4)):
        d = gp.SpectralDictionary(g)
        for _ in range(trials // 2):
            c = d.realize(rng.uniform(0.01, 2.0, d.spectrum_size))
            worst_struct = max(worst_struct,
                               np.max(np.abs(c - c.conj().T)),
                               max(0.0, -np.linalg.eigvalsh(c).min()))
            if g.kind == "ula":
                for off in range(1, 4):
                    diag = np.diag(c, off)
                    worst_struct = max(worst_struct,
                                       np.max(np.abs(diag - diag[0])))
            else:
                blocks = c.reshape(4, 4, 4, 4).transpose(0, 2, 1, 3)
                worst_struct = max(
                    worst_struct,
                    np.max(np.abs(blocks[0, 1] - blocks[1, 2])),
                    np.max(np.abs(np.diag(blocks[0, 1], 1)
                                  - np.diag(blocks[0, 1], 1)[0])))

    # responsibilities sum to one
    pm = pilots.build_pilot_matrix(cfg.geometry, 4, 1.0)
    y = (rng.standard_normal((trials, 4))
         + 1j * rng.standard_normal((trials, 4)))
    resp = gp.responsibilities_obs(desk["mix"], pm, 0.1, y)
    worst_resp = np.max(np.abs(resp.sum(axis=1) - 1.0))

    # precoder power
    rows = (rng.standard_normal((trials, 4, 16))
            + 1j * rng.standard_normal((trials, 4, 16)))
    v = ops.forward(net, rows, cfg.power)
    power = np.sum(np.abs(v) ** 2, axis=(1, 2))
    worst_power = np.max(np.abs(power - cfg.power))

    # permutation equivariance
    perms = np.stack([rng.permutation(4) for _ in range(trials)])
    rows_p = rows[np.arange(trials)[:, None], perms]
    v_p = ops.forward(net, rows_p, cfg.power)
    v_expect = v[np.arange(trials)[:, None, None],
                 np.arange(16)[None, :, None], perms[:, None, :]]
    denom = np.linalg.norm(v, axis=(1, 2))
    worst_perm = np.max(np.linalg.norm(v_p - v_expect, axis=(1, 2)) / denom)

    # pilot row orthogonality
    worst_pilot = 0.0
    for _ in range(trials):
        g = (ch.ArrayGeometry.ula(16) if rng.uniform() < 0.5
             else ch.ArrayGeometry.ura(4, 4))
        n_p = int(rng.integers(1, g.n + 1))
        power_p = float(rng.uniform(0.1, 10.0))
        sel = "lowest" if g.kind == "ura" else \
            ("lowest" if rng.uniform() < 0.5 else "equispaced")
        p = pilots.build_pilot_matrix(g, n_p, power_p, sel)
        gram = p.matrix @ p.matrix.conj().T
        worst_pilot = max(worst_pilot,
                          np.max(np.abs(gram - power_p * np.eye(n_p))))

    elapsed = time.perf_counter() - t0
    ok = (worst_struct < 1e-10 and worst_resp < 1e-12
          and worst_power < 1e-10 and worst_perm < 1e-6
          and worst_pilot < 1e-10 and elapsed < 120.0)
    assert emit("4", ok,
                "structure %.1e, resp %.1e, power %.1e, perm %.1e, "
                "pilot %.1e, %.1f s" % (worst_struct, worst_resp,
                                        worst_power, worst_perm,
                                        worst_pilot, elapsed))


def test_criterion_5(desk):
    t0 = time.perf_counter()
    rng = np.random.default_rng(29)

    # single-user iterative solver vs matched filter
    h = (rng.standard_normal((1, 16)) + 1j * rng.standard_normal((1, 16)))
    v = bl.iwmmse(h, 1.0, 0.1, n_iters=300)
    mrt = (h[0].conj() / np.linalg.norm(h[0]))[:, None]
    gap_mrt = abs(ops.sum_rate(h, v, 0.1) - ops.sum_rate(h, mrt, 0.1))

    # single-user stochastic solver on a rank-1 covariance
    a = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    a *= 4.0 / np.linalg.norm(a)
    cov = np.outer(a, a.conj())[None]
    v1 = bl.swmmse(cov, 1.0, 0.1, 100, np.random.default_rng(31))
    z = (rng.standard_normal(4000) + 1j * rng.standard_normal(4000)) \
        / np.sqrt(2.0)
    draws = z[:, None] * a[None, :]
    beam_mf = a.conj() / np.linalg.norm(a)
    rate_mf = np.mean(np.log2(1.0 + np.abs(draws @ beam_mf) ** 2 / 0.1))
    rate_sw = np.mean(np.log2(1.0 + np.abs(draws @ v1[:, 0]) ** 2 / 0.1))
    ratio = rate_sw / rate_mf

    # layer forward against the naive oracle
    feats = rng.standard_normal((2, 5, 3, 4))
    mats = [rng.standard_normal((4, 4)) / 2.0 for _ in range(5)]
    got = kernels_np.gat_layer_forward(feats, *mats, 0.02, 0.1, True)
    ref = naive_layer_forward(feats, *mats, 0.02, 0.1, True)
    gap_layer = np.max(np.abs(got - ref))

    # mixture estimator against the analytic single-component MMSE filter
    d = desk["dictionary"]
    q = rng.uniform(0.05, 1.5, d.spectrum_size)
    single = gp.GmmModel(weights=np.ones(1), spectra=q[None],
                         dictionary=d, eps_floor=1e-12)
    c = single.covariances()[0]
    pm = pilots.build_pilot_matrix(desk["cfg"].geometry, 4, 1.0)
    sigma2 = 0.2
    m = 40000
    hs = ch.sample_channel(c, np.random.default_rng(37), size=m)
    noise = (np.random.default_rng(38).standard_normal((m, 4))
             + 1j * np.random.default_rng(39).standard_normal((m, 4))) \
        / np.sqrt(2.0)
    ys = hs @ pm.matrix.T + np.sqrt(sigma2) * noise
    est = gp.gmm_channel_estimate(single, pm, sigma2, ys)
    mse = np.mean(np.sum(np.abs(est - hs) ** 2, axis=1))
    p = pm.matrix
    s = p @ c @ p.conj().T + sigma2 * np.eye(4)
    mse_ref = np.trace(c - c @ p.conj().T @ np.linalg.inv(s)
                       @ p @ c).real
    rel_mse = abs(mse - mse_ref) / mse_ref

    elapsed = time.perf_counter() - t0
    ok = (gap_mrt < 1e-6 and ratio >= 0.98 and gap_layer < 1e-12
          and rel_mse < 0.02 and elapsed < 300.0)
    assert emit("5", ok,
                "mrt gap %.1e, rank-1 ratio %.4f, layer gap %.1e, "
                "estimator mse %.3f%% off, %.1f s"
                % (gap_mrt, ratio, gap_layer, 100 * rel_mse, elapsed))


def test_criterion_6():
    t0 = time.perf_counter()
    rng = np.random.default_rng(41)
    k, n_p, sigma2 = 16, 4, 0.1
    medians = {}
    for n in (16, 64):
        g = ch.ArrayGeometry.ula(n)
        d = gp.SpectralDictionary(g)
        model = gp.GmmModel(weights=np.full(k, 1.0 / k),
                            spectra=rng.uniform(0.05, 2.0,
                                                (k, d.spectrum_size)),
                            dictionary=d, eps_floor=1e-12)
        pm = pilots.build_pilot_matrix(g, n_p, 1.0)
        model.observation_cache(pm, sigma2)  # prebuild factors
        ys = (rng.standard_normal((400, n_p))
              + 1j * rng.standard_normal((400, n_p)))
        gp.feedback_index_obs(model, pm, sigma2, ys[0])  # warm path
        times = []
        for y in ys:
            t1 = time.perf_counter()
            gp.feedback_index_obs(model, pm, sigma2, y)
            times.append(time.perf_counter() - t1)
        medians[n] = float(np.median(times))
    ratio = medians[64] / medians[16]
    elapsed = time.perf_counter() - t0
    ok = ratio <= 1.5 and elapsed < 120.0
    assert emit("6", ok,
                "median per-user feedback %.1f us (N=16) vs %.1f us "
                "(N=64), ratio %.2f" % (1e6 * medians[16],
                                        1e6 * medians[64], ratio))


def test_criterion_7(desk):
    cfg = desk["cfg"]
    details = []
    ok = True
    for j in (1, 2, 3):
        test_j = ev.generate_split(cfg, "test", desk["scale"], n_users=j)
        rep = ev.evaluate(["gnn-gmm-y", "iwmmse-dft-ls"], test_j, cfg,
                          models=desk["models"], snr_grid_db=(10.0,))
        means = {r["method"]: r["mean_rate_bits"] for r in rep.rows}
        # explicit feasibility probe at this user count
        v, _ = ev.run_pipeline("gnn-gmm-y", test_j[0], desk["models"], cfg,
                               snr_db=10.0, rng=ev.derived_rng(1, j))
        feas = (np.all(np.isfinite(v))
                and abs(np.sum(np.abs(v) ** 2) - cfg.power) < 1e-10)
        ok = ok and feas and means["gnn-gmm-y"] >= means["iwmmse-dft-ls"]
        details.append("J=%d %.3f vs %.3f" % (j, means["gnn-gmm-y"],
                                              means["iwmmse-dft-ls"]))
    assert emit("7", ok, "gnn-gmm-y vs iwmmse-dft-ls at 10 dB: "
                + "; ".join(details))
