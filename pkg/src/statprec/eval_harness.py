"""End-to-end evaluation: feedback pipelines, baselines, paired reports.

Eight method pipelines share each test scenario, channel realizations,
and pilot noise (paired comparison), differing only in what the
transmitter learns about the channels:

  gnn-genie          graph precoder on true covariance rows
  swmmse-genie       stochastic WMMSE from true covariances
  gnn-gmm-h          graph precoder on mixture rows picked from perfect CSI
  gnn-gmm-y          graph precoder on mixture rows picked from pilots
  swmmse-gmm-h       stochastic WMMSE from mixture covariances (CSI pick)
  swmmse-gmm-y       stochastic WMMSE from mixture covariances (pilot pick)
  iwmmse-dft-ls      iterative WMMSE on DFT-quantized LS estimates
  iwmmse-dft-gmmest  iterative WMMSE on DFT-quantized mixture estimates

Reports are CSV rows per (method, user count, SNR) plus a JSON
provenance sidecar.
"""

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, fields, asdict

import numpy as np

from . import __version__, baselines, channels, gmm_prior
from .backend import active_backend
from .channels import (ArrayGeometry, covariance_from_first_row,
                       DEFAULT_GRID_SIZE)
from .gnn_precoder import model as gnn_model
from .gnn_precoder import ops as gnn_ops
from .gnn_precoder.train import (TrainConfig, TrainingDiverged,
                                 train as fit_gnn)
from .pilots import build_pilot_matrix, observe

log = logging.getLogger(__name__)

METHODS = (
    "gnn-genie",
    "swmmse-genie",
    "gnn-gmm-h",
    "gnn-gmm-y",
    "swmmse-gmm-h",
    "swmmse-gmm-y",
    "iwmmse-dft-ls",
    "iwmmse-dft-gmmest",
)

REPORT_COLUMNS = ("method", "J", "snr_db", "n_p", "B", "mean_rate_bits",
                  "stderr", "mean_runtime_ms", "scenario_hash")

# fixed stream labels so derived seeds never collide across purposes
_SEED_GMM_DATA = 101
_SEED_TRAIN = 102
_SEED_VAL = 103
_SEED_TEST = 104
_SEED_PILOT_NOISE = 105
_SEED_SWMMSE = 106
_SEED_EM = 107
_SEED_GNN_INIT = 108
_SEED_TRAIN_LOOP = 109
_SEED_FEEDBACK = 110


@dataclass
class SystemConfig:
    """Experiment description; defaults mirror the reference large setup."""

    geometry_kind: str = "ula"
    n: int = 64
    n_v: int = 1
    n_h: int = 0
    power: float = 1.0
    snr_grid_db: tuple = (0.0, 5.0, 10.0, 15.0, 20.0)
    n_pilots: int = 16
    bits: int = 6
    n_users: int = 16
    j_list: tuple = (4, 8, 12, 16)
    d_train: int = 2400
    d_val: int = 300
    d_test: int = 500
    m_gmm: int = 100000
    seed: int = 0
    spread_deg: float = 2.0
    grid_size: int = DEFAULT_GRID_SIZE
    pilot_selection: str = "lowest"
    em_max_iters: int = 300
    em_tol: float = 1e-5
    em_m_step: str = "latent"
    gnn_hidden_layers: int = 5
    gnn_hidden_dim: int = 128
    gnn_alpha: float = 0.0  # 0 selects the 0.1/n default
    gnn_beta: float = 0.1
    gnn_restarts: int = 1
    gnn_restart_lrs: tuple = ()  # initial-lr cycle across restarts
    epochs: int = 500
    batch_size: int = 100
    lr: float = 1e-3
    lr_schedule: str = "constant"
    warmup_epochs: int = 0
    train_snr_range_db: tuple = (0.0, 20.0)
    feedback_snr_band_db: tuple = ()  # observation band; () = train range
    feedback: str = "y"
    swmmse_iters: int = 300
    iwmmse_iters: int = 300
    iwmmse_tol: float = 1e-10

    def __post_init__(self):
        self.snr_grid_db = tuple(float(s) for s in self.snr_grid_db)
        self.j_list = tuple(int(j) for j in self.j_list)
        self.train_snr_range_db = tuple(
            float(s) for s in self.train_snr_range_db)
        self.gnn_restart_lrs = tuple(float(r) for r in self.gnn_restart_lrs)
        self.feedback_snr_band_db = tuple(
            float(s) for s in self.feedback_snr_band_db)
        self.validate()

    def validate(self):
        if self.power <= 0:
            raise ValueError("power budget must be positive")
        if not self.snr_grid_db or not all(
                np.isfinite(s) for s in self.snr_grid_db):
            raise ValueError("SNR grid must be nonempty and finite")
        if not self.j_list or any(j < 1 for j in self.j_list):
            raise ValueError("user-count list must be nonempty and positive")
        for name in ("n", "n_users", "d_train", "d_val", "d_test", "m_gmm",
                     "epochs", "batch_size", "swmmse_iters", "iwmmse_iters"):
            if getattr(self, name) < 1:
                raise ValueError("%s must be >= 1" % name)
        if not 1 <= self.n_pilots <= self.n:
            raise ValueError("pilot count must be in [1, n]")
        if self.bits < 0:
            raise ValueError("bit budget must be nonnegative")
        if self.feedback not in ("y", "h"):
            raise ValueError("feedback must be 'y' or 'h'")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr schedule must be 'constant' or 'cosine'")
        if self.gnn_restarts < 1:
            raise ValueError("gnn_restarts must be >= 1")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        if any(r <= 0 for r in self.gnn_restart_lrs):
            raise ValueError("restart lrs must be positive")
        if self.feedback_snr_band_db and len(self.feedback_snr_band_db) != 2:
            raise ValueError("feedback SNR band needs (low, high) in dB")
        self.geometry  # raises on inconsistent layout

    @property
    def geometry(self):
        if self.geometry_kind == "ula":
            return ArrayGeometry.ula(self.n)
        return ArrayGeometry.ura(self.n_v, self.n_h)

    def to_dict(self):
        # lists rather than tuples so the echo is JSON-canonical
        return {k: list(v) if isinstance(v, tuple) else v
                for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(
                "unknown config keys: %s" % ", ".join(sorted(unknown)))
        return cls(**data)


def config_digest(config):
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def snr_to_sigma2(snr_db):
    """Noise variance for unit transmit power: sigma2 = 10^(-SNR/10)."""
    return 10.0 ** (-float(snr_db) / 10.0)


def derived_rng(seed, *key):
    """Deterministic child generator for a (seed, purpose, index...) key."""
    return np.random.default_rng([int(seed)] + [int(k) for k in key])


@dataclass
class ModelBundle:
    """Fitted models consumed by the pipelines.

    gnn holds one precoder per feedback source: "genie" (trained on true
    covariance rows) and "gmm" (trained on mixture rows); the gmm-h and
    gmm-y pipelines share the latter.
    """

    gmm: object = None
    gnn: dict = field(default_factory=dict)


def config_cluster_sampler(config):
    """Cluster-parameter sampler using the configured angular spread."""
    spread = np.deg2rad(config.spread_deg)

    def sampler(geometry, rng):
        return channels.default_cluster_sampler(geometry, rng, spread)

    return sampler


def generate_corpus(config):
    """Draw and normalize the covariance-fitting corpus.

    Returns (corpus, scale).  The scale is the population calibration
    constant reused for every scenario set of the same config, so the
    fitted prior and the evaluation channels share one distribution.
    """
    sampler = config_cluster_sampler(config)
    rng = derived_rng(config.seed, _SEED_GMM_DATA)
    corpus = channels.generate_dataset(config.geometry, config.m_gmm, rng,
                                       sampler, config.grid_size)
    return channels.normalize_dataset(corpus)


_SPLIT_SEEDS = {"train": _SEED_TRAIN, "val": _SEED_VAL, "test": _SEED_TEST}


def generate_split(config, split, scale, n_users=None, count=None):
    """Draw one scenario split ("train" | "val" | "test") at a fixed scale.

    Different user counts get disjoint seed streams, so sweeping J draws
    fresh scenario sets as the reference curves do.
    """
    if split not in _SPLIT_SEEDS:
        raise ValueError("split must be one of %s" % sorted(_SPLIT_SEEDS))
    if n_users is None:
        n_users = config.n_users
    if count is None:
        count = getattr(config, "d_" + split)
    sampler = config_cluster_sampler(config)
    rng = derived_rng(config.seed, _SPLIT_SEEDS[split], n_users)
    scenarios = channels.generate_scenarios(config.geometry, count, n_users,
                                            rng, sampler, config.grid_size)
    return channels.scale_scenarios(scenarios, scale)


def scenario_hash(scenarios):
    h = hashlib.sha256()
    for s in scenarios:
        h.update(np.ascontiguousarray(s.channels, dtype="<c16").tobytes())
    return h.hexdigest()[:16]


def _required_models(method):
    need = []
    if method.startswith("gnn-genie"):
        need.append("gnn:genie")
    elif method.startswith("gnn-gmm"):
        need.extend(["gnn:gmm", "gmm"])
    elif "gmm" in method:
        need.append("gmm")
    return need


def _check_models(method, models):
    for item in _required_models(method):
        if item == "gmm":
            if models is None or models.gmm is None:
                raise ValueError("method %r needs a fitted mixture model"
                                 % method)
        else:
            key = item.split(":")[1]
            if models is None or key not in models.gnn:
                raise ValueError("method %r needs the %r precoder model"
                                 % (method, key))


def _observations(pilot, channels, sigma2, noise):
    """y_j = P h_j + sigma z_j with a shared standard-normal block z."""
    clean = channels @ pilot.matrix.T  # (j, n_p)
    return clean + np.sqrt(sigma2) * noise


def run_pipeline(method, scenario, models, config, snr_db=None, rng=None,
                 noise=None, pilot=None, codebook=None, swmmse_iters=None):
    """Execute one method on one scenario; returns (V, sum_rate).

    snr_db defaults to the first grid point.  noise is the scenario's
    standard-normal pilot block (n_users, n_pilots), shared across
    methods for paired runs; it is drawn from rng when absent.  rng also
    drives the stochastic WMMSE solver.
    """
    if method not in METHODS:
        raise ValueError("unknown method %r; valid: %s"
                         % (method, ", ".join(METHODS)))
    _check_models(method, models)
    geometry = config.geometry
    if scenario.n != geometry.n:
        raise ValueError("scenario antenna count does not match config")
    if snr_db is None:
        snr_db = config.snr_grid_db[0]
    sigma2 = snr_to_sigma2(snr_db)
    if rng is None:
        rng = derived_rng(config.seed, _SEED_PILOT_NOISE)
    if pilot is None:
        pilot = build_pilot_matrix(geometry, config.n_pilots, config.power,
                                   config.pilot_selection)
    iters = swmmse_iters or config.swmmse_iters

    needs_obs = method.endswith("-y") or method.startswith("iwmmse")
    if needs_obs:
        if noise is None:
            shape = (scenario.n_users, pilot.n_pilots)
            noise = (rng.standard_normal(shape)
                     + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
        obs = _observations(pilot, scenario.channels, sigma2, noise)

    if method == "gnn-genie":
        v = gnn_ops.forward(models.gnn["genie"], scenario.genie_rows,
                            config.power)
    elif method == "swmmse-genie":
        covs = np.stack([covariance_from_first_row(geometry, row)
                         for row in scenario.genie_rows])
        v = baselines.swmmse(covs, config.power, sigma2, iters, rng)
    elif method in ("gnn-gmm-h", "gnn-gmm-y", "swmmse-gmm-h",
                    "swmmse-gmm-y"):
        gmm = models.gmm
        if method.endswith("-h"):
            idx = gmm_prior.feedback_index_csi(gmm, scenario.channels)
        else:
            idx = gmm_prior.feedback_index_obs(gmm, pilot, sigma2, obs)
        if method.startswith("gnn"):
            rows = gmm.covariance_rows()[idx]
            v = gnn_ops.forward(models.gnn["gmm"], rows, config.power)
        else:
            covs = gmm.covariances()[idx]
            v = baselines.swmmse(covs, config.power, sigma2, iters, rng)
    else:  # iwmmse-dft-*
        if method == "iwmmse-dft-ls":
            est = baselines.ls_estimate(pilot, obs)
        else:
            est = gmm_prior.gmm_channel_estimate(models.gmm, pilot, sigma2,
                                                 obs)
        if codebook is None:
            codebook = baselines.build_dft_codebook(geometry, config.bits)
        picks = [baselines.dft_feedback(e, codebook) for e in est]
        quantized = codebook[:, picks].T
        v = baselines.iwmmse(quantized, config.power, sigma2,
                             config.iwmmse_iters, config.iwmmse_tol)

    rate = gnn_ops.sum_rate(scenario.channels, v, sigma2)
    cap = scenario.n_users * np.log2(
        1.0 + config.power
        * np.max(np.sum(np.abs(scenario.channels) ** 2, axis=1)) / sigma2)
    if not 0.0 <= rate <= cap + 1e-9:
        raise AssertionError(
            "rate %.6f outside [0, %.6f] for %s" % (rate, cap, method))
    return v, rate


@dataclass
class EvalReport:
    rows: list
    provenance: dict


def _model_digests(models):
    out = {}
    if models is None:
        return out
    if models.gmm is not None:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(models.gmm.weights, "<f8").tobytes())
        h.update(np.ascontiguousarray(models.gmm.spectra, "<f8").tobytes())
        out["gmm"] = h.hexdigest()
    for key, net in sorted(models.gnn.items()):
        out["gnn-%s" % key] = gnn_model.model_digest(net)
    return out


def evaluate(methods, testset, config, models=None, snr_grid_db=None):
    """Paired evaluation of methods over a scenario test set.

    One report row per (method, SNR grid point): mean sum-rate over the
    set, its standard error, and mean precoder wall time.  All methods
    at a grid point see identical channels and pilot noise; stochastic
    solver seeds derive from (seed, SNR index, scenario index) only, so
    method pairings share draws too.
    """
    if not testset:
        raise ValueError("test set is empty")
    methods = list(methods)
    for method in methods:
        if method not in METHODS:
            raise ValueError("unknown method %r; valid: %s"
                             % (method, ", ".join(METHODS)))
        _check_models(method, models)
    grid = config.snr_grid_db if snr_grid_db is None else tuple(snr_grid_db)
    geometry = config.geometry
    pilot = build_pilot_matrix(geometry, config.n_pilots, config.power,
                               config.pilot_selection)
    codebook = baselines.build_dft_codebook(geometry, config.bits)
    n_users = testset[0].n_users
    sc_hash = scenario_hash(testset)

    noise = []
    for s_idx in range(len(testset)):
        r = derived_rng(config.seed, _SEED_PILOT_NOISE, s_idx)
        shape = (n_users, pilot.n_pilots)
        noise.append((r.standard_normal(shape)
                      + 1j * r.standard_normal(shape)) / np.sqrt(2.0))

    rows = []
    for snr_idx, snr_db in enumerate(grid):
        for method in methods:
            rates = np.empty(len(testset))
            elapsed = 0.0
            for s_idx, scenario in enumerate(testset):
                solver_rng = derived_rng(config.seed, _SEED_SWMMSE, snr_idx,
                                         s_idx)
                t0 = time.perf_counter()
                _, rate = run_pipeline(
                    method, scenario, models, config, snr_db=snr_db,
                    rng=solver_rng, noise=noise[s_idx], pilot=pilot,
                    codebook=codebook)
                elapsed += time.perf_counter() - t0
                rates[s_idx] = rate
            stderr = (float(np.std(rates, ddof=1) / np.sqrt(rates.size))
                      if rates.size > 1 else 0.0)
            rows.append({
                "method": method,
                "J": n_users,
                "snr_db": float(snr_db),
                "n_p": pilot.n_pilots,
                "B": config.bits,
                "mean_rate_bits": float(rates.mean()),
                "stderr": stderr,
                "mean_runtime_ms": 1e3 * elapsed / len(testset),
                "scenario_hash": sc_hash,
            })
            log.info("%s J=%d snr=%g: %.4f bits", method, n_users, snr_db,
                     rows[-1]["mean_rate_bits"])
    provenance = {
        "config": config.to_dict(),
        "config_sha256": config_digest(config),
        "model_sha256": _model_digests(models),
        "scenario_hash": sc_hash,
        "methods": methods,
        "backend": active_backend(),
        "version": __version__,
    }
    return EvalReport(rows=rows, provenance=provenance)


def iteration_sweep(method, testset, config, models, snr_db, iter_marks):
    """Mean rate of a stochastic-WMMSE method at nested iteration caps.

    Runs the solver once per scenario to the largest mark, snapshotting
    the precoder at each mark, so the comparison across caps is exactly
    paired.  Returns {mark: mean_rate}.
    """
    if method not in ("swmmse-genie", "swmmse-gmm-h", "swmmse-gmm-y"):
        raise ValueError("iteration sweep applies to swmmse methods")
    _check_models(method, models)
    marks = sorted(int(i) for i in iter_marks)
    sigma2 = snr_to_sigma2(snr_db)
    geometry = config.geometry
    pilot = build_pilot_matrix(geometry, config.n_pilots, config.power,
                               config.pilot_selection)
    totals = {m: 0.0 for m in marks}
    snr_idx = 0
    for s_idx, scenario in enumerate(testset):
        if method == "swmmse-genie":
            covs = np.stack([covariance_from_first_row(geometry, row)
                             for row in scenario.genie_rows])
        else:
            if method.endswith("-h"):
                idx = gmm_prior.feedback_index_csi(models.gmm,
                                                   scenario.channels)
            else:
                r = derived_rng(config.seed, _SEED_PILOT_NOISE, s_idx)
                shape = (scenario.n_users, pilot.n_pilots)
                z = (r.standard_normal(shape)
                     + 1j * r.standard_normal(shape)) / np.sqrt(2.0)
                obs = _observations(pilot, scenario.channels, sigma2, z)
                idx = gmm_prior.feedback_index_obs(models.gmm, pilot, sigma2,
                                                   obs)
            covs = models.gmm.covariances()[idx]
        solver_rng = derived_rng(config.seed, _SEED_SWMMSE, snr_idx, s_idx)
        _, snaps = baselines.swmmse(covs, config.power, sigma2, marks[-1],
                                    solver_rng, snapshots=marks)
        for m in marks:
            totals[m] += gnn_ops.sum_rate(scenario.channels, snaps[m],
                                          sigma2)
    return {m: totals[m] / len(testset) for m in marks}


def build_training_set(mode, scenarios, config, models=None, rng=None):
    """Assemble (feature rows, channels) arrays for precoder training.

    mode "genie" uses each user's true covariance row.  mode "gmm" runs
    the feedback chain per user (observation SNR drawn uniformly over
    feedback_snr_band_db, or the whole training range when the band is
    unset) and uses the selected component's row.
    """
    d = len(scenarios)
    n_users = scenarios[0].n_users
    n = scenarios[0].n
    channels = np.stack([s.channels for s in scenarios])
    if mode == "genie":
        rows = np.stack([s.genie_rows for s in scenarios])
        return rows, channels
    if mode != "gmm":
        raise ValueError("unknown training-set mode %r" % mode)
    if models is None or models.gmm is None:
        raise ValueError("gmm training set needs a fitted mixture model")
    if rng is None:
        rng = derived_rng(config.seed, _SEED_FEEDBACK)
    gmm = models.gmm
    comp_rows = gmm.covariance_rows()
    rows = np.empty((d, n_users, n), dtype=np.complex128)
    if config.feedback == "h":
        for s_idx, s in enumerate(scenarios):
            idx = gmm_prior.feedback_index_csi(gmm, s.channels)
            rows[s_idx] = comp_rows[idx]
        return rows, channels
    pilot = build_pilot_matrix(config.geometry, config.n_pilots,
                               config.power, config.pilot_selection)
    lo, hi = config.feedback_snr_band_db or config.train_snr_range_db
    for s_idx, s in enumerate(scenarios):
        sigma2 = snr_to_sigma2(rng.uniform(lo, hi))
        z = (rng.standard_normal((n_users, pilot.n_pilots))
             + 1j * rng.standard_normal((n_users, pilot.n_pilots))) \
            / np.sqrt(2.0)
        obs = _observations(pilot, s.channels, sigma2, z)
        idx = gmm_prior.feedback_index_obs(gmm, pilot, sigma2, obs)
        rows[s_idx] = comp_rows[idx]
    return rows, channels


def train_precoder(mode, train_scenarios, val_scenarios, config,
                   models=None, epochs=None):
    """Train gnn_restarts candidate nets, keep the best-validation one.

    Candidate k derives its init and shuffle streams from the usual
    purpose codes extended by k, so a single restart reproduces the
    plain streams bit for bit.  The initial lr cycles through
    gnn_restart_lrs when that tuple is set.  Candidates whose training
    diverges are dropped.  Returns (net, history, restart_index) for
    the winner, judged by best validation rate across epochs.
    """
    rows, chans = build_training_set(mode, train_scenarios, config,
                                     models=models)
    vrows, vchans = build_training_set(mode, val_scenarios, config,
                                       models=models)
    geom = config.geometry
    lrs = config.gnn_restart_lrs or (config.lr,)
    best = None
    for k in range(config.gnn_restarts):
        net = gnn_model.init_gnn(
            geom.n, config.gnn_hidden_layers, config.gnn_hidden_dim,
            derived_rng(config.seed, _SEED_GNN_INIT, k),
            alpha=config.gnn_alpha or None, beta=config.gnn_beta)
        tcfg = TrainConfig(
            epochs=config.epochs if epochs is None else epochs,
            batch_size=config.batch_size, lr=lrs[k % len(lrs)],
            lr_schedule=config.lr_schedule,
            warmup_epochs=config.warmup_epochs,
            snr_range_db=config.train_snr_range_db, power=config.power,
            seed=int(derived_rng(config.seed, _SEED_TRAIN_LOOP, k)
                     .integers(2 ** 31)))
        try:
            cand, history = fit_gnn(net, rows, chans, vrows, vchans, tcfg)
        except (ValueError, TrainingDiverged):
            log.warning("gnn restart %d (lr %.3g) diverged; dropped",
                        k, tcfg.lr)
            continue
        score = max(h["val_rate"] for h in history)
        log.info("gnn restart %d (lr %.3g): best val %.4f", k, tcfg.lr,
                 score)
        if best is None or score > best[0]:
            best = (score, cand, history, k)
    if best is None:
        raise RuntimeError("every training restart diverged")
    return best[1], best[2], best[3]


def emit_report(report, path):
    """Write rows to path.csv and provenance to path.json."""
    base = str(path)
    for ext in (".csv", ".json"):
        if base.endswith(ext):
            base = base[: -len(ext)]
    try:
        with open(base + ".csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            writer.writeheader()
            for row in report.rows:
                out = dict(row)
                for key in ("mean_rate_bits", "stderr", "mean_runtime_ms"):
                    out[key] = "%.10g" % out[key]
                writer.writerow(out)
        with open(base + ".json", "w") as fh:
            json.dump(report.provenance, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError("cannot write report at %s: %s" % (base, exc))
    return base


def load_report(path):
    base = str(path)
    for ext in (".csv", ".json"):
        if base.endswith(ext):
            base = base[: -len(ext)]
    rows = []
    with open(base + ".csv", newline="") as fh:
        for row in csv.DictReader(fh):
            row["J"] = int(row["J"])
            row["n_p"] = int(row["n_p"])
            row["B"] = int(row["B"])
            for key in ("snr_db", "mean_rate_bits", "stderr",
                        "mean_runtime_ms"):
                row[key] = float(row[key])
            rows.append(row)
    with open(base + ".json") as fh:
        provenance = json.load(fh)
    return EvalReport(rows=rows, provenance=provenance)
