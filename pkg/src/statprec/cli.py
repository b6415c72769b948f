"""Command-line front door: data generation, fitting, training, evaluation.

All commands share one workspace directory (--out) with fixed file
names, so reruns with the same config and seed overwrite their outputs
with identical content:

  corpus.{bin,json}          covariance-fitting channel corpus
  train.{bin,json}           training scenario set
  val.{bin,json}             validation scenario set
  test_J{J}.{bin,json}       test scenario set per evaluated user count
  gmm.{bin,json}             fitted mixture model
  em_log.csv                 per-iteration fit log-likelihood
  gnn_genie.{bin,json}       precoder trained on true covariance rows
  gnn_gmm.{bin,json}         precoder trained on mixture feedback rows
  train_log_{mode}.csv       per-epoch training curves
  report[_preset].{csv,json} evaluation grid + provenance

Config is TOML mirroring SystemConfig field names; flags override
config keys.  STATPREC_LOG sets verbosity (debug/info/warning/error).
Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
"""

import argparse
import logging
import os
import sys

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from . import __version__, channels, eval_harness, gmm_prior
from .backend import active_backend, set_thread_cap
from .eval_harness import (ModelBundle, SystemConfig, derived_rng,
                           METHODS, _SEED_EM)
from .gnn_precoder import (load_gnn, model_digest, save_gnn,
                           write_training_log)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

SMOKE_SCENARIOS = 10
SMOKE_EPOCHS = 1

# figure-style experiment grids from the reference evaluation
PRESETS = {
    "fig2": {"snr_grid_db": (10.0,), "n_pilots": 16, "bits": 6,
             "j_list": (4, 8, 12, 16)},
    "fig3a": {"snr_grid_db": (0.0, 5.0, 10.0, 15.0, 20.0), "n_pilots": 8,
              "bits": 6, "j_list": (16,)},
    "fig3b": {"snr_grid_db": (0.0, 5.0, 10.0, 15.0, 20.0), "n_pilots": 16,
              "bits": 6, "j_list": (16,)},
}


class UsageError(Exception):
    """Bad flags or bad config; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the contract reserves 2 for
    # runtime failures, so re-raise and let main() map it to 1.
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    parser = _Parser(prog="statprec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version="statprec %s" % __version__)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--threads", type=int,
                        help="cap worker threads for numeric kernels")
    common.add_argument("--out", default="artifacts",
                        help="workspace directory (default: artifacts)")
    common.add_argument("--dry-run", action="store_true",
                        help="print the plan without computing or writing")

    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common],
                   help="draw the channel corpus and scenario sets")
    fit = sub.add_parser("fit-gmm", parents=[common],
                         help="fit the mixture prior to the corpus")
    fit.add_argument("--resume", action="store_true",
                     help="continue from the saved model, appending its log")
    tr = sub.add_parser("train-gnn", parents=[common],
                        help="train a precoder network")
    tr.add_argument("--mode", choices=("genie", "gmm"), default="genie",
                    help="training features: true rows or mixture feedback")
    tr.add_argument("--smoke", action="store_true",
                    help="tiny run (%d scenarios, %d epoch) to check wiring"
                         % (SMOKE_SCENARIOS, SMOKE_EPOCHS))
    ev = sub.add_parser("evaluate", parents=[common],
                        help="run method pipelines over test scenarios")
    ev.add_argument("--methods",
                    help="comma-separated subset (default: all): %s"
                         % ",".join(METHODS))
    ev.add_argument("--preset", choices=sorted(PRESETS),
                    help="figure-style grid override")
    return parser


def _load_config(args):
    data = {}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise UsageError("config file not found: %s" % args.config)
        except tomllib.TOMLDecodeError as exc:
            raise UsageError("config parse error: %s" % exc)
    preset = getattr(args, "preset", None)
    if preset:
        data.update(PRESETS[preset])
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        return SystemConfig.from_dict(data)
    except (ValueError, TypeError) as exc:
        raise UsageError("invalid config: %s" % exc)


def _parse_methods(args):
    if not getattr(args, "methods", None):
        return list(METHODS)
    chosen = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not chosen:
        raise UsageError("--methods is empty")
    for m in chosen:
        if m not in METHODS:
            raise UsageError("unknown method %r; valid methods: %s"
                             % (m, ", ".join(METHODS)))
    return chosen


def _workspace(args):
    out = args.out
    if not args.dry_run:
        os.makedirs(out, exist_ok=True)
    return out


def _path(out, name):
    return os.path.join(out, name)


def cmd_gen_data(args, config):
    out = _workspace(args)
    geom = config.geometry
    plan = [
        ("corpus", "%d channels" % config.m_gmm),
        ("train", "%d x %d scenarios" % (config.d_train, config.n_users)),
        ("val", "%d x %d scenarios" % (config.d_val, config.n_users)),
        ("test_J%d" % config.n_users,
         "%d x %d scenarios" % (config.d_test, config.n_users)),
    ]
    if args.dry_run:
        for name, what in plan:
            print("would write %s: %s" % (_path(out, name), what))
        return EXIT_OK
    corpus, scale = eval_harness.generate_corpus(config)
    channels.save_channel_dataset(_path(out, "corpus"), corpus, geom,
                                  seed=config.seed, scale=scale)
    print("corpus: %d channels, %s N=%d, scale %.6f"
          % (config.m_gmm, geom.kind, geom.n, scale))
    for split in ("train", "val", "test"):
        scen = eval_harness.generate_split(config, split, scale)
        name = "test_J%d" % config.n_users if split == "test" else split
        channels.save_scenario_set(_path(out, name), scen, geom,
                                   seed=config.seed, scale=scale)
        print("%s: %d x %d scenarios" % (name, len(scen), config.n_users))
    return EXIT_OK


def _append_em_log(path, history, offset, fresh):
    mode = "w" if fresh else "a"
    with open(path, mode) as fh:
        if fresh:
            fh.write("iteration,loglik\n")
        for i, ll in enumerate(history):
            fh.write("%d,%.10g\n" % (offset + i, ll))


def cmd_fit_gmm(args, config):
    out = _workspace(args)
    k = 2 ** config.bits
    if args.dry_run:
        print("would fit K=%d mixture (%s M-step, max %d iters) on %s"
              % (k, config.em_m_step, config.em_max_iters,
                 _path(out, "corpus.bin")))
        print("would write %s and %s"
              % (_path(out, "gmm.bin"), _path(out, "em_log.csv")))
        return EXIT_OK
    corpus, geom, meta = channels.load_channel_dataset(_path(out, "corpus"))
    if geom != config.geometry:
        raise ValueError("corpus geometry does not match config")
    dictionary = gmm_prior.SpectralDictionary(geom)
    init = None
    offset = 0
    if args.resume:
        init = gmm_prior.load_gmm(_path(out, "gmm"))
        with open(_path(out, "em_log.csv")) as fh:
            offset = sum(1 for _ in fh) - 1
        log.info("resuming from iteration %d", offset)
    rng = derived_rng(config.seed, _SEED_EM)
    model = gmm_prior.fit_em(corpus, k, dictionary, rng,
                             max_iters=config.em_max_iters,
                             tol=config.em_tol, m_step=config.em_m_step,
                             init_model=init)
    gmm_prior.save_gmm(_path(out, "gmm"), model, seed=config.seed)
    _append_em_log(_path(out, "em_log.csv"), model.fit_history, offset,
                   fresh=not args.resume)
    print("fitted K=%d in %d iterations, final loglik %.6g"
          % (k, len(model.fit_history), model.fit_history[-1]))
    return EXIT_OK


def cmd_train_gnn(args, config):
    out = _workspace(args)
    epochs = SMOKE_EPOCHS if args.smoke else config.epochs
    d_train = SMOKE_SCENARIOS if args.smoke else config.d_train
    d_val = min(SMOKE_SCENARIOS, config.d_val) if args.smoke else config.d_val
    if args.dry_run:
        print("would train gnn_%s: %d scenarios, %d epochs, "
              "%d hidden layers x %d" % (args.mode, d_train, epochs,
                                         config.gnn_hidden_layers,
                                         config.gnn_hidden_dim))
        print("would write %s and %s"
              % (_path(out, "gnn_%s.bin" % args.mode),
                 _path(out, "train_log_%s.csv" % args.mode)))
        return EXIT_OK
    train_sc, geom, meta = channels.load_scenario_set(_path(out, "train"))
    val_sc, _, _ = channels.load_scenario_set(_path(out, "val"))
    if geom != config.geometry:
        raise ValueError("scenario geometry does not match config")
    train_sc = train_sc[:d_train]
    val_sc = val_sc[:d_val]
    models = ModelBundle()
    if args.mode == "gmm":
        models.gmm = gmm_prior.load_gmm(_path(out, "gmm"))
    net, history, restart = eval_harness.train_precoder(
        args.mode, train_sc, val_sc, config, models=models, epochs=epochs)
    save_gnn(_path(out, "gnn_%s" % args.mode), net, seed=config.seed)
    write_training_log(_path(out, "train_log_%s.csv" % args.mode), history)
    print("trained gnn_%s: %d epochs, restart %d of %d, best val rate "
          "%.4f, digest %s"
          % (args.mode, len(history), restart, config.gnn_restarts,
             max(h["val_rate"] for h in history),
             model_digest(net)[:12]))
    return EXIT_OK


def _load_models(out, methods):
    models = ModelBundle()
    if any("gmm" in m for m in methods):
        models.gmm = gmm_prior.load_gmm(_path(out, "gmm"))
    if any(m.startswith("gnn-genie") for m in methods):
        models.gnn["genie"] = load_gnn(_path(out, "gnn_genie"))
    if any(m.startswith("gnn-gmm") for m in methods):
        models.gnn["gmm"] = load_gnn(_path(out, "gnn_gmm"))
    return models


def cmd_evaluate(args, config):
    out = _workspace(args)
    methods = _parse_methods(args)
    report_name = "report_%s" % args.preset if args.preset else "report"
    if args.dry_run:
        print("would evaluate %s" % ", ".join(methods))
        print("  J in %s, SNR grid %s dB, n_p=%d, B=%d, %d scenarios each"
              % (list(config.j_list), list(config.snr_grid_db),
                 config.n_pilots, config.bits, config.d_test))
        print("would write %s.{csv,json}" % _path(out, report_name))
        return EXIT_OK
    models = _load_models(out, methods)
    corpus_meta = channels.load_channel_dataset(_path(out, "corpus"))[2]
    scale = corpus_meta["scale"]
    rows = []
    hashes = {}
    provenance = None
    for j in config.j_list:
        test_sc = eval_harness.generate_split(config, "test", scale,
                                              n_users=j)
        report = eval_harness.evaluate(methods, test_sc, config,
                                       models=models)
        rows.extend(report.rows)
        hashes[str(j)] = report.provenance["scenario_hash"]
        provenance = report.provenance
    provenance["scenario_hash"] = hashes
    combined = eval_harness.EvalReport(rows=rows, provenance=provenance)
    base = eval_harness.emit_report(combined, _path(out, report_name))
    print("report: %s.{csv,json} (%d rows)" % (base, len(rows)))
    for row in rows:
        print("  %-18s J=%-2d %5.1f dB  %8.4f bits" %
              (row["method"], row["J"], row["snr_db"],
               row["mean_rate_bits"]))
    return EXIT_OK


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "fit-gmm": cmd_fit_gmm,
    "train-gnn": cmd_train_gnn,
    "evaluate": cmd_evaluate,
}


def main(argv=None):
    level = os.environ.get("STATPREC_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config(args)
        if args.command == "evaluate":
            _parse_methods(args)  # validate before any computation
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be >= 1")
            set_thread_cap(args.threads)
    except UsageError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    log.info("backend: %s", active_backend())
    try:
        return _COMMANDS[args.command](args, config)
    except Exception as exc:
        log.debug("traceback", exc_info=True)
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
