"""Training loop: Adam over the hand-rolled gradients.

Each presentation of a scenario draws a fresh noise variance with the
SNR uniform in dB over the training range, so one network covers the
whole operating interval.  Validation holds the noise variance at the
midpoint of that range, making epoch scores exactly comparable; the
model returned is the best-validation snapshot.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import ops

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Validation produced a non-finite score; carries the log so far."""

    def __init__(self, epoch, history):
        super().__init__(
            "validation diverged (non-finite) at epoch %d" % epoch)
        self.epoch = epoch
        self.history = history


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 25
    lr: float = 1e-3  # initial; see lr_schedule
    lr_schedule: str = "constant"  # or "cosine" (anneals to 0)
    warmup_epochs: int = 0  # linear ramp to lr before the schedule
    clip_norm: float = 0.0  # global gradient-norm cap; 0 disables
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    snr_range_db: tuple = (0.0, 20.0)
    power: float = 1.0
    seed: int = 0

    def epoch_lr(self, epoch):
        if epoch < self.warmup_epochs:
            return self.lr * (epoch + 1) / self.warmup_epochs
        if self.lr_schedule == "constant":
            return self.lr
        if self.lr_schedule == "cosine":
            span = max(self.epochs - 1 - self.warmup_epochs, 1)
            frac = (epoch - self.warmup_epochs) / span
            return self.lr * 0.5 * (1.0 + np.cos(np.pi * frac))
        raise ValueError("unknown lr schedule %r" % (self.lr_schedule,))


class Adam:
    """Adam on a dict of parameter arrays, updated in place."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for key, p in params.items():
            g = grads[key]
            m = self.m[key]
            v = self.v[key]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


def clip_gradients(grads, max_norm):
    """Scale the gradient dict in place so its global norm <= max_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def draw_noise_variances(rng, count, snr_range_db):
    """sigma2 = 10^(-snr/10) with snr uniform in dB over the range."""
    snr = rng.uniform(snr_range_db[0], snr_range_db[1], size=count)
    return 10.0 ** (-snr / 10.0)


def validation_rate(model, rows, channels, sigma2, power):
    v = ops.forward(model, rows, power)
    return float(np.mean(ops.sum_rate(channels, v, sigma2)))


def train(model, train_rows, train_channels, val_rows, val_channels,
          config):
    """Fit in place; returns (best_model, history).

    train_rows/train_channels: (d, j, n) complex feature rows and true
    channels; likewise for validation.  history is a list of dicts with
    epoch, train_rate, val_rate, lr.  Raises TrainingDiverged when the
    validation score goes non-finite.
    """
    rng = np.random.default_rng(config.seed)
    d = train_rows.shape[0]
    batch = min(config.batch_size, d)
    # fixed midpoint noise keeps epoch scores exactly comparable
    mid_db = 0.5 * (config.snr_range_db[0] + config.snr_range_db[1])
    val_sigma2 = np.full(val_rows.shape[0], 10.0 ** (-mid_db / 10.0))
    adam = Adam(model.params(), config.lr, config.beta1, config.beta2,
                config.eps)

    history = []
    best_rate = -np.inf
    best = model.copy()
    for epoch in range(config.epochs):
        adam.lr = config.epoch_lr(epoch)
        perm = rng.permutation(d)
        epoch_rates = []
        for start in range(0, d, batch):
            take = perm[start: start + batch]
            sigma2 = draw_noise_variances(rng, take.size,
                                          config.snr_range_db)
            _, grads, rate = ops.gradient(
                model, train_rows[take], train_channels[take], sigma2,
                config.power)
            if config.clip_norm > 0.0:
                clip_gradients(grads, config.clip_norm)
            adam.step(model.params(), grads)
            epoch_rates.append(rate)
        val_rate = validation_rate(model, val_rows, val_channels,
                                   val_sigma2, config.power)
        row = {"epoch": epoch, "train_rate": float(np.mean(epoch_rates)),
               "val_rate": val_rate, "lr": adam.lr}
        history.append(row)
        log.info("epoch %d train %.4f val %.4f", epoch, row["train_rate"],
                 val_rate)
        if not np.isfinite(val_rate):
            log.error("validation rate is non-finite at epoch %d; aborting",
                      epoch)
            raise TrainingDiverged(epoch, history)
        if val_rate > best_rate:
            best_rate = val_rate
            best = model.copy()
    return best, history


def write_training_log(path, history):
    with open(path, "w") as fh:
        fh.write("epoch,train_rate,val_rate,lr\n")
        for row in history:
            fh.write("%d,%.10g,%.10g,%.10g\n"
                     % (row["epoch"], row["train_rate"], row["val_rate"],
                        row["lr"]))
    return path
