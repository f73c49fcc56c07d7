"""Adam and the epoch / minibatch training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergedFold, EmptyTrainingSet, InvalidConfig, ShapeMismatch
from .nn import HybridModel, model_backward, model_forward, mse_loss, predict
from .sequencing import Batch

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if set(grads) != set(params):
        raise ShapeMismatch("gradient names do not match parameter names")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 512
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    patience: int | None = None  # early stop after this many epochs without validation improvement

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfig("epochs and batch_size must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidConfig("betas must lie in (0, 1)")
        if not self.lr > 0:
            raise InvalidConfig("lr must be positive")


@dataclass
class History:
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    best_epoch: int = -1

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mse", "val_mse"])
            for i, tr in enumerate(self.train_mse):
                va = self.val_mse[i] if i < len(self.val_mse) else math.nan
                w.writerow([i + 1, repr(tr), repr(va)])


def batch_gradient(model: HybridModel, batch: Batch, rng: np.random.Generator):
    pred, cache = model_forward(model, batch, training=True, rng=rng)
    loss, dpred = mse_loss(pred, batch.y)
    return loss, model_backward(model, cache, dpred)


def train(model: HybridModel, train_set: Batch, val_set: Batch | None, cfg: TrainConfig, log_every: int = 0):
    """Fit ``model`` in place; the returned model holds the best-validation parameters.

    Targets in both batches are used as given (normalise them beforehand).
    The train MSE of an epoch is the example-weighted mean of its minibatch
    losses.
    """
    n = len(train_set)
    if n == 0:
        raise EmptyTrainingSet("no training examples")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    params = model.parameters()
    hist = History()
    best, best_val, stale = None, math.inf, 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            loss, grads = batch_gradient(model, train_set.take(idx), rng)
            if not math.isfinite(loss):
                raise DivergedFold(f"non-finite training loss at epoch {epoch + 1}")
            adam_step(state, params, grads)
            total += loss * len(idx)
        hist.train_mse.append(total / n)
        if val_set is not None and len(val_set):
            val = mse_loss(predict(model, val_set), val_set.y)[0]
            if not math.isfinite(val):
                raise DivergedFold(f"non-finite validation loss at epoch {epoch + 1}")
            hist.val_mse.append(val)
            if val < best_val:
                best_val, best, stale = val, {k: v.copy() for k, v in params.items()}, 0
                hist.best_epoch = epoch
            else:
                stale += 1
        if log_every and (epoch + 1) % log_every == 0:
            logger.info("epoch %d train_mse %.5f val_mse %.5f", epoch + 1, hist.train_mse[-1], hist.val_mse[-1] if hist.val_mse else math.nan)
        if cfg.patience is not None and stale >= cfg.patience:
            break
    if best is not None:
        model.load_parameters(best)
    else:
        hist.best_epoch = len(hist.train_mse) - 1
    return model, hist
