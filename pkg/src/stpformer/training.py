"""Loss, metrics, AdamW, warmup+cosine schedule, early-stopping loop and the
finite-difference gradient check."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import gradcheck
from . import tensor as T
from .errors import ConfigError, NumericalError
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

MAPE_FLOOR = 1e-4


@dataclass
class TrainConfig:
    batch_size: int = 16
    base_lr: float = 0.001
    warmup_epochs: int = 5
    schedule: str = "cosine"
    patience: int = 50
    max_epochs: int = 200
    seed: int = 1
    grad_clip: float | None = None
    weight_decay: float = 0.01
    loss: str = "mae"
    huber_delta: float = 1.0

    def validate(self):
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, patience and max_epochs must be positive")
        if self.base_lr < 0 or self.weight_decay < 0:
            raise ConfigError("base_lr and weight_decay must be nonnegative")
        if not 0 <= self.warmup_epochs < self.max_epochs:
            raise ConfigError("warmup_epochs must be in [0, max_epochs)")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.loss not in ("mae", "huber"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive when set")
        return self

    def to_dict(self):
        return asdict(self)


# ------------------------------------------------------------------ metrics

def compute_metrics(pred, target, mape_floor=MAPE_FLOOR):
    """(MAE, RMSE, MAPE%) with MAPE over entries where |target| > floor.

    MAPE is None when no entry clears the floor.
    """
    pred, target = np.asarray(pred, np.float64), np.asarray(target, np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ")
    err = pred - target
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    keep = np.abs(target) > mape_floor
    mape = float(np.mean(np.abs(err[keep] / target[keep])) * 100.0) if keep.any() else None
    return mae, rmse, mape


# --------------------------------------------------------------------- loss

def denormalize(pred, norm):
    d = pred.shape[-1]
    std = Tensor(np.asarray(norm.std).reshape(1, 1, 1, d))
    mean = Tensor(np.asarray(norm.mean).reshape(1, 1, 1, d))
    return T.add(T.mul(pred, std), mean)


def batch_loss(model, batch, norm, kind="mae", delta=1.0):
    x, week, day, target = batch
    pred = denormalize(model(x, week, day), norm)
    diff = T.sub(pred, Tensor(target))
    per = T.abs_(diff) if kind == "mae" else T.huber(diff, delta)
    loss = T.mean(per)
    if not np.isfinite(loss.data):
        raise NumericalError("loss")
    return loss, pred


def loss_and_grad(model, batch, norm, kind="mae", delta=1.0):
    """Forward + backward on one batch; gradients land in model.store."""
    model.store.zero_grad()
    loss, _ = batch_loss(model, batch, norm, kind, delta)
    loss.backward()
    return float(loss.data), {k: t.grad for k, t in model.store.items()}


# ---------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    weight_decay: float = 0.01

    @classmethod
    def for_store(cls, store, weight_decay=0.01):
        return cls({k: np.zeros_like(t.data) for k, t in store.items()},
                   {k: np.zeros_like(t.data) for k, t in store.items()}, 0, weight_decay)


def adamw_step(state, params, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8, wd=None):
    """In-place AdamW update over name -> array mappings.

    Decoupled decay (p -= lr*wd*p) precedes the bias-corrected Adam step.
    """
    wd = state.weight_decay if wd is None else wd
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for name in params:
        p = params[name]
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        if wd:
            p -= lr * wd * p
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


def clip_grad_norm(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= factor
    return total


def lr_at(epoch, cfg):
    """Linear warmup over ``warmup_epochs``, then half-cosine to zero at
    ``max_epochs``."""
    base, warm = cfg.base_lr, cfg.warmup_epochs
    if epoch < warm:
        return base * (epoch + 1) / warm
    if cfg.schedule == "constant":
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * (epoch - warm) / (cfg.max_epochs - warm)))


# --------------------------------------------------------------- evaluation

def predict(model, data, anchors, batch_size=64):
    """Raw-scale predictions and targets for the given anchors (no tape)."""
    preds, targets = [], []
    with no_grad():
        for i in range(0, len(anchors), batch_size):
            x, week, day, target = data.batch(anchors[i:i + batch_size])
            pred = denormalize(model(x, week, day), data.norm)
            preds.append(pred.data)
            targets.append(target)
    return np.concatenate(preds), np.concatenate(targets)


def evaluate(model, data, split, cfg=None):
    pred, target = predict(model, data, data.anchors[split])
    mae, rmse, mape = compute_metrics(pred, target)
    if cfg is not None and cfg.loss == "huber":
        e = np.abs(pred - target)
        d = cfg.huber_delta
        loss = float(np.mean(np.where(e <= d, 0.5 * e * e, d * (e - 0.5 * d))))
    else:
        loss = mae
    return {"loss": loss, "mae": mae, "rmse": rmse, "mape": mape}


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    log: list
    optimizer: OptimizerState
    stopped_early: bool


def train_loop(model, data, cfg, on_epoch=None):
    """Seeded shuffling, per-epoch validation, best-checkpoint tracking and
    early stopping after ``patience`` epochs without improvement."""
    cfg.validate()
    for name in ("train", "val"):
        if len(data.anchors.get(name, ())) == 0:
            raise ConfigError(f"{name} split has no windows")
    rng = np.random.default_rng(cfg.seed)
    store = model.store
    opt = OptimizerState.for_store(store, cfg.weight_decay)
    params = {k: t.data for k, t in store.items()}
    train_anchors = data.anchors["train"]

    best_val, best_epoch, best_state = math.inf, -1, store.state()
    history, stopped = [], False
    for epoch in range(cfg.max_epochs):
        lr = lr_at(epoch, cfg)
        order = train_anchors[rng.permutation(len(train_anchors))]
        total, count = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            chunk = order[i:i + cfg.batch_size]
            loss, grads = loss_and_grad(model, data.batch(chunk), data.norm, cfg.loss, cfg.huber_delta)
            if cfg.grad_clip is not None:
                clip_grad_norm(grads, cfg.grad_clip)
            adamw_step(opt, params, grads, lr)
            total += loss * len(chunk)
            count += len(chunk)
        val = evaluate(model, data, "val", cfg)
        if not math.isfinite(val["loss"]):
            raise NumericalError("validation")
        record = {"epoch": epoch, "lr": lr, "train_loss": total / count, "val_loss": val["loss"],
                  "val_mae": val["mae"], "val_rmse": val["rmse"], "val_mape": val["mape"]}
        history.append(record)
        log.info("epoch %d lr %.6g train %.5f val %.5f", epoch, lr, record["train_loss"], val["loss"])
        if on_epoch is not None:
            on_epoch(record)
        if val["loss"] < best_val:
            best_val, best_epoch, best_state = val["loss"], epoch, store.state()
        elif epoch - best_epoch >= cfg.patience:
            stopped = True
            break
    store.load_state(best_state)
    return TrainResult(best_state, best_epoch, history, opt, stopped)


# ------------------------------------------------------------ verification

def finite_diff_check(model, batch, norm, n_probes=25, seed=0, kind="mae"):
    """Worst relative error between backward() and central differences on
    ``n_probes`` coordinates: a tensor is drawn uniformly, then an entry."""
    rng = np.random.default_rng(seed)
    tensors = model.store.tensors()

    def loss_fn():
        return batch_loss(model, batch, norm, kind)[0]

    grads = gradcheck.analytic_grads(loss_fn, tensors)
    worst, records = 0.0, []
    for _ in range(n_probes):
        ti = int(rng.integers(len(tensors)))
        j = int(rng.integers(tensors[ti].size))
        a = grads[ti].reshape(-1)[j]
        n = gradcheck.numeric_partial(loss_fn, tensors[ti], j)
        err = gradcheck.relative_error(a, n)
        records.append((model.store.names()[ti], j, float(a), float(n), err))
        worst = max(worst, err)
    return worst, records
