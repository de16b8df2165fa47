"""Seeded training loop: AdamW with linear learning-rate decay, no warm-up."""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .losses import LossVariant, batch_loss
from .model import MlpClassifier

PAPER_PRESET_LR = 5e-5  # transformer fine-tuning rate; MLP default is 1e-3


class TrainingDiverged(Exception):
    """Raised when the loss or a gradient becomes non-finite."""


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    variant: LossVariant = LossVariant.IDIL

    def __post_init__(self):
        if isinstance(self.variant, str):
            self.variant = LossVariant.parse(self.variant)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.variant is not LossVariant.CE and self.batch_size < 2:
            raise ValueError("IDIL-family variants need batch_size >= 2 to form pairs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


@dataclass
class TrainLog:
    seed: int
    variant: str
    step_losses: list[float] = field(default_factory=list)
    epoch_metrics: list[dict] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["step", "loss"])
            for step, loss in enumerate(self.step_losses):
                writer.writerow([step, repr(loss)])

    def write_epoch_csv(self, path: str | Path) -> None:
        if not self.epoch_metrics:
            return
        keys = list(self.epoch_metrics[0])
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["epoch"] + keys)
            for epoch, row in enumerate(self.epoch_metrics):
                writer.writerow([epoch] + [repr(row[k]) for k in keys])


def linear_lr(step: int, total_steps: int, lr0: float) -> float:
    """lr0 * (1 - step / total_steps); no warm-up."""
    if total_steps == 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 - step / total_steps)


def adamw_step(
    params: dict[str, ad.Tensor],
    state: AdamWState,
    lr: float,
    cfg: TrainConfig,
) -> None:
    """Decoupled-weight-decay Adam update, in place."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.values)
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.values)
            state.v[name] = np.zeros_like(p.values)
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        p.values -= lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p.values)


def step_count(n_train: int, cfg: TrainConfig) -> int:
    return cfg.epochs * math.ceil(n_train / cfg.batch_size)


def train(
    model: MlpClassifier,
    features: np.ndarray,
    labels: list[int],
    cfg: TrainConfig,
    val_hook: Callable[[int, MlpClassifier], dict] | None = None,
) -> TrainLog:
    """Train in place; deterministic given (model init, features, cfg.seed).

    Per epoch: seeded shuffle, fixed-size mini-batches with the final partial
    batch kept, forward -> batch_loss -> backward -> AdamW with linear decay.
    """
    n = features.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    if len(labels) != n:
        raise ValueError("features/labels length mismatch")

    total_steps = step_count(n, cfg)
    state = AdamWState()
    log = TrainLog(seed=cfg.seed, variant=cfg.variant.value, config=vars(cfg).copy())
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        epoch_all_single_label = True
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch_labels = [labels[i] for i in idx]
            if len(set(batch_labels)) > 1:
                epoch_all_single_label = False
            model.zero_grad()
            probs, _ = model.forward(features[idx])
            loss = batch_loss(probs, batch_labels, cfg.variant)
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                raise TrainingDiverged(f"non-finite loss at step {step}")
            ad.backward(loss)
            adamw_step(params, state, linear_lr(step, total_steps, cfg.lr), cfg)
            log.step_losses.append(loss_val)
            step += 1
        if epoch_all_single_label and cfg.variant is not LossVariant.CE:
            warnings.warn(
                f"epoch {epoch}: every batch contained a single label; "
                "IDIL loss was identically zero",
                stacklevel=2,
            )
        log.epoch_seconds.append(time.perf_counter() - t0)
        if val_hook is not None:
            log.epoch_metrics.append(val_hook(epoch, model))
    return log
