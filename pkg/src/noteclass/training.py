"""Supervised training loop: stratified validation split, Adam, plateau-based
learning-rate decay and early stopping with best-checkpoint restore."""

from __future__ import annotations

import copy
import csv
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .notes import DataError


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 0.001
    plateau_factor: float = 0.2
    plateau_patience: int = 2
    early_stop_patience: int = 10
    val_fraction: float = 0.05
    batch_size: int = 64
    max_epochs: int = 100
    seed: int = 0
    min_delta: float = 1e-4   # improvement = val loss decrease of at least this
    lr_floor: float = 1e-7

    def __post_init__(self):
        if not 0.0 < self.plateau_factor < 1.0:
            raise DataError("plateau factor must lie in (0, 1)")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise DataError("patience values must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise DataError("batch size and epoch cap must be >= 1")


@dataclass
class TrainHistory:
    """Per-epoch record of the run."""

    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    wall_s: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def append(self, train_loss, val_loss, lr, wall_s):
        self.train_loss.append(float(train_loss))
        self.val_loss.append(float(val_loss))
        self.lr.append(float(lr))
        self.wall_s.append(float(wall_s))

    def __len__(self):
        return len(self.train_loss)

    def to_csv(self, path, meta: Optional[dict] = None) -> None:
        with open(path, "w", newline="") as fh:
            for key, value in (meta or {}).items():
                fh.write(f"# {key}={value}\n")
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for e in range(len(self)):
                writer.writerow([e, f"{self.train_loss[e]:.6f}",
                                 f"{self.val_loss[e]:.6f}", f"{self.lr[e]:.8g}"])


class PlateauSchedule:
    """Validation-driven schedule: multiply the rate by ``factor`` after
    ``patience`` consecutive epochs without improvement; request a stop once
    the best loss is ``stop_patience`` epochs old."""

    def __init__(self, initial_lr: float, factor: float, patience: int,
                 stop_patience: int, min_delta: float = 1e-4, lr_floor: float = 1e-7):
        self.lr = float(initial_lr)
        self.factor = factor
        self.patience = patience
        self.stop_patience = stop_patience
        self.min_delta = min_delta
        self.lr_floor = lr_floor
        self.best = float("inf")
        self.wait = 0
        self.age = 0

    def update(self, val_loss: float) -> dict:
        """Consume one epoch's validation loss.

        Returns {"lr", "improved", "reduced", "stop"}.
        """
        improved = (self.best - val_loss) >= self.min_delta or self.best == float("inf")
        reduced = False
        if improved:
            self.best = float(val_loss)
            self.wait = 0
            self.age = 0
        else:
            self.wait += 1
            self.age += 1
            if self.wait >= self.patience:
                new_lr = max(self.lr * self.factor, self.lr_floor)
                reduced = new_lr < self.lr
                self.lr = new_lr
                self.wait = 0
        return {"lr": self.lr, "improved": improved, "reduced": reduced,
                "stop": self.age >= self.stop_patience}


def split_validation(labels: Sequence[int], fraction: float, seed: int):
    """Stratified split: per class c, round(fraction * |c|) examples go to
    validation.  Deterministic under a fixed seed; returns (train_idx, val_idx).
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    val_idx = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            warnings.warn(f"class {c} has no examples; skipped in validation split")
            continue
        n_val = int(round(fraction * members.size))
        picked = rng.permutation(members)[:n_val]
        val_idx.extend(picked.tolist())
    val_idx = np.array(sorted(val_idx), dtype=np.int64)
    mask = np.ones(labels.size, dtype=bool)
    mask[val_idx] = False
    return np.flatnonzero(mask), val_idx


def cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over the batch, fused log-softmax form."""
    return F.cross_entropy(logits, targets)


def _as_tensors(X, y):
    X = torch.as_tensor(np.asarray(X), dtype=torch.float32)
    y = torch.as_tensor(np.asarray(y), dtype=torch.long)
    if X.shape[0] != y.shape[0]:
        raise DataError("inputs and labels disagree on example count")
    return X, y


def recalibrate_batchnorm(model, X, batch_size: int = 64) -> None:
    """Replace BN running statistics with exact averages over ``X``.

    With the slow running-stat decay (0.99) and only a handful of optimizer
    steps per desk-scale epoch, the stored statistics lag far behind the
    activations; one cumulative-average pass reproduces the converged
    statistics a full-corpus epoch would give.
    """
    bn_layers = [m for m in model.modules() if isinstance(m, torch.nn.modules.batchnorm._BatchNorm)]
    if not bn_layers:
        return
    saved = [(bn.momentum) for bn in bn_layers]
    for bn in bn_layers:
        bn.reset_running_stats()
        bn.momentum = None  # cumulative moving average
    model.train()
    X = torch.as_tensor(np.asarray(X), dtype=torch.float32)
    with torch.no_grad():
        for lo in range(0, X.shape[0], batch_size):
            model(X[lo : lo + batch_size])
    for bn, momentum in zip(bn_layers, saved):
        bn.momentum = momentum
    model.eval()


def evaluate_loss(model, X, y, batch_size: int = 64) -> float:
    """Mean per-example loss in inference mode."""
    X, y = _as_tensors(X, y)
    model.eval()
    total, n = 0.0, 0
    with torch.no_grad():
        for lo in range(0, X.shape[0], batch_size):
            xb, yb = X[lo : lo + batch_size], y[lo : lo + batch_size]
            total += F.cross_entropy(model(xb), yb, reduction="sum").item()
            n += xb.shape[0]
    return total / max(n, 1)


def train(
    model,
    X_train,
    y_train,
    X_val,
    y_val,
    cfg: TrainConfig,
    on_epoch: Optional[Callable] = None,
) -> TrainHistory:
    """Run the training protocol; the model ends at its best-validation state.

    ``on_epoch(epoch, history, model)`` is called after each epoch; returning
    a truthy value stops training (the best checkpoint is still restored).
    """
    X_train, y_train = _as_tensors(X_train, y_train)
    X_val, y_val = _as_tensors(X_val, y_val)
    if X_train.shape[0] == 0:
        raise DataError("training set is empty")

    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.initial_lr,
                                 betas=(0.9, 0.999), eps=1e-8)
    schedule = PlateauSchedule(cfg.initial_lr, cfg.plateau_factor, cfg.plateau_patience,
                               cfg.early_stop_patience, cfg.min_delta, cfg.lr_floor)
    history = TrainHistory()
    best_state = copy.deepcopy(model.state_dict())

    for epoch in range(cfg.max_epochs):
        t0 = time.time()
        model.train()
        order = torch.randperm(X_train.shape[0], generator=gen)
        epoch_loss, seen = 0.0, 0
        for lo in range(0, order.shape[0], cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xb, yb = X_train[idx], y_train[idx]
            optimizer.zero_grad()
            loss = cross_entropy(model(xb), yb)
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch} (lr={schedule.lr:.3g})"
                )
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * xb.shape[0]
            seen += xb.shape[0]

        recalibrate_batchnorm(model, X_train, cfg.batch_size)
        val_loss = evaluate_loss(model, X_val, y_val, cfg.batch_size) if X_val.shape[0] else epoch_loss / seen
        if not np.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")

        state = schedule.update(val_loss)
        if state["improved"]:
            best_state = copy.deepcopy(model.state_dict())
            history.best_epoch = epoch
        for group in optimizer.param_groups:
            group["lr"] = state["lr"]
        history.append(epoch_loss / seen, val_loss, state["lr"], time.time() - t0)

        if on_epoch is not None and on_epoch(epoch, history, model):
            break
        if state["stop"]:
            history.stopped_early = True
            break

    model.load_state_dict(best_state)
    model.eval()
    return history
