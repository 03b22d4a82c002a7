"""AdamW, the per-epoch training step loop, and early-stopped fitting."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .data import Dataset
from .errors import BatchCompositionError, ConfigError, DataError, TrainingError
from .evaluation import classification_metrics, confusion
from .losses import LossConfig, combined_loss
from .model import Model, label_to_index
from .sampling import (
    OUTLIER,
    ClassIndex,
    SamplerConfig,
    class_sampling_weights,
    mining_fraction,
    sample_batch,
    sample_quadruplets,
)
from .seeding import fork_rng

logger = logging.getLogger(__name__)

MAX_COMPOSITION_RETRIES = 10


@dataclass
class TrainConfig:
    lr: float = 0.005
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 20
    patience: int = 5
    loss: LossConfig = field(default_factory=LossConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    seed: int = 0

    @property
    def batch_size(self) -> int:
        return self.sampler.batch_size

    @property
    def quads_per_batch(self) -> int:
        return self.sampler.quads_per_batch

    def validate(self) -> None:
        if not self.lr > 0:
            raise ConfigError("must be > 0", "train.lr")
        if self.weight_decay < 0:
            raise ConfigError("must be >= 0", "train.weight_decay")
        if not 0 <= self.beta1 < 1:
            raise ConfigError("must lie in [0, 1)", "train.beta1")
        if not 0 <= self.beta2 < 1:
            raise ConfigError("must lie in [0, 1)", "train.beta2")
        if not self.adam_eps > 0:
            raise ConfigError("must be > 0", "train.adam_eps")
        if self.max_epochs < 0:
            raise ConfigError("must be >= 0", "train.max_epochs")
        if self.patience < 1:
            raise ConfigError("must be >= 1", "train.patience")
        self.loss.validate()
        self.sampler.validate()


# ---------------------------------------------------------------- AdamW


@dataclass
class AdamWState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0


def adamw_step(params, grads, state: AdamWState, config: TrainConfig, names=None):
    """One decoupled-weight-decay Adam update, applied in place.

    ``params`` are float arrays (or Tensors, whose ``.data`` is updated).
    The decay term uses the pre-update parameter value.
    """
    arrays = [p.data if isinstance(p, nx.Tensor) else p for p in params]
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            name = names[i] if names else getattr(params[i], "name", None) or f"param[{i}]"
            raise TrainingError("non-finite gradient", name)
    if not state.m:
        state.m = [np.zeros_like(a) for a in arrays]
        state.v = [np.zeros_like(a) for a in arrays]
    state.t += 1
    b1, b2, lr, wd = config.beta1, config.beta2, config.lr, config.weight_decay
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
        decay = lr * wd * a
        a -= step
        a -= decay
    return params, state


# ---------------------------------------------------------------- epochs


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    mining_fraction: float
    steps: int
    seconds: float


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_balanced_accuracy: float
    mining_fraction: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_metric: float | None = None
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.records)


def check_trainable(data: Dataset) -> None:
    labels = data.labels
    values, counts = np.unique(labels, return_counts=True)
    paired = [v for v, c in zip(values, counts) if v != OUTLIER and c >= 2]
    if len(paired) < 2 or len(values) < 3:
        raise DataError(
            "training data needs two labelled classes with at least 2 samples each and one further label; "
            f"found label counts {dict(zip(values.tolist(), counts.tolist()))}"
        )


def training_weights(index: ClassIndex, outlier_share: float) -> dict[int, float]:
    """Sampler weights with absent labels dropped and the rest renormalised."""
    counts = index.counts()
    share = outlier_share if counts[OUTLIER] > 0 else 0.0
    weights = class_sampling_weights(index.num_classes, share)
    weights = {c: w for c, w in weights.items() if counts[c] > 0 and w > 0}
    total = sum(weights.values())
    return {c: w / total for c, w in weights.items()}


def _draw_batch(index, weights, labels, config, rng):
    for _ in range(MAX_COMPOSITION_RETRIES + 1):
        batch = sample_batch(index, weights, config.batch_size, rng)
        try:
            quads = sample_quadruplets(labels[batch], config.quads_per_batch, rng)
        except BatchCompositionError:
            continue
        return batch, quads
    raise DataError(f"{MAX_COMPOSITION_RETRIES + 1} consecutive batches admitted no valid quadruplet")


def train_epoch(
    model: Model,
    train_data: Dataset,
    config: TrainConfig,
    epoch: int,
    optimizer: AdamWState | None = None,
) -> EpochReport:
    """Run ceil(N / B) sampled steps. Randomness comes from (seed, epoch) alone."""
    check_trainable(train_data)
    start = time.perf_counter()
    optimizer = optimizer if optimizer is not None else AdamWState()
    model.train()
    index = ClassIndex(train_data.labels, train_data.num_classes)
    weights = training_weights(index, config.sampler.outlier_share)
    rng = fork_rng(config.seed, "sampler", epoch)
    fraction = mining_fraction(epoch)
    params = model.parameters()
    names = [p.name for p in params]
    steps = math.ceil(train_data.n / config.batch_size)
    losses = []
    for _ in range(steps):
        batch, quads = _draw_batch(index, weights, train_data.labels, config, rng)
        x = nx.Tensor(train_data.features[batch])
        emb, logits = model.forward(x)
        probs = nx.softmax(logits)
        targets = label_to_index(train_data.labels[batch])
        loss = combined_loss(emb, quads, probs, targets, config.loss, fraction, model.config.num_classes)
        nx.backward(loss, params)
        adamw_step(params, [p.grad for p in params], optimizer, config, names)
        losses.append(loss.item())
    return EpochReport(epoch, float(np.mean(losses)), fraction, steps, time.perf_counter() - start)


def validation_score(model: Model, data: Dataset) -> float:
    model.eval()
    try:
        preds = model.predict(data.features)
    finally:
        model.train()
    return classification_metrics(confusion(preds, data.labels, model.config.num_classes)).balanced_accuracy


def fit(model: Model, train_data: Dataset, val_data: Dataset, config: TrainConfig) -> tuple[Model, TrainHistory]:
    """Train with early stopping on validation balanced accuracy.

    The returned model carries the weights of the best epoch and is left in
    eval mode.
    """
    config.validate()
    history = TrainHistory()
    if set(train_data.ids) & set(val_data.ids):
        raise DataError("train and validation sets share sample ids")
    if config.max_epochs == 0:
        model.eval()
        return model, history
    check_trainable(train_data)
    optimizer = AdamWState()
    best_state = None
    wait = 0
    for epoch in range(1, config.max_epochs + 1):
        report = train_epoch(model, train_data, config, epoch, optimizer)
        score = validation_score(model, val_data)
        history.records.append(
            EpochRecord(epoch, report.train_loss, score, report.mining_fraction, report.seconds)
        )
        logger.info("epoch %d loss %.5f val_bacc %.4f", epoch, report.train_loss, score)
        if history.best_metric is None or score > history.best_metric:
            history.best_metric = score
            history.best_epoch = epoch
            best_state = model.state()
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                history.stopped_early = True
                break
    model.load_state(best_state)
    model.eval()
    return model, history


HISTORY_COLUMNS = ("epoch", "train_loss", "val_balanced_accuracy", "mining_fraction")


def write_history_csv(history: TrainHistory, path) -> None:
    """Deterministic per-epoch record; wall time goes to ``write_timing_csv``."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in history.records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_balanced_accuracy), repr(r.mining_fraction)])


def write_timing_csv(history: TrainHistory, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "seconds"))
        for r in history.records:
            w.writerow([r.epoch, f"{r.seconds:.6f}"])
