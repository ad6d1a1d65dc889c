"""Training loop, evaluation and the batch-size sweep.

A single generator seeded from ``TrainConfig.seed`` is drawn in a fixed order:
parameter init, then the split (when the samples arrive unsplit), then for
every epoch the shuffle followed by the dropout masks of each batch.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from .backbone import BackboneConfig
from .data import SPLIT_MODES, Sample, split_dataset, stack
from .errors import ConfigError, DataError, DivergenceError
from .head import PROB_FLOOR
from .metrics import MetricsReport, attach_roc, compute_metrics, confusion_counts
from .model import ModelConfig, check_params, init_params, loss_and_grads, predict_probs
from .optim import AdamState, adam_step, sgd_step

log = logging.getLogger(__name__)

DEFAULT_SWEEP = (8, 16, 32, 64, 128, 256)


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 32
    learning_rate: float = 0.001
    seed: int = 0
    routing_iters: int = 3
    attention: bool = True
    drop_rate: float = 0.8
    split: str = "70/10/20"
    optimizer: str = "adam"
    softmax_sign: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ConfigError(f"drop_rate must be in [0, 1), got {self.drop_rate}")
        if self.split not in SPLIT_MODES:
            raise ConfigError(f"split must be one of {sorted(SPLIT_MODES)}, got {self.split!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")

    def model_config(self, input_shape: tuple[int, int, int], n_classes: int) -> ModelConfig:
        return ModelConfig(
            input_shape=input_shape,
            n_classes=n_classes,
            backbone=BackboneConfig(in_channels=input_shape[0], drop_rate=self.drop_rate),
            routing_iters=self.routing_iters,
            attention=self.attention,
            softmax_sign=self.softmax_sign,
        )

    @classmethod
    def from_dict(cls, d: Mapping) -> TrainConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    train_precision: float
    train_recall: float
    val_loss: float | None = None
    val_accuracy: float | None = None
    val_precision: float | None = None
    val_recall: float | None = None


@dataclass
class TrainLog:
    seed: int
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    wall_time: float = 0.0

    def to_jsonl(self) -> str:
        """Deterministic serialisation; wall time is left out so reruns compare byte-equal."""
        lines = [json.dumps({"seed": self.seed, "best_epoch": self.best_epoch}, sort_keys=True)]
        lines += [json.dumps(asdict(r), sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> TrainLog:
        d = dict(d)
        d["records"] = [EpochRecord(**r) for r in d.get("records", [])]
        return cls(**d)


def _mean_ce(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(labels.size), labels]
    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


def _summary(probs: np.ndarray, labels: np.ndarray, n: int) -> MetricsReport:
    return compute_metrics(confusion_counts(probs.argmax(axis=1), labels, n))


def infer_shape(samples: Sequence[Sample]) -> tuple[tuple[int, int, int], int]:
    if not samples:
        raise DataError("empty dataset")
    shape = samples[0].image.shape
    for s in samples:
        if s.image.shape != shape:
            raise DataError(f"{s.source}: image shape {s.image.shape} differs from {shape}")
    return tuple(shape), max(s.label for s in samples) + 1


def _start(config: TrainConfig, model_cfg: ModelConfig, samples: Sequence[Sample]):
    rng = np.random.default_rng(config.seed)
    params = init_params(model_cfg, rng)
    if any(s.split is None for s in samples):
        samples = split_dataset(samples, rng, config.split)
    return rng, params, samples


def replay_split(config: TrainConfig, model_cfg: ModelConfig, samples: Sequence[Sample]) -> list[Sample]:
    """The split ``train`` would draw for these unsplit samples."""
    return list(_start(config, model_cfg, samples)[2])


def train(config: TrainConfig, samples: Sequence[Sample], model_cfg: ModelConfig | None = None,
          n_classes: int | None = None) -> tuple[dict[str, np.ndarray], TrainLog]:
    """Train from scratch; returns the best-validation-loss parameters and the log.

    Without a validation split the final epoch's parameters are returned.
    """
    start = time.perf_counter()
    if model_cfg is None:
        shape, seen = infer_shape(samples)
        model_cfg = config.model_config(shape, n_classes or seen)
    rng, params, samples = _start(config, model_cfg, samples)
    tlog = TrainLog(seed=config.seed)
    if config.epochs == 0:
        return params, tlog
    x_train, y_train = stack(samples, "train")
    x_val, y_val = stack(samples, "val")
    if y_train.size == 0:
        raise DataError("training split is empty")
    n = model_cfg.n_classes
    state = AdamState()
    best, best_loss = params, np.inf

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(y_train.size)
        batch_probs, batch_losses = [], []
        for b, lo in enumerate(range(0, order.size, config.batch_size), start=1):
            idx = order[lo:lo + config.batch_size]
            loss, grads, probs = loss_and_grads(params, x_train[idx], y_train[idx], model_cfg,
                                                training=True, rng=rng)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, b, loss)
            if config.optimizer == "adam":
                params, state = adam_step(params, grads, state, config.learning_rate)
            else:
                params = sgd_step(params, grads, config.learning_rate)
            batch_probs.append(probs)
            batch_losses.append(loss * idx.size)
        seen_labels = y_train[order]
        tr = _summary(np.concatenate(batch_probs), seen_labels, n)
        rec = EpochRecord(epoch, float(np.sum(batch_losses)) / y_train.size,
                          tr.accuracy, tr.precision, tr.recall)
        if y_val.size:
            vp = predict_probs(params, x_val, model_cfg)
            rec.val_loss = _mean_ce(vp, y_val)
            if not np.isfinite(rec.val_loss):
                raise DivergenceError(epoch, 0, rec.val_loss)
            vr = _summary(vp, y_val, n)
            rec.val_accuracy, rec.val_precision, rec.val_recall = vr.accuracy, vr.precision, vr.recall
            if rec.val_loss < best_loss:
                best, best_loss, tlog.best_epoch = params, rec.val_loss, epoch
        else:
            best, tlog.best_epoch = params, epoch
        tlog.records.append(rec)
        log.info("epoch %d: train loss %.4f acc %.4f | val loss %s acc %s", epoch, rec.train_loss,
                 rec.train_accuracy, rec.val_loss, rec.val_accuracy)
    tlog.wall_time = time.perf_counter() - start
    return best, tlog


def evaluate(params: Mapping[str, np.ndarray], model_cfg: ModelConfig, samples: Sequence[Sample],
             split: str | None = "test") -> MetricsReport:
    """Inference-mode metrics with one-vs-rest ROC/AUC on one split."""
    check_params(params, model_cfg)
    x, y = stack(samples, split)
    if y.size == 0:
        raise DataError(f"split {split!r} has no samples")
    probs = predict_probs(params, x, model_cfg)
    report = _summary(probs, y, model_cfg.n_classes)
    return attach_roc(report, probs, y)


@dataclass
class SweepRow:
    batch_size: int
    report: MetricsReport
    log: TrainLog


def sweep_batch_size(config: TrainConfig, samples: Sequence[Sample],
                     sizes: Sequence[int] = DEFAULT_SWEEP, n_classes: int | None = None) -> list[SweepRow]:
    """One model per batch size, same seed and split; sizes above the train-set size are skipped."""
    if not sizes:
        raise ConfigError("sweep needs at least one batch size")
    shape, seen = infer_shape(samples)
    model_cfg = config.model_config(shape, n_classes or seen)
    # every run shares the seed, hence the same init draws and the same split;
    # train() gets the samples as given so its rng stream matches a plain run
    split = replay_split(config, model_cfg, samples)
    n_train = sum(1 for s in split if s.split == "train")
    rows = []
    for size in sizes:
        if size > n_train:
            log.warning("batch size %d exceeds the %d training samples; skipped", size, n_train)
            continue
        cfg = TrainConfig(**{**asdict(config), "batch_size": int(size)})
        params, tlog = train(cfg, samples, model_cfg)
        rows.append(SweepRow(int(size), evaluate(params, model_cfg, split, "test"), tlog))
    return rows
