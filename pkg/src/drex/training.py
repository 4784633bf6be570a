"""Training over precomputed features, plus evaluation and reporting.

Features are inputs, never parameters: the loop reads the manifests once
into matrices and only the fusion/head weights change. One optimizer step
per batch, the one-cycle schedule consumed exactly once per step, EMA
updated after every step, the last short batch kept.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .autodiff import huber_loss
from .checkpoint import Checkpoint
from .exceptions import TrainingDivergedError
from .features import DatasetManifest, require_matching_dims
from .metrics import MetricReport, compute_report
from .model import FusionConfig, forward_graph, init_params, predict_batch
from .optim import AdamWState, EmaState, OneCycleSchedule, adamw_step, ema_update, onecycle_lr

_EVAL_CHUNK = 1024


@dataclass
class TrainConfig:
    """Optimizer, schedule, EMA, and loop settings with the stock defaults."""

    epochs: int = 10
    batch_size: int = 16
    max_lr: float = 1e-3
    ema_decay: float = 0.999
    huber_delta: float = 1.0
    seed: int = 0
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    eval_with_ema: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.max_lr <= 0:
            raise ValueError(f"max_lr must be positive, got {self.max_lr}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must be in [0, 1), got {self.ema_decay}")
        if self.huber_delta <= 0:
            raise ValueError(f"huber_delta must be positive, got {self.huber_delta}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "max_lr": self.max_lr,
            "ema_decay": self.ema_decay,
            "huber_delta": self.huber_delta,
            "seed": self.seed,
            "pct_start": self.pct_start,
            "div_factor": self.div_factor,
            "final_div_factor": self.final_div_factor,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "weight_decay": self.weight_decay,
            "eval_with_ema": self.eval_with_ema,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainReport:
    """Loss/LR traces and the final validation metrics for one run.

    epoch_seconds is wall-clock and therefore not part of the serialized
    report (see render_report).
    """

    epoch_losses: list[float]
    lr_trace: list[float]
    val_metrics: MetricReport | None
    epoch_seconds: list[float]
    n_train: int
    total_steps: int


def train(
    model_config: FusionConfig,
    train_config: TrainConfig,
    train_set: DatasetManifest,
    val_set: DatasetManifest | None,
) -> tuple[Checkpoint, TrainReport]:
    """Run the full regime and return the checkpoint plus its report.

    Deterministic for fixed seeds: initialization, per-epoch shuffling,
    and dropout all come from seeded generators.
    """
    if len(train_set) == 0:
        raise ValueError("training manifest is empty")
    require_matching_dims(train_set, model_config.dino_dim, model_config.resnet_dim)
    targets64 = train_set.scores()

    params = init_params(model_config, dtype=np.float32)
    adamw = AdamWState(
        params.store,
        beta1=train_config.beta1,
        beta2=train_config.beta2,
        eps=train_config.adam_eps,
        weight_decay=train_config.weight_decay,
    )
    ema = EmaState.from_params(params.store, train_config.ema_decay)

    n = len(train_set)
    steps_per_epoch = math.ceil(n / train_config.batch_size)
    total_steps = train_config.epochs * steps_per_epoch
    sched = OneCycleSchedule(
        max_lr=train_config.max_lr,
        total_steps=total_steps,
        pct_start=train_config.pct_start,
        div_factor=train_config.div_factor,
        final_div_factor=train_config.final_div_factor,
    )
    rng = np.random.default_rng([train_config.seed, 1])

    dino_all = train_set.dino_matrix()
    resnet_all = train_set.resnet_matrix()
    targets = targets64.astype(np.float32)

    epoch_losses: list[float] = []
    epoch_seconds: list[float] = []
    lr_trace: list[float] = []
    step = 0
    for epoch in range(train_config.epochs):
        tic = time.perf_counter()
        order = rng.permutation(n)
        loss_sum = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * train_config.batch_size : (b + 1) * train_config.batch_size]
            lr = onecycle_lr(sched, step)
            lr_trace.append(lr)
            fp = forward_graph(
                params, dino_all[idx], resnet_all[idx], training=True, rng=rng
            )
            loss = huber_loss(fp.pred, targets[idx], train_config.huber_delta)
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch + 1}, batch {b + 1} "
                    f"(global step {step + 1}, first record {train_set.records[idx[0]].id!r})"
                )
            params.store.zero_grad()
            loss.backward()
            adamw_step(params.store, adamw, lr)
            ema_update(ema, params.store)
            loss_sum += loss_value * len(idx)
            step += 1
        epoch_losses.append(loss_sum / n)
        epoch_seconds.append(time.perf_counter() - tic)

    checkpoint = Checkpoint(params=params, ema=ema, train_record=train_config.to_dict())
    val_metrics = evaluate(checkpoint, val_set) if val_set is not None else None
    report = TrainReport(
        epoch_losses=epoch_losses,
        lr_trace=lr_trace,
        val_metrics=val_metrics,
        epoch_seconds=epoch_seconds,
        n_train=n,
        total_steps=total_steps,
    )
    return checkpoint, report


def predict_manifest(
    checkpoint: Checkpoint,
    eval_set: DatasetManifest,
    *,
    use_ema: bool | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(predictions, w_d) over a manifest, in record order, inference mode."""
    params = checkpoint.eval_params(use_ema)
    require_matching_dims(eval_set, params.config.dino_dim, params.config.resnet_dim)
    dino = eval_set.dino_matrix()
    resnet = eval_set.resnet_matrix()
    preds = np.empty(len(eval_set), dtype=np.float64)
    w_d = np.empty(len(eval_set), dtype=np.float64)
    for start in range(0, len(eval_set), _EVAL_CHUNK):
        stop = min(start + _EVAL_CHUNK, len(eval_set))
        p, w = predict_batch(params, dino[start:stop], resnet[start:stop])
        preds[start:stop] = p
        w_d[start:stop] = w
    return preds, w_d


def evaluate(
    checkpoint: Checkpoint,
    eval_set: DatasetManifest,
    *,
    use_ema: bool | None = None,
) -> MetricReport:
    """Score a checkpoint against a manifest's ground truth."""
    scores = eval_set.scores()
    preds, _ = predict_manifest(checkpoint, eval_set, use_ema=use_ema)
    return compute_report(scores, preds)


def render_report(report: TrainReport) -> str:
    """Deterministic plain-text report: training traces and final metrics.

    Wall-clock timings are deliberately excluded so that reruns with the
    same seeds produce byte-identical report files.
    """
    lines = [
        f"train_records: {report.n_train}",
        f"optimizer_steps: {report.total_steps}",
        f"epochs: {len(report.epoch_losses)}",
    ]
    for i, loss in enumerate(report.epoch_losses, start=1):
        lines.append(f"epoch_{i}_mean_loss: {loss!r}")
    if report.val_metrics is not None:
        lines.append("validation:")
        for row in report.val_metrics.format().splitlines():
            lines.append(f"  {row}")
    return "\n".join(lines) + "\n"
