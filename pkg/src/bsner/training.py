"""AdamW, gradient clipping, the warmup/decay schedule and the training loop."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import ops
from .corpus import Span
from .decoding import PredictedEntity, decode, evaluate
from .model import BiaffineNER, ModelConfig, make_batch
from .smoothing import TargetMode
from .tensor import Graph

logger = logging.getLogger(__name__)

Item = tuple[np.ndarray, Sequence[Span]]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 48
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_fraction: float = 0.2
    clip_norm: float = 5.0
    seed: int = 0
    target_mode: TargetMode = field(default_factory=TargetMode)

    def __post_init__(self) -> None:
        if isinstance(self.target_mode, dict):
            self.target_mode = TargetMode.from_dict(self.target_mode)
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError(f"warmup_fraction must be in (0, 1), got {self.warmup_fraction}")
        if self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "batch_size": self.batch_size, "lr": self.lr,
            "weight_decay": self.weight_decay, "warmup_fraction": self.warmup_fraction,
            "clip_norm": self.clip_norm, "seed": self.seed, "target_mode": self.target_mode.to_dict(),
        }


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    dev_loss: Optional[float] = None
    dev_precision: Optional[float] = None
    dev_recall: Optional[float] = None
    dev_f1: Optional[float] = None
    mean_confidence: Optional[float] = None


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update followed by decoupled decay, in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {name!r}")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, theta in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        theta -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(theta.dtype, copy=False)
        if weight_decay:
            theta -= theta.dtype.type(lr * weight_decay) * theta


def lr_at(step: int, total_steps: int, peak_lr: float, warmup_fraction: float) -> float:
    """Linear 0 -> peak over the first ceil(warmup_fraction * total) steps, then linear to 0."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warm = math.ceil(warmup_fraction * total_steps)
    if step <= warm:
        return peak_lr * step / warm
    return peak_lr * (total_steps - step) / (total_steps - warm)


def clip_gradients(grads: Mapping[str, np.ndarray], max_norm: float = 5.0) -> float:
    """Scale all gradients in place so their global L2 norm is at most ``max_norm``."""
    sq = sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())
    norm = math.sqrt(sq)
    if norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for g in grads.values():
        g *= g.dtype.type(scale)
    return scale


def length_buckets(lengths: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle, group neighbours in length into batches, then shuffle batch order."""
    order = rng.permutation(len(lengths))
    order = order[np.argsort(lengths[order], kind="stable")]
    batches = [order[k:k + batch_size] for k in range(0, len(order), batch_size)]
    return [batches[k] for k in rng.permutation(len(batches))]


def sentence_losses(model: BiaffineNER, items: Sequence[Item], mode: TargetMode,
                    batch_size: int = 64) -> np.ndarray:
    """Per-sentence eval-mode loss, in input order."""
    cfg = model.config
    out = []
    for k in range(0, len(items), batch_size):
        batch = make_batch(items[k:k + batch_size], cfg.type_count, cfg.max_width, mode)
        probs = model.forward(batch, training=False)
        per_span = ops.soft_cross_entropy(probs, batch.targets).data
        out.append(np.sum(per_span, axis=(1, 2), dtype=np.float64))
    return np.concatenate(out) if out else np.zeros(0)


def mean_loss(model: BiaffineNER, items: Sequence[Item], mode: TargetMode, batch_size: int = 64) -> float:
    return float(np.mean(sentence_losses(model, items, mode, batch_size)))


def predict(model: BiaffineNER, items: Sequence[Item], decode_mode: str = "flat",
            min_confidence: float = 0.0, batch_size: int = 64) -> list[list[PredictedEntity]]:
    cfg = model.config
    out: list[list[PredictedEntity]] = []
    for k in range(0, len(items), batch_size):
        chunk = items[k:k + batch_size]
        batch = make_batch(chunk, cfg.type_count, cfg.max_width)
        probs = model.predict(batch)
        for b, (ids, _) in enumerate(chunk):
            n = len(ids)
            out.append(decode(probs[b, :n, :n], decode_mode, batch.valid[b, :n, :n],
                              min_confidence, sentence_id=k + b))
    return out


def gold_sets(items: Sequence[Item]) -> list[set]:
    return [{tuple(s) for s in spans} for _, spans in items]


@dataclass
class TrainResult:
    model: BiaffineNER
    metrics: list[EpochMetrics]
    best_state: dict[str, np.ndarray]
    best_epoch: Optional[int]


def train(
    train_items: Sequence[Item],
    model_config: ModelConfig,
    config: TrainConfig,
    dev_items: Optional[Sequence[Item]] = None,
    decode_mode: str = "flat",
    on_epoch: Optional[Callable[[EpochMetrics], None]] = None,
) -> TrainResult:
    """Train from scratch, consuming one seeded generator in a fixed order:
    parameter init, then per epoch the shuffle and batch-order permutations,
    then per batch the dropout masks in forward order."""
    if not train_items:
        raise ValueError("training split is empty")
    rng = np.random.default_rng(config.seed)
    model = BiaffineNER(model_config, rng)
    lengths = np.array([len(ids) for ids, _ in train_items])
    n_batches = math.ceil(len(train_items) / config.batch_size)
    total = n_batches * config.epochs
    state = AdamState()
    mode = config.target_mode
    metrics: list[EpochMetrics] = []
    best_state, best_epoch, best_f1 = model.state_dict(), None, -1.0
    gold_dev = gold_sets(dev_items) if dev_items else None
    step = 0
    for epoch in range(1, config.epochs + 1):
        loss_sum = 0.0
        for idx in length_buckets(lengths, config.batch_size, rng):
            step += 1
            batch = make_batch([train_items[k] for k in idx], model_config.type_count,
                               model_config.max_width, mode)
            with Graph() as graph, np.errstate(over="ignore", invalid="ignore"):
                try:
                    probs = model.forward(batch, training=True, rng=rng)
                except ops.NonFiniteError as exc:
                    raise TrainingDiverged(f"epoch {epoch}, step {step}: {exc}") from None
                loss = model.loss(probs, batch.targets)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}")
                graph.backward(loss)
            grads = {k: p.grad if p.grad is not None else np.zeros_like(p.data)
                     for k, p in model.params.items()}
            clip_gradients(grads, config.clip_norm)
            lr = lr_at(step, total, config.lr, config.warmup_fraction)
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    adamw_step({k: p.data for k, p in model.params.items()}, grads, state, lr, config.weight_decay)
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"epoch {epoch}, step {step}: {exc}") from None
            model.zero_grad()
            loss_sum += value * batch.size
        m = EpochMetrics(epoch, loss_sum / len(train_items))
        if dev_items:
            try:
                m.dev_loss = mean_loss(model, dev_items, mode)
                preds = predict(model, dev_items, decode_mode)
            except ops.NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch}, dev evaluation: {exc}") from None
            report = evaluate(preds, gold_dev)
            m.dev_precision, m.dev_recall, m.dev_f1 = report.precision, report.recall, report.f1
            confs = [e.confidence for sent in preds for e in sent]
            m.mean_confidence = float(np.mean(confs)) if confs else 0.0
            if m.dev_f1 > best_f1:
                best_f1, best_epoch, best_state = m.dev_f1, epoch, model.state_dict()
        logger.info("epoch %d: %s", epoch, m)
        metrics.append(m)
        if on_epoch is not None:
            on_epoch(m)
    if not dev_items:
        best_state, best_epoch = model.state_dict(), (config.epochs or None)
    return TrainResult(model, metrics, best_state, best_epoch)


METRICS_HEADER = ["epoch", "train_loss", "dev_loss", "dev_p", "dev_r", "dev_f1", "mean_conf"]


def metrics_csv(metrics: Sequence[EpochMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for m in metrics:
        row = [m.epoch, m.train_loss, m.dev_loss, m.dev_precision, m.dev_recall, m.dev_f1, m.mean_confidence]
        w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()
