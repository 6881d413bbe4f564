"""Training: cosine schedule with linear warm-up, AdamW, mini-batch loop,
batch-size grid search and a bag-of-words logistic-regression baseline."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint
from .dataset import Dataset, LabelCodec
from .metrics import macro_f1
from .model import (
    Batch,
    ModelConfig,
    NonFiniteError,
    Params,
    copy_params,
    cross_entropy_loss,
    init_params,
    loss_and_grad,
    predict_logits,
    softmax,
    trim_to_content,
)
from .rng import SplitMix64, derive_seed, permutation
from .tokenize import Vocabulary, encode_batch

log = logging.getLogger(__name__)

# derive_seed stream tags
_EPOCH_STREAM = 1
_DROPOUT_STREAM = 2


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 3e-4
    warmup_steps: int | None = None  # None: 10% of total_steps
    total_steps: int | None = None  # None: epochs * steps per epoch
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    dropout: float | None = None  # overrides ModelConfig.dropout_rate
    lr_floor: float = 0.0

    def __post_init__(self):
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must be in [0, 1)")
        if self.eps <= 0 or self.weight_decay < 0:
            raise ValueError("eps must be > 0 and weight_decay >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.warmup_steps is not None and self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if self.total_steps is not None and self.warmup_steps is not None \
                and self.total_steps <= self.warmup_steps:
            raise ValueError("total_steps must exceed warmup_steps")

    def resolved(self, steps_per_epoch: int) -> TrainConfig:
        """Copy with total/warm-up steps filled in for a given epoch length."""
        total = self.total_steps if self.total_steps is not None else self.epochs * steps_per_epoch
        warm = self.warmup_steps if self.warmup_steps is not None else int(0.1 * total)
        if total <= warm:
            raise ValueError(f"total_steps {total} must exceed warmup_steps {warm}")
        return replace(self, total_steps=total, warmup_steps=warm)

    def to_dict(self) -> dict:
        return asdict(self)


def cosine_lr(cfg: TrainConfig, step: int) -> float:
    """Linear warm-up to ``peak_lr`` over W steps, then half-cosine down to ``lr_floor`` at T."""
    if cfg.total_steps is None or cfg.warmup_steps is None:
        raise ValueError("cosine_lr needs a resolved TrainConfig")
    w, t = cfg.warmup_steps, cfg.total_steps
    if step < 0 or step > t:
        raise ValueError(f"step {step} outside 0..{t}")
    if step < w:
        return cfg.peak_lr * step / w
    progress = (step - w) / (t - w)
    return cfg.lr_floor + (cfg.peak_lr - cfg.lr_floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    m: Params
    v: Params
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Params) -> OptimizerState:
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adamw_step(params: Params, grads: Params, state: OptimizerState, cfg: TrainConfig,
               lr: float) -> tuple[Params, OptimizerState]:
    """One AdamW update, in place. Decay uses the pre-update weights."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"grad[{name}]", step=state.t + 1)
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, theta in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps) + lr * cfg.weight_decay * theta
        theta -= update
    return params, state


@dataclass
class EncodedSplit:
    ids: np.ndarray
    mask: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)


def encode_split(ds: Dataset, vocab: Vocabulary, codec: LabelCodec, max_len: int) -> EncodedSplit:
    ids, mask = encode_batch(vocab, ds.texts(), max_len)
    return EncodedSplit(ids, mask, np.asarray(codec.encode_many(ds.labels()), dtype=np.int64))


def evaluate_macro_f1(params: Params, mcfg: ModelConfig, split: EncodedSplit) -> float:
    preds = predict_logits(params, mcfg, split.ids, split.mask).argmax(axis=1)
    return macro_f1(split.targets, preds, mcfg.n_classes)


def train_model(train_ds: Dataset, val_ds: Dataset, vocab: Vocabulary, codec: LabelCodec,
                mcfg: ModelConfig, tcfg: TrainConfig) -> Checkpoint:
    """Mini-batch AdamW training; returns the best-validation-macro-F1 epoch.

    Each epoch visits the training set in a Fisher-Yates order seeded by
    ``(seed, epoch)``. Batches are trimmed to their longest sequence.
    """
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise TrainingError("train and validation splits must be non-empty")
    if tcfg.dropout is not None:
        mcfg = replace(mcfg, dropout_rate=tcfg.dropout)
    if mcfg.vocab_size != len(vocab) or mcfg.n_classes != len(codec):
        raise TrainingError("model config does not match vocabulary / label codec sizes")
    train = encode_split(train_ds, vocab, codec, mcfg.max_len)
    val = encode_split(val_ds, vocab, codec, mcfg.max_len)
    n, bs = len(train), tcfg.batch_size
    steps_per_epoch = math.ceil(n / bs)
    tcfg = tcfg.resolved(steps_per_epoch)

    params = init_params(mcfg)
    state = OptimizerState.zeros_like(params)
    history: list[dict] = []
    best_f1, best_params = -1.0, params
    step = 0
    for epoch in range(tcfg.epochs):
        order = np.asarray(permutation(n, SplitMix64(derive_seed(tcfg.seed, _EPOCH_STREAM, epoch))))
        loss_sum, lr = 0.0, 0.0
        for s in range(0, n, bs):
            if step >= tcfg.total_steps:
                break
            idx = order[s : s + bs]
            ids, mask = trim_to_content(train.ids[idx], train.mask[idx])
            batch = Batch(ids, mask, train.targets[idx])
            try:
                loss, grads = loss_and_grad(params, mcfg, batch, training=True,
                                            dropout_seed=derive_seed(tcfg.seed, _DROPOUT_STREAM, step))
            except NonFiniteError as exc:
                raise TrainingError(f"non-finite {exc.name} at step {step}") from exc
            step += 1
            lr = cosine_lr(tcfg, step)
            adamw_step(params, grads, state, tcfg, lr)
            loss_sum += loss * len(idx)
        val_f1 = evaluate_macro_f1(params, mcfg, val)
        history.append({"epoch": epoch + 1, "train_loss": loss_sum / n, "val_macro_f1": val_f1, "lr_last": lr})
        log.info("epoch %d loss %.4f val macro-F1 %.4f", epoch + 1, loss_sum / n, val_f1)
        if val_f1 > best_f1:
            best_f1, best_params = val_f1, copy_params(params)
    return Checkpoint(mcfg, vocab, codec, best_params, train_config=tcfg.to_dict(), history=history)


def write_history(history: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_macro_f1", "lr_last"])
        for h in history:
            w.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_macro_f1"]), repr(h["lr_last"])])


# --- batch-size grid search -------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    n_examples: int = 256
    seq_len: int | None = None  # None: cfg.max_len
    steps_per_candidate: int = 3
    seed: int = 0
    memory_ceiling_bytes: int = 2 * 1024**3


@dataclass
class GridResult:
    chosen: int
    table: list[dict] = field(default_factory=list)


def _activation_bytes(cfg: ModelConfig, batch_size: int, seq_len: int) -> int:
    """Float64 bytes held by the forward cache for one batch."""
    b, t, d, f, h = batch_size, seq_len, cfg.d_model, cfg.d_ff, cfg.n_heads
    per_layer = b * t * d * 6 + b * h * t * t + b * t * d * 3 + b * t * f * 3
    return 8 * (cfg.n_layers * per_layer + b * t * d)


def grid_search_batch_size(mcfg: ModelConfig, candidates: Sequence[int],
                           spec: SyntheticSpec = SyntheticSpec()) -> GridResult:
    """Time forward+backward on random ids per candidate; pick max examples/s.

    Candidates whose estimated activation memory exceeds the ceiling are
    marked infeasible and never chosen.
    """
    if not candidates or any(c < 1 for c in candidates):
        raise ValueError("candidates must be a non-empty list of positive integers")
    t = spec.seq_len or mcfg.max_len
    rng = SplitMix64(spec.seed)
    n = spec.n_examples
    ids = (rng.next_array(n * t) % np.uint64(max(mcfg.vocab_size - 3, 1))).astype(np.int64).reshape(n, t) + 3
    ids = np.minimum(ids, mcfg.vocab_size - 1)
    ids[:, 0] = 2
    mask = np.ones_like(ids)
    targets = (rng.next_array(n) % np.uint64(mcfg.n_classes)).astype(np.int64)
    params = init_params(mcfg)

    table = []
    for b in candidates:
        mem = _activation_bytes(mcfg, b, t)
        row = {"batch_size": b, "est_bytes": mem, "feasible": mem <= spec.memory_ceiling_bytes,
               "seconds": None, "examples_per_s": None}
        if row["feasible"]:
            start = time.perf_counter()
            for s in range(spec.steps_per_candidate):
                idx = (np.arange(b) + s * b) % n
                loss_and_grad(params, mcfg, Batch(ids[idx], mask[idx], targets[idx]))
            elapsed = time.perf_counter() - start
            row["seconds"] = elapsed
            row["examples_per_s"] = b * spec.steps_per_candidate / max(elapsed, 1e-12)
        table.append(row)
    feasible = [r for r in table if r["feasible"]]
    if not feasible:
        raise ValueError("no candidate fits under the memory ceiling")
    best = max(feasible, key=lambda r: r["examples_per_s"])
    return GridResult(best["batch_size"], table)


# --- bag-of-words baseline --------------------------------------------------


@dataclass
class BowModel:
    weights: np.ndarray  # [V, C]
    bias: np.ndarray  # [C]
    vocab: Vocabulary
    codec: LabelCodec
    history: list[dict] = field(default_factory=list)

    def features(self, texts: Sequence[str]) -> np.ndarray:
        return bow_features(self.vocab, texts)

    def predict_proba(self, texts: Sequence[str]) -> np.ndarray:
        return softmax(self.features(texts) @ self.weights + self.bias)

    def predict(self, texts: Sequence[str]) -> np.ndarray:
        return self.predict_proba(texts).argmax(axis=1)


def bow_features(vocab: Vocabulary, texts: Sequence[str]) -> np.ndarray:
    """Token counts per text, L1-normalized (rows of all-zero text stay zero)."""
    x = np.zeros((len(texts), len(vocab)))
    for i, t in enumerate(texts):
        for w in t.split():
            x[i, vocab.lookup(w)] += 1.0
    totals = x.sum(axis=1, keepdims=True)
    return np.divide(x, totals, out=np.zeros_like(x), where=totals > 0)


def bow_loss_and_grad(w: np.ndarray, b: np.ndarray, x: np.ndarray, y: np.ndarray):
    loss, dlogits = cross_entropy_loss(x @ w + b, y)
    return loss, x.T @ dlogits, dlogits.sum(axis=0)


def train_baseline_bow(train_ds: Dataset, val_ds: Dataset, vocab: Vocabulary, codec: LabelCodec,
                       epochs: int = 10, lr: float = 1.0, batch_size: int = 32, seed: int = 0) -> BowModel:
    """Multinomial logistic regression by plain mini-batch gradient descent."""
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise TrainingError("train and validation splits must be non-empty")
    x = bow_features(vocab, train_ds.texts())
    y = np.asarray(codec.encode_many(train_ds.labels()), dtype=np.int64)
    xv = bow_features(vocab, val_ds.texts())
    yv = np.asarray(codec.encode_many(val_ds.labels()), dtype=np.int64)
    w = np.zeros((len(vocab), len(codec)))
    b = np.zeros(len(codec))
    history = []
    best = (-1.0, w.copy(), b.copy())
    n = len(y)
    for epoch in range(epochs):
        order = np.asarray(permutation(n, SplitMix64(derive_seed(seed, _EPOCH_STREAM, epoch))))
        loss_sum = 0.0
        for s in range(0, n, batch_size):
            idx = order[s : s + batch_size]
            loss, gw, gb = bow_loss_and_grad(w, b, x[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss in baseline epoch {epoch + 1}")
            w -= lr * gw
            b -= lr * gb
            loss_sum += loss * len(idx)
        f1 = macro_f1(yv, (xv @ w + b).argmax(axis=1), len(codec))
        history.append({"epoch": epoch + 1, "train_loss": loss_sum / n, "val_macro_f1": f1, "lr_last": lr})
        if f1 > best[0]:
            best = (f1, w.copy(), b.copy())
    return BowModel(best[1], best[2], vocab, codec, history)
