"""Stratified k-fold and holdout evaluation of the classifier and the baseline.

By default augmented records never reach a test fold: splits are drawn
over original records only, and an augmented copy joins the training side
only when its parent original is not held out. ``paper_mode`` splits over
all records instead.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .dataset import Dataset, LabelCodec, fit_label_codec
from .metrics import ConfusionMatrix, EvalReport, evaluate_predictions
from .model import ModelConfig, predict_logits
from .rng import SplitMix64, derive_seed, permutation
from .tokenize import build_vocab, encode_batch
from .train import TrainConfig, train_baseline_bow, train_model

log = logging.getLogger(__name__)


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class KFold:
    k: int = 3
    seed: int = 0


@dataclass(frozen=True)
class Holdout:
    train_fraction: float = 0.9
    seed: int = 0


SplitPlan = KFold | Holdout


@dataclass(frozen=True)
class SplitAssignment:
    """Fold id per record index (holdout: 0 = train, 1 = test)."""

    plan: SplitPlan
    fold_of: np.ndarray

    @property
    def n_folds(self) -> int:
        return self.plan.k if isinstance(self.plan, KFold) else 1

    def train_test(self, fold: int = 0) -> tuple[np.ndarray, np.ndarray]:
        test_id = fold if isinstance(self.plan, KFold) else 1
        test = np.flatnonzero(self.fold_of == test_id)
        train = np.flatnonzero(self.fold_of != test_id)
        return train, test


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_split(labels: Sequence[str], plan: SplitPlan) -> SplitAssignment:
    """Stratified assignment of record indices.

    Classes are visited in sorted order, each shuffled with one SplitMix64
    stream seeded by ``plan.seed``. K-fold deals each class round-robin
    into folds, continuing the offset across classes; classes with fewer
    than k records are pooled and dealt unstratified. Holdout puts
    ``round_half_up(train_fraction * n_c)`` of each class in train.
    """
    labels = list(labels)
    n = len(labels)
    by_class: dict[str, list[int]] = {}
    for i, lab in enumerate(labels):
        by_class.setdefault(lab, []).append(i)
    rng = SplitMix64(plan.seed)
    fold_of = np.full(n, -1, dtype=np.int64)

    if isinstance(plan, KFold):
        if plan.k < 2:
            raise SplitError("k must be >= 2")
        if n < plan.k:
            raise SplitError(f"{n} records cannot fill {plan.k} folds")
        offset = 0
        pooled: list[int] = []
        for lab in sorted(by_class):
            idx = by_class[lab]
            if len(idx) < plan.k:
                warnings.warn(f"class {lab!r} has {len(idx)} < k records; assigned unstratified",
                              RuntimeWarning, stacklevel=2)
                pooled.extend(idx)
                continue
            for j, i in enumerate(_shuffled(idx, rng)):
                fold_of[i] = (offset + j) % plan.k
            offset += len(idx)
        for j, i in enumerate(_shuffled(sorted(pooled), rng)):
            fold_of[i] = (offset + j) % plan.k
    elif isinstance(plan, Holdout):
        if not 0.0 < plan.train_fraction < 1.0:
            raise SplitError("train_fraction must be in (0, 1)")
        if n < 2:
            raise SplitError("holdout needs at least 2 records")
        for lab in sorted(by_class):
            idx = _shuffled(by_class[lab], rng)
            n_train = _round_half_up(plan.train_fraction * len(idx))
            for j, i in enumerate(idx):
                fold_of[i] = 0 if j < n_train else 1
        if not (fold_of == 1).any() or not (fold_of == 0).any():
            raise SplitError("holdout produced an empty train or test side")
    else:
        raise TypeError(f"unknown split plan {plan!r}")
    return SplitAssignment(plan, fold_of)


def _shuffled(idx: list[int], rng: SplitMix64) -> list[int]:
    return [idx[j] for j in permutation(len(idx), rng)]


def leakage_safe_folds(ds: Dataset, plan: SplitPlan, paper_mode: bool = False) -> list[tuple[np.ndarray, np.ndarray]]:
    """(train indices, test indices) per fold, into ``ds.records``."""
    if paper_mode:
        assign = make_split(ds.labels(), plan)
        return [assign.train_test(f) for f in range(assign.n_folds)]
    originals = np.array([i for i, r in enumerate(ds.records) if not r.is_synthetic], dtype=np.int64)
    synthetic = [i for i, r in enumerate(ds.records) if r.is_synthetic]
    assign = make_split([ds.records[i].specialization for i in originals], plan)
    folds = []
    for f in range(assign.n_folds):
        tr, te = assign.train_test(f)
        test = originals[te]
        held_parents = {ds.records[i].source_url for i in test}
        extra = [i for i in synthetic if ds.records[i].parent_url not in held_parents]
        train = np.array(sorted(originals[tr].tolist() + extra), dtype=np.int64)
        folds.append((train, test))
    return folds


@dataclass(frozen=True)
class VocabSpec:
    min_freq: int = 1
    max_size: int = 30000


@dataclass
class FoldResult:
    report: EvalReport
    confusion: ConfusionMatrix
    checkpoint: Checkpoint | None = None
    n_train: int = 0
    n_test: int = 0


Kind = Literal["transformer", "bow"]


def run_fold(train_ds: Dataset, test_ds: Dataset, codec: LabelCodec, vocab_spec: VocabSpec,
             mcfg: ModelConfig, tcfg: TrainConfig, kind: Kind = "transformer",
             val_fraction: float = 0.1, paper_mode: bool = False,
             bow_epochs: int = 30, bow_lr: float = 2.0) -> FoldResult:
    """Train on ``train_ds`` and score on ``test_ds``.

    A stratified validation slice of ``val_fraction`` is carved out of
    the training side for epoch selection; the vocabulary is built on
    what remains.
    """
    val_plan = Holdout(1.0 - val_fraction, seed=derive_seed(tcfg.seed, 7))
    (fit_idx, val_idx), = leakage_safe_folds(train_ds, val_plan, paper_mode=paper_mode)
    fit_ds, val_ds = train_ds.subset(fit_idx), train_ds.subset(val_idx)
    vocab = build_vocab(fit_ds, min_freq=vocab_spec.min_freq, max_size=vocab_spec.max_size)
    golds = codec.encode_many(test_ds.labels())
    if kind == "bow":
        bow = train_baseline_bow(fit_ds, val_ds, vocab, codec, epochs=bow_epochs, lr=bow_lr, seed=tcfg.seed)
        preds = bow.predict(test_ds.texts())
        ckpt = None
    else:
        cfg = replace(mcfg, vocab_size=len(vocab), n_classes=len(codec))
        ckpt = train_model(fit_ds, val_ds, vocab, codec, cfg, tcfg)
        ids, mask = encode_batch(vocab, test_ds.texts(), cfg.max_len)
        preds = predict_logits(ckpt.params, ckpt.model_config, ids, mask).argmax(axis=1)
    report, cm = evaluate_predictions(golds, preds, codec.labels)
    return FoldResult(report, cm, ckpt, len(train_ds), len(test_ds))


@dataclass
class KFoldResult:
    folds: list[FoldResult]
    mean_macro_f1: float
    std_macro_f1: float
    reports: list[EvalReport] = field(default_factory=list)


def kfold_evaluate(ds: Dataset, vocab_spec: VocabSpec, mcfg: ModelConfig, tcfg: TrainConfig,
                   k: int = 3, *, seed: int = 0, paper_mode: bool = False, kind: Kind = "transformer",
                   codec: LabelCodec | None = None, **fold_kwargs) -> KFoldResult:
    if k < 2:
        raise SplitError("k must be >= 2")
    codec = codec or fit_label_codec(ds)
    results = []
    for f, (tr, te) in enumerate(leakage_safe_folds(ds, KFold(k, seed), paper_mode)):
        log.info("fold %d/%d: %d train, %d test", f + 1, k, len(tr), len(te))
        results.append(run_fold(ds.subset(tr), ds.subset(te), codec, vocab_spec, mcfg, tcfg,
                                kind=kind, paper_mode=paper_mode, **fold_kwargs))
    f1s = np.array([r.report.macro_f1 for r in results])
    return KFoldResult(results, float(f1s.mean()), float(f1s.std()), [r.report for r in results])


def holdout_evaluate(ds: Dataset, vocab_spec: VocabSpec, mcfg: ModelConfig, tcfg: TrainConfig,
                     train_fraction: float = 0.9, *, seed: int = 0, paper_mode: bool = False,
                     kind: Kind = "transformer", codec: LabelCodec | None = None,
                     **fold_kwargs) -> FoldResult:
    codec = codec or fit_label_codec(ds)
    (tr, te), = leakage_safe_folds(ds, Holdout(train_fraction, seed), paper_mode)
    return run_fold(ds.subset(tr), ds.subset(te), codec, vocab_spec, mcfg, tcfg,
                    kind=kind, paper_mode=paper_mode, **fold_kwargs)
