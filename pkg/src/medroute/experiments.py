"""Desk-scale experiments on the synthetic corpus.

``scaled_experiment`` runs holdout, k-fold and the bag-of-words baseline on
an imbalance-injected, then re-balanced corpus; ``augmentation_effect``
compares training with and without balancing on a shared test split.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

from .augment import AugmentConfig, balance_dataset
from .dataset import Dataset, fit_label_codec, stats
from .evaluation import (
    FoldResult,
    Holdout,
    KFoldResult,
    VocabSpec,
    holdout_evaluate,
    kfold_evaluate,
    leakage_safe_folds,
    run_fold,
)
from .model import ModelConfig
from .synth import SynthSpec, generate_corpus, inject_imbalance, pareto_counts
from .train import TrainConfig

log = logging.getLogger(__name__)

# toy encoder used by the scaled experiment; vocab_size is set per fold
TOY_MODEL = ModelConfig(vocab_size=3, n_classes=12, max_len=64, d_model=64, n_heads=4,
                        n_layers=2, d_ff=128, seed=0)
TOY_TRAIN = TrainConfig(peak_lr=2e-3, epochs=10, batch_size=32, seed=0)


def imbalanced_corpus(seed: int = 0, n_classes: int = 12, per_class: int = 500,
                      ratio: float = 0.85) -> Dataset:
    full = generate_corpus(SynthSpec(n_classes=n_classes, per_class=per_class, seed=seed))
    labels = sorted(set(full.labels()))
    counts = dict(zip(labels, pareto_counts(n_classes, per_class, ratio)))
    return inject_imbalance(full, counts, seed=seed)


@dataclass
class ScaledResult:
    holdout: FoldResult
    kfold: KFoldResult
    baseline: FoldResult
    seconds: dict[str, float] = field(default_factory=dict)

    @property
    def holdout_f1(self) -> float:
        return self.holdout.report.macro_f1

    @property
    def kfold_f1(self) -> float:
        return self.kfold.mean_macro_f1

    @property
    def baseline_f1(self) -> float:
        return self.baseline.report.macro_f1


def scaled_experiment(seed: int = 0, mcfg: ModelConfig = TOY_MODEL, tcfg: TrainConfig = TOY_TRAIN,
                      per_class: int = 500, k: int = 3) -> ScaledResult:
    corpus = imbalanced_corpus(seed, per_class=per_class)
    balanced = balance_dataset(corpus, AugmentConfig(per_class, seed=seed))
    vs = VocabSpec()
    seconds = {}
    t = time.perf_counter()
    holdout = holdout_evaluate(balanced, vs, mcfg, tcfg, 0.9, seed=seed)
    seconds["holdout"] = time.perf_counter() - t
    t = time.perf_counter()
    kf = kfold_evaluate(balanced, vs, mcfg, tcfg, k, seed=seed)
    seconds["kfold"] = time.perf_counter() - t
    t = time.perf_counter()
    base = holdout_evaluate(balanced, vs, mcfg, tcfg, 0.9, seed=seed, kind="bow")
    seconds["baseline"] = time.perf_counter() - t
    return ScaledResult(holdout, kf, base, seconds)


@dataclass(frozen=True)
class AugmentationTrial:
    seed: int
    unbalanced_f1: float
    balanced_f1: float


def augmentation_effect(seeds=(0, 1, 2), mcfg: ModelConfig = TOY_MODEL, tcfg: TrainConfig = TOY_TRAIN,
                        per_class: int = 500) -> list[AugmentationTrial]:
    """Per seed: one 90/10 split of the imbalanced originals; train on the raw
    training side and on its balanced version; score both on the same test side."""
    trials = []
    for seed in seeds:
        corpus = imbalanced_corpus(seed, per_class=per_class)
        codec = fit_label_codec(corpus)
        (tr, te), = leakage_safe_folds(corpus, Holdout(0.9, seed))
        train, test = corpus.subset(tr), corpus.subset(te)
        target = max(stats(train).per_class_counts.values())
        balanced = balance_dataset(train, AugmentConfig(target, seed=seed))
        run_m, run_t = replace(mcfg, seed=seed), replace(tcfg, seed=seed)
        raw = run_fold(train, test, codec, VocabSpec(), run_m, run_t)
        bal = run_fold(balanced, test, codec, VocabSpec(), run_m, run_t)
        log.info("seed %d: unbalanced %.4f balanced %.4f", seed, raw.report.macro_f1, bal.report.macro_f1)
        trials.append(AugmentationTrial(seed, raw.report.macro_f1, bal.report.macro_f1))
    return trials

