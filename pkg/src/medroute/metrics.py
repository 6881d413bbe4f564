"""Confusion matrix, per-class P/R/F1, macro/weighted aggregates and report files.

Zero-division convention: any ratio with a zero denominator is 0. The
macro average includes zero-support classes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # [C, C], rows gold, columns predicted
    labels: tuple[str, ...]

    @property
    def n(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ClassMetrics:
    label: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class Averages:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    per_class: tuple[ClassMetrics, ...]
    macro: Averages
    weighted: Averages
    accuracy: float
    n_examples: int

    @property
    def macro_f1(self) -> float:
        return self.macro.f1

    def to_dict(self) -> dict:
        return {
            "per_class": [asdict(c) for c in self.per_class],
            "macro": asdict(self.macro),
            "weighted": asdict(self.weighted),
            "accuracy": self.accuracy,
            "n_examples": self.n_examples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        return cls(
            per_class=tuple(ClassMetrics(**c) for c in d["per_class"]),
            macro=Averages(**d["macro"]),
            weighted=Averages(**d["weighted"]),
            accuracy=d["accuracy"],
            n_examples=d["n_examples"],
        )


def confusion_matrix(golds: Sequence[int], preds: Sequence[int], n_classes: int,
                     labels: Sequence[str] | None = None) -> ConfusionMatrix:
    g = np.asarray(golds, dtype=np.int64).reshape(-1)
    p = np.asarray(preds, dtype=np.int64).reshape(-1)
    if g.shape != p.shape:
        raise MetricsError(f"length mismatch: {g.size} golds vs {p.size} preds")
    if g.size and (min(g.min(), p.min()) < 0 or max(g.max(), p.max()) >= n_classes):
        raise MetricsError(f"class id outside 0..{n_classes - 1}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (g, p), 1)
    if labels is None:
        labels = [str(i) for i in range(n_classes)]
    if len(labels) != n_classes:
        raise MetricsError("labels length does not match n_classes")
    return ConfusionMatrix(counts, tuple(labels))


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def class_metrics(cm: ConfusionMatrix) -> list[ClassMetrics]:
    counts = cm.counts
    if counts.shape[0] < 1:
        raise MetricsError("confusion matrix has no classes")
    out = []
    for c, label in enumerate(cm.labels):
        tp = int(counts[c, c])
        predicted = int(counts[:, c].sum())
        support = int(counts[c, :].sum())
        p = _ratio(tp, predicted)
        r = _ratio(tp, support)
        f1 = _ratio(2 * p * r, p + r)
        out.append(ClassMetrics(label, p, r, f1, support))
    return out


def aggregate_metrics(per_class: Sequence[ClassMetrics], cm: ConfusionMatrix) -> EvalReport:
    n = cm.n
    if n == 0:
        raise MetricsError("no evaluated examples")
    if not per_class:
        raise MetricsError("empty class set")
    p = np.array([c.precision for c in per_class])
    r = np.array([c.recall for c in per_class])
    f = np.array([c.f1 for c in per_class])
    w = np.array([c.support for c in per_class], dtype=np.float64)
    macro = Averages(float(p.mean()), float(r.mean()), float(f.mean()))
    weighted = Averages(float(p @ w / w.sum()), float(r @ w / w.sum()), float(f @ w / w.sum()))
    accuracy = float(np.trace(cm.counts)) / n
    return EvalReport(tuple(per_class), macro, weighted, accuracy, n)


def evaluate_predictions(golds, preds, labels: Sequence[str]) -> tuple[EvalReport, ConfusionMatrix]:
    cm = confusion_matrix(golds, preds, len(labels), labels)
    return aggregate_metrics(class_metrics(cm), cm), cm


def macro_f1(golds, preds, n_classes: int) -> float:
    cm = confusion_matrix(golds, preds, n_classes)
    return aggregate_metrics(class_metrics(cm), cm).macro.f1


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def emit_report(report: EvalReport, cm: ConfusionMatrix, prefix: str | Path) -> dict[str, Path]:
    """Write ``report.json``, ``report.csv`` and ``confusion.csv`` under ``prefix``.

    ``prefix`` is a directory; it is created if missing.
    """
    if not report.per_class:
        raise MetricsError("empty class set")
    out = Path(prefix)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / "report.json",
        "csv": out / "report.csv",
        "confusion": out / "confusion.csv",
    }
    doc = report.to_dict()
    doc["confusion"] = {"labels": list(cm.labels), "counts": cm.counts.tolist()}
    paths["json"].write_text(json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    with open(paths["csv"], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "precision", "recall", "f1", "support"])
        for c in report.per_class:
            w.writerow([c.label, _fmt(c.precision), _fmt(c.recall), _fmt(c.f1), c.support])
        for name, avg in (("macro avg", report.macro), ("weighted avg", report.weighted)):
            w.writerow([name, _fmt(avg.precision), _fmt(avg.recall), _fmt(avg.f1), report.n_examples])
        w.writerow(["accuracy", "", "", _fmt(report.accuracy), report.n_examples])
    with open(paths["confusion"], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gold\\pred", *cm.labels])
        for label, row in zip(cm.labels, cm.counts.tolist()):
            w.writerow([label, *row])
    return paths
