"""Class balancing by word-order permutation of minority-class texts."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass

from .dataset import SYNTHETIC_PREFIX, Dataset, DatasetError, QARecord
from .rng import MASK64, SplitMix64, fisher_yates

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmentConfig:
    target_per_class: int
    seed: int = 0
    downsample_majority: bool = True

    def __post_init__(self):
        if self.target_per_class < 1:
            raise ValueError("target_per_class must be >= 1")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def shuffle_words(text: str, seed: int) -> str:
    """Fisher-Yates permutation of the space-separated tokens of ``text``."""
    tokens = text.split(" ")
    return " ".join(fisher_yates(tokens, SplitMix64(seed)))


def balance_dataset(ds: Dataset, cfg: AugmentConfig, labels: list[str] | None = None) -> Dataset:
    """Bring every class to exactly ``cfg.target_per_class`` records.

    Deficit classes are topped up with shuffled copies of uniformly drawn
    originals; copy number ``n`` (counted across the whole run) is shuffled
    with seed ``cfg.seed XOR n``. Surplus classes are uniformly subsampled
    when ``downsample_majority`` is set. Output order: class order, then
    kept originals in input order, then synthetic copies.

    ``labels`` lists every class expected in the output; a class with no
    records raises.
    """
    by_class: dict[str, list[QARecord]] = defaultdict(list)
    for r in ds.records:
        by_class[r.specialization].append(r)
    classes = sorted(set(labels) if labels is not None else by_class)
    for c in classes:
        if not by_class.get(c):
            raise DatasetError(f"class {c!r} has no records to augment from")

    sampler = SplitMix64(cfg.seed)
    counter = 0
    out: list[QARecord] = []
    for c in classes:
        originals = by_class[c]
        n = len(originals)
        target = cfg.target_per_class
        if n > target:
            if cfg.downsample_majority:
                keep = sorted(fisher_yates(list(range(n)), sampler)[:target])
                out.extend(originals[i] for i in keep)
            else:
                out.extend(originals)
            continue
        out.extend(originals)
        for _ in range(target - n):
            src = originals[sampler.below(n)]
            text = shuffle_words(src.question_text, cfg.seed ^ counter)
            url = f"{SYNTHETIC_PREFIX}{counter}:{src.parent_url}"
            out.append(QARecord(url, text, c))
            counter += 1
    log.debug("balanced %d classes to %d each, %d synthetic", len(classes), cfg.target_per_class, counter)
    return Dataset(out, created_at=ds.created_at,
                   provenance=f"balanced to {cfg.target_per_class}/class, seed {cfg.seed}")
