"""Keyword-templated synthetic Q&A corpus for the scaled experiments.

The label of a text is a function of two keyword groups it contains: a
body-area topic and a patient modifier (child vs adult). Topics come in
pairs ``(t, t')`` mapped to classes ``(c, c')`` with the mapping swapped
for the child modifier; within each pair this is an XOR, which no linear
bag-of-words model can fit, while word order carries no signal (so
word-shuffle augmentation is label-preserving).
"""

from __future__ import annotations

from dataclasses import dataclass

from .dataset import Dataset, QARecord
from .rng import SplitMix64, fisher_yates

SPECIALIZATIONS = (
    "Гастроэнтеролог", "Гинеколог", "Дерматолог", "Кардиолог", "ЛОР", "Невролог",
    "Офтальмолог", "Педиатр", "Стоматолог", "Терапевт", "Уролог", "Эндокринолог",
)

TOPICS = (
    ("сердце", "пульс", "аритмия"),
    ("голова", "мигрень", "головокружение"),
    ("кожа", "сыпь", "зуд"),
    ("горло", "ухо", "насморк"),
    ("глаз", "зрение", "веко"),
    ("желудок", "живот", "изжога"),
    ("почки", "моча", "мочевой"),
    ("цикл", "матка", "выделения"),
    ("щитовидка", "сахар", "гормоны"),
    ("зуб", "десна", "челюсть"),
    ("температура", "кашель", "слабость"),
    ("спина", "сустав", "колено"),
)
MODIFIERS = (
    ("я", "муж", "жена", "взрослый"),  # adult
    ("ребенок", "малыш", "сын", "дочка"),  # child
)
FILLER = (
    "у", "меня", "уже", "неделю", "болит", "сильно", "что", "делать", "подскажите",
    "пожалуйста", "после", "утром", "вечером", "и", "не", "проходит", "очень", "давно",
    "иногда", "бывает", "был", "врач", "сказал", "анализы", "норма", "лечение", "помогите",
    "стало", "хуже", "вчера", "сегодня", "ночью", "немного", "постоянно", "боль", "это",
)


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 12
    per_class: int = 500
    min_filler: int = 4
    max_filler: int = 10
    distractor_rate: float = 0.1  # chance of one keyword from an unrelated topic
    seed: int = 0


def _class_for(topic: int, modifier: int, n_classes: int) -> int:
    # topic pairs (2j, 2j+1) <-> class pairs (2j, 2j+1); the child modifier swaps them
    return (topic ^ modifier) % n_classes


def make_text(topic: int, modifier: int, rng: SplitMix64, spec: SynthSpec) -> str:
    words = [TOPICS[topic][rng.below(3)], MODIFIERS[modifier][rng.below(4)]]
    if rng.below(2):
        words.append(TOPICS[topic][rng.below(3)])
    if rng.uniform(1)[0] < spec.distractor_rate:
        other = (topic + 1 + rng.below(len(TOPICS) - 1)) % len(TOPICS)
        words.append(TOPICS[other][rng.below(3)])
    n_fill = spec.min_filler + rng.below(spec.max_filler - spec.min_filler + 1)
    words.extend(FILLER[rng.below(len(FILLER))] for _ in range(n_fill))
    return " ".join(fisher_yates(words, rng))


def generate_corpus(spec: SynthSpec = SynthSpec()) -> Dataset:
    """``per_class`` records for each of ``n_classes`` (even, at most 12) labels."""
    if spec.n_classes % 2 or not 2 <= spec.n_classes <= len(SPECIALIZATIONS):
        raise ValueError("n_classes must be even and at most 12")
    rng = SplitMix64(spec.seed)
    labels = SPECIALIZATIONS[: spec.n_classes]
    records = []
    for c in range(spec.n_classes):
        for i in range(spec.per_class):
            modifier = i % 2
            topic = _class_for(c, modifier, spec.n_classes)
            text = make_text(topic, modifier, rng, spec)
            records.append(QARecord(f"synth://{spec.seed}/{c}/{i}", text, labels[c]))
    return Dataset(records, provenance=f"synthetic corpus seed {spec.seed}")


def pareto_counts(n_classes: int, top: int, ratio: float = 0.75, floor: int = 20) -> list[int]:
    """Geometric (Pareto-like) class sizes: top, top*ratio, top*ratio^2, ..."""
    return [max(floor, int(top * ratio**i)) for i in range(n_classes)]


def inject_imbalance(ds: Dataset, counts: dict[str, int], seed: int = 0) -> Dataset:
    """Uniformly keep ``counts[label]`` records of each class (original order kept)."""
    rng = SplitMix64(seed)
    by_class: dict[str, list[int]] = {}
    for i, r in enumerate(ds.records):
        by_class.setdefault(r.specialization, []).append(i)
    keep: list[int] = []
    for label in sorted(by_class):
        idx = by_class[label]
        keep.extend(fisher_yates(idx, rng)[: counts.get(label, len(idx))])
    return ds.subset(sorted(keep), provenance=ds.provenance + ", imbalance injected")
