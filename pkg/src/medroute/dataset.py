"""Q&A corpus: normalization, dedup, label encoding and CSV persistence."""

from __future__ import annotations

import csv
import io
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

CSV_HEADER = ("source_url", "question_text", "specialization")
# Augmented records keep their parent's URL behind this prefix.
SYNTHETIC_PREFIX = "augment:"


class DatasetError(ValueError):
    pass


class CsvSchemaError(DatasetError):
    pass


class CsvRowError(DatasetError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class QARecord:
    source_url: str
    question_text: str
    specialization: str

    @property
    def is_synthetic(self) -> bool:
        return self.source_url.startswith(SYNTHETIC_PREFIX)

    @property
    def parent_url(self) -> str:
        """URL of the original record an augmented copy was made from."""
        if not self.is_synthetic:
            return self.source_url
        # augment:<counter>:<parent url>
        return self.source_url.split(":", 2)[2]


@dataclass
class Dataset:
    records: list[QARecord]
    created_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def labels(self) -> list[str]:
        return [r.specialization for r in self.records]

    def texts(self) -> list[str]:
        return [r.question_text for r in self.records]

    def subset(self, indices: Iterable[int], provenance: str | None = None) -> Dataset:
        return Dataset(
            [self.records[i] for i in indices],
            created_at=self.created_at,
            provenance=self.provenance if provenance is None else provenance,
        )


def normalize_text(raw: str) -> str:
    """NFC, control characters dropped, whitespace runs collapsed; no case folding."""
    text = unicodedata.normalize("NFC", raw)
    chars = []
    for ch in text:
        if ch.isspace():
            chars.append(" ")
        elif unicodedata.category(ch) == "Cc":
            continue
        else:
            chars.append(ch)
    return " ".join("".join(chars).split())


def make_record(source_url: str, question_text: str, specialization: str) -> QARecord:
    """Build a normalized record, rejecting empty text or label."""
    q = normalize_text(question_text)
    s = normalize_text(specialization)
    if not q:
        raise DatasetError(f"empty question text for {source_url!r}")
    if not s:
        raise DatasetError(f"empty specialization for {source_url!r}")
    return QARecord(source_url, q, s)


def dedupe(ds: Dataset) -> Dataset:
    seen: set[tuple[str, str]] = set()
    kept = []
    for r in ds.records:
        key = (normalize_text(r.question_text), r.specialization)
        if key in seen:
            continue
        seen.add(key)
        kept.append(r)
    return Dataset(kept, created_at=ds.created_at, provenance=ds.provenance)


def write_csv(ds: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        writer.writerow(CSV_HEADER)
        for r in ds.records:
            writer.writerow((r.source_url, r.question_text, r.specialization))


def read_csv(path: str | Path) -> Dataset:
    with open(path, encoding="utf-8", newline="") as fh:
        data = fh.read()
    reader = csv.reader(io.StringIO(data, newline=""), strict=True)
    try:
        header = next(reader)
    except StopIteration:
        raise CsvSchemaError(f"{path}: empty file, expected header {','.join(CSV_HEADER)}")
    except csv.Error as exc:
        raise CsvRowError(1, str(exc)) from exc
    if tuple(header) != CSV_HEADER:
        missing = [c for c in CSV_HEADER if c not in header]
        detail = f"missing column(s) {', '.join(missing)}" if missing else f"got {header}"
        raise CsvSchemaError(f"{path}: bad header, {detail}")
    records = []
    while True:
        # reader.line_num is the physical line the row ended on
        start = reader.line_num + 1
        try:
            row = next(reader)
        except StopIteration:
            break
        except csv.Error as exc:
            raise CsvRowError(start, str(exc)) from exc
        if len(row) != len(CSV_HEADER):
            raise CsvRowError(start, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
        records.append(QARecord(*row))
    return Dataset(records, provenance=f"read from {Path(path).name}")


@dataclass(frozen=True)
class LabelCodec:
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise DatasetError("duplicate labels in codec")
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(self.labels)})

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> LabelCodec:
        # Python str ordering is code-point ordering
        return cls(tuple(sorted(set(labels))))

    @property
    def index(self) -> dict[str, int]:
        return dict(self._index)

    def __len__(self) -> int:
        return len(self.labels)

    def encode(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"unknown label {label!r}") from None

    def decode(self, class_id: int) -> str:
        if not 0 <= class_id < len(self.labels):
            raise KeyError(f"class id {class_id} outside 0..{len(self.labels) - 1}")
        return self.labels[class_id]

    def encode_many(self, labels: Sequence[str]) -> list[int]:
        return [self.encode(x) for x in labels]


def fit_label_codec(ds: Dataset) -> LabelCodec:
    if not ds.records:
        raise DatasetError("cannot fit a label codec on an empty dataset")
    return LabelCodec.from_labels(r.specialization for r in ds.records)


def encode_label(codec: LabelCodec, label: str) -> int:
    return codec.encode(label)


def decode_label(codec: LabelCodec, class_id: int) -> str:
    return codec.decode(class_id)


@dataclass(frozen=True)
class DatasetStats:
    per_class_counts: dict[str, int]
    total: int


def stats(ds: Dataset) -> DatasetStats:
    counts = Counter(r.specialization for r in ds.records)
    return DatasetStats(dict(sorted(counts.items())), len(ds.records))
