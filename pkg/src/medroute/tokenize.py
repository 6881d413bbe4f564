"""Word-level vocabulary and fixed-length encoding with a leading CLS token."""

from __future__ import annotations

import logging
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .dataset import Dataset, normalize_text

log = logging.getLogger(__name__)

PAD, UNK, CLS = 0, 1, 2
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]")
DEFAULT_MAX_LEN = 128


class VocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    id_to_token: tuple[str, ...]
    min_freq: int = 1
    max_size: int = 0

    def __post_init__(self):
        if self.id_to_token[:3] != SPECIAL_TOKENS:
            raise VocabularyError("vocabulary must start with [PAD], [UNK], [CLS]")
        if len(set(self.id_to_token)) != len(self.id_to_token):
            raise VocabularyError("duplicate tokens in vocabulary")
        object.__setattr__(self, "token_to_id", {t: i for i, t in enumerate(self.id_to_token)})

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def to_text(self) -> str:
        return "".join(t + "\n" for t in self.id_to_token)

    @classmethod
    def from_text(cls, text: str, min_freq: int = 1, max_size: int = 0) -> Vocabulary:
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines), min_freq=min_freq, max_size=max_size)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Vocabulary:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def build_vocab(texts: Dataset | Iterable[str], min_freq: int = 1, max_size: int = 30000) -> Vocabulary:
    """Rank words by (frequency desc, token asc); keep ``max_size - 3`` of them."""
    if isinstance(texts, Dataset):
        if not texts.records:
            raise VocabularyError("cannot build a vocabulary from an empty dataset")
        texts = texts.texts()
    counts: Counter[str] = Counter()
    for t in texts:
        counts.update(normalize_text(t).split())
    for tok in SPECIAL_TOKENS:
        counts.pop(tok, None)
    ranked = sorted((tok for tok, n in counts.items() if n >= min_freq), key=lambda t: (-counts[t], t))
    ranked = ranked[: max(max_size - len(SPECIAL_TOKENS), 0)]
    if not ranked:
        warnings.warn("vocabulary contains only special tokens", RuntimeWarning, stacklevel=2)
    return Vocabulary(SPECIAL_TOKENS + tuple(ranked), min_freq=min_freq, max_size=max_size)


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    mask: np.ndarray
    true_length: int


def encode_sequence(vocab: Vocabulary, text: str, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    """[CLS] + word ids, truncated to ``max_len - 1`` words and PAD-filled.

    CLS counts toward ``max_len``.
    """
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    words = normalize_text(text).split()[: max_len - 1]
    ids = np.full(max_len, PAD, dtype=np.int64)
    ids[0] = CLS
    ids[1 : len(words) + 1] = [vocab.lookup(w) for w in words]
    n = len(words) + 1
    mask = np.zeros(max_len, dtype=np.int64)
    mask[:n] = 1
    return TokenSequence(ids, mask, n)


def encode_batch(vocab: Vocabulary, texts: Iterable[str], max_len: int = DEFAULT_MAX_LEN) -> tuple[np.ndarray, np.ndarray]:
    """Stacked ``(ids, mask)`` arrays of shape [n, max_len]."""
    seqs = [encode_sequence(vocab, t, max_len) for t in texts]
    if not seqs:
        return np.zeros((0, max_len), np.int64), np.zeros((0, max_len), np.int64)
    return np.stack([s.ids for s in seqs]), np.stack([s.mask for s in seqs])


def decode_ids(vocab: Vocabulary, seq: TokenSequence) -> list[str]:
    """Tokens at the real (non-CLS, non-PAD) positions."""
    return [vocab.id_to_token[i] for i in seq.ids[1 : seq.true_length]]
