"""Deterministic word-level vocabulary and tokenizer.

Text is lowercased and split on runs of non-alphanumeric characters.
Token ids are dense from 0 with the four specials first, then corpus
words ordered by descending frequency (ties alphabetical), so the same
corpus always yields the same vocabulary.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DomainError

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>")

_WORD_RE = re.compile(r"[a-z0-9]+")


def words_of(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]  # id -> token, specials first
    min_frequency: int

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIALS:
            raise ContractError("vocabulary must start with the four special tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ContractError("vocabulary contains duplicate tokens")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, word: str) -> int:
        return self._index().get(word, UNK)

    def _index(self) -> dict[str, int]:
        cached = getattr(self, "_idx", None)
        if cached is None:
            cached = {t: i for i, t in enumerate(self.tokens)}
            object.__setattr__(self, "_idx", cached)
        return cached

    def to_dict(self) -> dict:
        return {"tokens": list(self.tokens), "min_frequency": self.min_frequency}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(tokens=tuple(d["tokens"]), min_frequency=int(d["min_frequency"]))


def build_vocabulary(texts: Iterable[str], min_frequency: int = 2) -> Vocabulary:
    if min_frequency < 1:
        raise DomainError("min_frequency must be >= 1")
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(words_of(text))
    kept = sorted(
        (w for w, c in counts.items() if c >= min_frequency),
        key=lambda w: (-counts[w], w),
    )
    return Vocabulary(tokens=SPECIALS + tuple(kept), min_frequency=min_frequency)


def tokenize(text: str, vocab: Vocabulary, context_length: int) -> np.ndarray:
    """Encode text as [BOS, ids..., EOS, PAD...] of exactly context_length.

    Words beyond the context budget are dropped so EOS always occupies
    the last non-pad slot.
    """
    if context_length < 3:
        raise DomainError("context_length must be >= 3")
    ids = [vocab.id_of(w) for w in words_of(text)][: context_length - 2]
    seq = [BOS] + ids + [EOS]
    seq.extend([PAD] * (context_length - len(seq)))
    return np.asarray(seq, dtype=np.int64)


def tokenize_batch(texts: Sequence[str], vocab: Vocabulary, context_length: int) -> np.ndarray:
    return np.stack([tokenize(t, vocab, context_length) for t in texts])


def eos_positions(token_ids: np.ndarray) -> np.ndarray:
    """Index of the first EOS in each row; every row must contain one."""
    hits = token_ids == EOS
    if not hits.any(axis=-1).all():
        raise ContractError("token sequence without EOS")
    return hits.argmax(axis=-1)


def valid_key_mask(token_ids: np.ndarray) -> np.ndarray:
    """Boolean (B, T): True up to and including the first EOS per row."""
    positions = np.arange(token_ids.shape[-1])
    return positions[None, :] <= eos_positions(token_ids)[:, None]


def token_strings(token_ids: np.ndarray, vocab: Vocabulary) -> list[str]:
    return [vocab.tokens[i] for i in np.asarray(token_ids).tolist()]
