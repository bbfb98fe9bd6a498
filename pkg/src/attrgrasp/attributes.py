"""Attribute vocabulary, query tokenization and label similarity.

Labels are fixed-slot integer vectors ordered (color, shape, name); 0 is
the null attribute and never matches anything.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

COLORS = ("red", "green", "blue", "yellow", "black")
SHAPES = ("cube", "cuboid", "cylinder", "sphere")
SLOTS = ("color", "shape", "name")
EOS = "eos"


class UnknownToken(KeyError):
    pass


class DuplicateToken(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    """Append-only token table. Id 0 is always ``eos``.

    ``token_slot`` says which label slot a token fills; the default slot
    is inferred from the basic color/shape lists, anything else is a name.
    """

    token_to_id: dict = field(default_factory=lambda: {EOS: 0})
    token_slot: dict = field(default_factory=dict)
    embedding_dim: int = 128

    def __post_init__(self):
        ids = sorted(self.token_to_id.values())
        if ids != list(range(len(ids))) or self.token_to_id.get(EOS) != 0:
            raise ValueError("vocabulary ids must be dense with eos=0")

    @classmethod
    def from_tokens(cls, tokens: Iterable[str], embedding_dim: int = 128, slots: dict | None = None):
        t2i = {EOS: 0}
        for tok in tokens:
            if tok in t2i:
                raise DuplicateToken(tok)
            t2i[tok] = len(t2i)
        slot_map = {t: (slots or {}).get(t, default_slot(t)) for t in t2i if t != EOS}
        return cls(t2i, slot_map, embedding_dim)

    @classmethod
    def basic(cls, embedding_dim: int = 128):
        return cls.from_tokens(COLORS + SHAPES, embedding_dim)

    def __len__(self):
        return len(self.token_to_id)

    def __contains__(self, token):
        return token in self.token_to_id

    def id(self, token: str) -> int:
        try:
            return self.token_to_id[token]
        except KeyError:
            raise UnknownToken(token) from None

    def token(self, idx: int) -> str:
        for tok, i in self.token_to_id.items():
            if i == idx:
                return tok
        raise UnknownToken(idx)

    def slot(self, token: str) -> str:
        self.id(token)
        return self.token_slot[token]

    def extend(self, token: str, slot: str = "name") -> "Vocabulary":
        return extend_vocabulary(self, token, slot)

    def save(self, path):
        lines = [f"{tok} {idx} {self.token_slot.get(tok, '-')}" for tok, idx in
                 sorted(self.token_to_id.items(), key=lambda kv: kv[1])]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path, embedding_dim: int = 128):
        t2i, slots = {}, {}
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            parts = line.split()
            t2i[parts[0]] = int(parts[1])
            if len(parts) > 2 and parts[2] != "-":
                slots[parts[0]] = parts[2]
            elif parts[0] != EOS:
                slots[parts[0]] = default_slot(parts[0])
        return cls(t2i, slots, embedding_dim)


def default_slot(token: str) -> str:
    if token in COLORS:
        return "color"
    if token in SHAPES:
        return "shape"
    return "name"


def extend_vocabulary(vocab: Vocabulary, token: str, slot: str = "name") -> Vocabulary:
    if token in vocab.token_to_id:
        raise DuplicateToken(token)
    t2i = dict(vocab.token_to_id)
    t2i[token] = len(t2i)
    slots = dict(vocab.token_slot)
    slots[token] = slot
    return Vocabulary(t2i, slots, vocab.embedding_dim)


def tokenize(text: str | Sequence[str]) -> list[str]:
    """Split a keyword query on commas/whitespace."""
    if not isinstance(text, str):
        return list(text)
    tokens = [t for t in re.split(r"[,\s]+", text.strip()) if t]
    if not tokens:
        raise ValueError("empty query")
    return tokens


def label_of_text(text, vocab: Vocabulary, n: int = 2) -> np.ndarray:
    """Slot-ordered label for a query; slot order is type-directed, not positional."""
    label = np.zeros(n, dtype=np.int64)
    for tok in tokenize(text):
        idx = vocab.id(tok)
        pos = SLOTS.index(vocab.slot(tok))
        if pos >= n:
            raise DimensionMismatch(f"token {tok!r} needs slot {pos} but n={n}")
        label[pos] = idx
    return label


def text_of_label(label, vocab: Vocabulary) -> str:
    """Canonical query text for a label; names lead, as in 'apple, red sphere'."""
    label = np.asarray(label)
    words = [vocab.token(int(v)) for v in label[:2] if v != 0]
    if len(label) > 2 and label[2] != 0:
        name = vocab.token(int(label[2]))
        return f"{name}, {' '.join(words)}" if words else name
    return " ".join(words)


def similarity(a1, a2) -> float:
    """Fraction of slots where both labels carry the same non-null attribute."""
    a1 = np.asarray(a1)
    a2 = np.asarray(a2)
    if a1.shape != a2.shape:
        raise DimensionMismatch(f"{a1.shape} vs {a2.shape}")
    n = a1.shape[-1]
    return float(np.sum((a1 == a2) & (a1 != 0)) / n)


def similarity_matrix(labels_a, labels_b) -> np.ndarray:
    """Pairwise similarity between two stacks of labels, shape (len(a), len(b))."""
    a = np.asarray(labels_a)[:, None, :]
    b = np.asarray(labels_b)[None, :, :]
    if a.shape[-1] != b.shape[-1]:
        raise DimensionMismatch(f"{a.shape[-1]} vs {b.shape[-1]}")
    return ((a == b) & (a != 0)).sum(-1) / a.shape[-1]


def pad_label(label, n: int) -> np.ndarray:
    """Zero-extend a label to ``n`` slots (mixing n=2 and n=3 phases)."""
    label = np.asarray(label, dtype=np.int64)
    out = np.zeros(n, dtype=np.int64)
    out[: len(label)] = label
    return out


def mixed_similarity(a1, a2) -> float:
    """Similarity of labels of unequal length, normalized by the larger n."""
    n = max(len(a1), len(a2))
    return similarity(pad_label(a1, n), pad_label(a2, n))
