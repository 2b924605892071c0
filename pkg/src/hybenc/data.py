"""Tokenization, batching, MLM corruption and synthetic corpora.

The tokenizer is whitespace-only: each distinct word gets an id above the
five reserved ids (PAD=0, CLS=1, SEP=2, MASK=3, UNK=4). Corpus files are
UTF-8 text, one sequence per line; lines consisting solely of integers are
treated as pre-encoded token ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, VocabularyError
from .nn import keyed_rng
from .ssm import validate_end_padding

PAD, CLS, SEP, MASK, UNK = 0, 1, 2, 3, 4
RESERVED = (PAD, CLS, SEP, MASK, UNK)
IGNORE = -1  # label marker for unmasked positions
_RESERVED_NAMES = ["[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"]


@dataclass
class Vocabulary:
    id_to_word: list[str] = field(default_factory=lambda: list(_RESERVED_NAMES))

    def __post_init__(self):
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}

    @property
    def size(self) -> int:
        return len(self.id_to_word)

    @classmethod
    def build(cls, lines: list[str], max_size: int) -> "Vocabulary":
        if max_size <= len(RESERVED):
            raise ConfigError(f"vocabulary size must exceed {len(RESERVED)} reserved ids")
        vocab = cls()
        for line in lines:
            for word in line.split():
                if word not in vocab.word_to_id and vocab.size < max_size:
                    vocab.word_to_id[word] = vocab.size
                    vocab.id_to_word.append(word)
        return vocab

    def encode(self, line: str) -> list[int]:
        return [self.word_to_id.get(w, UNK) for w in line.split()]

    def decode(self, ids) -> str:
        return " ".join(self.id_to_word[i] if 0 <= i < self.size else "[?]" for i in ids)

    def to_dict(self) -> dict:
        return {"id_to_word": self.id_to_word}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(id_to_word=list(d["id_to_word"]))


@dataclass
class BatchEncoding:
    """Token ids, end-padding mask and (for MLM) label tensor."""

    ids: np.ndarray  # (B, T) int64
    m: np.ndarray  # (B, T) in {0, 1}, per-row prefix of ones
    labels: np.ndarray | None = None  # (B, T) int64, IGNORE where unlabeled

    def __post_init__(self):
        validate_end_padding(self.m)
        if np.any(self.ids[:, 0] != CLS):
            raise ConfigError("position 0 must be the CLS token in every row")


def make_batch(sequences: list[list[int]], V: int, T_max: int | None = None) -> BatchEncoding:
    """Wrap raw content-token sequences as [CLS] tokens... [SEP] + PAD."""
    if not sequences:
        raise ConfigError("empty batch")
    lens = [len(s) + 2 for s in sequences]
    T = max(lens)
    if T_max is not None and T > T_max:
        raise ConfigError(f"batch length {T} exceeds T_max {T_max}")
    ids = np.full((len(sequences), T), PAD, dtype=np.int64)
    m = np.zeros((len(sequences), T), dtype=np.int64)
    for i, s in enumerate(sequences):
        if any(t >= V or t < 0 for t in s):
            raise VocabularyError(f"sequence {i} has token ids outside [0, {V})")
        row = [CLS] + list(s) + [SEP]
        ids[i, : len(row)] = row
        m[i, : len(row)] = 1
    return BatchEncoding(ids=ids, m=m)


def mlm_mask_batch(batch: BatchEncoding, rng: np.random.Generator, V: int,
                   p: float = 0.15, split=(0.8, 0.1, 0.1)) -> BatchEncoding:
    """80/10/10 MLM corruption; PAD/CLS/SEP/MASK are never selectable."""
    if abs(sum(split) - 1.0) > 1e-9:
        raise ConfigError(f"replacement split must sum to 1, got {split}")
    ids = batch.ids.copy()
    labels = np.full_like(ids, IGNORE)
    eligible = (batch.m == 1) & ~np.isin(batch.ids, [PAD, CLS, SEP, MASK])
    selected = eligible & (rng.random(ids.shape) < p)
    labels[selected] = batch.ids[selected]
    u = rng.random(ids.shape)
    to_mask = selected & (u < split[0])
    to_random = selected & (u >= split[0]) & (u < split[0] + split[1])
    ids[to_mask] = MASK
    n_rand = int(to_random.sum())
    if n_rand:
        ids[to_random] = rng.integers(len(RESERVED), V, size=n_rand)
    return BatchEncoding(ids=ids, m=batch.m, labels=labels)


def synthetic_corpus(kind: str, V: int, n_sequences: int, seed: int,
                     min_len: int = 8, max_len: int = 24, offset: int = 2) -> list[list[int]]:
    """Desk-scale corpora of content-token sequences (ids in [5, V)).

    copy-grammar: every token reappears ``offset`` positions later, so a
    masked token is recoverable from its neighbors. bigram: a fixed random
    Markov chain. Variable lengths force padding in batches.
    """
    if V <= 16:
        raise ConfigError(f"synthetic corpus needs V > 16, got {V}")
    if kind not in ("copy-grammar", "bigram"):
        raise ConfigError(f"unknown corpus kind {kind!r}")
    rng = keyed_rng(seed, "corpus", kind)
    lo, hi = len(RESERVED), V
    out = []
    if kind == "bigram":
        # fixed chain: each row concentrated on a few successors
        trans = rng.random((hi - lo, hi - lo)) ** 8
        trans /= trans.sum(axis=1, keepdims=True)
    for _ in range(n_sequences):
        length = int(rng.integers(min_len, max_len + 1))
        if kind == "copy-grammar":
            seq = list(rng.integers(lo, hi, size=min(offset, length)))
            while len(seq) < length:
                seq.append(seq[-offset])
        else:
            seq = [int(rng.integers(lo, hi))]
            while len(seq) < length:
                seq.append(lo + int(rng.choice(hi - lo, p=trans[seq[-1] - lo])))
        out.append([int(t) for t in seq])
    return out


def load_corpus(path: str) -> tuple[list[list[int]] | list[str], bool]:
    """Read a corpus file. Returns (sequences, pre_encoded)."""
    with open(path, encoding="utf-8") as f:
        lines = [line.strip() for line in f if line.strip()]
    if lines and all(all(tok.lstrip("-").isdigit() for tok in line.split()) for line in lines):
        return [[int(t) for t in line.split()] for line in lines], True
    return lines, False


def save_corpus(path: str, sequences: list[list[int]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for seq in sequences:
            f.write(" ".join(str(t) for t in seq) + "\n")
