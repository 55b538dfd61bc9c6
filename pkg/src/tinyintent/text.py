"""Vocabularies and utterance encoding."""

from __future__ import annotations

from array import array
from bisect import bisect_left
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, InputError

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class Vocabulary:
    """Dense token <-> id map.

    With ``reserved=True`` ids 0 and 1 are PAD and UNK; label maps are built
    with ``reserved=False`` and have no special entries.
    """

    def __init__(self, tokens: Iterable[str] = (), reserved: bool = True):
        self.reserved = reserved
        self.id_to_token: list[str] = []
        self.token_to_id: dict[str, int] = {}
        if reserved:
            self.add(PAD_TOKEN)
            self.add(UNK_TOKEN)
        for tok in tokens:
            self.add(tok)

    @classmethod
    def from_list(cls, tokens: Sequence[str], reserved: bool) -> "Vocabulary":
        """Rebuild a vocabulary from its full id-ordered token list."""
        vocab = cls(reserved=False)
        vocab.reserved = reserved
        for tok in tokens:
            if tok in vocab.token_to_id:
                raise DataError(f"duplicate token {tok!r} in vocabulary list")
            vocab.add(tok)
        if reserved and vocab.id_to_token[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise DataError("reserved vocabulary must start with PAD and UNK")
        return vocab

    def add(self, token: str) -> int:
        idx = self.token_to_id.get(token)
        if idx is None:
            idx = len(self.id_to_token)
            self.token_to_id[token] = idx
            self.id_to_token.append(token)
        return idx

    def lookup(self, token: str) -> int:
        if self.reserved:
            return self.token_to_id.get(token, UNK_ID)
        return self.token_to_id[token]

    def get(self, token: str, default=None):
        return self.token_to_id.get(token, default)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return (isinstance(other, Vocabulary) and self.reserved == other.reserved
                and self.id_to_token == other.id_to_token)

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)}, reserved={self.reserved})"


class FrozenLookup:
    """Read-only token -> id map kept as sorted 64-bit string hashes.

    About 12 bytes per entry instead of the ~150 a dict of str/int objects
    costs. Hashes are Python's per-process ``hash``, so build it at load time
    and never persist it. An unseen token whose hash equals a known token's
    (probability ~n/2**64) would alias that token.
    """

    def __init__(self, vocab: Vocabulary):
        hashes = np.fromiter((hash(t) for t in vocab.id_to_token), dtype=np.int64, count=len(vocab))
        order = np.argsort(hashes, kind="stable")
        sorted_hashes = hashes[order]
        if len(sorted_hashes) > 1 and np.any(sorted_hashes[1:] == sorted_hashes[:-1]):
            raise ValueError("hash collision inside vocabulary")
        self._hashes = array("q", sorted_hashes.tobytes())
        self._ids = array("i", order.astype(np.int32).tobytes())
        self.reserved = vocab.reserved

    def get(self, token: str, default=None):
        h = hash(token)
        i = bisect_left(self._hashes, h)
        if i < len(self._hashes) and self._hashes[i] == h:
            return self._ids[i]
        return default

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def nbytes(self) -> int:
        return self._hashes.itemsize * len(self._hashes) + self._ids.itemsize * len(self._ids)


def compact_lookup(vocab: Vocabulary):
    """FrozenLookup for ``vocab``, or the vocabulary itself if hashes collide."""
    try:
        return FrozenLookup(vocab)
    except ValueError:
        return vocab


@dataclass(frozen=True)
class PipelineConfig:
    max_seq_len: int = 25
    max_word_len: int = 20
    lowercase: bool = True

    def __post_init__(self):
        if self.max_seq_len < 1 or self.max_word_len < 1:
            raise ValueError("max_seq_len and max_word_len must be positive")


@dataclass
class EncodedUtterance:
    word_ids: np.ndarray   # (max_seq_len,)
    char_ids: np.ndarray   # (max_seq_len, max_word_len)
    true_length: int


def tokenize(text: str, lowercase: bool = True) -> list[str]:
    if lowercase:
        text = text.lower()
    return text.split()


def _texts(split) -> list[str]:
    rows = [text for text, _ in split]
    if not rows:
        raise DataError("cannot build a vocabulary from an empty split")
    return rows


def build_word_vocab(split, lowercase: bool = True) -> Vocabulary:
    vocab = Vocabulary()
    for text in _texts(split):
        for tok in tokenize(text, lowercase):
            vocab.add(tok)
    return vocab


def build_char_vocab(split, lowercase: bool = True) -> Vocabulary:
    vocab = Vocabulary()
    for text in _texts(split):
        for tok in tokenize(text, lowercase):
            for ch in tok:
                vocab.add(ch)
    return vocab


def build_label_map(split) -> Vocabulary:
    labels = [label for _, label in split]
    if not labels:
        raise DataError("cannot build a label map from an empty split")
    return Vocabulary(labels, reserved=False)


def encode_tokens(tokens: Sequence[str], word_vocab, char_vocab, cfg: PipelineConfig,
                  word_ids: np.ndarray, char_ids: np.ndarray) -> int:
    """Write ids for already-tokenized text into caller buffers (reset to PAD first).

    The vocabularies only need a ``get(token, default)`` method. Returns the
    true length.
    """
    n = min(len(tokens), cfg.max_seq_len)
    word_ids[:] = PAD_ID
    char_ids[:] = PAD_ID
    wget, cget, width = word_vocab.get, char_vocab.get, cfg.max_word_len
    for t in range(n):
        tok = tokens[t]
        word_ids[t] = wget(tok, UNK_ID)
        row = char_ids[t]
        for j, ch in enumerate(tok[:width]):
            row[j] = cget(ch, UNK_ID)
    return n


def encode_utterance(text: str, word_vocab: Vocabulary, char_vocab: Vocabulary,
                     cfg: PipelineConfig = PipelineConfig()) -> EncodedUtterance:
    tokens = tokenize(text, cfg.lowercase)
    if not tokens:
        raise InputError("utterance has no tokens")
    word_ids = np.zeros(cfg.max_seq_len, dtype=np.int32)
    char_ids = np.zeros((cfg.max_seq_len, cfg.max_word_len), dtype=np.int32)
    n = encode_tokens(tokens, word_vocab, char_vocab, cfg, word_ids, char_ids)
    return EncodedUtterance(word_ids, char_ids, n)


def decode_words(enc: EncodedUtterance, word_vocab: Vocabulary) -> list[str]:
    return [word_vocab.id_to_token[i] for i in enc.word_ids[:enc.true_length]]


@dataclass
class EncodedSplit:
    """A whole split encoded into stacked arrays, ready for batching.

    Labels unseen at training time are stored as -1 and always score as errors.
    """
    word_ids: np.ndarray   # (N, T)
    char_ids: np.ndarray   # (N, T, L)
    lengths: np.ndarray    # (N,)
    labels: np.ndarray     # (N,)

    def __len__(self) -> int:
        return len(self.lengths)

    def subset(self, idx) -> "EncodedSplit":
        return EncodedSplit(self.word_ids[idx], self.char_ids[idx], self.lengths[idx], self.labels[idx])


def encode_split(split, word_vocab: Vocabulary, char_vocab: Vocabulary, label_map: Vocabulary,
                 cfg: PipelineConfig) -> EncodedSplit:
    rows = list(split)
    n = len(rows)
    word_ids = np.zeros((n, cfg.max_seq_len), dtype=np.int32)
    char_ids = np.zeros((n, cfg.max_seq_len, cfg.max_word_len), dtype=np.int32)
    lengths = np.zeros(n, dtype=np.int32)
    labels = np.full(n, -1, dtype=np.int64)
    for i, (text, label) in enumerate(rows):
        tokens = tokenize(text, cfg.lowercase)
        if not tokens:
            raise InputError(f"row {i} has no tokens")
        lengths[i] = encode_tokens(tokens, word_vocab, char_vocab, cfg, word_ids[i], char_ids[i])
        labels[i] = label_map.get(label, -1)
    return EncodedSplit(word_ids, char_ids, lengths, labels)
