"""Dataset and pretrained-embedding loaders.

Benchmark data follows the widely used preprocessed layout::

    <root>/{train,valid,test}/seq.in    one space-separated utterance per line
    <root>/{train,valid,test}/label     one intent per line
    <root>/{train,valid,test}/seq.out   slot tags (ignored)
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import DataError, EmbeddingFormatError
from .text import Vocabulary

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
MALFORMED_LIMIT = 0.01


@dataclass
class DatasetSplit:
    utterances: list[tuple[str, str]] = field(default_factory=list)

    def __iter__(self) -> Iterator[tuple[str, str]]:
        return iter(self.utterances)

    def __len__(self) -> int:
        return len(self.utterances)

    def __getitem__(self, i):
        return self.utterances[i]

    @property
    def texts(self) -> list[str]:
        return [t for t, _ in self.utterances]

    @property
    def labels(self) -> list[str]:
        return [lab for _, lab in self.utterances]


def _read_lines(path: Path) -> list[str]:
    # newline="" keeps CRLF visible so it can be stripped explicitly
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    return [line.rstrip("\r") for line in lines]


def load_split(directory) -> DatasetSplit:
    directory = Path(directory)
    seq_path, label_path = directory / "seq.in", directory / "label"
    for p in (seq_path, label_path):
        if not p.is_file():
            raise FileNotFoundError(f"missing dataset file: {p}")
    texts, labels = _read_lines(seq_path), _read_lines(label_path)
    if len(texts) != len(labels):
        raise DataError(f"{directory}: seq.in has {len(texts)} lines but label has {len(labels)}")
    rows = []
    for i, (text, label) in enumerate(zip(texts, labels)):
        text, label = text.strip(), label.strip()
        if not text:
            raise DataError(f"{seq_path}:{i + 1}: empty utterance")
        rows.append((text, label))
    return DatasetSplit(rows)


def load_dataset(root) -> dict[str, DatasetSplit]:
    """Load train/valid/test under ``root`` and warn about labels unseen in train."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    splits = {name: load_split(root / name) for name in SPLITS}
    known = set(splits["train"].labels)
    for name in ("valid", "test"):
        unseen = sorted(set(splits[name].labels) - known)
        if unseen:
            log.warning("%s: %d label(s) not present in train: %s", name, len(unseen), ", ".join(unseen))
    return splits


def write_split(directory, split: DatasetSplit) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "seq.in").write_text("".join(t + "\n" for t in split.texts), encoding="utf-8")
    (directory / "label").write_text("".join(lab + "\n" for lab in split.labels), encoding="utf-8")


@dataclass
class PretrainedEmbeddings:
    dim: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    malformed_lines: int = 0

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, word) -> bool:
        return word in self.vectors

    def coverage(self, vocab: Vocabulary) -> float:
        """Fraction of (non-reserved) vocabulary tokens that have a vector."""
        tokens = vocab.id_to_token[2:] if vocab.reserved else vocab.id_to_token
        if not tokens:
            return 0.0
        return sum(tok in self.vectors for tok in tokens) / len(tokens)

    def rows_for(self, vocab: Vocabulary) -> dict[int, np.ndarray]:
        return {vocab.token_to_id[w]: v for w, v in self.vectors.items() if w in vocab.token_to_id}


def load_embeddings(path, dim: int = 50, keep: Optional[set[str]] = None) -> PretrainedEmbeddings:
    """Stream a GloVe-style text file.

    With ``keep`` given, only those words are retained. Malformed lines are
    skipped and counted; more than 1% malformed raises EmbeddingFormatError.
    """
    emb = PretrainedEmbeddings(dim)
    total = 0
    with open(path, encoding="utf-8", errors="replace") as fh:
        for line in fh:
            parts = line.rstrip("\r\n").rstrip().split(" ")
            if len(parts) == 1 and not parts[0]:
                continue
            total += 1
            if len(parts) != dim + 1:
                emb.malformed_lines += 1
                continue
            word = parts[0]
            if keep is not None and word not in keep:
                continue
            try:
                vec = np.array(parts[1:], dtype=np.float32)
            except ValueError:
                emb.malformed_lines += 1
                continue
            emb.vectors[word] = vec
    if total == 0:
        log.warning("embedding file %s is empty", path)
    elif emb.malformed_lines > MALFORMED_LIMIT * total:
        raise EmbeddingFormatError(
            f"{path}: {emb.malformed_lines}/{total} lines malformed (expected {dim} floats per word)")
    elif emb.malformed_lines:
        log.warning("%s: skipped %d malformed line(s)", path, emb.malformed_lines)
    return emb


def default_data_root() -> Optional[Path]:
    env = os.environ.get("TINYINTENT_DATA")
    return Path(env) if env else None
