"""Synthetic intent corpora for tests, demos and sizing benchmarks.

Each intent owns a small set of cue words; utterances are cue words mixed
into filler drawn from a shared Zipf-like pool. Word lengths and utterance
lengths are in the range of short spoken-language queries.
"""

from __future__ import annotations

import string

import numpy as np

from .data import DatasetSplit
from .network import ModelConfig, init_parameters
from .store import ModelFile
from .text import Vocabulary

_ONSETS = ["", "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w",
           "br", "ch", "cl", "dr", "fl", "gr", "pl", "sh", "st", "th", "tr"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ea", "ou", "y"]
_CODAS = ["", "", "n", "r", "s", "t", "l", "m", "nd", "st", "ng", "ck"]


def pseudo_words(n: int, seed: int = 0) -> list[str]:
    """``n`` distinct pronounceable lowercase words (1-3 syllables)."""
    rng = np.random.default_rng(seed)
    seen: dict[str, None] = {}
    while len(seen) < n:
        syl = rng.choice([1, 2, 2, 3, 3])
        word = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) + rng.choice(_CODAS)
                       for _ in range(syl))
        if len(word) >= 2:
            seen.setdefault(word, None)
    return list(seen)


def random_utterances(vocab: list[str], n: int, mean_len: float = 11.0, seed: int = 0) -> list[str]:
    rng = np.random.default_rng(seed)
    lengths = np.clip(np.round(rng.normal(mean_len, mean_len / 3, size=n)), 1, 46).astype(int)
    return [" ".join(rng.choice(vocab, size=k)) for k in lengths]


def make_corpus(n_intents: int = 7, vocab_size: int = 600, sizes=(2000, 300, 300),
                mean_len: float = 9.0, cues_per_intent: int = 6, seed: int = 0,
                label_skew: float = 0.7) -> dict[str, DatasetSplit]:
    """Train/valid/test splits of a learnable synthetic intent task.

    Intent priors fall off as 1/rank**label_skew; 0 gives balanced labels.
    """
    rng = np.random.default_rng(seed)
    words = pseudo_words(vocab_size + n_intents * cues_per_intent, seed)
    cues = [words[i * cues_per_intent:(i + 1) * cues_per_intent] for i in range(n_intents)]
    filler = words[n_intents * cues_per_intent:]
    zipf = 1.0 / np.arange(1, len(filler) + 1)
    zipf /= zipf.sum()
    prior = 1.0 / np.arange(1, n_intents + 1) ** label_skew
    prior /= prior.sum()
    names = [f"intent_{i:02d}" for i in range(n_intents)]

    def sample(count: int) -> DatasetSplit:
        rows = []
        for _ in range(count):
            label = rng.choice(n_intents, p=prior)
            length = int(np.clip(round(rng.normal(mean_len, mean_len / 3)), 2, 40))
            toks = list(rng.choice(filler, size=length, p=zipf))
            n_cues = min(length, 1 + rng.integers(0, 2))
            for pos in rng.choice(length, size=n_cues, replace=False):
                toks[pos] = rng.choice(cues[label])
            rows.append((" ".join(toks), names[label]))
        return DatasetSplit(rows)

    return {name: sample(k) for name, k in zip(("train", "valid", "test"), sizes)}


# Vocabulary and test-set shapes of the two public benchmarks.
BENCHMARK_SHAPES = {
    "atis": dict(word_vocab=722, labels=21, test_size=893, mean_len=11.3),
    "snips": dict(word_vocab=11241, labels=7, test_size=700, mean_len=9.0),
}
# 68 symbols + PAD/UNK = 70 character ids
PROXY_CHARS = string.ascii_lowercase + string.digits + string.punctuation


def proxy_model(name: str, seed: int = 0, config: ModelConfig = ModelConfig()) -> tuple[ModelFile, list[str]]:
    """Randomly initialised float model with a benchmark's vocabulary sizes, plus test-sized utterances.

    Stands in for a trained model when only sizes and speed matter: file size,
    latency and memory depend on the shapes, not on the weight values.
    """
    shape = BENCHMARK_SHAPES[name]
    words = pseudo_words(shape["word_vocab"], seed)
    word_vocab, char_vocab = Vocabulary(words), Vocabulary(PROXY_CHARS)
    labels = Vocabulary([f"{name}_intent_{i:02d}" for i in range(shape["labels"])], reserved=False)
    cfg = ModelConfig(**{**config.to_dict(), "num_labels": len(labels), "word_vocab_size": len(word_vocab),
                         "char_vocab_size": len(char_vocab)})
    model = ModelFile.from_parameters(init_parameters(cfg, seed), labels, word_vocab, char_vocab)
    return model, random_utterances(words, shape["test_size"], shape["mean_len"], seed + 1)
