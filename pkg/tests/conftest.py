import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tinyintent.network import ModelConfig, init_parameters
from tinyintent.synthetic import make_corpus
from tinyintent.trainer import prepare

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


TINY = dict(word_emb_dim=4, char_emb_dim=3, conv_kernel_sizes=(2, 3, 4), conv_filter_counts=(2, 2, 2),
            lstm_hidden=5, max_seq_len=6, max_word_len=7)


def tiny_config(**overrides) -> ModelConfig:
    kw = dict(TINY, num_labels=3, word_vocab_size=10, char_vocab_size=8)
    kw.update(overrides)
    return ModelConfig(**kw)


def random_batch(cfg: ModelConfig, batch: int, rng: np.random.Generator):
    lengths = rng.integers(1, cfg.max_seq_len + 1, size=batch)
    w = np.zeros((batch, cfg.max_seq_len), dtype=np.int32)
    c = np.zeros((batch, cfg.max_seq_len, cfg.max_word_len), dtype=np.int32)
    for i, n in enumerate(lengths):
        w[i, :n] = rng.integers(1, cfg.word_vocab_size, size=n)
        for t in range(n):
            k = rng.integers(1, cfg.max_word_len + 1)
            c[i, t, :k] = rng.integers(1, cfg.char_vocab_size, size=k)
    labels = rng.integers(0, cfg.num_labels, size=batch)
    return w, c, lengths, labels


@pytest.fixture(scope="session")
def small_corpus():
    return make_corpus(n_intents=4, vocab_size=120, sizes=(400, 80, 80), mean_len=6.0, seed=3)


@pytest.fixture(scope="session")
def small_model_config():
    return ModelConfig(word_emb_dim=8, char_emb_dim=5, conv_kernel_sizes=(2, 3), conv_filter_counts=(4, 4),
                       lstm_hidden=12, max_seq_len=12, max_word_len=10)


@pytest.fixture(scope="session")
def small_prepared(small_corpus, small_model_config):
    return prepare(small_corpus["train"], small_corpus["valid"], small_corpus["test"], small_model_config)


@pytest.fixture(scope="session")
def small_params(small_prepared):
    return init_parameters(small_prepared.config, seed=0)


def benchmark_dir(name: str):
    """Directory of a real benchmark dataset, or None when it is not installed."""
    from pathlib import Path
    root = Path(os.environ.get("TINYINTENT_DATA", Path(__file__).resolve().parent.parent / "data"))
    path = root / name
    return path if all((path / s / "seq.in").is_file() for s in ("train", "valid", "test")) else None
