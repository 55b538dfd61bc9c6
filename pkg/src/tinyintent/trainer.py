"""Mini-batch Adam training with per-epoch validation model selection."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels as K
from .data import DatasetSplit, PretrainedEmbeddings
from .errors import DataError, TrainingDiverged
from .network import ModelConfig, ModelParameters, init_parameters, loss_and_grad, predict_ids
from .text import (EncodedSplit, Vocabulary, build_char_vocab, build_label_map, build_word_vocab,
                   encode_split)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 10
    lr: float = 0.001
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


@dataclass
class RunResult:
    best_params: ModelParameters
    best_val_accuracy: float
    test_accuracy: float
    per_epoch_history: list[tuple[float, float]]
    seed: int = 0
    best_epoch: int = 0


@dataclass
class ExperimentSummary:
    run_accuracies: list[float]
    mean_accuracy: float = field(init=False)
    variance: float = field(init=False)

    def __post_init__(self):
        if not self.run_accuracies:
            raise ValueError("no runs to summarise")
        acc = np.asarray(self.run_accuracies, dtype=np.float64)
        self.mean_accuracy = float(acc.mean())
        self.variance = float(acc.var())  # population variance

    def percent(self) -> tuple[float, float]:
        """(mean, variance) on the percent scale, rounded to 2 and 4 decimals."""
        acc = 100.0 * np.asarray(self.run_accuracies, dtype=np.float64)
        return round(float(acc.mean()), 2), round(float(acc.var()), 4)


@dataclass
class PreparedData:
    config: ModelConfig
    word_vocab: Vocabulary
    char_vocab: Vocabulary
    label_map: Vocabulary
    train: EncodedSplit
    valid: EncodedSplit
    test: EncodedSplit
    pretrained_rows: Optional[dict] = None


def prepare(train: DatasetSplit, valid: DatasetSplit, test: DatasetSplit, mcfg: ModelConfig,
            embeddings: Optional[PretrainedEmbeddings] = None) -> PreparedData:
    """Build vocabularies from ``train`` only and encode all three splits."""
    for name, split in (("train", train), ("valid", valid), ("test", test)):
        if len(split) == 0:
            raise DataError(f"{name} split is empty")
    word_vocab = build_word_vocab(train, mcfg.lowercase)
    char_vocab = build_char_vocab(train, mcfg.lowercase)
    label_map = build_label_map(train)
    cfg = replace(mcfg, word_vocab_size=len(word_vocab), char_vocab_size=len(char_vocab),
                  num_labels=len(label_map)).validate()
    pipe = cfg.pipeline
    rows = None
    if embeddings is not None:
        if embeddings.dim != cfg.word_emb_dim:
            raise DataError(f"embedding dim {embeddings.dim} != word_emb_dim {cfg.word_emb_dim}")
        rows = embeddings.rows_for(word_vocab)
        log.info("pretrained coverage: %.1f%% of %d words", 100 * embeddings.coverage(word_vocab),
                 len(word_vocab) - 2)
    return PreparedData(cfg, word_vocab, char_vocab, label_map,
                        encode_split(train, word_vocab, char_vocab, label_map, pipe),
                        encode_split(valid, word_vocab, char_vocab, label_map, pipe),
                        encode_split(test, word_vocab, char_vocab, label_map, pipe),
                        rows)


def evaluate(params: ModelParameters, split: EncodedSplit) -> float:
    """Fraction of utterances whose predicted label equals the gold label."""
    if len(split) == 0:
        raise DataError("cannot evaluate on an empty split")
    return float(np.mean(predict_ids(split, params) == split.labels))


def batches(n: int, batch_size: int, rng: Optional[np.random.Generator]):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_prepared(data: PreparedData, tcfg: TrainConfig, run_label: str = "") -> RunResult:
    params = init_parameters(data.config, tcfg.seed, data.pretrained_rows)
    state = K.AdamState(lr=tcfg.lr)
    train = data.train
    best_val, best_epoch, snapshot = -1.0, 0, None
    history = []
    for epoch in range(tcfg.epochs):
        rng = np.random.default_rng(tcfg.seed + epoch) if tcfg.shuffle else None
        total, n_batches = 0.0, 0
        for idx in batches(len(train), tcfg.batch_size, rng):
            loss = loss_and_grad(train.word_ids[idx], train.char_ids[idx], train.lengths[idx],
                                 train.labels[idx], params)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"{run_label}epoch {epoch + 1}: non-finite loss {loss}")
            state.advance()
            for tensor in params.values():
                K.adam_step(tensor, state)
            total += loss
            n_batches += 1
        val_acc = evaluate(params, data.valid)
        history.append((total / n_batches, val_acc))
        log.info("%sepoch=%d train_loss=%.4f val_acc=%.2f", run_label, epoch + 1,
                 total / n_batches, 100 * val_acc)
        if val_acc > best_val:
            best_val, best_epoch = val_acc, epoch + 1
            snapshot = {name: t.values.copy() for name, t in params.items()}
    best = ModelParameters.from_arrays(data.config, snapshot)
    return RunResult(best, best_val, evaluate(best, data.test), history, tcfg.seed, best_epoch)


def train_run(train: DatasetSplit, valid: DatasetSplit, test: DatasetSplit, mcfg: ModelConfig,
              tcfg: TrainConfig, embeddings: Optional[PretrainedEmbeddings] = None) -> RunResult:
    return train_prepared(prepare(train, valid, test, mcfg, embeddings), tcfg)


def _run_seed(args):
    data, tcfg, i = args
    return train_prepared(data, tcfg, run_label=f"run={i + 1} ")


def run_experiment(data: PreparedData, tcfg: TrainConfig, n_runs: int = 20, base_seed: int = 0,
                   workers: int = 1) -> tuple[ExperimentSummary, list[RunResult]]:
    """Train ``n_runs`` models with seeds base_seed .. base_seed+n_runs-1."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    jobs = [(data, replace(tcfg, seed=base_seed + i), i) for i in range(n_runs)]
    if workers > 1 and n_runs > 1:
        with ProcessPoolExecutor(max_workers=min(workers, n_runs)) as pool:
            results = list(pool.map(_run_seed, jobs))
    else:
        results = [_run_seed(job) for job in jobs]
    return ExperimentSummary([r.test_accuracy for r in results]), results
