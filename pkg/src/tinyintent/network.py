"""Char-CNN + word-embedding + LSTM intent classifier.

Forward pass for one utterance::

    word ids ──> word embedding (50) ─┐
                                      ├─ concat (110) ─> LSTM (128) ─> dense ─> softmax
    char ids ──> char embedding (15)  │
                 ─> conv k=3,4,5 ─> relu ─> max over time ─> concat (60)

The LSTM runs only over real tokens, so padding never changes the result.
Training uses the same code with a leading batch axis and a length mask.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, asdict
import math
from typing import Iterator, Mapping, Optional

import numpy as np

from . import kernels as K
from .errors import ConfigError, InputError
from .kernels import ParameterTensor
from .text import EncodedUtterance, PipelineConfig, Vocabulary

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class ModelConfig:
    word_emb_dim: int = 50
    char_emb_dim: int = 15
    conv_kernel_sizes: tuple[int, ...] = (3, 4, 5)
    conv_filter_counts: tuple[int, ...] = (10, 20, 30)
    lstm_hidden: int = 128
    max_seq_len: int = 25
    max_word_len: int = 20
    num_labels: int = 2
    word_vocab_size: int = 2
    char_vocab_size: int = 2
    conv_activation: str = "relu"
    lowercase: bool = True

    def __post_init__(self):
        object.__setattr__(self, "conv_kernel_sizes", tuple(int(k) for k in self.conv_kernel_sizes))
        object.__setattr__(self, "conv_filter_counts", tuple(int(f) for f in self.conv_filter_counts))

    @property
    def char_feature_dim(self) -> int:
        return sum(self.conv_filter_counts)

    @property
    def lstm_input_dim(self) -> int:
        return self.word_emb_dim + self.char_feature_dim

    @property
    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(self.max_seq_len, self.max_word_len, self.lowercase)

    def validate(self) -> "ModelConfig":
        dims = [self.word_emb_dim, self.char_emb_dim, self.lstm_hidden, self.max_seq_len,
                self.max_word_len, self.num_labels]
        if any(d < 1 for d in dims):
            raise ConfigError(f"all dimensions must be positive: {self}")
        if self.word_vocab_size < 2 or self.char_vocab_size < 2:
            raise ConfigError("vocabularies must contain at least PAD and UNK")
        if not self.conv_kernel_sizes or len(self.conv_kernel_sizes) != len(self.conv_filter_counts):
            raise ConfigError("conv_kernel_sizes and conv_filter_counts must be non-empty and aligned")
        if min(self.conv_kernel_sizes) < 1 or min(self.conv_filter_counts) < 1:
            raise ConfigError("kernel sizes and filter counts must be positive")
        if max(self.conv_kernel_sizes) > self.max_word_len:
            raise ConfigError(f"kernel size {max(self.conv_kernel_sizes)} exceeds "
                              f"max_word_len {self.max_word_len}")
        if self.conv_activation not in ACTIVATIONS:
            raise ConfigError(f"conv_activation must be one of {ACTIVATIONS}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_kernel_sizes"] = list(self.conv_kernel_sizes)
        d["conv_filter_counts"] = list(self.conv_filter_counts)
        return d


def parameter_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    """Name -> shape of every trainable tensor, in canonical order."""
    H, D = cfg.lstm_hidden, cfg.lstm_input_dim
    shapes = OrderedDict()
    shapes["word_emb"] = (cfg.word_vocab_size, cfg.word_emb_dim)
    shapes["char_emb"] = (cfg.char_vocab_size, cfg.char_emb_dim)
    for i, (k, f) in enumerate(zip(cfg.conv_kernel_sizes, cfg.conv_filter_counts)):
        shapes[f"conv{i}.W"] = (f, k, cfg.char_emb_dim)
        shapes[f"conv{i}.b"] = (f,)
    shapes["lstm.W_x"] = (D, 4 * H)
    shapes["lstm.W_h"] = (H, 4 * H)
    shapes["lstm.b"] = (4 * H,)
    shapes["dense.W"] = (cfg.num_labels, H)
    shapes["dense.b"] = (cfg.num_labels,)
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form trainable parameter count."""
    H, D, E = cfg.lstm_hidden, cfg.lstm_input_dim, cfg.char_emb_dim
    conv = sum(k * E * f + f for k, f in zip(cfg.conv_kernel_sizes, cfg.conv_filter_counts))
    return (cfg.word_vocab_size * cfg.word_emb_dim + cfg.char_vocab_size * E + conv
            + 4 * (H * (D + H) + H) + cfg.num_labels * H + cfg.num_labels)


class ModelParameters(Mapping):
    """Ordered collection of :class:`ParameterTensor` plus the config they follow."""

    def __init__(self, config: ModelConfig, tensors: Mapping[str, ParameterTensor]):
        self.config = config
        self.tensors = OrderedDict(tensors)
        expected = parameter_shapes(config)
        if list(self.tensors) != list(expected):
            raise ConfigError(f"tensor names {list(self.tensors)} != {list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ConfigError(f"{name}: shape {self.tensors[name].shape} != {shape}")

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: Mapping[str, np.ndarray]) -> "ModelParameters":
        return cls(config, {name: ParameterTensor(name, np.array(arrays[name]))
                            for name in parameter_shapes(config)})

    def __getitem__(self, name: str) -> ParameterTensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, t.values) for n, t in self.tensors.items())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.config, {n: t.copy() for n, t in self.tensors.items()})

    def astype(self, dtype) -> "ModelParameters":
        return ModelParameters(self.config, {
            n: ParameterTensor(n, t.values.astype(dtype)) for n, t in self.tensors.items()})

    @property
    def dtype(self):
        return self["lstm.W_x"].values.dtype


def _glorot(rng, shape, fan_in, fan_out, dtype):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_parameters(config: ModelConfig, seed: int,
                    pretrained_rows: Optional[Mapping[int, np.ndarray]] = None,
                    dtype=np.float32) -> ModelParameters:
    """Randomly initialise every tensor; deterministic given ``seed``.

    ``pretrained_rows`` maps word ids to vectors that overwrite the random rows
    of the word-embedding table.
    """
    cfg = config.validate()
    rng = np.random.default_rng(seed)
    shapes = parameter_shapes(cfg)
    H = cfg.lstm_hidden
    arrays = OrderedDict()
    arrays["word_emb"] = rng.uniform(-0.05, 0.05, shapes["word_emb"]).astype(dtype)
    arrays["char_emb"] = rng.uniform(-0.05, 0.05, shapes["char_emb"]).astype(dtype)
    for i, (k, f) in enumerate(zip(cfg.conv_kernel_sizes, cfg.conv_filter_counts)):
        arrays[f"conv{i}.W"] = _glorot(rng, (f, k, cfg.char_emb_dim), k * cfg.char_emb_dim, k * f, dtype)
        arrays[f"conv{i}.b"] = np.zeros(f, dtype=dtype)
    arrays["lstm.W_x"] = _glorot(rng, shapes["lstm.W_x"], cfg.lstm_input_dim, 4 * H, dtype)
    arrays["lstm.W_h"] = _glorot(rng, shapes["lstm.W_h"], H, 4 * H, dtype)
    bias = np.zeros(4 * H, dtype=dtype)
    bias[H:2 * H] = 1.0  # forget gate
    arrays["lstm.b"] = bias
    arrays["dense.W"] = _glorot(rng, shapes["dense.W"], H, cfg.num_labels, dtype)
    arrays["dense.b"] = np.zeros(cfg.num_labels, dtype=dtype)

    if pretrained_rows:
        table = arrays["word_emb"]
        for idx, vec in pretrained_rows.items():
            vec = np.asarray(vec)
            if vec.shape != (cfg.word_emb_dim,):
                raise ConfigError(f"pretrained row {idx} has shape {vec.shape}")
            table[idx] = vec
    return ModelParameters.from_arrays(cfg, arrays)


# --- character features ----------------------------------------------------

def _char_forward(char_ids: np.ndarray, params: ModelParameters):
    cfg = params.config
    emb = K.embedding_lookup(params["char_emb"].values, char_ids)
    pooled, cache = [], []
    for i in range(len(cfg.conv_kernel_sizes)):
        conv = K.conv1d_valid(emb, params[f"conv{i}.W"].values, params[f"conv{i}.b"].values)
        act = K.relu(conv) if cfg.conv_activation == "relu" else conv
        out, idx = K.maxpool_time(act)
        pooled.append(out)
        cache.append((conv, idx))
    return np.concatenate(pooled, axis=-1), (char_ids, emb, cache)


def _char_backward(dfeat: np.ndarray, cache, params: ModelParameters) -> None:
    cfg = params.config
    char_ids, emb, conv_cache = cache
    demb = np.zeros_like(emb)
    start = 0
    for i, (conv, idx) in enumerate(conv_cache):
        width = cfg.conv_filter_counts[i]
        dact = K.maxpool_time_backward(dfeat[..., start:start + width], idx, conv.shape[-2])
        start += width
        if cfg.conv_activation == "relu":
            dact *= conv > 0
        dx, dW, db = K.conv1d_valid_backward(dact, emb, params[f"conv{i}.W"].values)
        demb += dx
        params[f"conv{i}.W"].grad += dW
        params[f"conv{i}.b"].grad += db
    K.embedding_backward(demb, char_ids, params["char_emb"].grad)


def char_features(char_ids, params: ModelParameters) -> np.ndarray:
    """Character feature vector(s) for one word (L,) or a stack of words (..., L)."""
    return _char_forward(np.asarray(char_ids), params)[0]


def word_representation(word_id: int, char_ids, params: ModelParameters) -> np.ndarray:
    wemb = K.embedding_lookup(params["word_emb"].values, np.asarray([word_id]))[0]
    return np.concatenate([wemb, char_features(char_ids, params)])


# --- full model ------------------------------------------------------------

@dataclass
class IntentPrediction:
    label_id: int
    label_name: str
    probabilities: np.ndarray = field(repr=False)


def _forward(word_ids, char_ids, lengths, params: ModelParameters, keep_cache: bool = False):
    """Batched forward to logits. word_ids (B, T), char_ids (B, T, L), lengths (B,)."""
    cfg = params.config
    lengths = np.asarray(lengths)
    if lengths.size == 0 or lengths.min() < 1:
        raise InputError("every utterance needs true_length >= 1")
    if lengths.max() > word_ids.shape[1]:
        raise InputError("true_length exceeds the padded sequence length")
    B, tmax, H = len(lengths), int(lengths.max()), cfg.lstm_hidden
    mask = np.arange(tmax)[None, :] < lengths[:, None]
    full = bool(mask.all())
    wid = word_ids[:, :tmax][mask]
    cid = char_ids[:, :tmax][mask]

    wemb = K.embedding_lookup(params["word_emb"].values, wid)
    cfeat, char_cache = _char_forward(cid, params)
    rep = np.concatenate([wemb, cfeat], axis=-1)
    if full:
        X = rep.reshape(B, tmax, -1)
    else:
        X = np.zeros((B, tmax, rep.shape[-1]), dtype=rep.dtype)
        X[mask] = rep

    W_h, b = params["lstm.W_h"].values, params["lstm.b"].values
    xproj = X @ params["lstm.W_x"].values
    h = np.zeros((B, H), dtype=X.dtype)
    c = np.zeros((B, H), dtype=X.dtype)
    steps = []
    for t in range(tmax):
        z = xproj[:, t] + h @ W_h + b
        h_new, c_new, pw = K.lstm_pointwise(z, c)
        m = None if mask[:, t].all() else mask[:, t:t + 1]
        if keep_cache:
            steps.append((h, pw, m))
        if m is None:
            h, c = h_new, c_new
        else:
            h = np.where(m, h_new, h)
            c = np.where(m, c_new, c)
    logits = K.dense_forward(h, params["dense.W"].values, params["dense.b"].values)
    cache = None
    if keep_cache:
        cache = dict(mask=mask, full=full, wid=wid, char_cache=char_cache, X=X, steps=steps, h=h)
    return logits, cache


def _backward(dlogits, cache, params: ModelParameters) -> None:
    cfg = params.config
    Dw = cfg.word_emb_dim
    W_x, W_h = params["lstm.W_x"].values, params["lstm.W_h"].values
    dh, dW, db = K.dense_backward(dlogits, cache["h"], params["dense.W"].values)
    params["dense.W"].grad += dW
    params["dense.b"].grad += db

    X = cache["X"]
    dxproj = np.zeros(X.shape[:2] + (W_x.shape[1],), dtype=X.dtype)
    dc = np.zeros_like(dh)
    dW_h = np.zeros_like(W_h)
    for t in range(len(cache["steps"]) - 1, -1, -1):
        h_prev, pw, m = cache["steps"][t]
        if m is None:
            dz, dc = K.lstm_pointwise_backward(dh, dc, pw)
            dh = dz @ W_h.T
        else:
            dz, dc_a = K.lstm_pointwise_backward(np.where(m, dh, 0), np.where(m, dc, 0), pw)
            dh = dz @ W_h.T + np.where(m, 0, dh)
            dc = dc_a + np.where(m, 0, dc)
        dW_h += h_prev.T @ dz
        dxproj[:, t] = dz
    flat = dxproj.reshape(-1, dxproj.shape[-1])
    params["lstm.W_h"].grad += dW_h
    params["lstm.b"].grad += flat.sum(axis=0)
    params["lstm.W_x"].grad += X.reshape(-1, X.shape[-1]).T @ flat
    dX = dxproj @ W_x.T
    drep = dX.reshape(-1, dX.shape[-1]) if cache["full"] else dX[cache["mask"]]
    K.embedding_backward(drep[:, :Dw], cache["wid"], params["word_emb"].grad)
    _char_backward(drep[:, Dw:], cache["char_cache"], params)


def logits_batch(word_ids, char_ids, lengths, params: ModelParameters) -> np.ndarray:
    return _forward(word_ids, char_ids, lengths, params)[0]


def loss_and_grad(word_ids, char_ids, lengths, labels, params: ModelParameters) -> float:
    """Mean cross-entropy over the batch; accumulates gradients into ``params``."""
    labels = np.asarray(labels)
    logits, cache = _forward(word_ids, char_ids, lengths, params, keep_cache=True)
    probs = K.softmax(logits)
    loss = float(K.cross_entropy(probs, labels).mean())
    dlogits = K.softmax_cross_entropy_backward(probs, labels) / len(labels)
    _backward(dlogits.astype(logits.dtype), cache, params)
    return loss


def _single(utterance: EncodedUtterance):
    n = int(utterance.true_length)
    if n < 1:
        raise InputError("utterance has true_length 0")
    return utterance.word_ids[None, :n], utterance.char_ids[None, :n], np.array([n])


def encode_sentence(utterance: EncodedUtterance, params: ModelParameters) -> np.ndarray:
    """Hidden state after the last real token."""
    w, c, n = _single(utterance)
    return _forward(w, c, n, params, keep_cache=True)[1]["h"][0]


def forward(utterance: EncodedUtterance, params: ModelParameters,
            labels: Optional[Vocabulary] = None) -> IntentPrediction:
    logits = logits_batch(*_single(utterance), params)[0]
    probs = K.softmax(logits)
    label_id = int(np.argmax(probs))
    name = labels.id_to_token[label_id] if labels is not None else str(label_id)
    return IntentPrediction(label_id, name, probs)


def backward(utterance: EncodedUtterance, true_label: int, params: ModelParameters) -> float:
    """Populate ``params`` gradients for one utterance; returns the loss."""
    params.zero_grad()
    return loss_and_grad(*_single(utterance), np.array([true_label]), params)


def predict_ids(encoded, params: ModelParameters, batch_size: int = 256) -> np.ndarray:
    """Argmax label ids for an :class:`~tinyintent.text.EncodedSplit`."""
    out = np.empty(len(encoded), dtype=np.int64)
    for start in range(0, len(encoded), batch_size):
        sl = slice(start, start + batch_size)
        logits = logits_batch(encoded.word_ids[sl], encoded.char_ids[sl], encoded.lengths[sl], params)
        out[sl] = np.argmax(logits, axis=-1)
    return out
