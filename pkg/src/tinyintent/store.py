"""Weight quantization, the ODIC model file, and the deployment engine.

File layout (all integers little-endian)::

    "ODIC"                      magic
    u32 version                 == 1
    u32 config_len, config      u32 fields, see _config_fields
    labels, word vocab, char vocab
                                each: u32 count, u32 nbytes,
                                zlib(newline-joined UTF-8 tokens in id order)
    u32 n_tensors, then per tensor:
        u32 name_len, name (UTF-8)
        u8 dtype                0 = f32, 1 = int8 affine
        u32 rank, u32 dims[rank]
        [f32 scale, i32 zero_point]     int8 only
        raw values (row-major)
    u64 FNV-1a checksum of every preceding byte
"""

from __future__ import annotations

import struct
import threading
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .errors import (BadMagicError, ChecksumError, ConfigError, DataError, InputError,
                     ModelFormatError, UnsupportedVersionError)
from .network import IntentPrediction, ModelConfig, ModelParameters, parameter_shapes
from .text import UNK_ID, PipelineConfig, Vocabulary, compact_lookup, encode_tokens, tokenize

MAGIC = b"ODIC"
FORMAT_VERSION = 1
DTYPE_F32 = 0
DTYPE_I8 = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


# --- quantization ----------------------------------------------------------

@dataclass
class QuantizedTensor:
    """int8 tensor with ``real = scale * (q - zero_point)``."""

    name: str
    shape: tuple[int, ...]
    values: np.ndarray = field(repr=False)   # int8
    scale: float
    zero_point: int

    def dequantize(self, dtype=np.float32) -> np.ndarray:
        out = self.values.astype(dtype)
        out -= dtype(self.zero_point)
        out *= dtype(self.scale)
        return out.reshape(self.shape)

    @property
    def nbytes(self) -> int:
        return int(self.values.size)


def quantize_tensor(name: str, values: np.ndarray) -> QuantizedTensor:
    """Per-tensor affine int8 quantization of ``values``.

    The range is widened to include 0 so the zero point is a valid int8 and
    every element reconstructs to within scale/2.
    """
    w = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise DataError(f"{name}: cannot quantize non-finite weights")
    lo, hi = min(float(w.min()), 0.0), max(float(w.max()), 0.0)
    if hi == lo:
        return QuantizedTensor(name, w.shape, np.zeros(w.shape, dtype=np.int8), 1.0, 0)
    scale = np.float32((hi - lo) / 255.0)
    if float(scale) * 255.0 < hi - lo:
        scale = np.nextafter(scale, np.float32(np.inf))
    scale = float(scale)
    zero_point = int(np.clip(np.round(-128.0 - lo / scale), -128, 127))
    q = np.clip(np.round(w / scale) + zero_point, -128, 127).astype(np.int8)
    return QuantizedTensor(name, w.shape, q, scale, zero_point)


def quantize(params: Union[ModelParameters, Mapping[str, np.ndarray]]) -> list[QuantizedTensor]:
    arrays = params.arrays() if isinstance(params, ModelParameters) else params
    return [quantize_tensor(name, arr) for name, arr in arrays.items()]


# --- model bundle ----------------------------------------------------------

TensorEntry = Union[np.ndarray, QuantizedTensor]


@dataclass
class ModelFile:
    """Everything needed to run a model: config, vocabularies, and weights."""

    config: ModelConfig
    labels: Vocabulary
    word_vocab: Vocabulary
    char_vocab: Vocabulary
    tensors: "OrderedDict[str, TensorEntry]"

    def __post_init__(self):
        self.config.validate()
        if len(self.labels) != self.config.num_labels:
            raise ConfigError(f"{len(self.labels)} labels but config says {self.config.num_labels}")
        if len(self.word_vocab) != self.config.word_vocab_size:
            raise ConfigError("word vocabulary size disagrees with config")
        if len(self.char_vocab) != self.config.char_vocab_size:
            raise ConfigError("char vocabulary size disagrees with config")
        expected = parameter_shapes(self.config)
        if list(self.tensors) != list(expected):
            raise ConfigError(f"tensor names {list(self.tensors)} != {list(expected)}")
        for name, shape in expected.items():
            if tuple(self.tensors[name].shape) != shape:
                raise ConfigError(f"{name}: shape {tuple(self.tensors[name].shape)} != {shape}")

    @classmethod
    def from_parameters(cls, params: ModelParameters, labels: Vocabulary, word_vocab: Vocabulary,
                        char_vocab: Vocabulary) -> "ModelFile":
        tensors = OrderedDict((n, np.asarray(a, dtype=np.float32)) for n, a in params.arrays().items())
        return cls(params.config, labels, word_vocab, char_vocab, tensors)

    @property
    def is_quantized(self) -> bool:
        return any(isinstance(t, QuantizedTensor) for t in self.tensors.values())

    def float_arrays(self, dtype=np.float32) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict(
            (n, t.dequantize(dtype) if isinstance(t, QuantizedTensor) else np.asarray(t, dtype=dtype))
            for n, t in self.tensors.items())

    def parameters(self, dtype=np.float32) -> ModelParameters:
        return ModelParameters.from_arrays(self.config, self.float_arrays(dtype))

    def quantized(self) -> "ModelFile":
        """Copy with every tensor int8-quantized (float tensors are quantized, int8 kept)."""
        tensors = OrderedDict(
            (n, t if isinstance(t, QuantizedTensor) else quantize_tensor(n, t))
            for n, t in self.tensors.items())
        return ModelFile(self.config, self.labels, self.word_vocab, self.char_vocab, tensors)


# --- serialization ---------------------------------------------------------

_ACT_CODES = {"identity": 0, "relu": 1}


def _config_fields(cfg: ModelConfig) -> list[int]:
    n = len(cfg.conv_kernel_sizes)
    return ([cfg.word_emb_dim, cfg.char_emb_dim, n, *cfg.conv_kernel_sizes, *cfg.conv_filter_counts,
             cfg.lstm_hidden, cfg.max_seq_len, cfg.max_word_len, cfg.num_labels,
             cfg.word_vocab_size, cfg.char_vocab_size, _ACT_CODES[cfg.conv_activation],
             int(cfg.lowercase)])


def _config_from_fields(vals: list[int]) -> ModelConfig:
    try:
        n = vals[2]
        rest = vals[3 + 2 * n:]
        act = {v: k for k, v in _ACT_CODES.items()}[rest[6]]
        return ModelConfig(word_emb_dim=vals[0], char_emb_dim=vals[1],
                           conv_kernel_sizes=tuple(vals[3:3 + n]),
                           conv_filter_counts=tuple(vals[3 + n:3 + 2 * n]),
                           lstm_hidden=rest[0], max_seq_len=rest[1], max_word_len=rest[2],
                           num_labels=rest[3], word_vocab_size=rest[4], char_vocab_size=rest[5],
                           conv_activation=act, lowercase=bool(rest[7]))
    except (IndexError, KeyError) as exc:
        raise ModelFormatError(f"malformed config block: {exc}") from exc


def _pack_tokens(tokens: list[str]) -> bytes:
    for tok in tokens:
        if "\n" in tok:
            raise DataError(f"token {tok!r} contains a newline")
    blob = zlib.compress("\n".join(tokens).encode("utf-8"), 9)
    return struct.pack("<II", len(tokens), len(blob)) + blob


def serialize(model: ModelFile) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<I", FORMAT_VERSION)
    fields = _config_fields(model.config)
    out += struct.pack(f"<I{len(fields)}I", 4 * len(fields), *fields)
    for vocab in (model.labels, model.word_vocab, model.char_vocab):
        out += _pack_tokens(vocab.id_to_token)
    out += struct.pack("<I", len(model.tensors))
    for name, t in model.tensors.items():
        raw_name = name.encode("utf-8")
        out += struct.pack("<I", len(raw_name)) + raw_name
        shape = tuple(t.shape)
        if isinstance(t, QuantizedTensor):
            out += struct.pack(f"<BI{len(shape)}I", DTYPE_I8, len(shape), *shape)
            out += struct.pack("<fi", t.scale, t.zero_point)
            out += np.ascontiguousarray(t.values, dtype=np.int8).tobytes()
        else:
            out += struct.pack(f"<BI{len(shape)}I", DTYPE_F32, len(shape), *shape)
            out += np.ascontiguousarray(t, dtype="<f4").tobytes()
    out += struct.pack("<Q", fnv1a64(out))
    return bytes(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if n < 0 or self.pos + n > len(self.buf):
            raise ModelFormatError("unexpected end of model data")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tokens(self, reserved: bool) -> Vocabulary:
        count, nbytes = self.unpack("<II")
        try:
            text = zlib.decompress(self.take(nbytes)).decode("utf-8")
        except (zlib.error, UnicodeDecodeError) as exc:
            raise ModelFormatError(f"corrupt vocabulary block: {exc}") from exc
        tokens = text.split("\n") if count else []
        if len(tokens) != count:
            raise ModelFormatError(f"vocabulary block has {len(tokens)} tokens, header says {count}")
        return Vocabulary.from_list(tokens, reserved)


def deserialize(data: bytes) -> ModelFile:
    """Parse model bytes; raises a ModelFormatError subclass on any defect."""
    if len(data) < 4 or bytes(data[:4]) != MAGIC:
        raise BadMagicError("not an ODIC model file (bad magic)")
    if len(data) < 16:
        raise ChecksumError("model file truncated")
    payload, (stored,) = data[:-8], struct.unpack("<Q", data[-8:])
    if fnv1a64(payload) != stored:
        raise ChecksumError("model file checksum mismatch (corrupt or truncated)")
    r = _Reader(payload)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"model format version {version}, expected {FORMAT_VERSION}")
    (cfg_len,) = r.unpack("<I")
    if cfg_len % 4:
        raise ModelFormatError("config block length is not a multiple of 4")
    cfg = _config_from_fields(list(r.unpack(f"<{cfg_len // 4}I")))
    labels = r.tokens(reserved=False)
    word_vocab = r.tokens(reserved=True)
    char_vocab = r.tokens(reserved=True)
    (n_tensors,) = r.unpack("<I")
    tensors = OrderedDict()
    for _ in range(n_tensors):
        (name_len,) = r.unpack("<I")
        name = bytes(r.take(name_len)).decode("utf-8")
        dtype, rank = r.unpack("<BI")
        shape = tuple(r.unpack(f"<{rank}I"))
        count = int(np.prod(shape, dtype=np.int64))
        if dtype == DTYPE_I8:
            scale, zp = r.unpack("<fi")
            q = np.frombuffer(r.take(count), dtype=np.int8).reshape(shape).copy()
            tensors[name] = QuantizedTensor(name, shape, q, float(scale), int(zp))
        elif dtype == DTYPE_F32:
            tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
        else:
            raise ModelFormatError(f"{name}: unknown dtype tag {dtype}")
    if r.pos != len(payload):
        raise ModelFormatError(f"{len(payload) - r.pos} trailing bytes after tensor records")
    return ModelFile(cfg, labels, word_vocab, char_vocab, tensors)


def save_model(model: ModelFile, path) -> int:
    data = serialize(model)
    Path(path).write_bytes(data)
    return len(data)


def load_model(path) -> ModelFile:
    return deserialize(Path(path).read_bytes())


# --- inference engine ------------------------------------------------------

class InferenceEngine:
    """Frozen float32 model plus preallocated scratch for batch-size-1 inference.

    ``infer`` runs tokenization, encoding, the network and the argmax. Calls
    are serialized by a lock; use :meth:`clone` for one engine per thread.
    """

    def __init__(self, model: ModelFile):
        cfg = model.config.validate()
        self.config = cfg
        self.pipeline = PipelineConfig(cfg.max_seq_len, cfg.max_word_len, cfg.lowercase)
        self.labels = model.labels
        self.word_vocab = compact_lookup(model.word_vocab)
        self.char_vocab = model.char_vocab
        w = model.float_arrays(np.float32)
        for arr in w.values():
            arr.flags.writeable = False
        self.weights = w
        self._conv = [(w[f"conv{i}.W"].reshape(f, -1).T, w[f"conv{i}.b"], k, f)
                      for i, (k, f) in enumerate(zip(cfg.conv_kernel_sizes, cfg.conv_filter_counts))]
        self._lock = threading.Lock()
        self._alloc_scratch()

    def _alloc_scratch(self) -> None:
        cfg = self.config
        T, L, E, H = cfg.max_seq_len, cfg.max_word_len, cfg.char_emb_dim, cfg.lstm_hidden
        f32 = np.float32
        self._word_ids = np.zeros(T, dtype=np.int32)
        self._char_ids = np.zeros((T, L), dtype=np.int32)
        self._char_emb = np.zeros((T, L, E), dtype=f32)
        self._cols = [np.zeros((T, L - k + 1, k * E), dtype=f32) for k in cfg.conv_kernel_sizes]
        self._conv_out = [np.zeros((T, L - k + 1, f), dtype=f32)
                          for k, f in zip(cfg.conv_kernel_sizes, cfg.conv_filter_counts)]
        self._rep = np.zeros((T, cfg.lstm_input_dim), dtype=f32)
        self._xproj = np.zeros((T, 4 * H), dtype=f32)
        self._z = np.zeros((1, 4 * H), dtype=f32)
        self._h = np.zeros((1, H), dtype=f32)
        self._c = np.zeros((1, H), dtype=f32)
        self._tmp = np.zeros((1, H), dtype=f32)
        self._logits = np.zeros((1, cfg.num_labels), dtype=f32)

    def clone(self) -> "InferenceEngine":
        other = object.__new__(InferenceEngine)
        other.__dict__.update(self.__dict__)
        other._lock = threading.Lock()
        other._alloc_scratch()
        return other

    @property
    def scratch_bytes(self) -> int:
        bufs = [self._word_ids, self._char_ids, self._char_emb, self._rep, self._xproj, self._z,
                self._h, self._c, self._tmp, self._logits, *self._cols, *self._conv_out]
        return sum(b.nbytes for b in bufs)

    @property
    def weight_bytes(self) -> int:
        return sum(a.nbytes for a in self.weights.values())

    def encode(self, text: str) -> int:
        tokens = tokenize(text, self.pipeline.lowercase)
        if not tokens:
            raise InputError("utterance has no tokens")
        return encode_tokens(tokens, self.word_vocab, self.char_vocab, self.pipeline,
                             self._word_ids, self._char_ids)

    @staticmethod
    def _sigmoid(x, out):
        np.multiply(x, 0.5, out=out)
        np.tanh(out, out=out)
        out += 1.0
        out *= 0.5

    def _logits_for(self, n: int) -> np.ndarray:
        cfg, w = self.config, self.weights
        Dw, E, H = cfg.word_emb_dim, cfg.char_emb_dim, cfg.lstm_hidden
        rep = self._rep[:n]
        np.take(w["word_emb"], self._word_ids[:n], axis=0, out=rep[:, :Dw])
        emb = self._char_emb[:n]
        np.take(w["char_emb"], self._char_ids[:n], axis=0, out=emb)
        off = Dw
        for (Wt, b, k, f), cols, conv in zip(self._conv, self._cols, self._conv_out):
            cols, conv = cols[:n], conv[:n]
            width = cols.shape[1]
            for j in range(k):
                cols[:, :, j * E:(j + 1) * E] = emb[:, j:j + width, :]
            np.matmul(cols.reshape(-1, k * E), Wt, out=conv.reshape(-1, f))
            conv += b
            if cfg.conv_activation == "relu":
                np.maximum(conv, 0, out=conv)
            np.max(conv, axis=1, out=rep[:, off:off + f])
            off += f

        xproj = self._xproj[:n]
        np.matmul(rep, w["lstm.W_x"], out=xproj)
        W_h, bias = w["lstm.W_h"], w["lstm.b"]
        z, h, c, tmp = self._z, self._h, self._c, self._tmp
        h.fill(0)
        c.fill(0)
        zi, zf, zg, zo = z[:, :H], z[:, H:2 * H], z[:, 2 * H:3 * H], z[:, 3 * H:]
        for t in range(n):
            np.matmul(h, W_h, out=z)
            np.add(xproj[t], z, out=z)
            z += bias
            self._sigmoid(zi, zi)
            self._sigmoid(zf, zf)
            np.tanh(zg, out=zg)
            self._sigmoid(zo, zo)
            np.multiply(zf, c, out=c)
            np.multiply(zi, zg, out=tmp)
            c += tmp
            np.tanh(c, out=tmp)
            np.multiply(zo, tmp, out=h)
        np.matmul(h, w["dense.W"].T, out=self._logits)
        self._logits += w["dense.b"]
        return self._logits[0]

    def infer(self, text: str) -> IntentPrediction:
        with self._lock:
            n = self.encode(text)
            logits = self._logits_for(n)
            probs = np.exp(logits - logits.max())
            probs /= probs.sum()
            label_id = int(np.argmax(probs))
        return IntentPrediction(label_id, self.labels.id_to_token[label_id], probs)

    def unknown_rate(self, text: str) -> float:
        """Fraction of tokens that fall back to UNK (diagnostic)."""
        with self._lock:
            n = self.encode(text)
            return float(np.mean(self._word_ids[:n] == UNK_ID))


def load_for_inference(path) -> InferenceEngine:
    return InferenceEngine(load_model(path))


def infer(engine: InferenceEngine, text: str) -> IntentPrediction:
    return engine.infer(text)
