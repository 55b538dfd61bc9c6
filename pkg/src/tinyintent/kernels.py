"""Numeric primitives for the intent model.

Every layer has a forward function and a matching backward function. The
functions are pure: they read caller-owned arrays and return fresh ones (or
write into an explicit ``out`` buffer), and they keep no module state. numpy
supplies storage and matrix products only; all layer math lives here.

Leading axes are treated as batch axes throughout, so the same code serves
single-utterance inference and mini-batch training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ProtocolError, ShapeError

LOSS_FLOOR = 1e-12


@dataclass(eq=False)
class ParameterTensor:
    """A trainable tensor with its gradient buffer and Adam moments."""

    name: str
    values: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)
    adam_m: np.ndarray = field(default=None, repr=False)
    adam_v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values)
        if any(d <= 0 for d in self.values.shape):
            raise ShapeError(f"{self.name}: non-positive dimension in {self.values.shape}")
        for attr in ("grad", "adam_m", "adam_v"):
            buf = getattr(self, attr)
            if buf is None:
                setattr(self, attr, np.zeros_like(self.values))
            elif buf.shape != self.values.shape:
                raise ShapeError(f"{self.name}.{attr} has shape {buf.shape}, expected {self.values.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    def zero_grad(self) -> None:
        self.grad.fill(0)

    def copy(self) -> "ParameterTensor":
        return ParameterTensor(self.name, self.values.copy(), self.grad.copy(),
                               self.adam_m.copy(), self.adam_v.copy())


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.step_count < 0:
            raise ValueError("step_count must be non-negative")

    def advance(self) -> int:
        self.step_count += 1
        return self.step_count


def adam_step(tensor: ParameterTensor, state: AdamState) -> ParameterTensor:
    """Apply one bias-corrected Adam update in place, then clear ``tensor.grad``.

    ``state.step_count`` must already hold the 1-based index of this step.
    """
    t = state.step_count
    if t < 1:
        raise ProtocolError("adam_step called with step_count 0; call state.advance() first")
    g = tensor.grad
    dtype = tensor.values.dtype
    b1 = dtype.type(state.beta1)
    b2 = dtype.type(state.beta2)
    m, v = tensor.adam_m, tensor.adam_v
    m *= b1
    m += (1 - b1) * g
    v *= b2
    v += (1 - b2) * (g * g)
    m_hat = m / dtype.type(1.0 - state.beta1 ** t)
    v_hat = v / dtype.type(1.0 - state.beta2 ** t)
    tensor.values -= dtype.type(state.lr) * m_hat / (np.sqrt(v_hat) + dtype.type(state.epsilon))
    tensor.grad.fill(0)
    return tensor


# --- convolution -----------------------------------------------------------

def _windows(x: np.ndarray, k: int) -> np.ndarray:
    # (..., T, E) -> (..., T-k+1, k*E), rows ordered (k, e)
    win = sliding_window_view(x, k, axis=-2)  # (..., L, E, k)
    win = np.swapaxes(win, -1, -2)
    return win.reshape(win.shape[:-2] + (k * x.shape[-1],))


def conv1d_valid(x: np.ndarray, filters: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid 1-D convolution over the time axis.

    x has shape (..., T, E), filters (F, K, E), bias (F,). Returns
    (..., T-K+1, F) with ``out[t, f] = bias[f] + sum_{k,e} x[t+k, e] * filters[f, k, e]``.
    """
    n_filters, k, depth = filters.shape
    if x.ndim < 2 or x.shape[-1] != depth:
        raise ShapeError(f"input depth {x.shape[-1] if x.ndim else None} != filter depth {depth}")
    if x.shape[-2] < k:
        raise ShapeError(f"sequence length {x.shape[-2]} shorter than kernel {k}")
    if bias.shape != (n_filters,):
        raise ShapeError(f"bias shape {bias.shape} != ({n_filters},)")
    cols = _windows(x, k)
    flat = cols.reshape(-1, k * depth) @ filters.reshape(n_filters, k * depth).T
    return flat.reshape(cols.shape[:-1] + (n_filters,)) + bias


def conv1d_valid_backward(dout: np.ndarray, x: np.ndarray, filters: np.ndarray):
    """Gradients of :func:`conv1d_valid` w.r.t. (input, filters, bias)."""
    n_filters, k, depth = filters.shape
    length = dout.shape[-2]
    cols = _windows(x, k)
    d2 = dout.reshape(-1, n_filters)
    dW = (d2.T @ cols.reshape(-1, k * depth)).reshape(filters.shape)
    db = d2.sum(axis=0)
    dx = np.zeros_like(x)
    for j in range(k):
        dx[..., j:j + length, :] += dout @ filters[:, j, :]
    return dx, dW, db


# --- pooling ---------------------------------------------------------------

def maxpool_time(x: np.ndarray):
    """Max over the time axis of (..., L, F). Returns (values, argmax)."""
    if x.ndim < 2 or x.shape[-2] == 0:
        raise ShapeError("maxpool_time needs at least one time step")
    idx = np.argmax(x, axis=-2)
    out = np.take_along_axis(x, idx[..., None, :], axis=-2)[..., 0, :]
    return out, idx


def maxpool_time_backward(dout: np.ndarray, argmax: np.ndarray, length: int) -> np.ndarray:
    shape = dout.shape[:-1] + (length, dout.shape[-1])
    dx = np.zeros(shape, dtype=dout.dtype)
    np.put_along_axis(dx, argmax[..., None, :], dout[..., None, :], axis=-2)
    return dx


# --- activations -----------------------------------------------------------

def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def relu(x):
    return np.maximum(x, 0)


# --- LSTM ------------------------------------------------------------------
# Gate blocks along the last axis of the pre-activation z are ordered i, f, g, o.

def lstm_pointwise(z: np.ndarray, c_prev: np.ndarray):
    """Nonlinear half of an LSTM step given pre-activations z (..., 4H)."""
    hidden = c_prev.shape[-1]
    if z.shape[-1] != 4 * hidden:
        raise ShapeError(f"gate width {z.shape[-1]} != 4*{hidden}")
    i = sigmoid(z[..., :hidden])
    f = sigmoid(z[..., hidden:2 * hidden])
    g = np.tanh(z[..., 2 * hidden:3 * hidden])
    o = sigmoid(z[..., 3 * hidden:])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, (i, f, g, o, c_prev, tanh_c)


def lstm_pointwise_backward(dh: np.ndarray, dc: np.ndarray, cache):
    """Returns (dz, dc_prev) for :func:`lstm_pointwise`."""
    i, f, g, o, c_prev, tanh_c = cache
    do = dh * tanh_c
    dc = dc + dh * o * (1 - tanh_c * tanh_c)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dz = np.concatenate([
        di * i * (1 - i),
        df * f * (1 - f),
        dg * (1 - g * g),
        do * o * (1 - o),
    ], axis=-1)
    return dz, dc * f


def lstm_cell(x, h_prev, c_prev, W_x, W_h, b):
    """One LSTM step.

    W_x is (D, 4H), W_h is (H, 4H), b is (4H,). Returns (h, c, cache).
    """
    d, four_h = W_x.shape
    hidden = four_h // 4
    if x.shape[-1] != d or W_h.shape != (hidden, four_h) or b.shape != (four_h,):
        raise ShapeError(f"lstm_cell: x {x.shape}, W_x {W_x.shape}, W_h {W_h.shape}, b {b.shape}")
    if h_prev.shape[-1] != hidden or c_prev.shape[-1] != hidden:
        raise ShapeError(f"state width must be {hidden}")
    z = x @ W_x + h_prev @ W_h + b
    h, c, pw_cache = lstm_pointwise(z, c_prev)
    return h, c, (x, h_prev, W_x, W_h, pw_cache)


def lstm_cell_backward(dh, dc, cache) -> dict:
    x, h_prev, W_x, W_h, pw_cache = cache
    dz, dc_prev = lstm_pointwise_backward(dh, dc, pw_cache)
    z2 = dz.reshape(-1, dz.shape[-1])
    return {
        "dx": dz @ W_x.T,
        "dh_prev": dz @ W_h.T,
        "dc_prev": dc_prev,
        "dW_x": x.reshape(-1, x.shape[-1]).T @ z2,
        "dW_h": h_prev.reshape(-1, h_prev.shape[-1]).T @ z2,
        "db": z2.sum(axis=0),
    }


# --- classifier head -------------------------------------------------------

def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map ``W @ x + b`` with W of shape (K, D)."""
    if x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeError(f"dense: x {x.shape}, W {W.shape}, b {b.shape}")
    return x @ W.T + b


def dense_backward(dout, x, W):
    d2 = dout.reshape(-1, dout.shape[-1])
    return dout @ W, d2.T @ x.reshape(-1, x.shape[-1]), d2.sum(axis=0)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits)
    if logits.shape[axis] < 1:
        raise ShapeError("softmax over an empty axis")
    if not np.all(np.isfinite(logits)):
        raise NumericError("softmax received a non-finite logit")
    e = np.exp(logits - logits.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(probs: np.ndarray, label):
    """Negative log-likelihood of ``label`` under ``probs``.

    Accepts one distribution with an int label, or a batch (N, K) with an
    int array of labels (returns per-row losses).
    """
    probs = np.asarray(probs)
    n_classes = probs.shape[-1]
    label = np.asarray(label)
    if np.any(label < 0) or np.any(label >= n_classes):
        raise IndexError(f"label {label} out of range for {n_classes} classes")
    p = np.take_along_axis(probs, label[..., None], axis=-1)[..., 0]
    return -np.log(p + LOSS_FLOOR)


def softmax_cross_entropy_backward(probs: np.ndarray, label) -> np.ndarray:
    """Gradient of cross-entropy w.r.t. the logits: probs - onehot(label)."""
    grad = np.array(probs, copy=True)
    label = np.asarray(label)
    np.put_along_axis(grad, label[..., None],
                      np.take_along_axis(grad, label[..., None], axis=-1) - 1, axis=-1)
    return grad


# --- embeddings ------------------------------------------------------------

def embedding_lookup(table: np.ndarray, ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]})")
    return table[ids]


def embedding_backward(dout: np.ndarray, ids: np.ndarray, grad_table: np.ndarray) -> np.ndarray:
    """Scatter-add ``dout`` rows into ``grad_table`` at ``ids`` (in place)."""
    np.add.at(grad_table, np.asarray(ids).reshape(-1), dout.reshape(-1, grad_table.shape[1]))
    return grad_table
