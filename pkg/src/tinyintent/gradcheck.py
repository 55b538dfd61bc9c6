"""Central finite differences for checking analytic gradients (run at float64)."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import kernels as K
from .network import ModelParameters, logits_batch, loss_and_grad

STEP = 1e-5
# below this magnitude a gradient entry is compared absolutely, not relatively
FLOOR = 1e-6


def numerical_gradient(f: Callable[[], float], x: np.ndarray, step: float = STEP) -> np.ndarray:
    """d f / d x by central differences; ``x`` is perturbed in place and restored."""
    grad = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        up = f()
        x[idx] = orig - step
        down = f()
        x[idx] = orig
        grad[idx] = (up - down) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def model_gradient_errors(params: ModelParameters, word_ids, char_ids, lengths, labels,
                          step: float = STEP) -> dict[str, float]:
    """Relative error of backprop vs finite differences for every parameter tensor."""
    labels = np.asarray(labels)

    def loss() -> float:
        probs = K.softmax(logits_batch(word_ids, char_ids, lengths, params))
        return float(K.cross_entropy(probs, labels).mean())

    params.zero_grad()
    loss_and_grad(word_ids, char_ids, lengths, labels, params)
    return {name: relative_error(t.grad, numerical_gradient(loss, t.values, step))
            for name, t in params.items()}
