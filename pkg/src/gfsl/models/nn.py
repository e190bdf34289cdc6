"""Feed-forward encoder and linear head with hand-written backprop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    pass


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


@dataclass
class EncoderParams:
    """Weights ``(in, out)`` and biases ``(out,)`` per layer. Hidden layers
    use tanh; the last layer is affine."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("encoder needs matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise DimensionError(f"layer {i} input {w.shape[0]} != previous output {self.weights[i - 1].shape[1]}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    @classmethod
    def from_arrays(cls, arrays) -> "EncoderParams":
        arrays = list(arrays)
        return cls(arrays[0::2], arrays[1::2])

    def copy(self) -> "EncoderParams":
        return EncoderParams.from_arrays([a.copy() for a in self.arrays()])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class HeadParams:
    weight: np.ndarray  # (n_classes, D)
    bias: np.ndarray  # (n_classes,)

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"head weight {self.weight.shape} and bias {self.bias.shape} disagree")

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    def arrays(self) -> list:
        return [self.weight, self.bias]

    @classmethod
    def from_arrays(cls, arrays) -> "HeadParams":
        w, b = arrays
        return cls(w, b)

    def copy(self) -> "HeadParams":
        return HeadParams(self.weight.copy(), self.bias.copy())


def init_encoder(in_dim: int, hidden=(64, 64), out_dim: int = 128, seed=0, dtype=np.float64) -> EncoderParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    dims = [in_dim, *hidden, out_dim]
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (a + b))
        weights.append(rng.uniform(-limit, limit, size=(a, b)).astype(dtype))
        biases.append(np.zeros(b, dtype=dtype))
    return EncoderParams(weights, biases)


def init_head(n_classes: int, dim: int, seed=None, dtype=np.float64) -> HeadParams:
    """Zero head when ``seed`` is None, else small Glorot-uniform weights."""
    if seed is None:
        return HeadParams(np.zeros((n_classes, dim), dtype=dtype), np.zeros(n_classes, dtype=dtype))
    rng = np.random.default_rng(seed)
    limit = np.sqrt(6.0 / (n_classes + dim))
    return HeadParams(rng.uniform(-limit, limit, size=(n_classes, dim)).astype(dtype),
                      np.zeros(n_classes, dtype=dtype))


def _check_input(enc, x):
    x = np.asarray(x, dtype=enc.weights[0].dtype)
    if x.shape[-1] != enc.in_dim:
        raise DimensionError(f"input dimension {x.shape[-1]} != encoder input {enc.in_dim}")
    return x


def encoder_forward(enc: EncoderParams, x):
    """Returns ``(output, cache)``; cache holds each layer's input."""
    h = _check_input(enc, x)
    cache = []
    last = len(enc.weights) - 1
    for i, (w, b) in enumerate(zip(enc.weights, enc.biases)):
        cache.append(h)
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
    return h, cache


def encode(enc: EncoderParams, x) -> np.ndarray:
    """Embed one vector or a batch of row vectors."""
    x = _check_input(enc, x)
    single = x.ndim == 1
    out, _ = encoder_forward(enc, x[None, :] if single else x)
    return out[0] if single else out


def encoder_backward(enc: EncoderParams, cache, d_out) -> EncoderParams:
    """Gradients of a scalar loss w.r.t. encoder parameters, given
    ``d_out`` = dL/d(output) for the batch that produced ``cache``."""
    grads_w = [None] * len(enc.weights)
    grads_b = [None] * len(enc.weights)
    g = d_out
    for i in range(len(enc.weights) - 1, -1, -1):
        h_in = cache[i]
        grads_w[i] = h_in.T @ g
        grads_b[i] = g.sum(axis=0)
        if i:
            # h_in = tanh(pre) for every layer input after the first
            g = (g @ enc.weights[i].T) * (1.0 - h_in * h_in)
    return EncoderParams(grads_w, grads_b)


def head_logits(head: HeadParams, emb) -> np.ndarray:
    emb = np.asarray(emb)
    if emb.shape[-1] != head.weight.shape[1]:
        raise DimensionError(f"embedding dimension {emb.shape[-1]} != head input {head.weight.shape[1]}")
    return emb @ head.weight.T + head.bias


def head_backward(head: HeadParams, emb, d_logits):
    """Returns ``(head_grads, d_emb)``."""
    return HeadParams(d_logits.T @ emb, d_logits.sum(axis=0)), d_logits @ head.weight


def head_predict(enc: EncoderParams, head: HeadParams, x) -> np.ndarray:
    """Per-class probabilities ``sigmoid(head(encoder(x)))``."""
    return sigmoid(head_logits(head, encode(enc, x)))


def bce_with_logits(logits, labels):
    """Mean binary cross-entropy over every (example, class) entry.

    Returns ``(loss, grad)`` where ``grad = (sigmoid(logits) - labels) / count``
    is the gradient with respect to the logits.
    """
    s = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape:
        raise DimensionError(f"logits {s.shape} and labels {y.shape} differ in shape")
    # log(1 + e^s) - y s, written to stay finite for large |s|
    loss = np.mean(np.logaddexp(0.0, s) - y * s)
    return float(loss), (sigmoid(s) - y) / s.size


def bce_loss(probs, labels, eps: float = 1e-12):
    """Mean BCE from probabilities (clamped to ``[eps, 1 - eps]``).

    The second return value is the gradient w.r.t. the pre-sigmoid scores.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise DimensionError(f"probabilities {p.shape} and labels {y.shape} differ in shape")
    pc = np.clip(p, eps, 1.0 - eps)
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    return float(loss), (p - y) / p.size
