"""BatchBased: batch pretraining of encoder + head, then per-episode head
adaptation on a frozen encoder."""

from __future__ import annotations

import numpy as np

from .nn import (
    EncoderParams,
    HeadParams,
    bce_with_logits,
    encode,
    encoder_backward,
    encoder_forward,
    head_backward,
    head_logits,
    init_head,
    sigmoid,
)
from .optim import OptimizerState
from .protonet import TrainingError


def batch_loss_and_grad(enc: EncoderParams, head: HeadParams, x, y):
    """Mean BCE over all (example, class) entries; returns
    ``(loss, encoder_grads, head_grads)``."""
    emb, cache = encoder_forward(enc, x)
    loss, g = bce_with_logits(head_logits(head, emb), y)
    head_grads, d_emb = head_backward(head, emb, g)
    return loss, encoder_backward(enc, cache, d_emb), head_grads


def batches(n: int, batch_size: int, rng=None):
    """Index arrays covering ``range(n)`` once, shuffled when ``rng`` is given."""
    order = np.arange(n) if rng is None else rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def batch_train_epoch(enc: EncoderParams, head: HeadParams, x, y, opt: OptimizerState,
                      batch_size: int = 64, rng=None):
    """One shuffled pass over ``(x, y)``; encoder and head share ``opt``.

    Returns ``(encoder, head, mean_loss)`` where the mean is weighted by
    batch size.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("empty training pool")
    if y.shape[1] != head.n_classes:
        raise ValueError(f"head has {head.n_classes} outputs, labels have {y.shape[1]} classes")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    n_enc = len(enc.arrays())
    total = 0.0
    for idx in batches(len(x), batch_size, rng):
        loss, g_enc, g_head = batch_loss_and_grad(enc, head, x[idx], y[idx])
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite batch loss {loss}; epoch aborted")
        new = opt.apply(enc.arrays() + head.arrays(), g_enc.arrays() + g_head.arrays())
        enc = EncoderParams.from_arrays(new[:n_enc])
        head = HeadParams.from_arrays(new[n_enc:])
        total += loss * len(idx)
    return enc, head, total / len(x)


def adapt_head(enc: EncoderParams, x_trn, y_trn, t_steps: int = 100, ptc_trn: float = 0.5,
               lr_head: float = 0.05, rng=None, head: HeadParams | None = None) -> HeadParams:
    """Fit a fresh linear head on an episode's training split.

    The encoder is only read. Each of ``t_steps`` steps draws
    ``max(1, round(ptc_trn * n))`` training examples without replacement
    and takes one plain gradient step of size ``lr_head`` on the head.
    """
    if not 0.0 < ptc_trn <= 1.0:
        raise ValueError(f"ptc_trn must lie in (0, 1], got {ptc_trn}")
    if t_steps < 0:
        raise ValueError("t_steps must be >= 0")
    y_trn = np.asarray(y_trn, dtype=np.float64)
    n = len(y_trn)
    if n == 0:
        raise ValueError("empty training split")
    emb = encode(enc, np.asarray(x_trn, dtype=np.float64))
    head = head.copy() if head is not None else init_head(y_trn.shape[1], emb.shape[1])
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    m = max(1, int(np.floor(ptc_trn * n + 0.5)))
    for _ in range(t_steps):
        idx = rng.choice(n, m, replace=False)
        _, g = bce_with_logits(head_logits(head, emb[idx]), y_trn[idx])
        grads, _ = head_backward(head, emb[idx], g)
        head = HeadParams(head.weight - lr_head * grads.weight, head.bias - lr_head * grads.bias)
    return head


def batchbased_predict_episode(enc: EncoderParams, x_trn, y_trn, x_tst, t_steps=100, ptc_trn=0.5,
                               lr_head=0.05, rng=None) -> np.ndarray:
    head = adapt_head(enc, x_trn, y_trn, t_steps, ptc_trn, lr_head, rng)
    return sigmoid(head_logits(head, encode(enc, np.atleast_2d(x_tst))))
