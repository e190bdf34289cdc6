"""ProtoNet-ML: multi-label prototypes with a mean-distance offset.

For each episode class ``c`` the prototype ``z_c`` is the mean embedding of
the training examples labelled ``c``, and ``mu_c`` the mean distance from
``z_c`` to *every* training embedding. A query ``x`` scores
``sigmoid(mu_c - ||f(x) - z_c||)`` independently per class, so one query
can sit inside several class regions at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import DimensionError, EncoderParams, bce_with_logits, encoder_backward, encoder_forward, sigmoid
from .optim import OptimizerState


class TrainingError(RuntimeError):
    pass


@dataclass
class PrototypeSet:
    z: np.ndarray  # (n_classes, D)
    mu: np.ndarray  # (n_classes,)


def _distances(a, b):
    """Euclidean distances ``(len(a), len(b))`` plus the difference tensor."""
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)), diff


def prototypes_from_embeddings(emb, labels) -> PrototypeSet:
    emb = np.asarray(emb, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    counts = y.sum(axis=0)
    if np.any(counts == 0):
        empty = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"classes {empty} have no positive training examples")
    z = (y.T @ emb) / counts[:, None]
    dist, _ = _distances(emb, z)
    return PrototypeSet(z, dist.mean(axis=0))


def compute_prototypes(enc: EncoderParams, x_trn, y_trn) -> PrototypeSet:
    out, _ = encoder_forward(enc, x_trn)
    return prototypes_from_embeddings(out, y_trn)


def protonet_logits_from_embeddings(protos: PrototypeSet, emb) -> np.ndarray:
    emb = np.atleast_2d(np.asarray(emb, dtype=np.float64))
    if emb.shape[1] != protos.z.shape[1]:
        raise DimensionError(f"embedding dimension {emb.shape[1]} != prototype dimension {protos.z.shape[1]}")
    dist, _ = _distances(emb, protos.z)
    return protos.mu[None, :] - dist


def protonet_scores(enc: EncoderParams, protos: PrototypeSet, x) -> np.ndarray:
    """Per-class probabilities for one input vector or a batch of them."""
    x = np.asarray(x, dtype=np.float64)
    out, _ = encoder_forward(enc, np.atleast_2d(x))
    p = sigmoid(protonet_logits_from_embeddings(protos, out))
    return p[0] if x.ndim == 1 else p


def _unit(diff, dist):
    # d||v||/dv = v/||v||; taken as 0 at v = 0
    safe = np.where(dist > 0, dist, 1.0)
    return np.where(dist[..., None] > 0, diff / safe[..., None], 0.0)


def episode_loss_and_grad(emb_trn, y_trn, emb_tst, y_tst):
    """Mean BCE of the query scores and its gradient w.r.t. both embedding
    matrices, flowing through the prototypes and the ``mu_c`` offsets."""
    y_trn = np.asarray(y_trn, dtype=np.float64)
    n_trn = emb_trn.shape[0]
    counts = y_trn.sum(axis=0)
    if np.any(counts == 0):
        raise ValueError("every episode class needs a training positive")
    z = (y_trn.T @ emb_trn) / counts[:, None]
    a, diff_a = _distances(emb_trn, z)  # (n_trn, C)
    b, diff_b = _distances(emb_tst, z)  # (n_tst, C)
    mu = a.mean(axis=0)
    logits = mu[None, :] - b
    loss, g = bce_with_logits(logits, y_tst)

    u = _unit(diff_b, b)  # d b_jc / d q_j
    v = _unit(diff_a, a)  # d a_ic / d e_i (direct)
    g_mu = g.sum(axis=0)  # dL/dmu_c
    d_tst = -np.einsum("jc,jcd->jd", g, u)
    d_z = np.einsum("jc,jcd->cd", g, u) - (g_mu / n_trn)[:, None] * v.sum(axis=0)
    d_trn = np.einsum("c,icd->id", g_mu / n_trn, v) + (y_trn / counts[None, :]) @ d_z
    return loss, d_trn, d_tst


def protonet_loss_and_grad(enc: EncoderParams, x_trn, y_trn, x_tst, y_tst):
    """Episode loss and encoder gradients (one forward pass over both splits)."""
    n_trn = len(x_trn)
    x = np.concatenate([np.asarray(x_trn, dtype=np.float64), np.asarray(x_tst, dtype=np.float64)])
    out, cache = encoder_forward(enc, x)
    loss, d_trn, d_tst = episode_loss_and_grad(out[:n_trn], y_trn, out[n_trn:], y_tst)
    grads = encoder_backward(enc, cache, np.concatenate([d_trn, d_tst]))
    return loss, grads


def protonet_episode_loss(enc: EncoderParams, x_trn, y_trn, x_tst, y_tst) -> float:
    protos = compute_prototypes(enc, x_trn, y_trn)
    out, _ = encoder_forward(enc, x_tst)
    loss, _ = bce_with_logits(protonet_logits_from_embeddings(protos, out), y_tst)
    return loss


def protonet_train_step(enc: EncoderParams, x_trn, y_trn, x_tst, y_tst, opt: OptimizerState):
    """One optimizer step on one episode. Returns ``(new_encoder, loss)``."""
    loss, grads = protonet_loss_and_grad(enc, x_trn, y_trn, x_tst, y_tst)
    if not np.isfinite(loss) or not grads.is_finite():
        raise TrainingError(f"non-finite episode loss {loss}; step aborted")
    return EncoderParams.from_arrays(opt.apply(enc.arrays(), grads.arrays())), loss


def protonet_predict_episode(enc: EncoderParams, x_trn, y_trn, x_tst) -> np.ndarray:
    """Query probabilities ``(n_tst, n_classes)`` for one episode."""
    protos = compute_prototypes(enc, x_trn, y_trn)
    return protonet_scores(enc, protos, np.atleast_2d(x_tst))
