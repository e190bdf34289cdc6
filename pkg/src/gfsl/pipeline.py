"""Pretraining with early stopping and episode-based evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .dataset import MetaDataset
from .episodes import Episode, EpisodeSampler, EpisodeSpec, derive_seed
from .eval import AggregateReport, Aggregator, score_episode
from .models import (
    EncoderParams,
    HeadParams,
    OptimizerState,
    batch_train_epoch,
    batchbased_predict_episode,
    init_encoder,
    init_head,
    protonet_predict_episode,
    protonet_train_step,
)

log = logging.getLogger(__name__)

METHODS = ("batchbased", "protonet-ml")

# sub-stream tags under the run seed
_INIT, _TRN_EPISODES, _VAL_EPISODES, _SHUFFLE = 0, 1, 2, 3


def _require_features(ds: MetaDataset):
    if ds.embeddings is None:
        raise ValueError("dataset has no feature vectors; supply an embedding file")


def predict_episode(method: str, enc: EncoderParams, ep: Episode, ds: MetaDataset, cfg: TrainConfig) -> np.ndarray:
    """Query probabilities for one episode with either method."""
    x_trn, x_tst = ep.features(ds)
    if method == "protonet-ml":
        return protonet_predict_episode(enc, x_trn, ep.y_trn, x_tst)
    if method == "batchbased":
        rng = np.random.default_rng(np.random.SeedSequence(int(ep.seed), spawn_key=(7,)))
        return batchbased_predict_episode(enc, x_trn, ep.y_trn, x_tst, cfg.t_steps, cfg.ptc_trn, cfg.lr_head, rng)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def evaluate_stream(method, enc, sampler: EpisodeSampler, spec: EpisodeSpec, cfg: TrainConfig, master_seed: int,
                    count: int, keep_scores: bool = False):
    """Score ``count`` episodes. Returns ``(report, per_episode_scores)``."""
    agg = Aggregator()
    kept = []
    for ep in sampler.stream(spec, master_seed, count):
        s = score_episode(predict_episode(method, enc, ep, sampler.ds, cfg), ep)
        agg.add(s)
        if keep_scores:
            kept.append(s)
    return agg.report(), kept


@dataclass
class TrainResult:
    method: str
    encoder: EncoderParams
    head: HeadParams | None
    optimizer: OptimizerState | None
    history: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def _pool_xy(sampler: EpisodeSampler):
    ds = sampler.ds
    rows = sampler.pool_rows["meta_trn"]
    classes = sampler.class_sets["meta_trn"]
    bits = [ds.vocab.bit(c) for c in classes]
    y = ds.labels[rows][:, bits].astype(np.float64)
    return ds.embeddings[rows], y, classes


def train(method: str, sampler: EpisodeSampler, cfg: TrainConfig, seed: int, trn_spec: EpisodeSpec,
          val_spec: EpisodeSpec, callback=None) -> TrainResult:
    """Pretrain with early stopping on the mean validation metric.

    A ProtoNet-ML epoch is ``cfg.episodes_trn`` meta-train episodes; a
    BatchBased epoch is one shuffled pass over the meta-train pool. After
    every epoch ``cfg.episodes_val`` fixed meta-val episodes are scored
    (BatchBased adapts a fresh head per episode). Parameters of the best
    epoch are returned; with ``max_epochs == 0`` that is the
    initialization.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    ds = sampler.ds
    _require_features(ds)
    enc = init_encoder(ds.dim, tuple(cfg.hidden), cfg.embed_dim, seed=derive_seed(seed, _INIT))
    opt = OptimizerState("adamw", lr=cfg.lr, weight_decay=cfg.weight_decay)
    head = None
    if method == "batchbased":
        x_pool, y_pool, _ = _pool_xy(sampler)
        head = init_head(y_pool.shape[1], cfg.embed_dim, seed=derive_seed(seed, _INIT) + 1)
        shuffle_rng = np.random.default_rng(np.random.SeedSequence(derive_seed(seed, _SHUFFLE)))
    trn_master = derive_seed(seed, _TRN_EPISODES)
    val_master = derive_seed(seed, _VAL_EPISODES)

    result = TrainResult(method, enc.copy(), None if head is None else head.copy(), opt.copy())
    best = -np.inf
    since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        if method == "protonet-ml":
            losses = []
            for ep in sampler.stream(trn_spec, trn_master, cfg.episodes_trn, start=(epoch - 1) * cfg.episodes_trn):
                x_trn, x_tst = ep.features(ds)
                enc, loss = protonet_train_step(enc, x_trn, ep.y_trn, x_tst, ep.y_tst, opt)
                losses.append(loss)
            train_loss = float(np.mean(losses))
        else:
            enc, head, train_loss = batch_train_epoch(enc, head, x_pool, y_pool, opt, cfg.batch_size, shuffle_rng)
        report, _ = evaluate_stream(method, enc, sampler, val_spec, cfg, val_master, cfg.episodes_val)
        metric = report[cfg.stop_metric].mean
        entry = {"epoch": epoch, "train_loss": train_loss, **{f"val_{k}": v["mean"] for k, v in report.to_dict().items()}}
        result.history.append(entry)
        log.info("epoch %d loss %.5f val %s %.4f", epoch, train_loss, cfg.stop_metric, metric)
        if callback is not None:
            callback(entry)
        if metric > best:
            best = metric
            since_best = 0
            result.encoder, result.optimizer, result.best_epoch = enc.copy(), opt.copy(), epoch
            result.head = None if head is None else head.copy()
        else:
            since_best += 1
            if since_best >= cfg.patience:
                result.stopped_early = True
                break
    return result


def evaluate_grid(method, enc, sampler, cfg: TrainConfig, master_seed: int, count: int, ways=(3, 4, 5),
                  unseen=None, shots=(1, 5, 15, 30), k_tst: int = 30, phase="meta-test", n_notfinding=1) -> list[dict]:
    """Aggregate metrics for every (n-way, n-unseen, k_trn) cell.

    ``unseen`` defaults to ``1..n_way`` for each way. Every cell uses the
    same master seed, so cells differ only through their spec.
    """
    rows = []
    for way in ways:
        for nu in (unseen if unseen is not None else range(1, way + 1)):
            if nu > way:
                continue
            for k in shots:
                spec = EpisodeSpec.from_way(way, nu, k, k_tst, phase, n_notfinding)
                report, _ = evaluate_stream(method, enc, sampler, spec, cfg, master_seed, count)
                rows.append({"n_way": way, "n_unseen": nu, "k_trn": k, "k_tst": k_tst, "report": report})
    return rows


def grid_table(rows) -> str:
    lines = [f"{'way':>3} {'unseen':>6} {'k':>3}  {'Seen':>12} {'Unseen':>12} {'HM':>12}"]
    for r in rows:
        rep: AggregateReport = r["report"]

        def cell(m):
            if m not in rep.metrics:
                return " " * 12
            s = rep[m]
            return f"{100 * s.mean:6.2f}±{100 * s.ci95:.2f}".rjust(12)

        lines.append(f"{r['n_way']:>3} {r['n_unseen']:>6} {r['k_trn']:>3}  {cell('seen')} {cell('unseen')} {cell('hm')}")
    return "\n".join(lines)
