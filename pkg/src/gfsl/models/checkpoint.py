"""Versioned JSON checkpoints with bit-exact array payloads."""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np

from .nn import EncoderParams, HeadParams
from .optim import OptimizerState

CHECKPOINT_VERSION = 1


def _pack(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {
        "shape": list(a.shape),
        "dtype": a.dtype.newbyteorder("<").str,
        "data": base64.b64encode(a.astype(a.dtype.newbyteorder("<")).tobytes()).decode("ascii"),
    }


def _unpack(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).astype(np.float64, copy=True)


def config_hash(config: dict | None) -> str:
    blob = json.dumps(config or {}, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def checkpoint_dict(method: str, enc: EncoderParams, head: HeadParams | None = None,
                    opt: OptimizerState | None = None, config: dict | None = None, extra: dict | None = None) -> dict:
    doc = {
        "version": CHECKPOINT_VERSION,
        "method": method,
        "encoder": {"shapes": [list(w.shape) for w in enc.weights], "arrays": [_pack(a) for a in enc.arrays()]},
        "head": None if head is None else {"arrays": [_pack(a) for a in head.arrays()]},
        "optimizer": None,
        "config": config or {},
        "config_hash": config_hash(config),
        "extra": extra or {},
    }
    if opt is not None:
        doc["optimizer"] = {
            "variant": opt.variant, "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
            "eps": opt.eps, "weight_decay": opt.weight_decay, "step": opt.step,
            "m": [_pack(a) for a in opt.m], "v": [_pack(a) for a in opt.v],
        }
    return doc


def save_checkpoint(path, method, enc, head=None, opt=None, config=None, extra=None) -> None:
    doc = checkpoint_dict(method, enc, head, opt, config, extra)
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path) -> dict:
    """Returns a dict with ``method``, ``encoder``, ``head``, ``optimizer``,
    ``config``, ``config_hash`` and ``extra``."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    enc = EncoderParams.from_arrays([_unpack(a) for a in doc["encoder"]["arrays"]])
    head = None if doc["head"] is None else HeadParams.from_arrays([_unpack(a) for a in doc["head"]["arrays"]])
    opt = None
    if doc["optimizer"] is not None:
        o = doc["optimizer"]
        opt = OptimizerState(o["variant"], o["lr"], o["beta1"], o["beta2"], o["eps"], o["weight_decay"],
                             o["step"], [_unpack(a) for a in o["m"]], [_unpack(a) for a in o["v"]])
    if config_hash(doc["config"]) != doc["config_hash"]:
        raise ValueError("checkpoint config hash mismatch")
    return {"method": doc["method"], "encoder": enc, "head": head, "optimizer": opt,
            "config": doc["config"], "config_hash": doc["config_hash"], "extra": doc["extra"]}
