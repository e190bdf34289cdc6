"""Run configuration: defaults, config files and overrides.

Config files are either a JSON object or ``key = value`` lines (``#``
comments allowed); keys are :class:`RunConfig` field names. Values given
on the command line win over the file.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .episodes import EpisodeSpec
from .partition import PoolFractions
from .synth import SynthConfig


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 0.01
    max_epochs: int = 150
    stop_metric: str = "hm"
    patience: int = 10
    episodes_trn: int = 1000
    episodes_val: int = 100
    episodes_tst: int = 10000
    t_steps: int = 100
    ptc_trn: float = 0.5
    lr_head: float = 0.05
    hidden: tuple = (64, 64)
    embed_dim: int = 128

    def __post_init__(self):
        for name in ("batch_size", "episodes_trn", "episodes_val", "episodes_tst", "embed_dim", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr < 0 or self.lr_head < 0 or self.max_epochs < 0 or self.t_steps < 0:
            raise ValueError("learning rates, max_epochs and t_steps must be non-negative")
        if not 0.0 < self.ptc_trn <= 1.0:
            raise ValueError("ptc_trn must lie in (0, 1]")
        if self.stop_metric not in ("hm", "seen", "unseen"):
            raise ValueError(f"unknown stop metric {self.stop_metric!r}")


@dataclass(frozen=True)
class RunConfig:
    workdir: str = "run"
    seed: int | None = None
    metadata: str | None = None
    vocab: str | None = None
    embeddings: str | None = None
    min_age: int = 10
    max_age: int = 80
    cardinality_over: str = "labeled"
    # partition
    n_tst: int = 5
    n_val: int = 3
    val_reserve: float = 0.1
    tst_reserve: float = 0.2
    notfinding_split: tuple = (0.6, 0.1, 0.3)
    # episodes (train episodes are all-seen)
    trn_n_way: int = 3
    val_n_way: int = 3
    val_n_unseen: int = 1
    tst_n_way: int = 3
    tst_n_unseen: int = 1
    k_trn: int = 30
    k_tst: int = 30
    n_notfinding: int = 1
    # training
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 0.01
    max_epochs: int = 150
    stop_metric: str = "hm"
    patience: int = 10
    episodes_trn: int = 1000
    episodes_val: int = 100
    episodes_tst: int = 10000
    t_steps: int = 100
    ptc_trn: float = 0.5
    lr_head: float = 0.05
    hidden: tuple = (64, 64)
    embed_dim: int = 128
    # synthetic data
    synth_n_trn_classes: int = 7
    synth_n_val_classes: int = 3
    synth_n_tst_classes: int = 5
    synth_trn_count: int = 1500
    synth_val_count: int = 300
    synth_tst_count: int = 600
    synth_n_notfinding: int = 1500
    synth_separation: float = 6.0
    synth_noise: float = 1.0
    synth_noise_dims: int = 0
    synth_colabel_prob: float = 0.1

    def train(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in self.to_dict().items() if k in names})

    def synth(self) -> SynthConfig:
        kw = {k[len("synth_"):]: v for k, v in self.to_dict().items() if k.startswith("synth_")}
        return SynthConfig(**kw)

    def fractions(self) -> PoolFractions:
        return PoolFractions(self.val_reserve, self.tst_reserve, tuple(self.notfinding_split))

    def spec(self, phase: str, n_way=None, n_unseen=None, k_trn=None, k_tst=None) -> EpisodeSpec:
        if phase == "meta-train":
            way, unseen = self.trn_n_way, 0
        elif phase == "meta-val":
            way, unseen = self.val_n_way, self.val_n_unseen
        else:
            way, unseen = self.tst_n_way, self.tst_n_unseen
        way = way if n_way is None else n_way
        unseen = unseen if n_unseen is None else n_unseen
        return EpisodeSpec.from_way(way, unseen, k_trn or self.k_trn, k_tst or self.k_tst, phase, self.n_notfinding)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def replace(self, **overrides) -> "RunConfig":
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **_coerce_all(overrides))

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls().replace(**parse_config_text(Path(path).read_text(encoding="utf-8")))


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, value):
    if key not in _FIELD_TYPES:
        raise KeyError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    if isinstance(value, str):
        value = value.strip()
        if kind.startswith("tuple"):
            value = [v for v in value.replace(",", " ").split() if v]
        elif value.lower() in ("none", "null", ""):
            return None
    if kind.startswith("tuple"):
        cast = float if key == "notfinding_split" else int
        return tuple(cast(v) for v in value)
    if kind.startswith("int"):
        return int(value)
    if kind.startswith("float"):
        return float(value)
    return str(value)


def _coerce_all(d):
    return {k: _coerce(k, v) for k, v in d.items()}


def parse_config_text(text: str) -> dict:
    stripped = text.strip()
    if stripped.startswith("{"):
        return json.loads(stripped)
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out
