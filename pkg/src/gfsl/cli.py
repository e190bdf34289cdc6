"""Command-line pipeline: synth -> ingest -> stats -> partition -> episodes
-> train -> eval -> report.

Every stage reads and writes artifacts inside ``--workdir`` and records a
manifest (resolved config, seed, input/output hashes) under
``<workdir>/manifests``. Failures exit non-zero with a JSON error object on
stderr.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import click

from . import __version__
from .config import RunConfig
from .dataset import compute_stats, ingest_metadata, save_embeddings, write_metadata
from .episodes import EpisodeSampler, write_episodes
from .eval import METRICS, AggregateReport, MetricSummary, write_episode_csv
from .models import load_checkpoint, save_checkpoint
from .partition import build_class_partition, build_example_pools, load_manifest, save_manifest
from .pipeline import METHODS, evaluate_grid, evaluate_stream, grid_table, train
from .synth import make_synthetic

REPORT_DIR_ENV = "GFSL_REPORT_DIR"


class MissingArtifact(click.ClickException):
    def __init__(self, path, stage):
        super().__init__(f"{path} not found; run `gfsl {stage}` first")
        self.stage = stage


class UsageError(click.ClickException):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Resolved configuration plus workdir helpers for one command."""

    def __init__(self, cfg: RunConfig, stage: str):
        self.cfg = cfg
        self.stage = stage
        self.workdir = Path(cfg.workdir)
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []

    def path(self, name) -> Path:
        return self.workdir / name

    @property
    def report_dir(self) -> Path:
        env = os.environ.get(REPORT_DIR_ENV)
        return Path(env) if env else self.workdir / "reports"

    def need(self, name, stage) -> Path:
        p = name if isinstance(name, Path) else self.path(name)
        if not p.exists():
            raise MissingArtifact(p, stage)
        self.inputs.append(p)
        return p

    def wrote(self, p: Path) -> Path:
        self.outputs.append(p)
        return p

    def seed(self) -> int:
        if self.cfg.seed is None:
            raise UsageError(f"`{self.stage}` samples randomly and needs --seed")
        return int(self.cfg.seed)

    def _rel(self, p: Path) -> str:
        try:
            return str(p.resolve().relative_to(self.workdir.resolve()))
        except ValueError:
            return str(p.resolve())

    def locate(self, recorded) -> Path:
        p = Path(recorded)
        return p if p.is_absolute() else self.workdir / p

    def portable_config(self) -> dict:
        """Resolved config without the workdir, so artifacts do not depend
        on where a run happens."""
        d = self.cfg.to_dict()
        d.pop("workdir")
        return d

    def write_manifest(self) -> None:
        doc = {
            "stage": self.stage,
            "version": __version__,
            "seed": self.cfg.seed,
            "config": self.portable_config(),
            "inputs": {self._rel(p): _sha256(p) for p in self.inputs},
            "outputs": {self._rel(p): _sha256(p) for p in self.outputs},
        }
        d = self.path("manifests")
        d.mkdir(parents=True, exist_ok=True)
        _write_json(d / f"{self.stage}.json", doc)

    def dataset(self):
        """Dataset described by the ingest summary."""
        summary = json.loads(self.need("dataset.json", "ingest").read_text(encoding="utf-8"))
        meta = self.need(self.locate(summary["metadata"]), "ingest")
        vocab = self.need(self.locate(summary["vocab"]), "ingest") if summary.get("vocab") else None
        emb = self.need(self.locate(summary["embeddings"]), "ingest") if summary.get("embeddings") else None
        return ingest_metadata(meta, vocab, summary["min_age"], summary["max_age"], embeddings=emb)

    def partition(self):
        return load_manifest(self.need("partition.json", "partition"))


def _write_json(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _resolve(ctx, stage, **overrides) -> Run:
    base: RunConfig = ctx.obj["config"]
    cfg = base.replace(**overrides)
    run = Run(cfg, stage)
    run.workdir.mkdir(parents=True, exist_ok=True)
    return run


def _common(f):
    f = click.option("--seed", type=int, default=None, help="Master seed (required by sampling stages).")(f)
    f = click.option("--workdir", type=click.Path(file_okay=False), default=None, help="Artifact directory.")(f)
    return f


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON or key=value config file; command-line flags override it.")
@click.option("-v", "--verbose", is_flag=True)
@click.version_option(__version__)
@click.pass_context
def cli(ctx, config_path, verbose):
    """Generalized few-shot multi-label episodes, training and evaluation."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")
    ctx.ensure_object(dict)
    ctx.obj["config"] = RunConfig.from_file(config_path) if config_path else RunConfig()


@cli.command()
@_common
@click.option("--separation", "synth_separation", type=float, default=None)
@click.option("--noise", "synth_noise", type=float, default=None)
@click.option("--noise-dims", "synth_noise_dims", type=int, default=None)
@click.option("--colabel-prob", "synth_colabel_prob", type=float, default=None)
@click.option("--trn-count", "synth_trn_count", type=int, default=None)
@click.option("--val-count", "synth_val_count", type=int, default=None)
@click.option("--tst-count", "synth_tst_count", type=int, default=None)
@click.option("--notfinding", "synth_n_notfinding", type=int, default=None)
@click.pass_context
def synth(ctx, **kw):
    """Write a synthetic metadata.csv, vocab.txt and embeddings.csv."""
    run = _resolve(ctx, "synth", **kw)
    ds = make_synthetic(run.cfg.synth(), seed=run.seed())
    write_metadata(run.wrote(run.path("metadata.csv")), ds)
    ds.vocab.save(run.wrote(run.path("vocab.txt")))
    save_embeddings(run.wrote(run.path("embeddings.csv")), ds.ids, ds.embeddings)
    run.write_manifest()
    click.echo(f"wrote {len(ds)} examples, {len(ds.vocab)} classes, dim {ds.dim} to {run.workdir}")


@cli.command()
@_common
@click.option("--metadata", type=click.Path(dir_okay=False), default=None)
@click.option("--vocab", type=click.Path(dir_okay=False), default=None)
@click.option("--embeddings", type=click.Path(dir_okay=False), default=None)
@click.option("--min-age", type=int, default=None)
@click.option("--max-age", type=int, default=None)
@click.pass_context
def ingest(ctx, **kw):
    """Validate metadata (+ vocabulary, embeddings) and record a summary."""
    run = _resolve(ctx, "ingest", **kw)
    cfg = run.cfg
    meta = Path(cfg.metadata) if cfg.metadata else run.path("metadata.csv")
    vocab = Path(cfg.vocab) if cfg.vocab else run.path("vocab.txt")
    emb = Path(cfg.embeddings) if cfg.embeddings else run.path("embeddings.csv")
    run.need(meta, "synth")
    vocab = vocab if vocab.exists() else None
    emb = emb if emb.exists() else None
    for p in (vocab, emb):
        if p is not None:
            run.inputs.append(p)
    ds = ingest_metadata(meta, vocab, cfg.min_age, cfg.max_age, embeddings=emb)
    summary = {
        "metadata": run._rel(meta), "vocab": None if vocab is None else run._rel(vocab),
        "embeddings": None if emb is None else run._rel(emb),
        "min_age": cfg.min_age, "max_age": cfg.max_age,
        "n_examples": len(ds), "classes": list(ds.vocab.names), "dim": ds.dim,
        "freq": ds.freq.tolist(),
        "per_source_freq": {s: v.tolist() for s, v in ds.per_source_freq.items()},
    }
    _write_json(run.wrote(run.path("dataset.json")), summary)
    run.write_manifest()
    click.echo(f"ingested {len(ds)} examples ({len(ds.vocab)} classes)")


@cli.command()
@_common
@click.option("--cardinality-over", type=click.Choice(["labeled", "all"]), default=None)
@click.pass_context
def stats(ctx, **kw):
    """Label cardinality, density and co-occurrence."""
    run = _resolve(ctx, "stats", **kw)
    ds = run.dataset()
    st = compute_stats(ds, run.cfg.cardinality_over)
    doc = st.to_dict(ds.vocab)
    doc["freq"] = dict(zip(ds.vocab.names, ds.freq.tolist()))
    _write_json(run.wrote(run.path("stats.json")), doc)
    run.write_manifest()
    click.echo(f"examples {st.n_examples}  labelled {st.n_multilabeled}  normal {st.n_normal}")
    click.echo(f"cardinality {st.label_cardinality:.4f}  density {st.label_density:.4f}")


@cli.command()
@_common
@click.option("--n-tst", type=int, default=None)
@click.option("--n-val", type=int, default=None)
@click.option("--val-reserve", type=float, default=None)
@click.option("--tst-reserve", type=float, default=None)
@click.pass_context
def partition(ctx, **kw):
    """Class meta-partition and disjoint example pools."""
    run = _resolve(ctx, "partition", **kw)
    seed = run.seed()
    ds = run.dataset()
    cp = build_class_partition(ds, run.cfg.n_tst, run.cfg.n_val)
    pools = build_example_pools(ds, cp, run.cfg.fractions(), seed=seed)
    save_manifest(run.wrote(run.path("partition.json")), cp, pools, ds.vocab, run.cfg.n_tst, run.cfg.n_val)
    run.write_manifest()
    for phase in ("meta_trn", "meta_val", "meta_tst"):
        names = sorted(cp[phase], key=ds.vocab.bit)
        click.echo(f"{phase}: {len(pools[phase])} examples, classes {', '.join(names)}")
    for w in pools.warnings:
        click.echo(f"warning: {w}", err=True)


def _spec_options(f):
    for opt in (
        click.option("--n-way", type=int, default=None),
        click.option("--n-unseen", type=int, default=None),
        click.option("--k-trn", type=int, default=None),
        click.option("--k-tst", type=int, default=None),
    ):
        f = opt(f)
    return f


@cli.command()
@_common
@_spec_options
@click.option("--phase", type=click.Choice(["meta-train", "meta-val", "meta-test"]), default="meta-test")
@click.option("--count", type=int, default=100, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def episodes(ctx, n_way, n_unseen, k_trn, k_tst, phase, count, out, **kw):
    """Sample episodes and write them as JSON lines."""
    run = _resolve(ctx, "episodes", k_trn=k_trn, k_tst=k_tst, **kw)
    seed = run.seed()
    ds = run.dataset()
    cp, pools = run.partition()
    spec = run.cfg.spec(phase, n_way=n_way, n_unseen=n_unseen)
    sampler = EpisodeSampler(ds, cp, pools)
    path = Path(out) if out else run.path(f"episodes-{phase}.jsonl")
    n = write_episodes(run.wrote(path), sampler.stream(spec, seed, count))
    run.write_manifest()
    click.echo(f"wrote {n} {phase} episodes to {path}")


def _train_options(f):
    for opt in (
        click.option("--max-epochs", type=int, default=None),
        click.option("--patience", type=int, default=None),
        click.option("--lr", type=float, default=None),
        click.option("--episodes-trn", type=int, default=None),
        click.option("--episodes-val", type=int, default=None),
        click.option("--batch-size", type=int, default=None),
        click.option("--t-steps", type=int, default=None),
        click.option("--ptc-trn", type=float, default=None),
        click.option("--lr-head", type=float, default=None),
    ):
        f = opt(f)
    return f


@cli.command("train")
@_common
@_train_options
@click.option("--method", type=click.Choice(METHODS), required=True)
@click.pass_context
def train_cmd(ctx, method, **kw):
    """Pretrain with early stopping on meta-val HM; writes checkpoint-<method>.json."""
    run = _resolve(ctx, "train", **kw)
    run.stage = f"train-{method}"
    seed = run.seed()
    ds = run.dataset()
    cp, pools = run.partition()
    sampler = EpisodeSampler(ds, cp, pools)
    tcfg = run.cfg.train()
    res = train(method, sampler, tcfg, seed, run.cfg.spec("meta-train"), run.cfg.spec("meta-val"),
                callback=lambda e: click.echo(json.dumps(e, sort_keys=True), err=True))
    ckpt = run.path(f"checkpoint-{method}.json")
    save_checkpoint(run.wrote(ckpt), method, res.encoder, res.head, res.optimizer, run.portable_config(),
                    {"best_epoch": res.best_epoch, "stopped_early": res.stopped_early,
                     "head_classes": sampler.class_sets["meta_trn"] if method == "batchbased" else None})
    _write_json(run.wrote(run.path(f"train-{method}.json")),
                {"method": method, "best_epoch": res.best_epoch, "stopped_early": res.stopped_early,
                 "history": res.history})
    run.write_manifest()
    click.echo(f"best epoch {res.best_epoch}; checkpoint {ckpt}")


@cli.command("eval")
@_common
@_spec_options
@click.option("--method", type=click.Choice(METHODS), required=True)
@click.option("--count", "episodes_tst", type=int, default=None, help="Meta-test episodes per cell.")
@click.option("--grid", is_flag=True, help="Sweep n-way in {3,4,5}, n-unseen 1..n-way, k_trn in {1,5,15,30}.")
@click.option("--per-episode-csv", is_flag=True, help="Also dump per-episode scores.")
@click.option("--t-steps", type=int, default=None)
@click.option("--ptc-trn", type=float, default=None)
@click.option("--lr-head", type=float, default=None)
@click.pass_context
def eval_cmd(ctx, method, n_way, n_unseen, k_trn, k_tst, grid, per_episode_csv, **kw):
    """Score the trained model on meta-test episodes."""
    run = _resolve(ctx, "eval", k_trn=k_trn, k_tst=k_tst, **kw)
    run.stage = f"eval-{method}"
    seed = run.seed()
    ds = run.dataset()
    cp, pools = run.partition()
    ck = load_checkpoint(run.need(f"checkpoint-{method}.json", f"train --method {method}"))
    sampler = EpisodeSampler(ds, cp, pools)
    tcfg = run.cfg.train()
    out_dir = run.report_dir
    if grid:
        rows = evaluate_grid(method, ck["encoder"], sampler, tcfg, seed, tcfg.episodes_tst, k_tst=run.cfg.k_tst,
                             n_notfinding=run.cfg.n_notfinding)
        doc = {"method": method, "seed": seed, "grid": [
            {k: v for k, v in r.items() if k != "report"} | {"metrics": r["report"].to_dict()} for r in rows]}
        _write_json(run.wrote(out_dir / f"eval-{method}.json"), doc)
        text = grid_table(rows)
    else:
        spec = run.cfg.spec("meta-test", n_way=n_way, n_unseen=n_unseen)
        report, scores = evaluate_stream(method, ck["encoder"], sampler, spec, tcfg, seed, tcfg.episodes_tst,
                                         keep_scores=per_episode_csv)
        doc = {"method": method, "seed": seed, "spec": spec.__dict__, "metrics": report.to_dict()}
        _write_json(run.wrote(out_dir / f"eval-{method}.json"), doc)
        if per_episode_csv:
            write_episode_csv(run.wrote(out_dir / f"episodes-{method}.csv"), scores)
        text = report.to_text(f"{method} {spec.n_way}-way {spec.n_unseen}-unseen "
                              f"k_trn={spec.k_trn} k_tst={spec.k_tst} ({tcfg.episodes_tst} episodes)")
    txt = out_dir / f"eval-{method}.txt"
    txt.write_text(text + "\n", encoding="utf-8")
    run.wrote(txt)
    run.write_manifest()
    click.echo(text)


@cli.command()
@_common
@click.option("--method", type=click.Choice(METHODS), multiple=True)
@click.pass_context
def report(ctx, method, **kw):
    """Render evaluation JSON as a plain-text table (percent, two decimals)."""
    run = _resolve(ctx, "report", **kw)
    methods = method or [m for m in METHODS if (run.report_dir / f"eval-{m}.json").exists()]
    if not methods:
        raise MissingArtifact(run.report_dir / "eval-<method>.json", "eval")
    blocks = []
    for m in methods:
        doc = json.loads(run.need(run.report_dir / f"eval-{m}.json", f"eval --method {m}").read_text(encoding="utf-8"))
        if "grid" in doc:
            rows = [{**r, "report": _report_from(r["metrics"])} for r in doc["grid"]]
            blocks.append(f"{m}\n{grid_table(rows)}")
        else:
            s = doc["spec"]
            title = f"{m} {s['n_seen'] + s['n_unseen']}-way {s['n_unseen']}-unseen k_trn={s['k_trn']} k_tst={s['k_tst']}"
            blocks.append(_report_from(doc["metrics"]).to_text(title))
    text = "\n\n".join(blocks)
    path = run.report_dir / "report.txt"
    path.write_text(text + "\n", encoding="utf-8")
    run.wrote(path)
    run.write_manifest()
    click.echo(text)


def _report_from(metrics: dict) -> AggregateReport:
    return AggregateReport({k: MetricSummary(metrics[k]["mean"], metrics[k]["ci95"], metrics[k]["n"])
                            for k in METRICS if k in metrics})


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="gfsl", standalone_mode=False)
    except click.exceptions.Abort:
        _fail("Aborted", "aborted", 1)
    except click.UsageError as exc:
        _fail("UsageError", exc.format_message(), 2)
    except MissingArtifact as exc:
        _fail("MissingArtifact", exc.format_message(), 3, stage=exc.stage)
    except click.ClickException as exc:
        _fail(type(exc).__name__, exc.format_message(), 2)
    except (ValueError, KeyError, FileNotFoundError, RuntimeError) as exc:
        _fail(type(exc).__name__, str(exc), 1)
    return 0


def _fail(kind, message, code, **extra):
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}) + "\n")
    sys.exit(code)


if __name__ == "__main__":
    main()
