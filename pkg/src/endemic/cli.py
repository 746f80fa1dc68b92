"""Command-line entry point.

Every command reads the experiment config (TOML, then ``--set`` overrides,
then command flags), writes its artifacts into a staging directory and
renames it to ``<work_dir>/<stage>`` only on success. Each stage directory
holds a ``manifest.json`` with the flat config, its hash, the overrides,
the seeds and a sha256 for every input and artifact.

Exit codes: 0 ok, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__, corpus, datamodel, hetgraph, knowledge
from .config import ConfigError, ExperimentConfig, load_config
from .datamodel import DEFAULT_SCHEMA, FeatureSchema, SplitKind
from .evalharness import evaluate, read_metrics, report, write_metrics
from .inputs import assemble
from .model import build_model, load_checkpoint, save_checkpoint, sha256_file
from .pipeline import evidence_mode, make_encoder, model_dims, train_config
from .textenc import Vocabulary
from .training import train

log = logging.getLogger("endemic")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad invocation, missing data path or missing prerequisite stage."""


class Run:
    """One command execution: staging directory, inputs and manifest."""

    def __init__(self, command: str, cfg: ExperimentConfig, overrides: dict, out: Optional[Path] = None):
        self.command = command
        self.cfg = cfg
        self.overrides = overrides
        self.out = Path(out) if out is not None else cfg.work_dir() / command
        self.inputs: dict[str, str] = {}
        self.extra: dict = {}
        self.tmp: Optional[Path] = None

    def input(self, path) -> Path:
        path = Path(path)
        if not path.exists():
            raise UsageError(f"missing input: {path}")
        self.inputs[str(path)] = sha256_file(path) if path.is_file() else "dir"
        return path

    def __enter__(self) -> Path:
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.out.name}.", dir=self.out.parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        self._write_manifest()
        old = None
        if self.out.exists():
            old = self.out.with_name(f".{self.out.name}.old.{os.getpid()}")
            self.out.rename(old)
        self.tmp.rename(self.out)
        if old is not None:
            shutil.rmtree(old, ignore_errors=True)
        return False

    def _write_manifest(self) -> None:
        artifacts = {
            p.relative_to(self.tmp).as_posix(): sha256_file(p) for p in sorted(self.tmp.rglob("*")) if p.is_file()
        }
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": self.cfg.to_flat(),
            "config_hash": self.cfg.hash(),
            "overrides": self.overrides,
            "seeds": asdict(self.cfg.seeds),
            "inputs": self.inputs,
            "artifacts": artifacts,
        }
        manifest.update(self.extra)
        (self.tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- shared loaders ---------------------------------------------------------


def _schema(run: Run) -> FeatureSchema:
    if not run.cfg.paths.schema:
        return DEFAULT_SCHEMA
    path = run.input(run.cfg.resolve("schema"))
    return FeatureSchema.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _stage(run: Run, name: str, hint: str) -> Path:
    d = run.cfg.work_dir() / name
    if not (d / "manifest.json").exists():
        raise UsageError(f"stage {name!r} has not been run ({hint})")
    run.inputs[str(d / "manifest.json")] = sha256_file(d / "manifest.json")
    return d


def _tweets(run: Run) -> list[datamodel.Tweet]:
    """Weak-labelled tweets when that stage exists, raw tweets otherwise."""
    labelled = run.cfg.work_dir() / "weak-label" / "tweets.jsonl"
    path = run.input(labelled if labelled.exists() else run.cfg.resolve("tweets"))
    return datamodel.read_tweets(path)


def _users(run: Run) -> list[datamodel.UserProfile]:
    return datamodel.read_users(run.input(run.cfg.resolve("users")))


def _follows(run: Run) -> list[tuple[str, str]]:
    if not run.cfg.paths.follows:
        return []
    return datamodel.read_follows(run.input(run.cfg.resolve("follows")))


def _splits(run: Run, tweets) -> dict[SplitKind, datamodel.DatasetSplit]:
    d = _stage(run, "make-splits", "run make-splits first")
    return datamodel.read_splits(d / "splits.json", tweets)


def _embeddings(run: Run):
    d = _stage(run, "embed-graph", "run embed-graph first")
    keys, mat = hetgraph.load_embeddings(d / "embeddings")
    if mat.shape[1] != run.cfg.dims.G:
        raise UsageError(f"graph embeddings have width {mat.shape[1]}, config dims.G is {run.cfg.dims.G}")
    return {k: i for i, k in enumerate(keys)}, mat


def _evidence(run: Run, mode: knowledge.FetchMode, tweets) -> np.ndarray:
    d = _stage(run, f"fetch-evidence-{mode.value}", f"run fetch-evidence --mode {mode.value} first")
    ids = json.loads((d / "evidence.index.json").read_text(encoding="utf-8"))
    arr = np.load(d / "evidence.npy")
    pos = {tid: i for i, tid in enumerate(ids)}
    missing = [t.id for t in tweets if t.id not in pos]
    if missing:
        raise UsageError(f"evidence missing for tweets {missing[:5]}; re-run fetch-evidence")
    if arr.shape[1:] != (run.cfg.knowledge.max_sentences, run.cfg.dims.K):
        raise UsageError(f"evidence shape {arr.shape[1:]} does not match config")
    return arr[[pos[t.id] for t in tweets]]


def _batch(run: Run, tweets, vocab: Vocabulary, mode: knowledge.FetchMode):
    users = {u.id: u for u in _users(run)}
    index, mat = _embeddings(run)
    return assemble(tweets, users, vocab, run.cfg.dims.N, _evidence(run, mode, tweets), index, mat)


# -- commands ---------------------------------------------------------------


def cmd_ingest(run: Run, args) -> None:
    schema = _schema(run)
    tweets = datamodel.read_tweets(run.input(run.cfg.resolve("tweets")))
    users = _users(run)
    with run as out:
        rep = datamodel.validate_corpus(tweets, users, schema)
        if not rep.ok:
            for issue in rep.issues[:20]:
                print(f"{issue.kind}: {issue.object_id}: {issue.detail}", file=sys.stderr)
            raise RuntimeError(f"corpus validation failed with {len(rep)} issue(s)")
        (out / "validation.json").write_text(json.dumps(rep.to_dict(), indent=2) + "\n", encoding="utf-8")
        (out / "schema.json").write_text(json.dumps(schema.to_dict(), indent=2) + "\n", encoding="utf-8")
        run.extra["counts"] = {"tweets": len(tweets), "users": len(users)}


def cmd_weak_label(run: Run, args) -> None:
    tweets = datamodel.read_tweets(run.input(run.cfg.resolve("tweets")))
    claims = corpus.read_claims(run.input(run.cfg.resolve("claims")))
    with run as out:
        encoder = make_encoder(run.cfg)
        labelled = corpus.weak_label_corpus(tweets, claims, encoder, run.cfg.corpus.tau_label)
        datamodel.write_jsonl(out / "tweets.jsonl", labelled)
        counts = {}
        for t in labelled:
            counts[t.label.value] = counts.get(t.label.value, 0) + 1
        run.extra["label_counts"] = dict(sorted(counts.items()))


def cmd_make_splits(run: Run, args) -> None:
    tweets = _tweets(run)
    c = run.cfg.corpus
    with run as out:
        clusters = corpus.find_rumour_clusters(tweets, make_encoder(run.cfg), c.tau_cluster)
        splits = corpus.make_splits(
            tweets,
            clusters,
            c.max_cluster_size,
            c.max_age,
            c.general_test_fraction,
            collected_at=c.collected_at or None,
            seed=run.cfg.seeds.splits,
        )
        datamodel.write_splits(out / "splits.json", splits.values())
        (out / "clusters.json").write_text(json.dumps([cl.to_dict() for cl in clusters]) + "\n", encoding="utf-8")
        run.extra["split_sizes"] = {k.value: len(s.tweet_ids) for k, s in splits.items()}


def cmd_build_graph(run: Run, args) -> None:
    tweets, users, follows = _tweets(run), _users(run), _follows(run)
    with run as out:
        g = hetgraph.build_graph(tweets, users, follows, include_labels=run.cfg.graph.include_labels)
        g.write_nodes(out / "nodes.json")
        g.write_edges(out / "edges.tsv")
        run.extra["graph"] = {"nodes": g.n_nodes, "edges": g.n_edges}


def cmd_embed_graph(run: Run, args) -> None:
    d = _stage(run, "build-graph", "run build-graph first")
    gc = run.cfg.graph
    with run as out:
        g = hetgraph.HeteroGraph.load(d / "nodes.json", d / "edges.tsv")
        feats = hetgraph.node_features(g, include_fake_tag=gc.include_labels)
        import torch

        with torch.random.fork_rng():
            torch.manual_seed(run.cfg.seeds.graph)
            enc = hetgraph.SageEncoder(feats.shape[1], run.cfg.dims.G, gc.layers).double()
        tcfg = hetgraph.SageTrainConfig(
            walk_length=gc.walk_length,
            window=gc.window,
            walks_per_node=gc.walks_per_node,
            negatives=gc.negatives,
            epochs=gc.epochs,
            lr=gc.lr,
            teleport=gc.teleport,
            seed=run.cfg.seeds.graph,
        )
        enc, history = hetgraph.train_unsupervised(g, feats, enc, tcfg)
        hetgraph.save_embeddings(out / "embeddings", g.keys, hetgraph.embed_nodes(g, feats, enc))
        with open(out / "loss.csv", "w", encoding="utf-8") as fh:
            fh.write("epoch,loss\n")
            for i, v in enumerate(history, start=1):
                fh.write(f"{i},{v!r}\n")


def cmd_fetch_evidence(run: Run, args) -> None:
    mode = knowledge.FetchMode(args.mode)
    tweets = _tweets(run)
    store = knowledge.EvidenceStore.load(run.input(run.cfg.resolve("evidence_store")))
    k = run.cfg.knowledge
    run.out = Path(args.out) if args.out else run.cfg.work_dir() / f"fetch-evidence-{mode.value}"
    with run as out:
        arr, sets = knowledge.evidence_tensor(
            tweets, store, make_encoder(run.cfg), mode, k.epsilon, k.max_sentences, k.max_per_source
        )
        np.save(out / "evidence.npy", arr)
        (out / "evidence.index.json").write_text(json.dumps([t.id for t in tweets]) + "\n", encoding="utf-8")
        datamodel.write_jsonl(out / "evidence.jsonl", sets)
        run.extra["mode"] = mode.value


def cmd_train(run: Run, args) -> None:
    tweets = _tweets(run)
    splits = _splits(run, tweets)
    by_id = {t.id: t for t in tweets}
    train_tweets = [by_id[i] for i in splits[SplitKind.TRAIN].tweet_ids]
    vocab = Vocabulary.build((t.text for t in train_tweets), min_count=run.cfg.model.vocab_min_count)
    batch = _batch(run, train_tweets, vocab, knowledge.FetchMode.TRAIN_TIME)
    with run as out:
        dims = model_dims(run.cfg, vocab, batch.tweet_feats.shape[1], batch.user_feats.shape[1])
        model = build_model(dims, seed=run.cfg.seeds.model)
        result = train(model, batch, train_config(run.cfg), log_path=out / "training_log.csv")
        vocab.save(out / "vocab.txt")
        save_checkpoint(
            result.model,
            out / "checkpoint",
            {"seeds": asdict(run.cfg.seeds), "config_hash": run.cfg.hash(), "epochs_run": result.epochs_run},
        )
        run.extra["final"] = result.history[-1] if result.history else {}


def cmd_eval(run: Run, args) -> None:
    kind = SplitKind(args.split)
    mode = "mask_detect" if args.mask_detect else "plain"
    schema = _schema(run)
    tweets = _tweets(run)
    split = _splits(run, tweets)[kind]
    ckpt_stage = Path(args.checkpoint) if args.checkpoint else _stage(run, "train", "run train first")
    vocab = Vocabulary.load(run.input(ckpt_stage / "vocab.txt"))
    run.input(ckpt_stage / "checkpoint" / "params.npz")
    by_id = {t.id: t for t in tweets}
    batch = _batch(run, [by_id[i] for i in split.tweet_ids], vocab, evidence_mode(kind))
    name = args.name or f"{kind.value}-{mode}"
    run.out = Path(args.out) if args.out else run.cfg.work_dir() / f"eval-{name}"
    with run as out:
        model, _ = load_checkpoint(ckpt_stage / "checkpoint")
        metrics = evaluate(model, batch, split, mode=mode, schema=schema, name=name)
        write_metrics(out / "metrics.json", metrics)
        print(
            f"{name}: accuracy {metrics.accuracy:.4f} precision {metrics.precision:.4f} "
            f"recall {metrics.recall:.4f} f1 {metrics.f1:.4f} (n={metrics.total}, excluded {metrics.n_excluded})"
        )


def _metrics_path(run: Run, ref: str) -> Path:
    p = Path(ref)
    candidates = [p, p / "metrics.json", run.cfg.work_dir() / ref / "metrics.json", run.cfg.work_dir() / f"eval-{ref}" / "metrics.json"]
    for c in candidates:
        if c.is_file():
            return run.input(c)
    raise UsageError(f"no metrics.json found for run {ref!r}")


def cmd_report(run: Run, args) -> None:
    refs = list(args.compare or [])
    if not refs:
        raise UsageError("report needs at least one run (use --compare RUN_A RUN_B)")
    runs = [read_metrics(_metrics_path(run, r)) for r in refs]
    with run as out:
        report(runs, out)
        print((out / "report.txt").read_text(encoding="utf-8"), end="")


def cmd_synth(run: Run, args) -> None:
    from .synthetic import make_corpus

    out_dir = Path(args.directory)
    c = make_corpus(
        n_tweets=args.n_tweets,
        seed=args.seed,
        unlabelled_fraction=args.unlabelled_fraction,
        context_signal=args.context_signal,
    )
    c.write(out_dir)
    print(f"wrote {len(c.tweets)} tweets, {len(c.users)} users to {out_dir}")


# -- argument parsing -------------------------------------------------------

COMMANDS: dict[str, Callable] = {
    "ingest": cmd_ingest,
    "weak-label": cmd_weak_label,
    "make-splits": cmd_make_splits,
    "build-graph": cmd_build_graph,
    "embed-graph": cmd_embed_graph,
    "fetch-evidence": cmd_fetch_evidence,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
}

# command flag -> config key; a flag given on the command line is an override
FLAG_KEYS = {
    "claims": "paths.claims",
    "tau": "corpus.tau_label",
    "max_cluster_size": "corpus.max_cluster_size",
    "max_age": "corpus.max_age",
    "layers": "graph.layers",
    "teleport": "graph.teleport",
    "epsilon": "knowledge.epsilon",
    "store": "paths.evidence_store",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config_pos", nargs="?", metavar="CONFIG", help="experiment config (TOML)")
    common.add_argument("--config", "-c", help="experiment config (TOML)")
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="override a dotted config key (repeatable)"
    )
    common.add_argument("--out", help="output directory (default: <work_dir>/<stage>)")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(prog="endemic", description="Fake-news detection experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    sub.add_parser("ingest", parents=[common], help="validate tweets.jsonl / users.jsonl")
    p = sub.add_parser("weak-label", parents=[common], help="label tweets against verified claims")
    p.add_argument("--claims")
    p.add_argument("--tau", type=float)
    p = sub.add_parser("make-splits", parents=[common], help="train / general-test / early-test splits")
    p.add_argument("--max-cluster-size", type=int)
    p.add_argument("--max-age", type=int)
    sub.add_parser("build-graph", parents=[common], help="user/tweet graph as nodes.json + edges.tsv")
    p = sub.add_parser("embed-graph", parents=[common], help="unsupervised graph embeddings")
    p.add_argument("--layers", type=int)
    p.add_argument("--teleport", type=float)
    p = sub.add_parser("fetch-evidence", parents=[common], help="select evidence sentences per tweet")
    p.add_argument("--mode", choices=[m.value for m in knowledge.FetchMode], default="train_time")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--store")
    sub.add_parser("train", parents=[common], help="train the classifier")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    p.add_argument("--split", choices=[k.value for k in SplitKind], default="general_test")
    p.add_argument("--mask-detect", action="store_true", help="mask time-variant contextual features")
    p.add_argument("--checkpoint", help="train stage directory (default: <work_dir>/train)")
    p.add_argument("--name", help="run name (default: <split>-<mode>)")
    p = sub.add_parser("report", parents=[common], help="metric tables and plots for eval runs")
    p.add_argument("--compare", nargs="+", metavar="RUN", help="eval run names or directories; the first is the reference")

    p = sub.add_parser("synth", help="write a synthetic demo corpus")
    p.add_argument("directory")
    p.add_argument("--n-tweets", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--unlabelled-fraction", type=float, default=0.0)
    p.add_argument("--context-signal", type=float, default=0.0)
    return parser


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    return out


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synth":
            cmd_synth(None, args)
            return EXIT_OK
        if args.config and args.config_pos:
            raise UsageError("give the config either positionally or with --config, not both")
        overrides = _overrides(args)
        cfg = load_config(args.config or args.config_pos, overrides)
        r = Run(args.command, cfg, overrides, out=args.out)
        COMMANDS[args.command](r, args)
    except (UsageError, ConfigError) as exc:
        print(f"endemic {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("command failed", exc_info=True)
        print(f"endemic {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
