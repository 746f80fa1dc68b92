"""End-to-end glue: corpus objects to graph embeddings, evidence, model inputs and a trained model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
import torch

from . import hetgraph
from .config import ExperimentConfig
from .datamodel import DatasetSplit, SplitKind, Tweet, UserProfile
from .inputs import assemble
from .knowledge import EvidenceStore, FetchMode, HashingEncoder, evidence_tensor
from .model import Batch, Endemic, ModelDims, build_model
from .textenc import Vocabulary
from .training import LossConfig, TrainConfig, TrainResult, train


def make_encoder(cfg: ExperimentConfig) -> HashingEncoder:
    return HashingEncoder(cfg.dims.K, seed=cfg.knowledge.encoder_seed)


@dataclass
class GraphArtifacts:
    graph: hetgraph.HeteroGraph
    features: np.ndarray
    encoder: hetgraph.SageEncoder
    embeddings: np.ndarray
    loss_history: list[float]

    @property
    def index(self) -> dict[str, int]:
        return self.graph.index


def graph_embeddings(
    tweets: Sequence[Tweet],
    users: Sequence[UserProfile],
    follows: Sequence[tuple[str, str]],
    cfg: ExperimentConfig,
) -> GraphArtifacts:
    g = hetgraph.build_graph(tweets, users, follows, include_labels=cfg.graph.include_labels)
    feats = hetgraph.node_features(g, include_fake_tag=cfg.graph.include_labels)
    with torch.random.fork_rng():
        torch.manual_seed(cfg.seeds.graph)
        enc = hetgraph.SageEncoder(feats.shape[1], cfg.dims.G, cfg.graph.layers).double()
    tcfg = hetgraph.SageTrainConfig(
        walk_length=cfg.graph.walk_length,
        window=cfg.graph.window,
        walks_per_node=cfg.graph.walks_per_node,
        negatives=cfg.graph.negatives,
        epochs=cfg.graph.epochs,
        lr=cfg.graph.lr,
        teleport=cfg.graph.teleport,
        seed=cfg.seeds.graph,
    )
    enc, history = hetgraph.train_unsupervised(g, feats, enc, tcfg)
    return GraphArtifacts(g, feats, enc, hetgraph.embed_nodes(g, feats, enc), history)


def evidence_mode(kind: SplitKind) -> FetchMode:
    """General-test evidence is fetched at test time; train and early-test are time-relative."""
    return FetchMode.TEST_TIME if kind is SplitKind.GENERAL_TEST else FetchMode.TRAIN_TIME


def split_evidence(
    tweets: Sequence[Tweet],
    splits: Mapping[SplitKind, DatasetSplit],
    store: EvidenceStore,
    cfg: ExperimentConfig,
) -> np.ndarray:
    """Evidence tensor aligned with ``tweets``, each fetched in its split's mode."""
    kind_of = {}
    for kind, split in splits.items():
        for tid in split.tweet_ids:
            kind_of[tid] = kind
    encoder = make_encoder(cfg)
    out = np.zeros((len(tweets), cfg.knowledge.max_sentences, cfg.dims.K))
    for mode in FetchMode:
        rows = [i for i, t in enumerate(tweets) if evidence_mode(kind_of.get(t.id, SplitKind.TRAIN)) is mode]
        if not rows:
            continue
        arr, _ = evidence_tensor(
            [tweets[i] for i in rows],
            store,
            encoder,
            mode,
            cfg.knowledge.epsilon,
            cfg.knowledge.max_sentences,
            cfg.knowledge.max_per_source,
        )
        out[rows] = arr
    return out


def model_dims(cfg: ExperimentConfig, vocab: Vocabulary, n_tf: int, n_uf: int) -> ModelDims:
    d = cfg.dims
    return ModelDims(
        vocab_size=len(vocab),
        n_tf=n_tf,
        n_uf=n_uf,
        K=d.K,
        G=d.G,
        C=d.C,
        k=d.k,
        N=d.N,
        E=d.E,
        max_evidence=cfg.knowledge.max_sentences,
        p_drop=cfg.model.p_drop,
    )


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    l = cfg.loss
    return TrainConfig(
        epochs=cfg.train.epochs,
        batch_size=cfg.train.batch_size,
        lr=cfg.train.lr,
        seed=cfg.seeds.train,
        loss=LossConfig(
            lambda_ml=l.lambda_ml,
            lambda_at=l.lambda_at,
            lambda_vat=l.lambda_vat,
            eps_at=l.eps_at,
            eps_vat=l.eps_vat,
            xi=l.xi,
            power_iters=l.power_iters,
            adv_all_inputs=l.adv_all_inputs,
        ),
        stop_at_accuracy=cfg.train.stop_at_accuracy or None,
    )


@dataclass
class Experiment:
    """Everything needed to train and evaluate on one corpus, held in memory."""

    cfg: ExperimentConfig
    tweets: list[Tweet]
    users: dict[str, UserProfile]
    splits: dict[SplitKind, DatasetSplit]
    vocab: Vocabulary
    batch: Batch
    graph: Optional[GraphArtifacts] = None

    def split_batch(self, kind: SplitKind) -> Batch:
        pos = {tid: i for i, tid in enumerate(self.batch.ids)}
        return self.batch.select([pos[t] for t in self.splits[kind].tweet_ids])

    def new_model(self) -> Endemic:
        d = model_dims(self.cfg, self.vocab, self.batch.tweet_feats.shape[1], self.batch.user_feats.shape[1])
        return build_model(d, seed=self.cfg.seeds.model)

    def fit(self, model: Optional[Endemic] = None, **kw) -> TrainResult:
        model = model if model is not None else self.new_model()
        return train(model, self.split_batch(SplitKind.TRAIN), train_config(self.cfg), **kw)


def prepare(
    tweets: Sequence[Tweet],
    users: Sequence[UserProfile],
    follows: Sequence[tuple[str, str]],
    store: EvidenceStore,
    splits: Mapping[SplitKind, DatasetSplit],
    cfg: ExperimentConfig,
) -> Experiment:
    tweets = list(tweets)
    users_by_id = {u.id: u for u in users}
    graph = graph_embeddings(tweets, users, follows, cfg)
    evidence = split_evidence(tweets, splits, store, cfg)
    train_ids = set(splits[SplitKind.TRAIN].tweet_ids)
    vocab = Vocabulary.build(
        (t.text for t in tweets if t.id in train_ids), min_count=cfg.model.vocab_min_count
    )
    batch = assemble(tweets, users_by_id, vocab, cfg.dims.N, evidence, graph.index, graph.embeddings)
    return Experiment(cfg, tweets, users_by_id, dict(splits), vocab, batch, graph)
