"""Undirected user/tweet graph and unsupervised mean-aggregator node embeddings."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from . import _kernels
from .datamodel import Label, Tweet, UserProfile

log = logging.getLogger(__name__)

EDGE_TYPES = ("follow", "authorship", "retweet")
NODE_KINDS = ("user", "tweet")
NODE_TAGS = ("parent", "tweet", "retweet", "user")


class GraphBuildError(ValueError):
    pass


class GraphTrainingError(RuntimeError):
    pass


def user_key(uid: str) -> str:
    return f"user:{uid}"


def tweet_key(tid: str) -> str:
    return f"tweet:{tid}"


class HeteroGraph:
    """Typed undirected graph in CSR form.

    Each edge is stored once in ``edge_src``/``edge_dst``/``edge_type``; the
    CSR arrays list it from both endpoints. No dense adjacency is built.
    """

    def __init__(self, keys: Sequence[str], kinds: Sequence[str], tags: Sequence[Iterable[str]], edges):
        self.keys = list(keys)
        self.index = {k: i for i, k in enumerate(self.keys)}
        if len(self.index) != len(self.keys):
            raise GraphBuildError("duplicate node keys")
        self.kinds = list(kinds)
        self.tags = [frozenset(t) for t in tags]
        n = len(self.keys)

        canon = {}
        for a, b, etype in edges:
            if etype not in EDGE_TYPES:
                raise GraphBuildError(f"unknown edge type {etype!r}")
            if a == b:
                continue
            for x in (a, b):
                if not 0 <= x < n:
                    raise GraphBuildError(f"edge endpoint {x} out of range")
            pair = (a, b) if a < b else (b, a)
            canon.setdefault(pair, etype)
        pairs = sorted(canon)
        self.edge_src = np.array([p[0] for p in pairs], dtype=np.int64)
        self.edge_dst = np.array([p[1] for p in pairs], dtype=np.int64)
        self.edge_type = np.array([EDGE_TYPES.index(canon[p]) for p in pairs], dtype=np.int8)

        heads = np.concatenate([self.edge_src, self.edge_dst])
        tails = np.concatenate([self.edge_dst, self.edge_src])
        order = np.lexsort((tails, heads))
        self.indices = tails[order].astype(np.int64)
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(heads, minlength=n), out=self.indptr[1:])

    @property
    def n_nodes(self) -> int:
        return len(self.keys)

    @property
    def n_edges(self) -> int:
        return len(self.edge_src)

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node] : self.indptr[node + 1]]

    def edge_list(self) -> list[tuple[str, str, str]]:
        return [
            (self.keys[a], self.keys[b], EDGE_TYPES[t])
            for a, b, t in zip(self.edge_src.tolist(), self.edge_dst.tolist(), self.edge_type.tolist())
        ]

    def write_edges(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for a, b, t in self.edge_list():
                fh.write(f"{a}\t{b}\t{t}\n")

    def write_nodes(self, path) -> None:
        payload = [{"key": k, "kind": kind, "tags": sorted(t)} for k, kind, t in zip(self.keys, self.kinds, self.tags)]
        Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, nodes_path, edges_path) -> "HeteroGraph":
        """Inverse of :meth:`write_nodes` + :meth:`write_edges`; edges are streamed line by line."""
        nodes = json.loads(Path(nodes_path).read_text(encoding="utf-8"))
        keys = [n["key"] for n in nodes]
        index = {k: i for i, k in enumerate(keys)}

        def edges():
            with open(edges_path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    a, b, t = line.rstrip("\n").split("\t")
                    if a not in index or b not in index:
                        raise GraphBuildError(f"{edges_path}:{lineno}: unknown node in edge {a} {b}")
                    yield index[a], index[b], t

        return cls(keys, [n["kind"] for n in nodes], [n["tags"] for n in nodes], edges())

    def mean_operator(self, sample: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> torch.Tensor:
        """Sparse row operator taking neighbour means (isolated rows are zero).

        With ``sample`` set, each node averages ``sample`` neighbours drawn
        with replacement from ``rng``.
        """
        n = self.n_nodes
        deg = self.degree()
        if sample is None:
            rows = np.repeat(np.arange(n), deg)
            cols = self.indices
            vals = 1.0 / deg[rows]
        else:
            if rng is None:
                raise ValueError("sampled aggregation needs an rng")
            has = np.flatnonzero(deg > 0)
            rows = np.repeat(has, sample)
            offs = np.floor(rng.random(len(rows)) * deg[rows]).astype(np.int64)
            cols = self.indices[self.indptr[rows] + offs]
            vals = np.full(len(rows), 1.0 / sample)
        idx = torch.from_numpy(np.stack([rows, cols]).astype(np.int64))
        vals_t = torch.from_numpy(vals.astype(np.float64))
        return torch.sparse_coo_tensor(idx, vals_t, (n, n), check_invariants=False).coalesce()


def build_graph(
    tweets: Sequence[Tweet],
    users: Sequence[UserProfile],
    follow_edges: Iterable[tuple[str, str]] = (),
    include_labels: bool = False,
) -> HeteroGraph:
    """Users and tweets with follow, authorship and retweet edges.

    Node tags: every user is tagged ``user``; every tweet ``tweet``, plus
    ``retweet`` when it retweets another and ``parent`` when retweeted.
    ``include_labels`` adds a ``fake`` tag from tweet labels; off by default
    because it leaks evaluation labels into node features.
    """
    keys, kinds, tags = [], [], []
    for u in users:
        keys.append(user_key(u.id))
        kinds.append("user")
        tags.append({"user"})
    tweet_ids = {t.id for t in tweets}
    parents = {t.retweet_of for t in tweets if t.retweet_of is not None}
    for t in tweets:
        keys.append(tweet_key(t.id))
        kinds.append("tweet")
        tag = {"tweet"}
        if t.retweet_of is not None:
            tag.add("retweet")
        if t.id in parents:
            tag.add("parent")
        if include_labels and t.label is Label.FAKE:
            tag.add("fake")
        tags.append(tag)
    index = {k: i for i, k in enumerate(keys)}
    if len(index) != len(keys):
        raise GraphBuildError("duplicate user or tweet id")

    edges = []
    for t in tweets:
        u = index.get(user_key(t.user_id))
        if u is None:
            raise GraphBuildError(f"tweet {t.id} references unknown user {t.user_id}")
        edges.append((u, index[tweet_key(t.id)], "authorship"))
        if t.retweet_of is not None:
            if t.retweet_of not in tweet_ids:
                raise GraphBuildError(f"tweet {t.id} retweets unknown tweet {t.retweet_of}")
            edges.append((index[tweet_key(t.id)], index[tweet_key(t.retweet_of)], "retweet"))
    for a, b in follow_edges:
        ia, ib = index.get(user_key(a)), index.get(user_key(b))
        if ia is None or ib is None:
            missing = a if ia is None else b
            raise GraphBuildError(f"follow edge references unknown user {missing}")
        edges.append((ia, ib, "follow"))
    return HeteroGraph(keys, kinds, tags, edges)


def node_features(g: HeteroGraph, include_fake_tag: bool = False) -> np.ndarray:
    """one-hot(kind) | multi-hot(tags) | log(1 + degree)."""
    tag_names = NODE_TAGS + (("fake",) if include_fake_tag else ())
    width = len(NODE_KINDS) + len(tag_names) + 1
    feats = np.zeros((g.n_nodes, width))
    for i in range(g.n_nodes):
        feats[i, NODE_KINDS.index(g.kinds[i])] = 1.0
        for tag in g.tags[i]:
            if tag in tag_names:
                feats[i, len(NODE_KINDS) + tag_names.index(tag)] = 1.0
    feats[:, -1] = np.log1p(g.degree())
    return feats


def sample_walks(
    g: HeteroGraph,
    starts,
    length: int,
    teleport: float = 0.3,
    rng: Optional[np.random.Generator] = None,
    backend: Optional[str] = None,
) -> np.ndarray:
    """Teleporting random walks, one row per start, ``length + 1`` nodes each."""
    if g.n_nodes == 0:
        raise ValueError("cannot walk on an empty graph")
    if not 0.0 <= teleport <= 1.0:
        raise ValueError(f"teleport must be in [0, 1], got {teleport}")
    rng = rng if rng is not None else np.random.default_rng()
    starts = np.asarray(starts, dtype=np.int64).reshape(-1)
    coins = rng.random((len(starts), length))
    picks = rng.random((len(starts), length))
    return _kernels.teleport_walks(g.indptr, g.indices, starts, length, teleport, coins, picks, backend=backend)


def sample_walk(g: HeteroGraph, start: int, length: int, teleport: float = 0.3, rng=None) -> list[int]:
    return sample_walks(g, [start], length, teleport, rng)[0].tolist()


class SageEncoder(nn.Module):
    """Stack of mean-aggregator layers ``h <- tanh(W_self h + W_neigh mean(h_N))``."""

    def __init__(self, in_dim: int, out_dim: int = 768, layers: int = 2, hidden_dim: Optional[int] = None):
        super().__init__()
        hidden_dim = hidden_dim or out_dim
        dims = [in_dim] + [hidden_dim] * (layers - 1) + [out_dim]
        self.self_weights = nn.ParameterList()
        self.neigh_weights = nn.ParameterList()
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(d_in)
            self.self_weights.append(nn.Parameter(torch.empty(d_out, d_in).uniform_(-bound, bound)))
            self.neigh_weights.append(nn.Parameter(torch.empty(d_out, d_in).uniform_(-bound, bound)))

    @property
    def num_layers(self) -> int:
        return len(self.self_weights)

    @property
    def in_dim(self) -> int:
        return self.self_weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.self_weights[-1].shape[0]

    def forward(self, feats: torch.Tensor, operators: Sequence[torch.Tensor]) -> torch.Tensor:
        h = feats
        for W_s, W_n, op in zip(self.self_weights, self.neigh_weights, operators):
            h = torch.tanh(h @ W_s.T + torch.sparse.mm(op, h) @ W_n.T)
        return h


def embed_nodes(
    g: HeteroGraph,
    feats,
    params: SageEncoder,
    nodes: Optional[Sequence[int]] = None,
    sample: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Embeddings for ``nodes`` (all nodes by default), shape ``(len(nodes), out_dim)``."""
    x = torch.as_tensor(np.asarray(feats), dtype=params.self_weights[0].dtype)
    if x.shape[1] != params.in_dim:
        raise ValueError(f"feature width {x.shape[1]} does not match encoder input {params.in_dim}")
    ops = [g.mean_operator(sample, rng) for _ in range(params.num_layers)]
    ops = [op.to(x.dtype) for op in ops]
    with torch.no_grad():
        z = params(x, ops)
    if nodes is not None:
        z = z[torch.as_tensor(list(nodes), dtype=torch.long)]
    return z.numpy().copy()


@dataclass
class SageTrainConfig:
    walk_length: int = 5
    window: int = 2
    walks_per_node: int = 2
    negatives: int = 5
    epochs: int = 20
    lr: float = 0.01
    teleport: float = 0.3
    optimizer: str = "adam"
    seed: int = 0


def skipgram_loss(z: torch.Tensor, pairs: torch.Tensor, negatives: torch.Tensor) -> torch.Tensor:
    """Mean over pairs of ``-log s(z_u.z_v) - sum_q log s(-z_u.z_q)``.

    ``negatives`` has shape ``(n_pairs, Q)``; the sum over Q samples is the
    Q-scaled expectation over the negative distribution.
    """
    zu = z[pairs[:, 0]]
    zv = z[pairs[:, 1]]
    pos = nn.functional.logsigmoid((zu * zv).sum(-1))
    zn = z[negatives]
    neg = nn.functional.logsigmoid(-(zn * zu.unsqueeze(1)).sum(-1)).sum(-1)
    return -(pos + neg).mean()


def unsupervised_step(g, feats, params: SageEncoder, pairs, negatives, optimizer) -> float:
    x = torch.as_tensor(np.asarray(feats), dtype=params.self_weights[0].dtype)
    ops = [g.mean_operator().to(x.dtype) for _ in range(params.num_layers)]
    optimizer.zero_grad()
    z = params(x, ops)
    loss = skipgram_loss(z, torch.as_tensor(pairs, dtype=torch.long), torch.as_tensor(negatives, dtype=torch.long))
    if not torch.isfinite(loss):
        raise GraphTrainingError(
            f"non-finite skip-gram loss {loss.item()} "
            f"(|z|max={z.detach().abs().max().item():.3g}, pairs={len(pairs)})"
        )
    loss.backward()
    optimizer.step()
    return float(loss.item())


def _make_optimizer(name: str, params, lr: float):
    if name == "adam":
        return torch.optim.Adam(params, lr=lr)
    if name == "sgd":
        return torch.optim.SGD(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")


def train_unsupervised(g: HeteroGraph, feats, params: SageEncoder, cfg: SageTrainConfig = SageTrainConfig()):
    """Fit ``params`` with the walk co-occurrence objective; returns a new encoder and the loss history.

    Every epoch samples ``walks_per_node`` teleporting walks from every node,
    extracts pairs within ``window``, draws ``negatives`` uniform negatives
    per pair and takes one full-batch optimisation step.
    """
    params = copy.deepcopy(params)
    history: list[float] = []
    if cfg.epochs <= 0 or g.n_nodes == 0:
        return params, history
    rng = np.random.default_rng(cfg.seed)
    opt = _make_optimizer(cfg.optimizer, params.parameters(), cfg.lr)
    starts = np.repeat(np.arange(g.n_nodes), cfg.walks_per_node)
    for epoch in range(cfg.epochs):
        walks = sample_walks(g, starts, cfg.walk_length, cfg.teleport, rng)
        pairs = _kernels.cooccurrence_pairs(walks, cfg.window)
        if len(pairs) == 0:
            log.warning("epoch %d: no co-occurring pairs", epoch)
            history.append(float("nan"))
            continue
        negatives = rng.integers(0, g.n_nodes, size=(len(pairs), cfg.negatives))
        history.append(unsupervised_step(g, feats, params, pairs, negatives, opt))
    return params, history


def save_embeddings(prefix, keys: Sequence[str], matrix: np.ndarray) -> tuple[Path, Path]:
    """Write ``<prefix>.npy`` and the ``<prefix>.index.json`` id sidecar."""
    prefix = Path(prefix)
    mat_path = prefix.with_suffix(".npy")
    idx_path = prefix.with_suffix(".index.json")
    np.save(mat_path, np.ascontiguousarray(matrix, dtype=np.float64))
    idx_path.write_text(json.dumps(list(keys)) + "\n", encoding="utf-8")
    return mat_path, idx_path


def load_embeddings(prefix) -> tuple[list[str], np.ndarray]:
    prefix = Path(prefix)
    keys = json.loads(prefix.with_suffix(".index.json").read_text(encoding="utf-8"))
    return keys, np.load(prefix.with_suffix(".npy"))
