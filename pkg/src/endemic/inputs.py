"""Assemble model inputs (a :class:`~endemic.model.Batch`) from corpus objects."""

from __future__ import annotations

import logging
from typing import Mapping, Optional, Sequence

import numpy as np
import torch

from .datamodel import LABEL_INDEX, Tweet, UserProfile
from .hetgraph import tweet_key, user_key
from .model import Batch
from .textenc import Vocabulary, encode_ids

log = logging.getLogger(__name__)


def label_tensor(tweets: Sequence[Tweet]) -> torch.Tensor:
    return torch.tensor([LABEL_INDEX.get(t.label, -1) for t in tweets], dtype=torch.long)


def assemble(
    tweets: Sequence[Tweet],
    users: Mapping[str, UserProfile],
    vocab: Vocabulary,
    seq_len: int,
    evidence: np.ndarray,
    graph_index: Mapping[str, int],
    graph_matrix: np.ndarray,
    tweet_feats: Optional[np.ndarray] = None,
    user_feats: Optional[np.ndarray] = None,
) -> Batch:
    """Stack per-tweet inputs.

    ``evidence`` is ``(n, S, K)`` aligned with ``tweets``. Graph rows are
    looked up by node key; nodes absent from the embedding table get a zero
    row. Raw contextual features come from the tweets and their authors
    unless ``tweet_feats``/``user_feats`` override them (mask-detect passes
    masked copies).
    """
    n = len(tweets)
    G = graph_matrix.shape[1]
    tg = np.zeros((n, G))
    ug = np.zeros((n, G))
    missing = 0
    for i, t in enumerate(tweets):
        ti = graph_index.get(tweet_key(t.id))
        ui = graph_index.get(user_key(t.user_id))
        if ti is None or ui is None:
            missing += 1
        if ti is not None:
            tg[i] = graph_matrix[ti]
        if ui is not None:
            ug[i] = graph_matrix[ui]
    if missing:
        log.warning("%d tweets lack graph embeddings; zero rows used", missing)
    if tweet_feats is None:
        tweet_feats = np.array([t.tweet_features for t in tweets], dtype=np.float64).reshape(n, -1)
    if user_feats is None:
        user_feats = np.array([users[t.user_id].user_features for t in tweets], dtype=np.float64).reshape(n, -1)
    evidence = np.asarray(evidence, dtype=np.float64)
    if evidence.shape[0] != n:
        raise ValueError(f"evidence has {evidence.shape[0]} rows for {n} tweets")
    return Batch(
        ids=tuple(t.id for t in tweets),
        token_ids=encode_ids([t.text for t in tweets], vocab, seq_len),
        evidence=torch.from_numpy(evidence.copy()),
        tweet_graph=torch.from_numpy(tg),
        user_graph=torch.from_numpy(ug),
        tweet_feats=torch.from_numpy(np.asarray(tweet_feats, dtype=np.float64).copy()),
        user_feats=torch.from_numpy(np.asarray(user_feats, dtype=np.float64).copy()),
        labels=label_tensor(tweets),
    )
