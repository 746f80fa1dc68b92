"""Dataset construction: weak labels from verified claims, rumour clusters, splits."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .datamodel import DatasetSplit, IngestError, Label, SplitKind, Tweet, iter_jsonl
from .knowledge import SentenceEncoder

DEFAULT_TAU_LABEL = 0.8
DEFAULT_TAU_CLUSTER = 0.8
DEFAULT_MAX_CLUSTER_SIZE = 20
DEFAULT_MAX_AGE = 86400


class Stance(str, enum.Enum):
    TRUE_CLAIM = "true_claim"
    FALSE_CLAIM = "false_claim"


@dataclass(frozen=True)
class VerifiedClaim:
    id: str
    text: str
    stance: Stance
    source: str = ""

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"claim {self.id}: text must be nonempty")
        object.__setattr__(self, "stance", Stance(self.stance))

    def to_dict(self) -> dict:
        return {"id": self.id, "text": self.text, "stance": self.stance.value, "source": self.source}

    @classmethod
    def from_dict(cls, d: dict) -> "VerifiedClaim":
        return cls(str(d["id"]), str(d["text"]), Stance(d["stance"]), str(d.get("source", "")))


def read_claims(path) -> list[VerifiedClaim]:
    out = []
    for lineno, obj in iter_jsonl(path):
        try:
            out.append(VerifiedClaim.from_dict(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestError(path, lineno, f"{type(exc).__name__}: {exc}") from exc
    return out


class ConstructionError(ValueError):
    pass


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 0)


class ClaimMatcher:
    """Claims encoded once, reused across many tweets."""

    def __init__(self, claims: Sequence[VerifiedClaim], encoder: SentenceEncoder):
        self.claims = list(claims)
        self.encoder = encoder
        if self.claims:
            self._emb = _unit_rows(np.array([encoder.encode(c.text) for c in self.claims]))
        else:
            self._emb = np.zeros((0, encoder.dim))

    def label(self, text: str, tau: float = DEFAULT_TAU_LABEL) -> Label:
        if not 0.0 < tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {tau}")
        if not self.claims:
            return Label.UNLABELLED
        q = self.encoder.encode(text)
        n = np.linalg.norm(q)
        if n == 0:
            return Label.UNLABELLED
        sims = self._emb @ (q / n)
        best = int(np.argmax(sims))
        if sims[best] < tau:
            return Label.UNLABELLED
        if self.claims[best].stance is Stance.FALSE_CLAIM:
            return Label.FAKE
        return Label.GENUINE


def weak_label(
    tweet: Tweet,
    claims: Sequence[VerifiedClaim],
    encoder: SentenceEncoder,
    tau: float = DEFAULT_TAU_LABEL,
) -> Label:
    """Label of the most similar verified claim, or unlabelled below ``tau``."""
    return ClaimMatcher(claims, encoder).label(tweet.text, tau)


def weak_label_corpus(
    tweets: Iterable[Tweet],
    claims: Sequence[VerifiedClaim],
    encoder: SentenceEncoder,
    tau: float = DEFAULT_TAU_LABEL,
    overwrite: bool = False,
) -> list[Tweet]:
    """Fill in labels for unlabelled tweets (or all tweets with ``overwrite``)."""
    from dataclasses import replace

    matcher = ClaimMatcher(claims, encoder)
    out = []
    for t in tweets:
        if overwrite or not t.label.is_labelled:
            t = replace(t, label=matcher.label(t.text, tau))
        out.append(t)
    return out


@dataclass(frozen=True)
class RumourCluster:
    id: int
    member_tweet_ids: tuple[str, ...]
    centroid: np.ndarray

    @property
    def size(self) -> int:
        return len(self.member_tweet_ids)

    def to_dict(self) -> dict:
        return {"id": self.id, "size": self.size, "member_tweet_ids": list(self.member_tweet_ids)}


def find_rumour_clusters(
    tweets: Sequence[Tweet],
    encoder: SentenceEncoder,
    tau: float = DEFAULT_TAU_CLUSTER,
) -> list[RumourCluster]:
    """Single-pass leader clustering in input order.

    A tweet joins the existing cluster whose seed embedding is most similar,
    provided the cosine is at least ``tau``; otherwise it seeds a new cluster.
    The seed embedding is the centroid, so every member is within ``tau`` of
    it. Clusters are returned largest first (ties by first appearance).
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    seeds: list[np.ndarray] = []
    members: list[list[str]] = []
    for t in tweets:
        v = encoder.encode(t.text)
        n = np.linalg.norm(v)
        v = v / n if n > 0 else v
        if seeds:
            sims = np.array(seeds) @ v
            best = int(np.argmax(sims))
            if sims[best] >= tau:
                members[best].append(t.id)
                continue
        seeds.append(v)
        members.append([t.id])
    order = sorted(range(len(seeds)), key=lambda i: (-len(members[i]), i))
    return [RumourCluster(new_id, tuple(members[i]), seeds[i]) for new_id, i in enumerate(order)]


def build_early_test(
    clusters: Sequence[RumourCluster],
    tweets: Sequence[Tweet],
    max_size: int = DEFAULT_MAX_CLUSTER_SIZE,
    max_age_seconds: int = DEFAULT_MAX_AGE,
    collected_at: Optional[int] = None,
    train: Optional[DatasetSplit] = None,
) -> DatasetSplit:
    """Members of small clusters that are young at collection time.

    Age is ``collected_at - created_at``; ``collected_at`` defaults to the
    newest tweet timestamp. Raises :class:`ConstructionError` if the result
    would overlap ``train``.
    """
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    by_id = {t.id: t for t in tweets}
    if collected_at is None:
        collected_at = max((t.created_at for t in tweets), default=0)
    chosen = []
    for c in clusters:
        if c.size > max_size:
            continue
        for tid in c.member_tweet_ids:
            t = by_id[tid]
            if collected_at - t.created_at <= max_age_seconds:
                chosen.append(t)
    split = DatasetSplit.from_tweets(SplitKind.EARLY_TEST, chosen)
    if train is not None:
        overlap = set(split.tweet_ids) & set(train.tweet_ids)
        if overlap:
            raise ConstructionError(f"early-test overlaps train split: {sorted(overlap)[:5]}")
    return split


def make_splits(
    tweets: Sequence[Tweet],
    clusters: Sequence[RumourCluster],
    max_size: int = DEFAULT_MAX_CLUSTER_SIZE,
    max_age_seconds: int = DEFAULT_MAX_AGE,
    general_test_fraction: float = 0.2,
    collected_at: Optional[int] = None,
    seed: int = 0,
) -> dict[SplitKind, DatasetSplit]:
    """Early-test first, then a seeded random train / general-test partition of the rest."""
    early = build_early_test(clusters, tweets, max_size, max_age_seconds, collected_at)
    early_ids = set(early.tweet_ids)
    rest = [t for t in tweets if t.id not in early_ids]
    perm = np.random.default_rng(seed).permutation(len(rest))
    n_test = int(round(general_test_fraction * len(rest)))
    test_idx = set(perm[:n_test].tolist())
    general = [t for i, t in enumerate(rest) if i in test_idx]
    train = [t for i, t in enumerate(rest) if i not in test_idx]
    train_split = DatasetSplit.from_tweets(SplitKind.TRAIN, train)
    # re-run the disjointness check against the final train split
    build_early_test(clusters, tweets, max_size, max_age_seconds, collected_at, train=train_split)
    return {
        SplitKind.TRAIN: train_split,
        SplitKind.GENERAL_TEST: DatasetSplit.from_tweets(SplitKind.GENERAL_TEST, general),
        SplitKind.EARLY_TEST: early,
    }
