"""Time-relative external evidence: document store, sentence encoders and selection."""

from __future__ import annotations

import enum
import json
import re
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence, runtime_checkable

import numpy as np

from .datamodel import IngestError, Tweet, iter_jsonl

MAX_SENTENCES = 50
MAX_PER_SOURCE = 10
DEFAULT_EPSILON = 0.8

_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")
_TOKEN = re.compile(r"[a-z0-9#@']+")


@runtime_checkable
class SentenceEncoder(Protocol):
    dim: int

    def encode(self, text: str) -> np.ndarray: ...


class HashingEncoder:
    """Deterministic bag-of-tokens encoder.

    Each token is hashed (crc32) to a bucket whose column of a seeded Gaussian
    projection is summed; the sum is unit-normalised. Identical token bags map
    to identical vectors, so identical texts have cosine 1.
    """

    def __init__(self, dim: int = 512, seed: int = 0, buckets: int = 1 << 20):
        self.dim = int(dim)
        self.seed = int(seed)
        self.buckets = int(buckets)
        self._cache: dict[int, np.ndarray] = {}

    def _column(self, bucket: int) -> np.ndarray:
        col = self._cache.get(bucket)
        if col is None:
            col = np.random.default_rng([self.seed, bucket]).standard_normal(self.dim)
            self._cache[bucket] = col
        return col

    def encode(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for tok in _TOKEN.findall(text.lower()):
            vec += self._column(zlib.crc32(tok.encode("utf-8")) % self.buckets)
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def encode_many(self, texts: Iterable[str]) -> np.ndarray:
        rows = [self.encode(t) for t in texts]
        return np.array(rows).reshape(len(rows), self.dim)


class SentenceTransformerEncoder:
    """Adapter for a ``sentence-transformers`` model (optional dependency)."""

    def __init__(self, model_name: str = "sentence-transformers/distiluse-base-multilingual-cased-v2"):
        from sentence_transformers import SentenceTransformer

        self._model = SentenceTransformer(model_name)
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, text: str) -> np.ndarray:
        return np.asarray(self._model.encode(text), dtype=np.float64)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_END.split(text) if s.strip()]


@dataclass(frozen=True)
class EvidenceDocument:
    url: str
    domain: str
    publish_time: int
    sentences: tuple[str, ...]

    def __post_init__(self):
        if int(self.publish_time) <= 0:
            raise ValueError(f"{self.url}: publish_time must be positive")
        object.__setattr__(self, "publish_time", int(self.publish_time))
        object.__setattr__(self, "sentences", tuple(self.sentences))

    def to_dict(self) -> dict:
        return {
            "url": self.url,
            "domain": self.domain,
            "publish_time": self.publish_time,
            "sentences": list(self.sentences),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvidenceDocument":
        if "sentences" in d:
            sentences = tuple(d["sentences"])
        else:
            sentences = tuple(split_sentences(d.get("text", "")))
        return cls(
            url=str(d["url"]),
            domain=str(d.get("domain") or _domain_of(d["url"])),
            publish_time=int(d["publish_time"]),
            sentences=sentences,
        )


def _domain_of(url: str) -> str:
    m = re.match(r"^[a-z]+://([^/]+)", url)
    return m.group(1) if m else url


class EvidenceStore:
    """Pre-fetched search results keyed by tweet id, in retrieval order."""

    def __init__(self, docs_by_tweet: dict[str, list[EvidenceDocument]] | None = None):
        self._docs = {k: list(v) for k, v in (docs_by_tweet or {}).items()}

    def get(self, tweet_id: str) -> list[EvidenceDocument]:
        return list(self._docs.get(tweet_id, ()))

    def add(self, tweet_id: str, doc: EvidenceDocument) -> None:
        self._docs.setdefault(tweet_id, []).append(doc)

    def __contains__(self, tweet_id) -> bool:
        return tweet_id in self._docs

    def __len__(self) -> int:
        return len(self._docs)

    @classmethod
    def load(cls, path) -> "EvidenceStore":
        store = cls()
        for lineno, obj in iter_jsonl(path):
            try:
                store.add(str(obj["tweet_id"]), EvidenceDocument.from_dict(obj))
            except (KeyError, TypeError, ValueError) as exc:
                raise IngestError(path, lineno, f"{type(exc).__name__}: {exc}") from exc
        return store

    def save(self, path) -> None:
        with open(Path(path), "w", encoding="utf-8") as fh:
            for tweet_id in self._docs:
                for doc in self._docs[tweet_id]:
                    fh.write(json.dumps({"tweet_id": tweet_id, **doc.to_dict()}, sort_keys=True))
                    fh.write("\n")


class FetchMode(str, enum.Enum):
    TRAIN_TIME = "train_time"
    TEST_TIME = "test_time"


def fetch_documents(tweet: Tweet, store: EvidenceStore, mode=FetchMode.TRAIN_TIME) -> list[EvidenceDocument]:
    """Documents visible for ``tweet``.

    At train time only documents published no later than the tweet are kept
    (store order preserved); at test time everything is returned, newest first.
    A tweet missing from the store yields an empty list.
    """
    mode = FetchMode(mode)
    docs = store.get(tweet.id)
    if mode is FetchMode.TRAIN_TIME:
        return [d for d in docs if d.publish_time <= tweet.created_at]
    return sorted(docs, key=lambda d: -d.publish_time)


@dataclass(frozen=True)
class SelectedSentence:
    text: str
    url: str
    domain: str
    similarity: float
    encoding: np.ndarray


@dataclass(frozen=True)
class EvidenceSet:
    tweet_id: str
    selected: tuple[SelectedSentence, ...]

    def __len__(self) -> int:
        return len(self.selected)

    def tensor(self, dim: int, max_sentences: int = MAX_SENTENCES) -> np.ndarray:
        """Fixed ``(max_sentences, dim)`` matrix; rows past the selection are zero."""
        out = np.zeros((max_sentences, dim))
        for i, s in enumerate(self.selected[:max_sentences]):
            out[i] = s.encoding
        return out

    def to_dict(self) -> dict:
        return {
            "tweet_id": self.tweet_id,
            "selected": [
                {"text": s.text, "url": s.url, "domain": s.domain, "similarity": s.similarity}
                for s in self.selected
            ],
        }


def select_evidence(
    tweet: Tweet,
    docs: Sequence[EvidenceDocument],
    encoder: SentenceEncoder,
    epsilon: float = DEFAULT_EPSILON,
    max_sentences: int = MAX_SENTENCES,
    max_per_source: int = MAX_PER_SOURCE,
    order: str = "scan",
) -> EvidenceSet:
    """Keep sentences whose cosine with the tweet is at least ``epsilon``.

    ``order="scan"`` walks documents then sentences in the given order and
    stops at ``max_sentences``; a source (domain) contributes at most
    ``max_per_source``. ``order="similarity"`` ranks all qualifying sentences
    by similarity (stable) before applying the same caps.
    """
    if not 0.0 < epsilon < 1.0 + 1e-12:
        raise ValueError(f"epsilon must be in (0, 1], got {epsilon}")
    if order not in ("scan", "similarity"):
        raise ValueError(f"unknown order {order!r}")
    query = encoder.encode(tweet.text)

    def qualifying():
        for doc in docs:
            for sentence in doc.sentences:
                enc = encoder.encode(sentence)
                sim = cosine(enc, query)
                if sim >= epsilon:
                    yield SelectedSentence(sentence, doc.url, doc.domain, sim, enc)

    candidates = qualifying()
    if order == "similarity":
        candidates = sorted(candidates, key=lambda s: -s.similarity)

    selected = []
    per_source: dict[str, int] = {}
    for cand in candidates:
        if per_source.get(cand.domain, 0) >= max_per_source:
            continue
        per_source[cand.domain] = per_source.get(cand.domain, 0) + 1
        selected.append(cand)
        if len(selected) >= max_sentences:
            break
    return EvidenceSet(tweet.id, tuple(selected))


def evidence_tensor(
    tweets: Sequence[Tweet],
    store: EvidenceStore,
    encoder: SentenceEncoder,
    mode=FetchMode.TRAIN_TIME,
    epsilon: float = DEFAULT_EPSILON,
    max_sentences: int = MAX_SENTENCES,
    max_per_source: int = MAX_PER_SOURCE,
) -> tuple[np.ndarray, list[EvidenceSet]]:
    """Stack per-tweet evidence into an ``(n, max_sentences, K)`` array."""
    sets = [
        select_evidence(
            t,
            fetch_documents(t, store, mode),
            encoder,
            epsilon,
            max_sentences=max_sentences,
            max_per_source=max_per_source,
        )
        for t in tweets
    ]
    arr = np.zeros((len(tweets), max_sentences, encoder.dim))
    for i, es in enumerate(sets):
        arr[i] = es.tensor(encoder.dim, max_sentences)
    return arr, sets
