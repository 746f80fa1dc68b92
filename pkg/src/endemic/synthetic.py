"""Synthetic corpora with planted fake/genuine signals, for tests and demos."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Stance, VerifiedClaim
from .datamodel import Label, Tweet, UserProfile, write_jsonl
from .knowledge import EvidenceDocument, EvidenceStore

TOPICS = [
    "vaccine dose schedule for adults",
    "masks reduce droplet spread indoors",
    "hospital beds in the city are full",
    "new variant detected in travellers",
    "lockdown extended for two weeks",
    "testing centres open on weekends",
    "garlic water prevents infection",
    "antibiotics kill the virus quickly",
    "towers spread the disease",
    "hot baths stop the virus",
]
FILLER = "today news people report says local update health people official week city".split()
FAKE_TEXT_WORDS = ["miracle", "secret", "hoax", "banned"]
GENUINE_TEXT_WORDS = ["study", "ministry", "trial", "approved"]
FAKE_EVIDENCE_WORDS = ["debunked", "falsely"]
GENUINE_EVIDENCE_WORDS = ["confirmed", "verified"]
DOMAINS = ["news-a.example", "news-b.example", "factcheck.example", "health.example", "blog.example"]

T0 = 1_600_000_000


@dataclass
class SyntheticCorpus:
    tweets: list[Tweet]
    users: list[UserProfile]
    follows: list[tuple[str, str]]
    store: EvidenceStore
    claims: list[VerifiedClaim]
    collected_at: int

    def write(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_jsonl(directory / "tweets.jsonl", self.tweets)
        write_jsonl(directory / "users.jsonl", self.users)
        write_jsonl(directory / "claims.jsonl", self.claims)
        with open(directory / "follows.tsv", "w", encoding="utf-8") as fh:
            for a, b in self.follows:
                fh.write(f"{a}\t{b}\n")
        self.store.save(directory / "evidence_store.jsonl")
        return directory


def make_corpus(
    n_tweets: int = 40,
    seed: int = 0,
    fake_fraction: float = 0.5,
    unlabelled_fraction: float = 0.0,
    text_signal: bool = True,
    evidence_signal: bool = True,
    context_signal: float = 0.0,
    docs_per_tweet: int = 3,
    retweet_fraction: float = 0.1,
) -> SyntheticCorpus:
    """Build a corpus whose labels are recoverable from planted keywords.

    Fake tweets carry a fake keyword in their text (``text_signal``) and their
    evidence sentences repeat the tweet with a debunking word
    (``evidence_signal``); genuine tweets get the genuine counterparts.
    ``context_signal`` shifts log-favourites of fake tweets by that many units,
    giving time-variant features a (maskable) correlation with the label.
    """
    rng = np.random.default_rng(seed)
    n_users = max(2, n_tweets // 4)
    users = []
    for i in range(n_users):
        followers = int(rng.integers(0, 5000))
        followees = int(rng.integers(0, 1000))
        verified = bool(rng.random() < 0.2)
        count = int(rng.integers(1, 3000))
        users.append(
            UserProfile(
                id=f"u{i}",
                followers=followers,
                followees=followees,
                verified=verified,
                tweet_count=count,
                user_features=(np.log1p(followers), np.log1p(followees), float(verified), np.log1p(count)),
            )
        )
    follows = []
    for i in range(n_users):
        for j in rng.choice(n_users, size=min(3, n_users - 1), replace=False):
            if int(j) != i:
                follows.append((f"u{i}", f"u{int(j)}"))

    n_fake = int(round(fake_fraction * n_tweets))
    is_fake = np.array([True] * n_fake + [False] * (n_tweets - n_fake))
    rng.shuffle(is_fake)
    unlabelled = rng.random(n_tweets) < unlabelled_fraction
    collected_at = T0 + 10 * 86400

    tweets = []
    store = EvidenceStore()
    for i in range(n_tweets):
        fake = bool(is_fake[i])
        topic = TOPICS[int(rng.integers(len(TOPICS)))]
        words = topic.split() + list(rng.choice(FILLER, size=3, replace=False))
        if text_signal:
            pool = FAKE_TEXT_WORDS if fake else GENUINE_TEXT_WORDS
            words.insert(int(rng.integers(len(words) + 1)), str(rng.choice(pool)))
        text = " ".join(words)
        created = collected_at - int(rng.integers(3600, 9 * 86400))
        retweet_of = None
        if tweets and rng.random() < retweet_fraction:
            same = [t for j, t in enumerate(tweets) if bool(is_fake[j]) == fake and t.retweet_of is None]
            if same:
                retweet_of = same[int(rng.integers(len(same)))].id
        favourites = float(np.log1p(rng.integers(0, 500))) + (context_signal if fake else 0.0)
        feats = (
            favourites,
            float(np.log1p(rng.integers(0, 200))),
            float(rng.random()),
            float(rng.uniform(-1, 1)),
        )
        label = Label.FAKE if fake else Label.GENUINE
        if unlabelled[i]:
            label = Label.UNLABELLED
        tweets.append(
            Tweet(
                id=f"t{i:04d}",
                text=text,
                user_id=f"u{int(rng.integers(n_users))}",
                created_at=created,
                retweet_of=retweet_of,
                tweet_features=feats,
                label=label,
            )
        )
        ev_pool = FAKE_EVIDENCE_WORDS if fake else GENUINE_EVIDENCE_WORDS
        for d in range(docs_per_tweet):
            domain = DOMAINS[(i + d) % len(DOMAINS)]
            sentences = []
            for _ in range(int(rng.integers(2, 5))):
                if evidence_signal:
                    sentences.append(f"{text} {rng.choice(ev_pool)}.")
                else:
                    sentences.append(f"{text}.")
            sentences.append(" ".join(rng.choice(FILLER, size=6)) + ".")
            offset = int(rng.integers(-5 * 86400, 86400))
            store.add(
                tweets[-1].id,
                EvidenceDocument(
                    url=f"https://{domain}/a/{i}/{d}",
                    domain=domain,
                    publish_time=max(1, created + offset),
                    sentences=tuple(sentences),
                ),
            )

    claims = [
        VerifiedClaim(f"c{j}", topic, Stance.FALSE_CLAIM if j >= 6 else Stance.TRUE_CLAIM, "synthetic")
        for j, topic in enumerate(TOPICS)
    ]
    return SyntheticCorpus(tweets, users, follows, store, claims, collected_at)
