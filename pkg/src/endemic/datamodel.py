"""Social objects, feature schema, dataset splits and corpus validation."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence


class Label(str, enum.Enum):
    FAKE = "fake"
    GENUINE = "genuine"
    UNLABELLED = "unlabelled"

    @property
    def is_labelled(self) -> bool:
        return self is not Label.UNLABELLED


# Class index used by the classifier head; "fake" is the positive class.
LABEL_INDEX = {Label.GENUINE: 0, Label.FAKE: 1}
INDEX_LABEL = {v: k for k, v in LABEL_INDEX.items()}


class SplitKind(str, enum.Enum):
    TRAIN = "train"
    GENERAL_TEST = "general_test"
    EARLY_TEST = "early_test"


class IngestError(ValueError):
    """Raised when an input file cannot be parsed; carries the 1-based line number."""

    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    time_variant: bool = False


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered tweet and user contextual features.

    ``time_variant`` marks features whose value drifts as a tweet or user
    ages; mask-detect evaluation replaces exactly those.
    """

    tweet: tuple[FeatureSpec, ...]
    user: tuple[FeatureSpec, ...]

    def __post_init__(self):
        for group, specs in (("tweet", self.tweet), ("user", self.user)):
            names = [s.name for s in specs]
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate {group} feature names: {names}")

    @property
    def n_tf(self) -> int:
        return len(self.tweet)

    @property
    def n_uf(self) -> int:
        return len(self.user)

    @property
    def tweet_names(self) -> list[str]:
        return [s.name for s in self.tweet]

    @property
    def user_names(self) -> list[str]:
        return [s.name for s in self.user]

    def tweet_time_variant(self) -> list[bool]:
        return [s.time_variant for s in self.tweet]

    def user_time_variant(self) -> list[bool]:
        return [s.time_variant for s in self.user]

    def to_dict(self) -> dict:
        return {
            "tweet": [{"name": s.name, "time_variant": s.time_variant} for s in self.tweet],
            "user": [{"name": s.name, "time_variant": s.time_variant} for s in self.user],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            tweet=tuple(FeatureSpec(s["name"], bool(s["time_variant"])) for s in d["tweet"]),
            user=tuple(FeatureSpec(s["name"], bool(s["time_variant"])) for s in d["user"]),
        )


DEFAULT_SCHEMA = FeatureSchema(
    tweet=(
        FeatureSpec("favourites", time_variant=True),
        FeatureSpec("retweets", time_variant=True),
        FeatureSpec("domain_pagerank", time_variant=False),
        FeatureSpec("sentiment", time_variant=False),
    ),
    user=(
        FeatureSpec("followers", time_variant=True),
        FeatureSpec("followees", time_variant=True),
        FeatureSpec("verified", time_variant=False),
        FeatureSpec("tweet_count", time_variant=True),
    ),
)


def _features(values: Iterable) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if not all(math.isfinite(v) for v in out):
        raise ValueError(f"feature values must be finite, got {out}")
    return out


@dataclass(frozen=True)
class Tweet:
    id: str
    text: str
    user_id: str
    created_at: int
    retweet_of: Optional[str] = None
    tweet_features: tuple[float, ...] = ()
    label: Label = Label.UNLABELLED

    def __post_init__(self):
        if not self.id:
            raise ValueError("tweet id must be nonempty")
        if int(self.created_at) <= 0:
            raise ValueError(f"tweet {self.id}: created_at must be positive")
        if self.retweet_of == self.id:
            raise ValueError(f"tweet {self.id} cannot retweet itself")
        object.__setattr__(self, "created_at", int(self.created_at))
        object.__setattr__(self, "tweet_features", _features(self.tweet_features))
        object.__setattr__(self, "label", Label(self.label))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "user_id": self.user_id,
            "created_at": self.created_at,
            "retweet_of": self.retweet_of,
            "tweet_features": list(self.tweet_features),
            "label": self.label.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tweet":
        return cls(
            id=str(d["id"]),
            text=str(d["text"]),
            user_id=str(d["user_id"]),
            created_at=int(d["created_at"]),
            retweet_of=None if d.get("retweet_of") is None else str(d["retweet_of"]),
            tweet_features=tuple(d.get("tweet_features", ())),
            label=Label(d.get("label", "unlabelled")),
        )


@dataclass(frozen=True)
class UserProfile:
    id: str
    followers: int = 0
    followees: int = 0
    verified: bool = False
    tweet_count: int = 0
    user_features: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise ValueError("user id must be nonempty")
        for name in ("followers", "followees", "tweet_count"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"user {self.id}: {name} must be nonnegative")
        object.__setattr__(self, "user_features", _features(self.user_features))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "followers": self.followers,
            "followees": self.followees,
            "verified": self.verified,
            "tweet_count": self.tweet_count,
            "user_features": list(self.user_features),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UserProfile":
        return cls(
            id=str(d["id"]),
            followers=int(d.get("followers", 0)),
            followees=int(d.get("followees", 0)),
            verified=bool(d.get("verified", False)),
            tweet_count=int(d.get("tweet_count", 0)),
            user_features=tuple(d.get("user_features", ())),
        )


@dataclass(frozen=True)
class DatasetSplit:
    kind: SplitKind
    tweet_ids: tuple[str, ...]
    labelled_ids: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", SplitKind(self.kind))
        object.__setattr__(self, "tweet_ids", tuple(self.tweet_ids))
        object.__setattr__(self, "labelled_ids", tuple(self.labelled_ids))
        missing = set(self.labelled_ids) - set(self.tweet_ids)
        if missing:
            raise ValueError(f"labelled ids not in split: {sorted(missing)[:5]}")

    @classmethod
    def from_tweets(cls, kind, tweets: Sequence[Tweet]) -> "DatasetSplit":
        return cls(
            kind=kind,
            tweet_ids=tuple(t.id for t in tweets),
            labelled_ids=tuple(t.id for t in tweets if t.label.is_labelled),
        )


@dataclass(frozen=True)
class ValidationIssue:
    kind: str  # dangling_user | dangling_retweet | schema_mismatch | duplicate_id
    object_id: str
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[ValidationIssue, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.issues

    def __len__(self) -> int:
        return len(self.issues)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "issues": [
                {"kind": i.kind, "object_id": i.object_id, "detail": i.detail} for i in self.issues
            ],
        }


def validate_corpus(
    tweets: Sequence[Tweet],
    users: Sequence[UserProfile],
    schema: FeatureSchema = DEFAULT_SCHEMA,
) -> ValidationReport:
    """Check cross references and feature lengths; the corpus is valid iff no issues."""
    issues = set()
    user_ids = {u.id for u in users}
    tweet_ids = {t.id for t in tweets}

    seen: set[str] = set()
    for t in tweets:
        if t.id in seen:
            issues.add(ValidationIssue("duplicate_id", t.id, "tweet id repeated"))
        seen.add(t.id)
    seen = set()
    for u in users:
        if u.id in seen:
            issues.add(ValidationIssue("duplicate_id", u.id, "user id repeated"))
        seen.add(u.id)

    for t in tweets:
        if t.user_id not in user_ids:
            issues.add(ValidationIssue("dangling_user", t.id, f"unknown user_id {t.user_id!r}"))
        if t.retweet_of is not None and t.retweet_of not in tweet_ids:
            issues.add(
                ValidationIssue("dangling_retweet", t.id, f"unknown retweet_of {t.retweet_of!r}")
            )
        if len(t.tweet_features) != schema.n_tf:
            issues.add(
                ValidationIssue(
                    "schema_mismatch",
                    t.id,
                    f"tweet_features has {len(t.tweet_features)} values, schema has {schema.n_tf}",
                )
            )
    for u in users:
        if len(u.user_features) != schema.n_uf:
            issues.add(
                ValidationIssue(
                    "schema_mismatch",
                    u.id,
                    f"user_features has {len(u.user_features)} values, schema has {schema.n_uf}",
                )
            )
    return ValidationReport(tuple(sorted(issues, key=lambda i: (i.kind, i.object_id, i.detail))))


def iter_jsonl(path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(path, lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise IngestError(path, lineno, "expected a JSON object")
            yield lineno, obj


def _read_objects(path, factory):
    out = []
    for lineno, obj in iter_jsonl(path):
        try:
            out.append(factory(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestError(path, lineno, f"{type(exc).__name__}: {exc}") from exc
    return out


def read_tweets(path) -> list[Tweet]:
    return _read_objects(path, Tweet.from_dict)


def read_users(path) -> list[UserProfile]:
    return _read_objects(path, UserProfile.from_dict)


def write_jsonl(path, objects: Iterable) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objects:
            d = obj.to_dict() if hasattr(obj, "to_dict") else obj
            fh.write(json.dumps(d, sort_keys=True, ensure_ascii=False))
            fh.write("\n")


def read_follows(path) -> list[tuple[str, str]]:
    """Follower/followee pairs, one ``src<TAB>dst`` per line."""
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 2:
                raise IngestError(path, lineno, "expected two tab-separated user ids")
            edges.append((parts[0], parts[1]))
    return edges


def write_splits(path, splits: Iterable[DatasetSplit]) -> None:
    payload = {s.kind.value: list(s.tweet_ids) for s in splits}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_splits(path, tweets: Sequence[Tweet]) -> dict[SplitKind, DatasetSplit]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    by_id = {t.id: t for t in tweets}
    out = {}
    for kind, ids in payload.items():
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise ValueError(f"split {kind} references unknown tweets: {missing[:5]}")
        out[SplitKind(kind)] = DatasetSplit.from_tweets(kind, [by_id[i] for i in ids])
    return out
