import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from endemic.datamodel import (
    DEFAULT_SCHEMA,
    DatasetSplit,
    FeatureSchema,
    FeatureSpec,
    IngestError,
    Label,
    SplitKind,
    Tweet,
    UserProfile,
    read_splits,
    read_tweets,
    validate_corpus,
    write_jsonl,
    write_splits,
)

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
ids = st.text(alphabet="abcdefghij0123456789_", min_size=1, max_size=8)


@st.composite
def tweets(draw):
    tid = draw(ids)
    rt = draw(st.one_of(st.none(), ids.filter(lambda x: x != tid)))
    return Tweet(
        id=tid,
        text=draw(st.text(max_size=40)),
        user_id=draw(ids),
        created_at=draw(st.integers(1, 2**40)),
        retweet_of=rt,
        tweet_features=tuple(draw(st.lists(finite, min_size=4, max_size=4))),
        label=draw(st.sampled_from(list(Label))),
    )


@st.composite
def users(draw):
    return UserProfile(
        id=draw(ids),
        followers=draw(st.integers(0, 10**9)),
        followees=draw(st.integers(0, 10**9)),
        verified=draw(st.booleans()),
        tweet_count=draw(st.integers(0, 10**9)),
        user_features=tuple(draw(st.lists(finite, min_size=4, max_size=4))),
    )


@given(tweets())
def test_tweet_json_round_trip(t):
    assert Tweet.from_dict(json.loads(json.dumps(t.to_dict()))) == t


@given(users())
def test_user_json_round_trip(u):
    assert UserProfile.from_dict(json.loads(json.dumps(u.to_dict()))) == u


def test_tweet_invariants():
    with pytest.raises(ValueError):
        Tweet(id="", text="x", user_id="u", created_at=1)
    with pytest.raises(ValueError):
        Tweet(id="t", text="x", user_id="u", created_at=0)
    with pytest.raises(ValueError):
        Tweet(id="t", text="x", user_id="u", created_at=1, retweet_of="t")
    with pytest.raises(ValueError):
        UserProfile(id="u", followers=-1)


def test_schema_rejects_duplicate_names():
    with pytest.raises(ValueError):
        FeatureSchema(tweet=(FeatureSpec("a"), FeatureSpec("a")), user=())
    assert FeatureSchema.from_dict(DEFAULT_SCHEMA.to_dict()) == DEFAULT_SCHEMA
    assert DEFAULT_SCHEMA.n_tf == 4 and DEFAULT_SCHEMA.n_uf == 4


def _t(tid, uid, rt=None, nf=4):
    return Tweet(id=tid, text=tid, user_id=uid, created_at=100, retweet_of=rt, tweet_features=(0.0,) * nf)


def _u(uid):
    return UserProfile(id=uid, user_features=(0.0,) * 4)


def test_existing_user_gives_empty_report():
    assert validate_corpus([_t("t1", "u1")], [_u("u1")]).ok


def test_dangling_retweet_single_entry():
    rep = validate_corpus([_t("t1", "u1", rt="missing")], [_u("u1")])
    assert len(rep) == 1
    assert rep.issues[0].kind == "dangling_retweet"


def _scan(tweets, users, schema):
    """Exhaustive reference scan: one entry per broken reference or width mismatch."""
    found = []
    for t in tweets:
        if not any(u.id == t.user_id for u in users):
            found.append(("dangling_user", t.id))
        if t.retweet_of is not None and not any(o.id == t.retweet_of for o in tweets):
            found.append(("dangling_retweet", t.id))
        if len(t.tweet_features) != schema.n_tf:
            found.append(("schema_mismatch", t.id))
    for u in users:
        if len(u.user_features) != schema.n_uf:
            found.append(("schema_mismatch", u.id))
    return sorted(found)


def test_five_tweets_one_bad_user_matches_scan():
    users = [_u("u1"), _u("u2")]
    tweets = [_t("t1", "u1"), _t("t2", "u2"), _t("t3", "u1", rt="t1"), _t("t4", "ghost"), _t("t5", "u2", rt="t2")]
    rep = validate_corpus(tweets, users)
    expected = _scan(tweets, users, DEFAULT_SCHEMA)
    assert len(expected) == 1
    assert sorted((i.kind, i.object_id) for i in rep.issues) == expected


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_validation_matches_scan_and_is_order_insensitive(data):
    uids = ["u0", "u1", "u2"]
    n = data.draw(st.integers(1, 6))
    tw = []
    for i in range(n):
        uid = data.draw(st.sampled_from(uids + ["ghost"]))
        rt = data.draw(st.sampled_from([None, "missing"] + [f"t{j}" for j in range(n) if j != i]))
        nf = data.draw(st.sampled_from([4, 4, 3]))
        tw.append(_t(f"t{i}", uid, rt, nf))
    us = [_u(u) for u in uids[: data.draw(st.integers(1, 3))]]
    rep = validate_corpus(tw, us)
    assert sorted((i.kind, i.object_id) for i in rep.issues) == _scan(tw, us, DEFAULT_SCHEMA)
    for perm in itertools.islice(itertools.permutations(tw), 4):
        assert validate_corpus(list(perm), list(reversed(us))) == rep
    assert validate_corpus(tw, us) == rep


def test_duplicate_ids_reported():
    rep = validate_corpus([_t("t1", "u1"), _t("t1", "u1")], [_u("u1")])
    assert [i.kind for i in rep.issues] == ["duplicate_id"]


def test_ingest_error_carries_line_number(tmp_path):
    p = tmp_path / "tweets.jsonl"
    good = json.dumps(_t("t1", "u1").to_dict())
    p.write_text(good + "\n{not json\n")
    with pytest.raises(IngestError) as ei:
        read_tweets(p)
    assert ei.value.lineno == 2
    p.write_text(good + "\n" + json.dumps({"id": "t2"}) + "\n")
    with pytest.raises(IngestError) as ei:
        read_tweets(p)
    assert ei.value.lineno == 2


def test_jsonl_and_split_round_trip(tmp_path):
    tw = [_t("t1", "u1"), Tweet(id="t2", text="x", user_id="u1", created_at=5, label=Label.FAKE, tweet_features=(1, 2, 3, 4))]
    write_jsonl(tmp_path / "t.jsonl", tw)
    assert read_tweets(tmp_path / "t.jsonl") == tw
    split = DatasetSplit.from_tweets(SplitKind.TRAIN, tw)
    assert split.labelled_ids == ("t2",)
    write_splits(tmp_path / "splits.json", [split])
    assert read_splits(tmp_path / "splits.json", tw) == {SplitKind.TRAIN: split}
    with pytest.raises(ValueError):
        DatasetSplit(SplitKind.TRAIN, ("a",), ("b",))
