import csv
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from endemic.datamodel import DEFAULT_SCHEMA, DatasetSplit, FeatureSchema, FeatureSpec, SplitKind
from endemic.evalharness import (
    MetricsReport,
    evaluate,
    mask_batch,
    mask_time_variant,
    read_metrics,
    report,
    with_deltas,
    write_metrics,
)
from builders import random_batch, tiny_model

finite = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, (5, 4), elements=finite), hnp.arrays(np.float64, (5, 4), elements=finite))
def test_masking_idempotent_and_only_time_variant(tf, uf):
    mt, mu = mask_time_variant(tf, uf)
    mt2, mu2 = mask_time_variant(mt, mu)
    np.testing.assert_array_equal(mt, mt2)
    np.testing.assert_array_equal(mu, mu2)
    tv_t = np.array(DEFAULT_SCHEMA.tweet_time_variant())
    tv_u = np.array(DEFAULT_SCHEMA.user_time_variant())
    assert np.isnan(mt[:, tv_t]).all() and np.isnan(mu[:, tv_u]).all()
    np.testing.assert_array_equal(mt[:, ~tv_t], tf[:, ~tv_t])
    np.testing.assert_array_equal(mu[:, ~tv_u], uf[:, ~tv_u])


@settings(max_examples=50, deadline=None)
@given(
    hnp.arrays(np.float64, (2, 4), elements=finite),
    hnp.arrays(np.float64, (2, 4), elements=finite),
    hnp.arrays(np.float64, (2, 4), elements=finite),
    hnp.arrays(np.float64, (2, 4), elements=finite),
)
def test_tweets_differing_only_in_time_variant_features_mask_equal(tf, uf, tf2, uf2):
    # copy invariant columns so the pair differs only where masking applies
    tv_t = np.array(DEFAULT_SCHEMA.tweet_time_variant())
    tv_u = np.array(DEFAULT_SCHEMA.user_time_variant())
    tf2[:, ~tv_t] = tf[:, ~tv_t]
    uf2[:, ~tv_u] = uf[:, ~tv_u]
    a = mask_time_variant(tf, uf)
    b = mask_time_variant(tf2, uf2)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_schema_without_time_variant_is_identity():
    schema = FeatureSchema(
        tweet=tuple(FeatureSpec(f"t{i}") for i in range(3)), user=tuple(FeatureSpec(f"u{i}") for i in range(2))
    )
    tf = np.arange(6.0).reshape(2, 3)
    uf = np.arange(4.0).reshape(2, 2)
    mt, mu = mask_time_variant(tf, uf, schema)
    np.testing.assert_array_equal(mt, tf)
    np.testing.assert_array_equal(mu, uf)
    with pytest.raises(ValueError):
        mask_time_variant(tf, uf)


def test_hand_confusion_matrix():
    y_true = [1] * 5 + [0] * 5
    y_pred = [1, 1, 1, 0, 0] + [1, 0, 0, 0, 0]
    m = MetricsReport.from_predictions(y_true, y_pred)
    assert (m.tp, m.fp, m.fn, m.tn) == (3, 1, 2, 4)
    assert m.precision == 0.75
    assert m.recall == 0.6
    assert m.f1 == pytest.approx(2 / 3, abs=1e-12)
    assert m.accuracy == 0.7


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
def test_metric_identities(pairs):
    y = np.array([p[0] for p in pairs])
    yhat = np.array([p[1] for p in pairs])
    m = MetricsReport.from_predictions(y, yhat)
    assert m.tp + m.fp + m.fn + m.tn == len(pairs)
    assert m.accuracy == pytest.approx(float(np.mean(y == yhat)), abs=1e-9)
    if m.tp + m.fp:
        assert m.precision == pytest.approx(m.tp / (m.tp + m.fp), abs=1e-9)
    if m.tp + m.fn:
        assert m.recall == pytest.approx(m.tp / (m.tp + m.fn), abs=1e-9)
    if m.precision + m.recall > 0:
        hm = 2 / (1 / m.precision + 1 / m.recall) if m.precision and m.recall else 0.0
        assert m.f1 == pytest.approx(hm, abs=1e-9)
    for v in (m.accuracy, m.precision, m.recall, m.f1):
        assert 0.0 <= v <= 1.0


def test_perfect_predictor_scores_one():
    y = [0, 1, 1, 0, 1]
    m = MetricsReport.from_predictions(y, y)
    assert m.accuracy == m.precision == m.recall == m.f1 == 1.0


class _Oracle:
    """Predicts the stored label; unlabelled rows get an arbitrary class."""

    def logits(self, batch):
        y = batch.labels.clamp(min=0)
        return torch.nn.functional.one_hot(y, 2).double()


def test_evaluate_excludes_and_counts_unlabelled():
    batch = random_batch(6, 0, labels=[0, 1, -1, 1, -1, 0])
    m = evaluate(_Oracle(), batch)
    assert m.n_excluded == 2 and m.total == 4 and m.accuracy == 1.0
    split = DatasetSplit(SplitKind.EARLY_TEST, ("t002", "t003", "t000"))
    m2 = evaluate(_Oracle(), batch, split)
    assert m2.split == "early_test" and m2.total == 2 and m2.n_excluded == 1
    with pytest.raises(ValueError):
        evaluate(_Oracle(), batch, mode="other")


def test_context_blind_model_is_unaffected_by_masking():
    model = tiny_model(3)
    with torch.no_grad():
        model.context.linear.weight.zero_()
    batch = random_batch(12, 1)
    model.context.standardizer.fit(torch.cat([batch.tweet_feats, batch.user_feats], -1).numpy())
    plain = evaluate(model, batch)
    masked = evaluate(model, batch, mode="mask_detect")
    assert (plain.tp, plain.fp, plain.fn, plain.tn) == (masked.tp, masked.fp, masked.fn, masked.tn)
    model.eval()
    assert torch.equal(model.logits(batch), model.logits(mask_batch(batch)))


def test_deltas_match_hand_arithmetic():
    a = MetricsReport("a", "general_test", "plain", 3, 1, 2, 4)  # acc 0.7
    b = MetricsReport("b", "general_test", "mask_detect", 2, 2, 3, 3)  # acc 0.5
    runs = with_deltas([a, b])
    assert runs[0].delta_acc == 0.0
    assert runs[1].delta_acc == pytest.approx(0.2, abs=1e-12)
    with pytest.raises(ValueError):
        with_deltas([])
    with pytest.raises(ValueError):
        report([], "unused")


def test_report_files_are_byte_identical(tmp_path):
    runs = [
        MetricsReport("full", "general_test", "plain", 3, 1, 2, 4),
        MetricsReport("full", "general_test", "mask_detect", 2, 2, 3, 3, n_excluded=1),
    ]
    first = report(runs, tmp_path / "a")
    second = report(runs, tmp_path / "b")
    assert [p.name for p in first] == [p.name for p in second]
    for p, q in zip(first, second):
        assert p.read_bytes() == q.read_bytes(), p.name
    rows = list(csv.DictReader(open(tmp_path / "a" / "report.csv")))
    assert float(rows[1]["delta_acc"]) == pytest.approx(0.2)
    assert "dAcc" in (tmp_path / "a" / "report.txt").read_text()


def test_metrics_roundtrip(tmp_path):
    m = MetricsReport("x", "early_test", "plain", 1, 2, 3, 4, n_excluded=5, delta_acc=0.125)
    write_metrics(tmp_path / "m.json", m)
    assert read_metrics(tmp_path / "m.json") == m
    assert m.per_class == {"fake": 4, "genuine": 6}
    assert not math.isnan(m.f1)
