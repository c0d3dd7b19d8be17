import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import f1_score, jaccard_score

from vaxconcern.labels import LABELS
from vaxconcern.metrics import (
    LengthMismatchError,
    count,
    evaluate,
    match_category,
    partial_match_report,
    report_from_counts,
)

from .oracles import brute_force_metrics, random_label_sets


def test_perfect_prediction():
    gold = random_label_sets(random.Random(3), 50)
    r = evaluate(gold, gold)
    assert r.weighted_f1 == 1.0
    assert r.mean_jaccard == 1.0
    # classes absent from gold and predictions contribute F1 = 0 to the macro mean
    present = sum(1 for lab in LABELS if r.support[lab])
    assert r.macro_f1 == pytest.approx(present / 12)


def test_perfect_prediction_all_classes_present():
    gold = [frozenset({lab}) for lab in LABELS]
    r = evaluate(gold, gold)
    assert r.macro_f1 == r.weighted_f1 == r.mean_jaccard == 1.0


def test_jaccard_hand_example():
    gold = [frozenset({"rushed"}), frozenset({"rushed", "pharma"})]
    pred = [frozenset({"rushed"}), frozenset({"pharma"})]
    assert evaluate(gold, pred).mean_jaccard == pytest.approx((1 + 0.5) / 2, abs=1e-12)


def test_matches_brute_force_and_sklearn():
    rng = random.Random(11)
    gold = random_label_sets(rng, 300)
    pred = random_label_sets(rng, 300)
    r = evaluate(gold, pred)
    ref = brute_force_metrics(gold, pred)
    assert r.macro_f1 == pytest.approx(ref["macro_f1"], abs=1e-12)
    assert r.weighted_f1 == pytest.approx(ref["weighted_f1"], abs=1e-12)
    assert r.mean_jaccard == pytest.approx(ref["mean_jaccard"], abs=1e-12)
    g, p = LABELS.to_indicator(gold), LABELS.to_indicator(pred)
    assert r.macro_f1 == pytest.approx(f1_score(g, p, average="macro", zero_division=0), abs=1e-12)
    assert r.weighted_f1 == pytest.approx(f1_score(g, p, average="weighted", zero_division=0), abs=1e-12)
    assert r.mean_jaccard == pytest.approx(jaccard_score(g, p, average="samples"), abs=1e-12)


def test_shard_merge_equals_whole():
    rng = random.Random(5)
    gold = random_label_sets(rng, 200)
    pred = random_label_sets(rng, 200)
    merged = count(gold[:70], pred[:70]) + count(gold[70:], pred[70:])
    whole = evaluate(gold, pred)
    got = report_from_counts(merged)
    for key in ("macro_f1", "weighted_f1", "mean_jaccard"):
        assert getattr(got, key) == pytest.approx(getattr(whole, key), abs=1e-12)
    assert got.per_class_f1 == pytest.approx(whole.per_class_f1)
    assert got.support == whole.support


@settings(max_examples=50, deadline=None)
@given(st.randoms(use_true_random=False))
def test_permutation_and_symmetry(r):
    gold = random_label_sets(r, 40)
    pred = random_label_sets(r, 40)
    base = evaluate(gold, pred)
    order = list(range(40))
    r.shuffle(order)
    shuffled = evaluate([gold[i] for i in order], [pred[i] for i in order])
    assert shuffled.macro_f1 == pytest.approx(base.macro_f1, abs=1e-12)
    assert shuffled.weighted_f1 == pytest.approx(base.weighted_f1, abs=1e-12)
    assert shuffled.mean_jaccard == pytest.approx(base.mean_jaccard, abs=1e-12)
    assert evaluate(pred, gold).mean_jaccard == pytest.approx(base.mean_jaccard, abs=1e-12)
    assert evaluate(gold, gold).mean_jaccard == 1.0
    for v in (base.macro_f1, base.weighted_f1, base.mean_jaccard):
        assert 0.0 <= v <= 1.0


def test_exclude_absent_flag():
    gold = [frozenset({"rushed"}), frozenset({"pharma"})]
    r = evaluate(gold, gold, exclude_absent=True)
    assert r.macro_f1 == 1.0
    assert len(r.excluded_classes) == 10


def test_length_mismatch():
    with pytest.raises(LengthMismatchError):
        evaluate([frozenset({"none"})], [])
    with pytest.raises(LengthMismatchError):
        partial_match_report([frozenset({"none"})], [])


@pytest.mark.parametrize("gold, pred, expected", [
    ({"pharma", "side-effect"}, {"pharma"}, "subset"),
    ({"mandatory"}, {"mandatory", "political"}, "superset"),
    ({"rushed"}, {"rushed"}, "exact"),
    ({"mandatory", "unnecessary", "rushed"}, {"rushed", "mandatory"}, "subset"),
    ({"rushed", "pharma"}, {"rushed", "political"}, "overlap"),
    ({"rushed"}, {"pharma"}, "disjoint"),
])
def test_match_category(gold, pred, expected):
    assert match_category(gold, pred) == expected


def test_partial_match_report_is_exhaustive():
    rng = random.Random(8)
    gold = random_label_sets(rng, 100)
    pred = random_label_sets(rng, 100)
    rep = partial_match_report(gold, pred)
    assert sum(rep.values()) == 100


def test_report_rendering():
    gold = [frozenset({"rushed"}), frozenset({"pharma"})]
    r = evaluate(gold, gold)
    assert "Macro-F1" in r.table()
    assert '"mean_jaccard": 1.0' in r.to_json()
