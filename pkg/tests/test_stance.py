from datetime import datetime, timezone

import numpy as np
import pytest

from vaxconcern.corpus import RawTweet
from vaxconcern.stance import (
    ConstantStanceBackend,
    LexiconStanceBackend,
    MissingStanceError,
    StanceBackendError,
    StanceScores,
    filter_antivax,
    score_stance,
)

TS = datetime(2021, 3, 1, tzinfo=timezone.utc)


def _tweets(antis):
    out = []
    for i, a in enumerate(antis):
        rest = (1 - a) / 2
        out.append(RawTweet(str(i), "t", TS, f"u{i}", StanceScores(a, rest, 1 - a - rest)))
    return out


def test_scores_validation():
    with pytest.raises(ValueError):
        StanceScores(0.9, 0.2, 0.1)
    with pytest.raises(ValueError):
        StanceScores(-0.1, 0.6, 0.5)
    s = StanceScores.from_raw([2, 1, 1])
    assert (s.anti, s.pro, s.neutral) == (0.5, 0.25, 0.25)


def test_constant_backend_verbatim():
    s = score_stance(ConstantStanceBackend((0.9, 0.05, 0.05)), "anything")
    assert (s.anti, s.pro, s.neutral) == pytest.approx((0.9, 0.05, 0.05))
    assert s.label == "anti"


def test_lexicon_scores_sum_to_one():
    be = LexiconStanceBackend()
    for text in ["", "I love pizza", "the vaccine is poison", "got my booster today, so grateful"]:
        s = score_stance(be, text)
        assert s.anti + s.pro + s.neutral == pytest.approx(1.0)


# Hand-labeled sanity fixture for the shipped lexicon backend.
STANCE_FIXTURE = [
    ("I will never take that poison they call a vaccine", "anti"),
    ("Not getting the jab, it's experimental and dangerous", "anti"),
    ("Big pharma scam. My body my choice, no vaccine for me", "anti"),
    ("The covid shot is killing people and they hide the injuries", "anti"),
    ("Flu vaccines don't work, total scam", "anti"),
    ("Refuse the booster. Don't trust the CDC", "anti"),
    ("Vaccine injuries are real and the jab is toxic", "anti"),
    ("MMR causes autism and nobody talks about it", "anti"),
    ("Just got my second dose, so grateful to the scientists!", "pro"),
    ("Vaccines save lives. Please get vaccinated", "pro"),
    ("Fully vaccinated and boosted, feeling relieved", "pro"),
    ("Booked my flu shot appointment for tomorrow, do your part", "pro"),
    ("The vaccine is safe and effective, ignore the misinformation", "pro"),
    ("Proud to have had my booster to protect my grandma", "pro"),
    ("Thank you nurses for giving out vaccines all weekend", "pro"),
    ("Vaccine clinic opens at 9am on Main Street", "neutral"),
    ("The ministry published new vaccine eligibility rules today", "neutral"),
    ("What time does the pharmacy close on Sunday?", "neutral"),
    ("New study on vaccine uptake across provinces released", "neutral"),
    ("Weather looks nice this weekend", "neutral"),
]


def test_lexicon_backend_sanity_fixture():
    be = LexiconStanceBackend()
    hits = sum(score_stance(be, t).label == lab for t, lab in STANCE_FIXTURE)
    assert hits >= 16, hits


def test_filter_boundary_inclusive():
    kept, stats = filter_antivax(_tweets([0.80, 0.79, 0.95]))
    assert [t.id for t in kept] == ["0", "2"]
    assert (stats.n_kept, stats.n_total) == (2, 3)


def test_filter_threshold_zero_keeps_all():
    kept, _ = filter_antivax(_tweets([0.0, 0.3, 0.99]), threshold=0.0)
    assert len(kept) == 3


def test_filter_monotone_and_order_preserving():
    rng = np.random.default_rng(0)
    tweets = _tweets(rng.uniform(0, 1, 1000))
    outs = {th: [t.id for t in filter_antivax(tweets, th)[0]] for th in (0.5, 0.8, 0.95)}
    assert set(outs[0.95]) <= set(outs[0.8]) <= set(outs[0.5])
    ids = [t.id for t in tweets]
    for kept in outs.values():
        assert kept == [i for i in ids if i in set(kept)]


def test_filter_scores_missing_records_with_backend():
    tweets = [RawTweet("1", "the vaccine is poison and toxic", TS, "a"),
              RawTweet("2", "vaccines save lives", TS, "b")]
    with pytest.raises(MissingStanceError):
        filter_antivax(tweets)
    kept, stats = filter_antivax(tweets, threshold=0.5, backend=LexiconStanceBackend())
    assert [t.id for t in kept] == ["1"]
    assert stats.n_scored == 2
    assert stats.backend_id == "lexicon:v1"


def test_backend_failure_is_wrapped():
    class Broken:
        backend_id = "broken"

        def predict_scores(self, texts):
            raise RuntimeError("boom")

    with pytest.raises(StanceBackendError):
        score_stance(Broken(), "x")
