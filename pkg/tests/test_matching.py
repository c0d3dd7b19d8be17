import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vaxconcern.labels import LABELS
from vaxconcern.matching import (
    DescriptionMatcher,
    TfidfEmbedder,
    ZeroNormEmbeddingError,
    split_generated,
)


def test_split_keeps_abbreviations():
    assert split_generated("Side effects are bad, e.g. rashes. Pharma is greedy.") == [
        "Side effects are bad, e.g. rashes.", "Pharma is greedy."]
    assert split_generated("A thing i.e. this. Next.") == ["A thing i.e. this.", "Next."]


def test_split_edge_cases():
    assert split_generated("") == []
    assert split_generated(" . .. ") == []
    assert split_generated("no full stop at all") == ["no full stop at all"]
    assert split_generated("version 1.5 is out. ok") == ["version 1.5 is out.", "ok"]


def test_split_two_descriptions():
    a, b = LABELS.description_of("pharma"), LABELS.description_of("rushed")
    assert split_generated(a + " " + b) == [a, b]


@given(st.lists(st.sampled_from(["Word", "e.g.", "x.", "stop.", " ", "  ", "i.e", "."]), max_size=12))
def test_split_segments_are_clean(parts):
    text = " ".join(parts)
    for seg in split_generated(text):
        assert seg == seg.strip() and "  " not in seg
        assert seg.strip(".")


@pytest.fixture(scope="module")
def matcher():
    return DescriptionMatcher().fit()


def test_verbatim_descriptions_round_trip(matcher):
    for lab in LABELS:
        d = LABELS.description_of(lab)
        assert matcher.match(d) == (lab, 1.0)
        assert matcher.match("  " + d.rstrip(".") + "  ")[0] == lab


def test_paraphrase_matches(matcher):
    lab, sim = matcher.match("Vaccine is ineffective -- the vaccines are useless and do not work.")
    assert lab == "ineffective" and 0 < sim <= 1
    assert matcher.match("Side effects and adverse reactions like heart problems")[0] == "side-effect"


def test_min_similarity(matcher):
    strict = DescriptionMatcher(min_similarity=0.99).fit()
    lab, sim = strict.match("bananas")
    assert lab is None and sim < 0.99


def test_empty_segment_rejected(matcher):
    with pytest.raises(ValueError):
        matcher.match("   ")


class _Fixed:
    """Embedder returning fixed rows; used to force ties and zero vectors."""

    def __init__(self, table):
        self.table = table

    def encode(self, sentences):
        return np.array([self.table(s) for s in sentences], dtype=float)


def test_tie_break_canonical_order(caplog):
    # every description and every segment embeds to the same vector
    m = DescriptionMatcher(embedder=_Fixed(lambda s: [1.0, 0.0])).fit()
    with caplog.at_level(logging.INFO):
        assert m.match("anything")[0] == LABELS.names[0]
    assert "tie" in caplog.text


def test_zero_norm_segment(matcher):
    m = DescriptionMatcher(embedder=_Fixed(lambda s: [0.0, 0.0] if s == "void" else [1.0, 0.5])).fit()
    with pytest.raises(ZeroNormEmbeddingError):
        m.match("void")
    with pytest.raises(ZeroNormEmbeddingError):
        matcher.match("\U0001F489")


def test_tfidf_embedder_is_sklearn_transformer():
    emb = TfidfEmbedder().fit(["a b", "c d"])
    assert emb.transform(["a b"]).shape[0] == 1
    assert emb.get_params()["analyzer"] == "char_wb"
