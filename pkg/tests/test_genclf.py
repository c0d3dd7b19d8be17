import itertools
import logging

import pytest
from hypothesis import given, strategies as st

from vaxconcern.genclf import PROMPT_HEADER, GenerativeClassifier, build_prompt, build_target
from vaxconcern.labels import LABELS
from vaxconcern.matching import DescriptionMatcher, split_generated
from vaxconcern.synthetic import make_labeled_corpus

REINFECTION = ("A vaccine that cant prevent reinfection? No thanks I trust my own immunity "
               "thats over 99.5% effective.")
TINY = {"name": "tiny", "d_model": 64, "num_layers": 2, "num_heads": 2, "d_ff": 128,
        "vocab_size": 800, "dropout": 0.0}


def test_prompt_matches_instruction_example():
    assert build_prompt(REINFECTION) == (
        "Instruction: First read the task description. There could be multiple categories for a tweet.\n"
        "Task: Multi-label Text Classification\n"
        "Description: Generate label description for the given text.\n"
        "A vaccine that cant prevent reinfection? No thanks I trust my own immunity thats over 99.5% effective."
    )


def test_prompt_empty_text_logged(caplog):
    with caplog.at_level(logging.WARNING):
        assert build_prompt("") == PROMPT_HEADER
    assert "empty" in caplog.text


@given(st.text(max_size=30), st.text(max_size=30))
def test_prompt_injective(a, b):
    assert (build_prompt(a) == build_prompt(b)) == (a == b)


def test_target_matches_instruction_example():
    assert build_target({"unnecessary", "ineffective"}) == (
        "Vaccine is ineffective -- The tweet expresses concerns that the vaccines are not effective "
        "enough and are useless. The tweet indicates vaccines are unnecessary, or that alternate "
        "cures are better.")
    assert build_target({"none"}) == LABELS.description_of("none")


def test_every_label_subset_round_trips():
    n = 0
    for k in range(1, 13):
        for subset in itertools.combinations(LABELS.names, k):
            segs = split_generated(build_target(subset))
            assert [LABELS.label_of_description(s) for s in segs] == list(subset)
            n += 1
    assert n == 4095


@pytest.fixture(scope="module")
def shell():
    """Classifier with only the matcher fitted, for post-generation logic."""
    clf = GenerativeClassifier()
    clf.matcher_ = DescriptionMatcher().fit()
    return clf


def test_trace_prediction_example(shell):
    trace = shell.labels_from_text(
        "tweet indicates vaccines are unnecessary, or that alternate cures are better. "
        "Vaccine is ineffective -- The tweet expresses concerns")
    assert len(trace["segments"]) == 2
    assert trace["labels"] == {"unnecessary", "ineffective"}


def test_trace_degenerate_repetition(shell):
    trace = shell.labels_from_text(LABELS.description_of("mandatory")
                                   + "     Political Political Political Political")
    assert trace["segments"][1] == "Political Political Political Political"
    assert trace["labels"] == {"mandatory", "political"}


def test_trace_empty_and_unusable_segments(shell, caplog):
    assert shell.labels_from_text("")["labels"] == {"none"}
    with caplog.at_level(logging.WARNING):
        trace = shell.labels_from_text(LABELS.description_of("pharma") + " \U0001F489\U0001F489")
    assert trace["labels"] == {"pharma"}
    assert "skipping" in caplog.text


def test_none_suppressed_in_generation(shell):
    text = build_target({"none"}) + " " + build_target({"rushed"})
    assert shell.labels_from_text(text)["labels"] == {"rushed"}


def test_adapters_are_small_and_base_frozen():
    corpus = make_labeled_corpus(16, seed=0)
    # default tiny size; rank-2 adapters on a toy 64-wide model are not "small"
    clf = GenerativeClassifier({"name": "tiny", "vocab_size": 800}, pretrain_steps=0, max_steps=1)
    clf.fit([e.text for e in corpus], [e.labels for e in corpus])
    names = [n for n, p in clf.model_.named_parameters() if p.requires_grad]
    assert names and all("lora_" in n for n in names)
    assert clf.adapter_ratio_ < 0.01


def test_save_load_round_trip(tmp_path):
    corpus = make_labeled_corpus(16, seed=0)
    X, y = [e.text for e in corpus], [e.labels for e in corpus]
    clf = GenerativeClassifier(TINY, pretrain_steps=0, max_steps=3, max_output_tokens=12).fit(X, y)
    loaded = GenerativeClassifier.load(clf.save(tmp_path / "gen"))
    assert loaded.generate(X[:3]) == clf.generate(X[:3])
    assert loaded.fingerprint_ == clf.fingerprint_
    assert loaded.get_params()["lora_rank"] == 2


@pytest.mark.slow
def test_overfit_sixteen_examples():
    corpus = make_labeled_corpus(16, seed=0)
    X, y = [e.text for e in corpus], [e.labels for e in corpus]
    # output cap raised so two-label targets are not truncated during training
    clf = GenerativeClassifier({**TINY, "d_model": 128, "d_ff": 512, "num_heads": 4}, lora_alpha=256,
                               epochs=1000, max_steps=200, learning_rate=1e-3, pretrain_steps=600,
                               max_output_tokens=80)
    clf.fit(X, y)
    hits = sum(g.strip() == build_target(s) for g, s in zip(clf.generate(X), y))
    assert hits >= 15
