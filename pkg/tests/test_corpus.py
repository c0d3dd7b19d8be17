import json
from datetime import datetime, timezone

import preprocessor
import pytest
from hypothesis import given, settings, strategies as st

from vaxconcern.corpus import (
    CorpusCorruptError,
    DatasetSchemaError,
    KeywordConfig,
    KeywordConfigError,
    LabeledExample,
    ManifestError,
    default_keywords,
    load_labeled_dataset,
    load_tweet_stream,
    obfuscate_author,
    preprocess,
    split_examples,
    tag_vaccine_mentions,
    write_labeled_dataset,
    write_split_manifest,
)
from vaxconcern.synthetic import make_labeled_corpus

from .oracles import keyword_scan_oracle, token_strip_oracle

CASES = [
    "plain sentence about vaccines",
    "No jab for me #novax @user https://t.co/x",
    "\U0001F489 is poison",
    "@CDCgov the shot \U0001F92C gave me a rash http://bit.ly/abc #sideeffects",
    "Wake up   people,\nno    mandates! ☠️ #NoVaccinePassports",
]


@pytest.mark.parametrize("text", CASES)
def test_preprocess_matches_token_oracle(text):
    assert preprocess(text) == token_strip_oracle(text)


def test_preprocess_examples():
    assert preprocess("plain sentence about vaccines") == "plain sentence about vaccines"
    assert preprocess("No jab for me #novax @user https://t.co/x") == "No jab for me"
    assert preprocess("\U0001F489 is poison") == "is poison"


@pytest.mark.parametrize("text", CASES)
def test_preprocess_agrees_with_tweet_preprocessor(text):
    # the cleaner the published pipeline used, restricted to the same token classes
    preprocessor.set_options(preprocessor.OPT.URL, preprocessor.OPT.MENTION,
                             preprocessor.OPT.HASHTAG, preprocessor.OPT.EMOJI)
    assert preprocess(text) == " ".join(preprocessor.clean(text).split())


@settings(max_examples=300)
@given(st.lists(st.sampled_from(list("ab #@.:/ht\U0001F489\n") + ["http://", "t.co/"]),
                max_size=20).map("".join))
def test_preprocess_idempotent(text):
    once = preprocess(text)
    assert preprocess(once) == once


@given(st.text(max_size=60))
def test_preprocess_idempotent_unicode(text):
    once = preprocess(text)
    assert preprocess(once) == once


# -- mention tagging -------------------------------------------------------

def test_tag_examples():
    f = tag_vaccine_mentions("the gardasil shot hurt my daughter")
    assert f.hpv and not (f.covid or f.flu or f.mmr or f.ipv)
    assert tag_vaccine_mentions("I love pizza").to_dict() == dict.fromkeys(f.to_dict(), False)
    f = tag_vaccine_mentions("mmr and flu shots both")
    assert f.mmr and f.flu and not f.hpv


def test_tag_word_boundaries():
    assert not tag_vaccine_mentions("chpvx fluffy").noncovid
    assert tag_vaccine_mentions("Pfizer vaccines").covid


SENTENCES = ["the gardasil shot hurt my daughter", "mmr and flu shots both", "fluffy influencer",
             "Measles vaccine and POLIO", "ipvx hpv.", "astra   zeneca rollout", "covid vaccines kill",
             "Moderna's profits", "no influenza here"]


@pytest.mark.parametrize("text", SENTENCES)
def test_tag_matches_scan_oracle(text):
    kw = default_keywords()
    flags = tag_vaccine_mentions(text, kw)
    for fam, words in kw.families.items():
        assert getattr(flags, fam) == keyword_scan_oracle(text, words), fam


@given(st.text(alphabet=st.sampled_from(list("fluMRhpvGardsilOP ")), max_size=30))
def test_tag_case_insensitive(text):
    assert tag_vaccine_mentions(text) == tag_vaccine_mentions(text.lower())


def test_keyword_config_errors(tmp_path):
    with pytest.raises(KeywordConfigError):
        KeywordConfig({"covid": ["x"], "flu": [], "mmr": ["m"], "ipv": ["i"], "hpv": ["h"]})
    with pytest.raises(KeywordConfigError):
        KeywordConfig({"covid": ["x"]})
    path = tmp_path / "kw.yaml"
    path.write_text("families:\n  covid: [jab]\n  flu: [flu]\n  mmr: [mmr]\n  ipv: [ipv]\n  hpv: [hpv]\n")
    assert KeywordConfig.from_file(path).tag("no jab").covid


# -- tweet stream ----------------------------------------------------------

def _write_lines(path, records, bad=()):
    with open(path, "w") as fh:
        for i, rec in enumerate(records):
            fh.write(json.dumps(rec) + "\n")
            if i in bad:
                fh.write("{not json\n")


def _rec(i, **kw):
    d = {"id": str(i), "text": f"tweet {i}", "created_at": "2020-02-01T00:00:00Z", "author_key": f"k{i}"}
    d.update(kw)
    return d


def test_stream_well_formed(tmp_path):
    path = tmp_path / "t.jsonl"
    _write_lines(path, [_rec(i) for i in range(3)])
    stream = load_tweet_stream(path)
    recs = list(stream)
    assert [r.id for r in recs] == ["0", "1", "2"]
    assert stream.n_skipped == 0
    assert recs[0].created_at == datetime(2020, 2, 1, tzinfo=timezone.utc)


def test_stream_one_malformed_in_hundred(tmp_path):
    path = tmp_path / "t.jsonl"
    _write_lines(path, [_rec(i) for i in range(99)], bad={50})
    stream = load_tweet_stream(path)
    assert len(list(stream)) == 99
    assert stream.n_skipped == 1


def test_stream_corrupt(tmp_path):
    path = tmp_path / "t.jsonl"
    _write_lines(path, [_rec(i) for i in range(20)], bad={1, 5})
    with pytest.raises(CorpusCorruptError):
        list(load_tweet_stream(path))


def test_stream_missing_file(tmp_path):
    with pytest.raises(OSError):
        list(load_tweet_stream(tmp_path / "nope.jsonl"))


def test_stream_timezones_and_author_hashing(tmp_path):
    path = tmp_path / "t.jsonl"
    recs = [_rec(0, created_at="2020-01-31T19:00:00-05:00"),
            {"id": "1", "text": "x", "created_at": "2019-05-05T10:00:00", "username": "realhandle"},
            _rec(2, stance_scores={"anti": 0.9, "pro": 0.05, "neutral": 0.05})]
    _write_lines(path, recs)
    out = list(load_tweet_stream(path, salt="s"))
    assert out[0].created_at == datetime(2020, 2, 1, tzinfo=timezone.utc)
    assert out[1].created_at.tzinfo is not None
    assert out[1].author_key == obfuscate_author("realhandle", "s") != "realhandle"
    assert out[2].stance_scores.anti == 0.9


# -- labeled datasets ------------------------------------------------------

def test_dataset_round_trip(tmp_path):
    corpus = make_labeled_corpus(200, seed=4)
    data, manifest = tmp_path / "d.csv", tmp_path / "splits.csv"
    write_labeled_dataset(corpus, data)
    write_split_manifest(corpus, manifest)
    loaded = load_labeled_dataset(data, manifest)
    assert [(e.id, e.text, e.labels, e.split) for e in loaded] == \
        [(e.id, e.text, e.labels, e.split) for e in corpus]
    assert all(span in e.text for e in loaded for _, span in e.explanations)
    parts = split_examples(loaded)
    assert sum(len(v) for v in parts.values()) == 200
    ids = [set(e.id for e in v) for v in parts.values()]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])


def test_dataset_single_split(tmp_path):
    data = tmp_path / "novid.csv"
    write_labeled_dataset([LabeledExample("1", "flu shots are useless", frozenset({"ineffective"}))], data)
    assert [e.split for e in load_labeled_dataset(data, "test")] == ["test"]


def test_dataset_schema_errors(tmp_path):
    data = tmp_path / "d.csv"
    data.write_text("id,text,labels\n1,hello,rushed\n2,bad row,autism\n")
    with pytest.raises(DatasetSchemaError, match="id 2"):
        load_labeled_dataset(data, "train")
    data.write_text("id,text,labels\n1,hello,rushed\n")
    with pytest.raises(ManifestError):
        load_labeled_dataset(data, {"9": "train"})
    data.write_text('id,text,labels,explanations\n1,hello,rushed,"[[""rushed"", ""bye""]]"\n')
    with pytest.raises(DatasetSchemaError, match="span"):
        load_labeled_dataset(data, "train")


def test_pipe_separated_labels(tmp_path):
    data = tmp_path / "d.csv"
    data.write_text("id,text,labels\n1,hello,Side-Effect| rushed\n")
    assert load_labeled_dataset(data, "train")[0].labels == {"side-effect", "rushed"}
