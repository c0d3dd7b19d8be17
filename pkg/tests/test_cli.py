import csv
import hashlib
import json

import pytest

from vaxconcern.cli import main
from vaxconcern.corpus import load_labeled_dataset, write_labeled_dataset, write_split_manifest, write_tweet_stream
from vaxconcern.store import PredictionStore
from vaxconcern.synthetic import make_analysis_corpus, make_labeled_corpus

TINY_CFG = """
seed: 3
gen:
  backend: {name: tiny, d_model: 64, num_layers: 2, num_heads: 2, d_ff: 128, vocab_size: 800}
  pretrain_steps: 0
  epochs: 1
  max_output_tokens: 16
"""


@pytest.fixture
def workspace(tmp_path):
    corpus = make_labeled_corpus(60, seed=9)
    write_labeled_dataset(corpus, tmp_path / "data.csv")
    write_split_manifest(corpus, tmp_path / "splits.csv")
    (tmp_path / "cfg.yaml").write_text(TINY_CFG)
    return tmp_path, corpus


def _hashes(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir())}


def test_prepare_counts_and_determinism(workspace, capsys):
    tmp, corpus = workspace
    args = ["--config", str(tmp / "cfg.yaml"), "prepare", "--dataset", str(tmp / "data.csv"),
            "--splits", str(tmp / "splits.csv")]
    assert main(args + ["--out", str(tmp / "a")]) == 0
    assert main(args + ["--out", str(tmp / "b")]) == 0
    assert _hashes(tmp / "a") == _hashes(tmp / "b")
    train = [e for e in corpus if e.split == "train"]
    expected = sum(len(e.labels) + min(7, 12 - len(e.labels)) for e in train)
    with open(tmp / "a" / "pairs.train.tsv") as fh:
        assert sum(1 for _ in csv.reader(fh, delimiter="\t")) - 1 == expected
    first = json.loads((tmp / "a" / "instructions.train.jsonl").read_text().splitlines()[0])
    assert first["input"].startswith("Instruction: First read the task description.")


def test_prepare_empty_input(tmp_path):
    (tmp_path / "empty.csv").write_text("id,text,labels\n")
    assert main(["prepare", "--dataset", str(tmp_path / "empty.csv"), "--out", str(tmp_path / "out")]) == 1
    assert not (tmp_path / "out").exists()


def test_train_predict_cache_and_evaluate(workspace, capsys):
    tmp, corpus = workspace
    cfg = ["--config", str(tmp / "cfg.yaml")]
    data = ["--dataset", str(tmp / "data.csv"), "--splits", str(tmp / "splits.csv")]
    assert main(cfg + ["train-gen"] + data + ["--out", str(tmp / "gen"), "--max-steps", "2"]) == 0
    pred = cfg + ["predict", "--model", str(tmp / "gen"), "--store", str(tmp / "store.jsonl"),
                  "--split", "test"] + data
    capsys.readouterr()
    assert main(pred) == 0
    first = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert main(pred) == 0
    second = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert first["n_new"] == first["n_inputs"] > 0 and second["n_new"] == 0
    assert main(cfg + ["evaluate", "--model", str(tmp / "gen"), "--store", str(tmp / "store.jsonl")]
                + data) == 0
    # a fingerprint the store has never seen is stale
    assert main(cfg + ["evaluate", "--fingerprint", "0" * 16, "--store", str(tmp / "store.jsonl")]
                + data) == 1


def test_evaluate_perfect_store(workspace, capsys):
    tmp, _ = workspace
    gold = load_labeled_dataset(tmp / "data.csv", tmp / "splits.csv")
    store = PredictionStore(tmp / "perfect.jsonl")
    store.append([(e.id, e.labels) for e in gold if e.split == "test"], "oracle", "perfect")
    assert main(["evaluate", "--dataset", str(tmp / "data.csv"), "--splits", str(tmp / "splits.csv"),
                 "--fingerprint", "perfect", "--store", str(tmp / "perfect.jsonl"), "--exclude-absent",
                 "--out", str(tmp / "eval.json")]) == 0
    report = json.loads((tmp / "eval.json").read_text())
    assert report["macro_f1"] == report["weighted_f1"] == report["mean_jaccard"] == 1.0


@pytest.fixture(scope="module")
def planted_files(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("planted")
    pc = make_analysis_corpus(3000, seed=11)
    write_tweet_stream(pc.tweets, tmp / "tweets.jsonl")
    PredictionStore(tmp / "store.jsonl").append(pc.predictions.items(), "planted", "planted")
    assert main(["filter-stance", "--tweets", str(tmp / "tweets.jsonl"), "--out", str(tmp / "anti.jsonl"),
                 "--stance-backend", "none"]) == 0
    return tmp, pc


def test_analyze_matches_planting(planted_files):
    tmp, pc = planted_files
    assert main(["analyze", "--tweets", str(tmp / "anti.jsonl"), "--stance-tweets", str(tmp / "tweets.jsonl"),
                 "--store", str(tmp / "store.jsonl"), "--fingerprint", "planted", "--out", str(tmp / "rep")]) == 0
    report = json.loads((tmp / "rep" / "report.json").read_text())
    for (bucket, lab), count in pc.label_counts.items():
        if lab in report["excluded_labels"]:
            continue
        assert report["distributions"][bucket]["fractions"][lab] == pytest.approx(
            count / pc.bucket_sizes[bucket], abs=1e-12)
    cohorts = json.loads((tmp / "rep" / "cohorts.json").read_text())
    assert pc.traditional <= set(cohorts["traditional_antivax"])
    assert pc.converted <= set(cohorts["converted_antivax"])
    assert "religious" not in report["distributions"]["pre_covid"]["fractions"]


def test_analyze_include_rare(planted_files):
    tmp, _ = planted_files
    assert main(["analyze", "--tweets", str(tmp / "anti.jsonl"), "--store", str(tmp / "store.jsonl"),
                 "--fingerprint", "planted", "--out", str(tmp / "rare"), "--include-rare"]) == 0
    report = json.loads((tmp / "rare" / "report.json").read_text())
    assert "religious" in report["distributions"]["pre_covid"]["fractions"]


def test_analyze_incomplete_store(planted_files, tmp_path):
    tmp, pc = planted_files
    partial = PredictionStore(tmp_path / "partial.jsonl")
    items = list(pc.predictions.items())
    partial.append(items[: int(len(items) * 0.9)], "planted", "planted")
    assert main(["analyze", "--tweets", str(tmp / "anti.jsonl"), "--store", str(tmp_path / "partial.jsonl"),
                 "--fingerprint", "planted", "--out", str(tmp_path / "rep")]) == 1


def test_analyze_single_period_notice(tmp_path, capsys):
    pc = make_analysis_corpus(200, seed=1)
    pre = [t for t in pc.tweets if t.created_at.year == 2019 and t.stance_scores.anti >= 0.8]
    write_tweet_stream(pre, tmp_path / "pre.jsonl")
    PredictionStore(tmp_path / "s.jsonl").append(pc.predictions.items(), "planted", "p")
    assert main(["analyze", "--tweets", str(tmp_path / "pre.jsonl"), "--store", str(tmp_path / "s.jsonl"),
                 "--fingerprint", "p", "--out", str(tmp_path / "rep")]) == 0
    assert "KL comparisons omitted" in capsys.readouterr().err
    assert json.loads((tmp_path / "rep" / "report.json").read_text())["kl"] == []


def test_filter_and_cohorts_commands(planted_files, capsys):
    tmp, pc = planted_files
    capsys.readouterr()
    assert main(["filter-stance", "--tweets", str(tmp / "tweets.jsonl"), "--out", str(tmp / "anti95.jsonl"),
                 "--stance-backend", "none", "--threshold", "0.95"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["threshold"] == 0.95 and stats["n_kept"] < stats["n_total"]
    assert main(["cohorts", "--tweets", str(tmp / "tweets.jsonl"), "--out", str(tmp / "c.json")]) == 0
    assert pc.converted <= set(json.loads((tmp / "c.json").read_text())["converted_antivax"])


def test_missing_stance_without_backend(tmp_path):
    pc = make_analysis_corpus(50, seed=2)
    for t in pc.tweets:
        t.stance_scores = None
    write_tweet_stream(pc.tweets, tmp_path / "t.jsonl")
    assert main(["filter-stance", "--tweets", str(tmp_path / "t.jsonl"), "--out", str(tmp_path / "o.jsonl"),
                 "--stance-backend", "none"]) == 1
    assert main(["filter-stance", "--tweets", str(tmp_path / "t.jsonl"), "--out", str(tmp_path / "o.jsonl")]) == 0


def test_config_errors_and_backend_errors(workspace, monkeypatch):
    tmp, _ = workspace
    (tmp / "bad.yaml").write_text("gen:\n  no_such_key: 1\n")
    assert main(["--config", str(tmp / "bad.yaml"), "prepare", "--dataset", str(tmp / "data.csv"),
                 "--out", str(tmp / "x")]) == 1
    monkeypatch.setenv("HF_HUB_OFFLINE", "1")
    assert main(["train-gen", "--dataset", str(tmp / "data.csv"), "--splits", str(tmp / "splits.csv"),
                 "--out", str(tmp / "g"), "--backend", str(tmp / "no-such-checkpoint")]) == 2
