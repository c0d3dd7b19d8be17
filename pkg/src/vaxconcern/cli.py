"""Command line entry point: ``vaxconcern <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

from . import config as cfgmod
from .analysis import EmptyBucketError, IncompletePredictionsError, PeriodConfigError
from .backends import BackendError, TrainingDivergedError
from .corpus import (
    CorpusCorruptError,
    DatasetSchemaError,
    KeywordConfigError,
    ManifestError,
    load_labeled_dataset,
    load_tweet_stream,
    preprocess,
    split_examples,
    write_tweet_stream,
)
from .labels import UnknownLabelError
from .stance import MissingStanceError, StanceBackendError
from .store import PredictionStore, RunManifest, StalePredictionsError

logger = logging.getLogger("vaxconcern")

EXIT_OK, EXIT_CONTRACT, EXIT_BACKEND = 0, 1, 2

CONTRACT_ERRORS = (cfgmod.ConfigError, DatasetSchemaError, ManifestError, CorpusCorruptError,
                   KeywordConfigError, UnknownLabelError, MissingStanceError, PeriodConfigError,
                   IncompletePredictionsError, EmptyBucketError, StalePredictionsError,
                   FileNotFoundError, ValueError, KeyError)
BACKEND_ERRORS = (BackendError, StanceBackendError, TrainingDivergedError)


class CommandError(ValueError):
    pass


# -- helpers ---------------------------------------------------------------

def _load_dataset(args, cfg):
    space = cfgmod.label_space(cfg)
    path = Path(args.dataset)
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} does not exist")
    examples = load_labeled_dataset(path, args.splits or "train", space)
    if not examples:
        raise CommandError(f"dataset {path} has no rows")
    return examples, space


def _write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False, default=str) + "\n")
    return path


def _atomic_dir(out: Path):
    """Temporary sibling directory that replaces ``out`` on success."""
    out.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))


def _commit_dir(tmp: Path, out: Path):
    if out.exists():
        shutil.rmtree(out)
    os.replace(tmp, out)


def load_model(path):
    """Load a saved classifier of any kind from its checkpoint directory."""
    from .entail import EntailmentClassifier, MultiLabelBaseline
    from .genclf import GenerativeClassifier

    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{path} is not a model checkpoint (no manifest.json)")
    kind = json.loads(manifest_path.read_text())["kind"]
    cls = {"entailment": EntailmentClassifier, "generative": GenerativeClassifier,
           "baseline": MultiLabelBaseline}[kind]
    return kind, cls.load(path)


def _model_fingerprint(args):
    if getattr(args, "fingerprint", None):
        return args.fingerprint
    if getattr(args, "model", None):
        manifest = Path(args.model) / "manifest.json"
        if not manifest.exists():
            raise FileNotFoundError(f"{args.model} is not a model checkpoint (no manifest.json)")
        return json.loads(manifest.read_text())["fingerprint"]
    raise CommandError("pass --model or --fingerprint")


def _stance_backend(name):
    from .stance import LexiconStanceBackend, TransformerStanceBackend

    if name in (None, "lexicon"):
        return LexiconStanceBackend()
    if name == "none":
        return None
    return TransformerStanceBackend(name)


# -- commands --------------------------------------------------------------

def cmd_prepare(args, cfg):
    """Write entailment pairs and instruction examples per split."""
    from .entail import EntailConfig, build_pairs, write_pairs_tsv
    from .genclf import build_prompt, build_target

    examples, space = _load_dataset(args, cfg)
    out = Path(args.out)
    tmp = _atomic_dir(out)
    e = cfg["entail"]
    ecfg = EntailConfig(e["negative_sampling_rate"], e["max_input_length"], cfg["seed"],
                        e["exclude_none_negatives"], e["resample_each_epoch"])
    manifest = RunManifest("prepare", cfg, seeds={"seed": cfg["seed"]})
    manifest.add_input("dataset", args.dataset)
    if args.splits and Path(args.splits).exists():
        manifest.add_input("splits", args.splits)
    counts = {}
    try:
        for split, items in sorted(split_examples(examples).items()):
            pairs = build_pairs(items, ecfg, space=space)
            write_pairs_tsv(pairs, tmp / f"pairs.{split}.tsv")
            with open(tmp / f"instructions.{split}.jsonl", "w", encoding="utf-8") as fh:
                for ex in items:
                    fh.write(json.dumps({"id": ex.id, "input": build_prompt(preprocess(ex.text)),
                                         "target": build_target(ex.labels, space)},
                                        ensure_ascii=False) + "\n")
            counts[split] = {"examples": len(items), "pairs": len(pairs)}
        _commit_dir(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    for f in sorted(out.iterdir()):
        manifest.add_output(f.name, f)
    manifest.extra["counts"] = counts
    manifest.write(out.parent / f"{out.name}.manifest.json")
    print(json.dumps(counts, sort_keys=True))
    return EXIT_OK


def _train(args, cfg, kind):
    from .entail import EntailmentClassifier, MultiLabelBaseline
    from .genclf import GenerativeClassifier

    examples, space = _load_dataset(args, cfg)
    parts = split_examples(examples)
    train, val = parts.get("train", []), parts.get("validation", [])
    if not train:
        raise CommandError("no training-split rows in the dataset")
    if kind == "entailment":
        est = EntailmentClassifier(seed=cfg["seed"], space=space, **cfg["entail"])
    elif kind == "generative":
        g = dict(cfg["gen"])
        g["lora_targets"] = tuple(g["lora_targets"] or ())
        est = GenerativeClassifier(seed=cfg["seed"], space=space, max_steps=args.max_steps,
                                   base_cache_dir=args.base_cache, **g)
    else:
        est = MultiLabelBaseline(seed=cfg["seed"], space=space, **cfg["baseline"])
    if args.max_steps is not None and kind != "generative":
        est.set_params(max_steps=args.max_steps)
    manifest = RunManifest(f"train-{kind}", cfg, seeds={"seed": cfg["seed"]})
    manifest.add_input("dataset", args.dataset)
    fit_kw = {}
    if val:
        fit_kw = {"X_val": [e.text for e in val], "y_val": [e.labels for e in val]}
    if kind == "entailment":
        fit_kw["ids"] = [e.id for e in train]
    est.fit([e.text for e in train], [e.labels for e in train], **fit_kw)
    out = est.save(args.out)
    manifest.outputs["checkpoint"] = {"path": str(out), "fingerprint": est.fingerprint_}
    manifest.extra["history"] = est.history_
    manifest.write(Path(args.out) / "run_manifest.json")
    print(json.dumps({"checkpoint": str(out), "fingerprint": est.fingerprint_}))
    return EXIT_OK


def cmd_train_entail(args, cfg):
    return _train(args, cfg, "entailment")


def cmd_train_gen(args, cfg):
    return _train(args, cfg, "generative")


def cmd_train_baseline(args, cfg):
    return _train(args, cfg, "baseline")


def _predict_inputs(args, cfg):
    if args.tweets:
        return [(t.id, t.text) for t in load_tweet_stream(args.tweets)]
    if args.dataset:
        examples, _ = _load_dataset(args, cfg)
        if args.split:
            examples = [e for e in examples if e.split == args.split]
        return [(e.id, e.text) for e in examples]
    raise CommandError("pass --tweets or --dataset")


def cmd_predict(args, cfg):
    items = _predict_inputs(args, cfg)
    store = PredictionStore(args.store)
    fp = _model_fingerprint(args)
    todo = set(store.missing([i for i, _ in items], fp))
    todo_items = [(i, t) for i, t in items if i in todo]
    n_new = 0
    if todo_items:
        kind, model = load_model(args.model)
        for start in range(0, len(todo_items), args.chunk_size):
            chunk = todo_items[start:start + args.chunk_size]
            labels = model.predict([t for _, t in chunk])
            n_new += store.append(zip([i for i, _ in chunk], labels), kind, fp)
    manifest = RunManifest("predict", cfg)
    manifest.extra.update({"fingerprint": fp, "n_inputs": len(items), "n_new": n_new})
    manifest.write(Path(args.store).with_suffix(".predict-manifest.json"))
    print(json.dumps({"n_inputs": len(items), "n_new": n_new, "fingerprint": fp}))
    return EXIT_OK


def cmd_evaluate(args, cfg):
    from .metrics import evaluate, partial_match_report

    examples, space = _load_dataset(args, cfg)
    if args.split:
        examples = [e for e in examples if e.split == args.split]
    preds = PredictionStore(args.store).require(_model_fingerprint(args))
    missing = [e.id for e in examples if e.id not in preds]
    if missing:
        raise IncompletePredictionsError(
            f"{len(missing)} of {len(examples)} evaluation rows have no prediction (e.g. {missing[0]})")
    gold = [e.labels for e in examples]
    pred = [preds[e.id] for e in examples]
    report = evaluate(gold, pred, space=space, exclude_absent=args.exclude_absent)
    out = report.to_dict()
    out["partial_match"] = partial_match_report(gold, pred)
    if args.out:
        _write_json(args.out, out)
    print(report.table())
    print(json.dumps({k: out[k] for k in ("macro_f1", "weighted_f1", "mean_jaccard")}))
    return EXIT_OK


def cmd_filter_stance(args, cfg):
    from .stance import FilterStats, iter_antivax

    threshold = cfg["stance"]["threshold"]
    backend = _stance_backend(cfg["stance"]["backend"])
    stats = FilterStats(threshold)
    stream = load_tweet_stream(args.tweets)
    scored_path = Path(args.scored_out) if args.scored_out else None
    all_records = []

    def tee(records):
        for r in records:
            all_records.append(r)
            yield r

    kept = list(iter_antivax(tee(stream), threshold, backend, stats, cfg["stance"]["batch_size"]))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_tweet_stream(kept, args.out)
    if scored_path is not None:
        write_tweet_stream(all_records, scored_path)
    manifest = RunManifest("filter-stance", cfg)
    manifest.add_input("tweets", args.tweets)
    manifest.add_output("antivax", args.out)
    manifest.extra["stats"] = vars(stats) if not hasattr(stats, "to_dict") else stats.to_dict()
    manifest.extra["n_skipped_lines"] = stream.n_skipped
    manifest.write(Path(args.out).with_suffix(".manifest.json"))
    print(json.dumps({"n_total": stats.n_total, "n_kept": stats.n_kept, "threshold": threshold}))
    return EXIT_OK


def cmd_analyze(args, cfg):
    from .analysis import build_report, report_to_json

    exclusions = () if args.include_rare else tuple(cfg["analysis"]["exclusions"] or ())
    tweets = list(load_tweet_stream(args.tweets))
    stance_tweets = list(load_tweet_stream(args.stance_tweets)) if args.stance_tweets else None
    preds = PredictionStore(args.store).require(_model_fingerprint(args))
    report = build_report(tweets, preds, cfgmod.periods(cfg), cfgmod.keywords(cfg), exclusions,
                          stance_tweets, cfg["analysis"]["baseline_period"],
                          cfg["analysis"]["series_period"], cfgmod.label_space(cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = report_to_json(report)
    _write_json(out / "report.json", data)
    with open(out / "distributions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bucket", "label", "fraction", "count", "n"])
        for dist in list(report["distributions"].values()) + list(report["cohort_distributions"].values()):
            for r in dist.records():
                w.writerow([r["bucket"], r["label"], repr(r["fraction"]), r["count"], r["n"]])
    with open(out / "monthly.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "month", "fraction"])
        for lab, series in data["monthly_series"].items():
            for row in series:
                w.writerow([lab, row["month"], "" if row["fraction"] is None else repr(row["fraction"])])
    _write_json(out / "cohorts.json", report["cohorts"])
    manifest = RunManifest("analyze", cfg)
    manifest.add_input("tweets", args.tweets)
    for f in ("report.json", "distributions.csv", "monthly.csv", "cohorts.json"):
        manifest.add_output(f, out / f)
    manifest.write(out / "manifest.json")
    for notice in report["notices"]:
        print(f"notice: {notice}", file=sys.stderr)
    for c in report["kl"]:
        print(f"KL({c['p']} || {c['q']}) = {c['kl']:.4f}")
    print(json.dumps(report["cohort_counts"], sort_keys=True))
    return EXIT_OK


def cmd_cohorts(args, cfg):
    from .analysis import find_cohorts, user_period_stances

    base, series = cfg["analysis"]["baseline_period"], cfg["analysis"]["series_period"]
    tweets = load_tweet_stream(args.tweets)
    stances = user_period_stances(tweets, cfgmod.periods(cfg), {base, series})
    cohorts = {k: sorted(v) for k, v in find_cohorts(stances, base, series).items()}
    _write_json(args.out, cohorts)
    print(json.dumps({k: len(v) for k, v in cohorts.items()}, sort_keys=True))
    return EXIT_OK


def cmd_make_synthetic(args, cfg):
    from .corpus import write_labeled_dataset, write_split_manifest
    from .synthetic import make_analysis_corpus, make_labeled_corpus

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labeled = make_labeled_corpus(args.n_labeled, seed=cfg["seed"])
    write_labeled_dataset(labeled, out / "labeled.csv")
    write_split_manifest(labeled, out / "splits.csv")
    pc = make_analysis_corpus(args.n_tweets, seed=cfg["seed"])
    for t in pc.tweets:
        t.stance_scores = t.stance_scores if args.with_stance else None
    write_tweet_stream(pc.tweets, out / "tweets.jsonl")
    print(json.dumps({"labeled": len(labeled), "tweets": len(pc.tweets), "out": str(out)}))
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "train-entail": cmd_train_entail,
    "train-gen": cmd_train_gen,
    "train-baseline": cmd_train_baseline,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "filter-stance": cmd_filter_stance,
    "analyze": cmd_analyze,
    "cohorts": cmd_cohorts,
    "make-synthetic": cmd_make_synthetic,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vaxconcern", description=__doc__)
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--labels", help="label table (TSV) replacing the built-in taxonomy")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def dataset_args(p, required=True):
        p.add_argument("--dataset", required=required, help="labeled CSV (id,text,labels[,explanations])")
        p.add_argument("--splits", help="split manifest (CSV id,split or JSON) or a split name")

    p = sub.add_parser("prepare", help="write entailment pairs and instruction examples")
    dataset_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--negatives", type=int, dest="entail.negative_sampling_rate")

    for name, section in (("train-entail", "entail"), ("train-gen", "gen"), ("train-baseline", "baseline")):
        p = sub.add_parser(name, help=f"train the {section} classifier")
        dataset_args(p)
        p.add_argument("--out", required=True, help="checkpoint directory")
        p.add_argument("--backend", dest=f"{section}.backend",
                       help="'tiny' or a model id / local checkpoint")
        p.add_argument("--epochs", type=int, dest=f"{section}.epochs")
        p.add_argument("--batch-size", type=int, dest=f"{section}.batch_size")
        p.add_argument("--learning-rate", type=float, dest=f"{section}.learning_rate")
        p.add_argument("--max-steps", type=int, help="stop after this many optimizer steps")
        if section == "entail":
            p.add_argument("--negatives", type=int, dest="entail.negative_sampling_rate")
        if section == "gen":
            p.add_argument("--pretrain-steps", type=int, dest="gen.pretrain_steps")
            p.add_argument("--base-cache", help="directory caching warm-started tiny bases")

    p = sub.add_parser("predict", help="classify tweets into the prediction store")
    p.add_argument("--model", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--tweets", help="tweet stream (JSON lines)")
    dataset_args(p, required=False)
    p.add_argument("--split")
    p.add_argument("--chunk-size", type=int, default=256)

    p = sub.add_parser("evaluate", help="score stored predictions against gold labels")
    dataset_args(p)
    p.add_argument("--split", default="test")
    p.add_argument("--store", required=True)
    p.add_argument("--model")
    p.add_argument("--fingerprint")
    p.add_argument("--out")
    p.add_argument("--exclude-absent", action="store_true",
                   help="drop classes absent from gold and predictions from the macro mean")

    p = sub.add_parser("filter-stance", help="keep tweets with anti-vax probability >= threshold")
    p.add_argument("--tweets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scored-out", help="also write every tweet with its stance scores")
    p.add_argument("--threshold", type=float, dest="stance.threshold")
    p.add_argument("--stance-backend", dest="stance.backend",
                   help="'lexicon', 'none' (require precomputed scores) or a classifier path")

    p = sub.add_parser("analyze", help="longitudinal concern report")
    p.add_argument("--tweets", required=True, help="anti-vax tweet stream")
    p.add_argument("--stance-tweets", help="all stance-scored tweets (for cohorts)")
    p.add_argument("--store", required=True)
    p.add_argument("--model")
    p.add_argument("--fingerprint")
    p.add_argument("--out", required=True)
    p.add_argument("--include-rare", action="store_true", help="keep religious and country")

    p = sub.add_parser("cohorts", help="traditional and converted anti-vax users")
    p.add_argument("--tweets", required=True, help="stance-scored tweet stream")
    p.add_argument("--out", required=True)

    p = sub.add_parser("make-synthetic", help="write a synthetic labeled set and tweet stream")
    p.add_argument("--out", required=True)
    p.add_argument("--n-labeled", type=int, default=1000)
    p.add_argument("--n-tweets", type=int, default=10000)
    p.add_argument("--with-stance", action="store_true", help="keep planted stance scores")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        from transformers.utils import logging as hf_logging

        hf_logging.disable_progress_bar()
    except ImportError:
        pass
    overrides = {k: v for k, v in vars(args).items() if "." in k}
    overrides["seed"] = args.seed
    overrides["labels"] = args.labels
    try:
        cfg = cfgmod.load_config(args.config, overrides)
        return COMMANDS[args.command](args, cfg)
    except BACKEND_ERRORS as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except CONTRACT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
