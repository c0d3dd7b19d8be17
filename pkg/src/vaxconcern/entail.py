"""Entailment classifier: score (tweet, label description) pairs and keep the
entailed labels. Also hosts the plain multi-label encoder baseline."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin

from .backends import (
    BackendSpec,
    TrainingDivergedError,
    build_encoder_classifier,
    fingerprint,
    seed_everything,
)
from .corpus import LabeledExample, preprocess
from .labels import LABELS, LabelSpace
from .validation import check_label_sets, check_texts

logger = logging.getLogger(__name__)

ENTAILMENT, CONTRADICTION = 0, 1


@dataclass(frozen=True)
class EntailmentPair:
    premise: str
    hypothesis: str
    target: int
    source_id: str


@dataclass
class EntailConfig:
    negative_sampling_rate: int = 7
    max_input_length: int = 128
    seed: int = 0
    exclude_none_negatives: bool = False
    resample_each_epoch: bool = False

    def __post_init__(self):
        if self.negative_sampling_rate < 0:
            raise ValueError("negative_sampling_rate must be >= 0")


def example_rng(seed: int, example_id: str, epoch: int = 0) -> np.random.Generator:
    """Per-example generator derived from (seed, id[, epoch])."""
    h = int.from_bytes(hashlib.sha256(str(example_id).encode("utf-8")).digest()[:8], "big")
    return np.random.default_rng([int(seed), h, int(epoch)])


def build_training_pairs(example: LabeledExample, config: EntailConfig, rng=None,
                         space: LabelSpace = LABELS, clean: bool = True) -> list[EntailmentPair]:
    """Positive pairs for every gold label, then sampled negative pairs."""
    gold = space.validate(example.labels)
    if rng is None:
        rng = example_rng(config.seed, example.id)
    premise = preprocess(example.text) if clean else example.text
    pairs = [EntailmentPair(premise, space.description_of(lab), ENTAILMENT, example.id)
             for lab in space.sort(gold)]
    candidates = [lab for lab in space.names if lab not in gold]
    if config.exclude_none_negatives:
        candidates = [lab for lab in candidates if lab != space.none_label]
    k = min(config.negative_sampling_rate, len(candidates))
    if k:
        picks = rng.choice(len(candidates), size=k, replace=False)
        pairs += [EntailmentPair(premise, space.description_of(candidates[i]), CONTRADICTION, example.id)
                  for i in picks]
    return pairs


def build_pairs(examples, config: EntailConfig, epoch: int = 0, space: LabelSpace = LABELS):
    out = []
    for ex in examples:
        rng = example_rng(config.seed, ex.id, epoch if config.resample_each_epoch else 0)
        out += build_training_pairs(ex, config, rng, space)
    return out


def write_pairs_tsv(pairs, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["source_id", "premise", "hypothesis", "target"])
        for p in pairs:
            w.writerow([p.source_id, p.premise, p.hypothesis, p.target])
    return path


def read_pairs_tsv(path) -> list[EntailmentPair]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [EntailmentPair(r["premise"], r["hypothesis"], int(r["target"]), r["source_id"])
                for r in csv.DictReader(fh, delimiter="\t")]


class TextPairScorer:
    """Encoder with a two-way head; ``predict_proba`` gives P(entailment)."""

    def __init__(self, model, tokenizer, max_input_length: int = 128, backend_id: str = "tiny"):
        self.model = model
        self.tokenizer = tokenizer
        self.max_input_length = max_input_length
        self.backend_id = backend_id

    def encode(self, premises, hypotheses):
        # the premise is truncated, never the hypothesis
        return self.tokenizer(list(premises), list(hypotheses), truncation="only_first",
                              max_length=self.max_input_length, padding=True, return_tensors="pt")

    def logits(self, premises, hypotheses):
        return self.model(**self.encode(premises, hypotheses)).logits

    def predict_proba(self, premises, hypotheses, batch_size: int = 64) -> np.ndarray:
        self.model.eval()
        out = []
        with torch.no_grad():
            for i in range(0, len(premises), batch_size):
                lg = self.logits(premises[i:i + batch_size], hypotheses[i:i + batch_size])
                out.append(torch.softmax(lg, dim=-1)[:, ENTAILMENT].numpy())
        return np.concatenate(out) if out else np.zeros(0)

    def state(self):
        return {k: v.detach().clone() for k, v in self.model.state_dict().items()}

    def load_state(self, state):
        self.model.load_state_dict(state)


def default_learning_rate(spec: BackendSpec) -> float:
    return 5e-4 if spec.is_tiny else 2e-5


def _train_loop(model, make_batches, epochs, lr, max_steps, seed, on_epoch_end=None):
    seed_everything(seed)
    opt = torch.optim.AdamW(model.parameters(), lr=lr)
    step, history, t0 = 0, [], time.time()
    for epoch in range(epochs):
        model.train()
        losses = []
        for batch_loss in make_batches(epoch):
            if max_steps is not None and step >= max_steps:
                break
            loss = batch_loss()
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch} step {step}: {loss.item()}")
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
            opt.step()
            losses.append(loss.item())
            step += 1
        entry = {"epoch": epoch, "steps": step, "loss": float(np.mean(losses)) if losses else None,
                 "seconds": time.time() - t0}
        if on_epoch_end is not None:
            entry.update(on_epoch_end(epoch))
        logger.info("epoch %s", entry)
        history.append(entry)
        if max_steps is not None and step >= max_steps:
            break
    model.eval()
    return history


def train_scorer(pairs, backend="tiny", config: EntailConfig | None = None, epochs: int = 3,
                 batch_size: int = 16, learning_rate: float | None = None, max_steps=None,
                 scorer: TextPairScorer | None = None, validate=None, pair_source=None):
    """Fine-tune a pair scorer.

    ``validate(scorer) -> float`` (validation macro-F1 of induced label
    sets) selects the best epoch; without it the last epoch is kept.
    ``pair_source(epoch)`` overrides ``pairs`` per epoch (fresh negatives).
    """
    config = config or EntailConfig()
    spec = BackendSpec.coerce(backend)
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no training pairs")
    if scorer is None:
        texts = [p.premise for p in pairs] + sorted({p.hypothesis for p in pairs})
        model, tok = build_encoder_classifier(spec, 2, texts, seed=config.seed)
        scorer = TextPairScorer(model, tok, config.max_input_length, spec.name)
    lr = learning_rate if learning_rate is not None else default_learning_rate(spec)
    rng = np.random.default_rng(config.seed)

    def make_batches(epoch):
        data = pair_source(epoch) if pair_source is not None else pairs
        order = rng.permutation(len(data))
        for i in range(0, len(order), batch_size):
            chunk = [data[j] for j in order[i:i + batch_size]]

            def batch_loss(chunk=chunk):
                lg = scorer.logits([p.premise for p in chunk], [p.hypothesis for p in chunk])
                y = torch.tensor([p.target for p in chunk])
                return torch.nn.functional.cross_entropy(lg, y)
            yield batch_loss

    best = {}

    def on_epoch_end(epoch):
        if validate is None:
            return {}
        score = validate(scorer)
        if not best or score > best["score"]:
            best.update(score=score, epoch=epoch, state=scorer.state())
        return {"val_macro_f1": score}

    scorer.history = _train_loop(scorer.model, make_batches, epochs, lr, max_steps, config.seed,
                                 on_epoch_end)
    if best:
        scorer.load_state(best["state"])
        scorer.best_epoch = best["epoch"]
    return scorer


def labels_from_proba(proba: np.ndarray, threshold: float = 0.5, space: LabelSpace = LABELS):
    """Label sets from an (n, n_labels) probability matrix: keep p > threshold."""
    proba = np.asarray(proba)
    return [space.postprocess(space.names[j] for j in np.flatnonzero(row > threshold))
            for row in proba]


class EntailmentClassifier(BaseEstimator, ClassifierMixin):
    """Multi-label classifier that scans every label description as a hypothesis."""

    def __init__(self, backend="tiny", negative_sampling_rate=7, max_input_length=128, epochs=3,
                 batch_size=16, learning_rate=None, threshold=0.5, exclude_none_negatives=False,
                 resample_each_epoch=False, max_steps=None, seed=0, space=LABELS):
        self.backend = backend
        self.negative_sampling_rate = negative_sampling_rate
        self.max_input_length = max_input_length
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.threshold = threshold
        self.exclude_none_negatives = exclude_none_negatives
        self.resample_each_epoch = resample_each_epoch
        self.max_steps = max_steps
        self.seed = seed
        self.space = space

    def _config(self):
        return EntailConfig(self.negative_sampling_rate, self.max_input_length, self.seed,
                            self.exclude_none_negatives, self.resample_each_epoch)

    def fit(self, X, y, X_val=None, y_val=None, ids=None):
        X = check_texts(X)
        y = check_label_sets(y, len(X), self.space)
        ids = [str(i) for i in range(len(X))] if ids is None else [str(i) for i in ids]
        examples = [LabeledExample(i, t, s) for i, t, s in zip(ids, X, y)]
        config = self._config()
        pairs = build_pairs(examples, config, space=self.space)
        validate = None
        if X_val is not None:
            from .metrics import evaluate

            gold_val = check_label_sets(y_val, len(X_val), self.space)

            def validate(scorer):
                self.scorer_ = scorer
                return evaluate(gold_val, self.predict(X_val)).macro_f1
        source = (lambda ep: build_pairs(examples, config, ep, self.space)) if self.resample_each_epoch else None
        self.scorer_ = train_scorer(pairs, self.backend, config, self.epochs, self.batch_size,
                                    self.learning_rate, self.max_steps, validate=validate,
                                    pair_source=source)
        self.history_ = self.scorer_.history
        self.n_pairs_ = len(pairs)
        self.fingerprint_ = fingerprint({"params": self._param_record(), "train": fingerprint(
            [[i, t, sorted(s)] for i, t, s in zip(ids, X, y)])})
        return self

    def predict_proba(self, X) -> np.ndarray:
        """(n_tweets, n_labels) entailment probabilities, columns in canonical order."""
        X = check_texts(X)
        premises = [preprocess(t) for t in X]
        hyps = list(self.space.descriptions)
        flat_p = [p for p in premises for _ in hyps]
        flat_h = hyps * len(premises)
        return self.scorer_.predict_proba(flat_p, flat_h).reshape(len(X), len(hyps))

    def predict(self, X) -> list[frozenset]:
        return labels_from_proba(self.predict_proba(X), self.threshold, self.space)

    def score(self, X, y, sample_weight=None):
        from .metrics import evaluate

        return evaluate(check_label_sets(y, len(X), self.space), self.predict(X)).macro_f1

    def _param_record(self):
        rec = self.get_params()
        rec.pop("space")
        rec["backend"] = BackendSpec.coerce(self.backend).to_dict()
        rec["labels"] = self.space.names
        return rec

    def save(self, path) -> Path:
        return _save_encoder(self, path, "entailment")

    @classmethod
    def load(cls, path, space: LabelSpace = LABELS):
        clf, model, tok, manifest = _load_encoder(cls, path, space)
        clf.scorer_ = TextPairScorer(model, tok, clf.max_input_length, manifest["params"]["backend"]["name"])
        return clf


class MultiLabelBaseline(BaseEstimator, ClassifierMixin):
    """Encoder with independent sigmoid outputs per label; threshold then post-process."""

    def __init__(self, backend="tiny", max_input_length=128, epochs=5, batch_size=16,
                 learning_rate=None, threshold=0.5, max_steps=None, seed=0, space=LABELS):
        self.backend = backend
        self.max_input_length = max_input_length
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.threshold = threshold
        self.max_steps = max_steps
        self.seed = seed
        self.space = space

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_texts(X)
        y = check_label_sets(y, len(X), self.space)
        spec = BackendSpec.coerce(self.backend)
        cleaned = [preprocess(t) for t in X]
        self.model_, self.tokenizer_ = build_encoder_classifier(
            spec, len(self.space), cleaned, multi_label=True, seed=self.seed)
        targets = torch.tensor(self.space.to_indicator(y), dtype=torch.float32)
        rng = np.random.default_rng(self.seed)
        lr = self.learning_rate if self.learning_rate is not None else default_learning_rate(spec)

        def make_batches(epoch):
            order = rng.permutation(len(cleaned))
            for i in range(0, len(order), self.batch_size):
                idx = order[i:i + self.batch_size]

                def batch_loss(idx=idx):
                    logits = self._logits([cleaned[j] for j in idx])
                    return torch.nn.functional.binary_cross_entropy_with_logits(logits, targets[idx])
                yield batch_loss

        best = {}

        def on_epoch_end(epoch):
            if X_val is None:
                return {}
            from .metrics import evaluate

            score = evaluate(check_label_sets(y_val, len(X_val), self.space), self.predict(X_val)).macro_f1
            if not best or score > best["score"]:
                best.update(score=score, state={k: v.clone() for k, v in self.model_.state_dict().items()})
            return {"val_macro_f1": score}

        self.history_ = _train_loop(self.model_, make_batches, self.epochs, lr, self.max_steps,
                                    self.seed, on_epoch_end)
        if best:
            self.model_.load_state_dict(best["state"])
        self.fingerprint_ = fingerprint({"params": self._param_record(), "train": fingerprint(
            [[t, sorted(s)] for t, s in zip(X, y)])})
        return self

    def _logits(self, cleaned):
        enc = self.tokenizer_(list(cleaned), truncation=True, max_length=self.max_input_length,
                              padding=True, return_tensors="pt")
        return self.model_(**enc).logits

    def predict_proba(self, X, batch_size: int = 64) -> np.ndarray:
        X = check_texts(X)
        self.model_.eval()
        out = []
        with torch.no_grad():
            for i in range(0, len(X), batch_size):
                out.append(torch.sigmoid(self._logits([preprocess(t) for t in X[i:i + batch_size]])).numpy())
        return np.concatenate(out) if out else np.zeros((0, len(self.space)))

    def predict(self, X) -> list[frozenset]:
        return labels_from_proba(self.predict_proba(X), self.threshold, self.space)

    def score(self, X, y, sample_weight=None):
        from .metrics import evaluate

        return evaluate(check_label_sets(y, len(X), self.space), self.predict(X)).macro_f1

    _param_record = EntailmentClassifier._param_record

    def save(self, path) -> Path:
        return _save_encoder(self, path, "baseline")

    @classmethod
    def load(cls, path, space: LabelSpace = LABELS):
        clf, model, tok, _ = _load_encoder(cls, path, space)
        clf.model_, clf.tokenizer_ = model, tok
        return clf


def _save_encoder(clf, path, kind) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    model, tok = (clf.scorer_.model, clf.scorer_.tokenizer) if kind == "entailment" else \
        (clf.model_, clf.tokenizer_)
    model.save_pretrained(path / "model")
    tok.save_pretrained(path / "model")
    manifest = {"kind": kind, "params": clf._param_record(), "fingerprint": clf.fingerprint_,
                "history": clf.history_}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return path


def _load_encoder(cls, path, space):
    from transformers import AutoModelForSequenceClassification, AutoTokenizer

    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    params = dict(manifest["params"])
    params.pop("labels", None)
    clf = cls(space=space, **params)
    model = AutoModelForSequenceClassification.from_pretrained(path / "model")
    model.eval()
    tok = AutoTokenizer.from_pretrained(path / "model")
    clf.fingerprint_ = manifest["fingerprint"]
    clf.history_ = manifest["history"]
    return clf, model, tok, manifest

