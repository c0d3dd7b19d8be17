"""Generative classifier: a seq2seq model writes label descriptions, which are
segmented and matched back to concern labels."""
from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin

from .backends import (
    BackendSpec,
    TrainingDivergedError,
    build_seq2seq,
    count_parameters,
    fingerprint,
    pretrain_denoiser,
    seed_everything,
)
from .corpus import preprocess
from .labels import LABELS, LabelSpace
from .matching import DescriptionMatcher, ZeroNormEmbeddingError, split_generated
from .validation import check_label_sets, check_texts

logger = logging.getLogger(__name__)

PROMPT_HEADER = (
    "Instruction: First read the task description. There could be multiple categories for a tweet.\n"
    "Task: Multi-label Text Classification\n"
    "Description: Generate label description for the given text.\n"
)


def build_prompt(cleaned_text: str) -> str:
    """Instruction prompt for one cleaned tweet."""
    if not cleaned_text:
        logger.warning("building a prompt for an empty tweet")
    return PROMPT_HEADER + cleaned_text


def build_target(labels, space: LabelSpace = LABELS) -> str:
    """Canonical descriptions of ``labels`` in canonical order, space separated."""
    return " ".join(space.description_of(lab) for lab in space.sort(labels))


def _base_cache_key(spec: BackendSpec, texts, steps: int, seed: int) -> str:
    return fingerprint({"spec": spec.to_dict(), "texts": fingerprint("\n".join(texts)),
                        "steps": steps, "seed": seed})


def build_generator_base(spec: BackendSpec, texts, pretrain_steps: int, seed: int = 0,
                         cache_dir=None, space: LabelSpace = LABELS):
    """Base seq2seq model and tokenizer.

    Tiny backends are built from scratch and warm-started on unlabeled
    text (tweets plus the label descriptions, which the model must be
    able to spell out). With ``cache_dir`` the warm-started base is
    reused across fits with identical inputs.
    """
    from transformers import AutoTokenizer, T5ForConditionalGeneration

    if not spec.is_tiny:
        return build_seq2seq(spec)
    corpus = list(texts) + list(space.descriptions) * 10
    cached = None
    if cache_dir is not None:
        cached = Path(cache_dir) / _base_cache_key(spec, corpus, pretrain_steps, seed)
        if (cached / "config.json").exists():
            logger.info("reusing warm-started base %s", cached)
            return (T5ForConditionalGeneration.from_pretrained(cached),
                    AutoTokenizer.from_pretrained(cached))
    model, tok = build_seq2seq(spec, corpus + [PROMPT_HEADER] * 20, seed=seed)
    if pretrain_steps:
        pretrain_denoiser(model, tok, corpus, steps=pretrain_steps, seed=seed)
    if cached is not None:
        model.save_pretrained(cached)
        tok.save_pretrained(cached)
    return model, tok


class GenerativeClassifier(BaseEstimator, ClassifierMixin):
    """Multi-label classifier that generates label descriptions.

    Training fine-tunes rank-``lora_rank`` adapters on a frozen base to
    emit :func:`build_target` for each prompt. Prediction decodes
    greedily, splits the output into sentences and maps each to the
    nearest canonical description.
    """

    def __init__(self, backend="tiny", lora_rank=2, lora_alpha=128,
                 lora_targets=("q", "k", "v", "o"), epochs=5, batch_size=8, learning_rate=5e-4,
                 max_input_tokens=128, max_output_tokens=50, num_beams=1, embedder="tfidf",
                 min_similarity=None, pretrain_steps=600, base_cache_dir=None, max_steps=None,
                 seed=0, space=LABELS):
        self.backend = backend
        self.lora_rank = lora_rank
        self.lora_alpha = lora_alpha
        self.lora_targets = lora_targets
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_input_tokens = max_input_tokens
        self.max_output_tokens = max_output_tokens
        self.num_beams = num_beams
        self.embedder = embedder
        self.min_similarity = min_similarity
        self.pretrain_steps = pretrain_steps
        self.base_cache_dir = base_cache_dir
        self.max_steps = max_steps
        self.seed = seed
        self.space = space

    # -- training ----------------------------------------------------------

    def fit(self, X, y, X_val=None, y_val=None):
        from peft import LoraConfig, get_peft_model

        X = check_texts(X)
        y = check_label_sets(y, len(X), self.space)
        seed_everything(self.seed)
        spec = BackendSpec.coerce(self.backend)
        cleaned = [preprocess(t) for t in X]
        base, tok = build_generator_base(spec, cleaned, self.pretrain_steps, self.seed,
                                         self.base_cache_dir, self.space)
        targets = list(self.lora_targets) if self.lora_targets else None
        cfg = LoraConfig(r=self.lora_rank, lora_alpha=self.lora_alpha, target_modules=targets,
                         lora_dropout=0.0, task_type="SEQ_2_SEQ_LM")
        model = get_peft_model(base, cfg)
        self.n_trainable_ = count_parameters(model, trainable_only=True)
        self.n_parameters_ = count_parameters(model)
        self.adapter_ratio_ = self.n_trainable_ / self.n_parameters_
        self.model_, self.tokenizer_ = model, tok
        self.matcher_ = DescriptionMatcher(self.embedder, self.space, self.min_similarity).fit()

        prompts = [build_prompt(t) for t in cleaned]
        outputs = [build_target(s, self.space) for s in y]
        opt = torch.optim.AdamW([p for p in model.parameters() if p.requires_grad],
                                lr=self.learning_rate)
        n_batches = -(-len(prompts) // self.batch_size)
        total = n_batches * self.epochs
        if self.max_steps is not None:
            total = min(total, self.max_steps)
        # linear decay to zero, as in the usual seq2seq fine-tuning recipe
        sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: max(0.0, 1 - s / max(total, 1)))
        rng = np.random.default_rng(self.seed)
        best, self.history_ = None, []
        step, t0 = 0, time.time()
        for epoch in range(self.epochs):
            model.train()
            order = rng.permutation(len(prompts))
            losses = []
            for i in range(0, len(order), self.batch_size):
                if self.max_steps is not None and step >= self.max_steps:
                    break
                idx = order[i:i + self.batch_size]
                loss = self._loss([prompts[j] for j in idx], [outputs[j] for j in idx])
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(f"non-finite loss at epoch {epoch} step {step}")
                opt.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_([p for p in model.parameters() if p.requires_grad], 1.0)
                opt.step()
                sched.step()
                losses.append(loss.item())
                step += 1
            entry = {"epoch": epoch, "steps": step, "loss": float(np.mean(losses)) if losses else None,
                     "seconds": time.time() - t0}
            if X_val is not None:
                from .metrics import evaluate

                entry["val_macro_f1"] = evaluate(check_label_sets(y_val, len(X_val), self.space),
                                                 self.predict(X_val)).macro_f1
                if best is None or entry["val_macro_f1"] > best[0]:
                    best = (entry["val_macro_f1"], epoch, self._adapter_state())
            logger.info("generator epoch %s", entry)
            self.history_.append(entry)
            if self.max_steps is not None and step >= self.max_steps:
                break
        if best is not None:
            self._load_adapter_state(best[2])
            self.best_epoch_ = best[1]
        model.eval()
        self.fingerprint_ = fingerprint({"params": self._param_record(), "train": fingerprint(
            [[t, sorted(s)] for t, s in zip(X, y)])})
        return self

    def _loss(self, prompts, targets):
        tok = self.tokenizer_
        enc = tok(prompts, truncation=True, max_length=self.max_input_tokens, padding=True,
                  return_tensors="pt")
        labels = tok(targets, truncation=True, max_length=self.max_output_tokens, padding=True,
                     return_tensors="pt")["input_ids"]
        labels[labels == tok.pad_token_id] = -100
        return self.model_(**enc, labels=labels).loss

    def _adapter_state(self):
        return {k: v.detach().clone() for k, v in self.model_.named_parameters() if v.requires_grad}

    def _load_adapter_state(self, state):
        params = dict(self.model_.named_parameters())
        with torch.no_grad():
            for k, v in state.items():
                params[k].copy_(v)

    def _param_record(self):
        rec = self.get_params()
        rec.pop("space")
        rec["backend"] = BackendSpec.coerce(self.backend).to_dict()
        rec["lora_targets"] = list(self.lora_targets or [])
        rec.pop("base_cache_dir")
        rec["labels"] = self.space.names
        return rec

    # -- inference ---------------------------------------------------------

    def generate(self, X, batch_size: int = 32) -> list[str]:
        """Raw generated description text per tweet."""
        X = check_texts(X)
        self.model_.eval()
        out = []
        with torch.no_grad():
            for i in range(0, len(X), batch_size):
                prompts = [build_prompt(preprocess(t)) for t in X[i:i + batch_size]]
                enc = self.tokenizer_(prompts, truncation=True, max_length=self.max_input_tokens,
                                      padding=True, return_tensors="pt")
                gen = self.model_.generate(**enc, max_new_tokens=self.max_output_tokens,
                                           num_beams=self.num_beams, do_sample=False)
                out += self.tokenizer_.batch_decode(gen, skip_special_tokens=True)
        return out

    def labels_from_text(self, generated: str) -> dict:
        """Segment, match and post-process one generated string."""
        segments = split_generated(generated)
        matches, labels = [], set()
        for seg in segments:
            try:
                lab, sim = self.matcher_.match(seg)
            except ZeroNormEmbeddingError:
                logger.warning("skipping segment with no usable embedding: %r", seg)
                matches.append((seg, None, 0.0))
                continue
            matches.append((seg, lab, sim))
            if lab is not None:
                labels.add(lab)
        return {"generated": generated, "segments": segments, "matches": matches,
                "labels": self.space.postprocess(labels)}

    def predict_trace(self, X) -> list[dict]:
        return [self.labels_from_text(g) for g in self.generate(X)]

    def predict(self, X) -> list[frozenset]:
        return [t["labels"] for t in self.predict_trace(X)]

    def score(self, X, y, sample_weight=None):
        from .metrics import evaluate

        return evaluate(check_label_sets(y, len(X), self.space), self.predict(X)).macro_f1

    # -- persistence -------------------------------------------------------

    def save(self, path) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        base = self.model_.get_base_model()
        # adapters are kept separate from the (frozen) base weights
        self.model_.save_pretrained(path / "adapter")
        with torch.no_grad():
            merged_state = {k: v for k, v in base.state_dict().items() if "lora_" not in k}
        torch.save(merged_state, path / "base_state.pt")
        base.config.save_pretrained(path / "base")
        self.tokenizer_.save_pretrained(path / "base")
        manifest = {"kind": "generative", "params": self._param_record(),
                    "fingerprint": self.fingerprint_, "history": self.history_,
                    "adapter_ratio": self.adapter_ratio_, "n_trainable": self.n_trainable_}
        (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
        return path

    @classmethod
    def load(cls, path, space: LabelSpace = LABELS) -> "GenerativeClassifier":
        from peft import LoraConfig, get_peft_model
        from transformers import AutoConfig, AutoModelForSeq2SeqLM, AutoTokenizer

        path = Path(path)
        manifest = json.loads((path / "manifest.json").read_text())
        params = dict(manifest["params"])
        params.pop("labels", None)
        params["lora_targets"] = tuple(params["lora_targets"])
        clf = cls(space=space, **params)
        config = AutoConfig.from_pretrained(path / "base")
        base = AutoModelForSeq2SeqLM.from_config(config)
        state = torch.load(path / "base_state.pt")
        cfg = LoraConfig.from_pretrained(path / "adapter")
        model = get_peft_model(base, cfg)
        model.get_base_model().load_state_dict(state, strict=False)
        from peft import set_peft_model_state_dict
        from safetensors.torch import load_file

        set_peft_model_state_dict(model, load_file(path / "adapter" / "adapter_model.safetensors"))
        model.eval()
        clf.model_, clf.tokenizer_ = model, AutoTokenizer.from_pretrained(path / "base")
        clf.matcher_ = DescriptionMatcher(clf.embedder, space, clf.min_similarity).fit()
        clf.fingerprint_ = manifest["fingerprint"]
        clf.history_ = manifest["history"]
        clf.adapter_ratio_ = manifest["adapter_ratio"]
        clf.n_trainable_ = manifest["n_trainable"]
        return clf
