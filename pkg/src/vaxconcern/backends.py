"""Transformer backends shared by the classifiers.

A backend is named either by a Hugging Face checkpoint (hub id or local
directory) or by ``"tiny"``, which builds a small randomly initialised
model plus a byte-level BPE tokenizer trained on the supplied texts.
Tiny models make every code path runnable offline on a CPU.
"""
from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

logger = logging.getLogger(__name__)

TINY = "tiny"


class BackendError(RuntimeError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class BackendSpec:
    name: str = TINY
    vocab_size: int = 4000
    d_model: int = 256
    num_layers: int = 4
    num_heads: int = 4
    d_ff: int = 1024
    dropout: float = 0.1

    @property
    def is_tiny(self) -> bool:
        return self.name == TINY

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def coerce(cls, value) -> "BackendSpec":
        if isinstance(value, cls):
            return value
        if isinstance(value, dict):
            return cls(**value)
        return cls(name=str(value))


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def fingerprint(obj) -> str:
    """Stable short content hash of JSON-serialisable data or raw bytes."""
    if not isinstance(obj, bytes):
        obj = json.dumps(obj, sort_keys=True, ensure_ascii=False, default=str).encode("utf-8")
    return hashlib.sha256(obj).hexdigest()[:16]


SPECIAL_TOKENS = {"pad_token": "<pad>", "eos_token": "</s>", "unk_token": "<unk>",
                  "cls_token": "<cls>", "sep_token": "<sep>", "mask_token": "<mask>"}
N_SENTINELS = 16


def train_tokenizer(texts, vocab_size: int = 4000, kind: str = "seq2seq"):
    """Byte-level BPE tokenizer trained on ``texts`` (lossless round trip).

    ``kind="seq2seq"`` appends ``</s>`` to every sequence; ``kind="encoder"``
    wraps inputs as ``<cls> A <sep> [B <sep>]``.
    """
    from tokenizers import Tokenizer, decoders, models, pre_tokenizers, processors, trainers
    from transformers import PreTrainedTokenizerFast

    sentinels = [f"<extra_id_{i}>" for i in range(N_SENTINELS)]
    specials = list(SPECIAL_TOKENS.values()) + sentinels
    tok = Tokenizer(models.BPE())
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(vocab_size=vocab_size, special_tokens=specials,
                                  initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
                                  show_progress=False)
    tok.train_from_iterator(list(texts), trainer)
    ids = {t: tok.token_to_id(t) for t in specials}
    if kind == "seq2seq":
        tok.post_processor = processors.TemplateProcessing(
            single="$A </s>", pair="$A $B:1 </s>:1", special_tokens=[("</s>", ids["</s>"])])
    else:
        tok.post_processor = processors.TemplateProcessing(
            single="<cls> $A <sep>", pair="<cls> $A <sep> $B:1 <sep>:1",
            special_tokens=[("<cls>", ids["<cls>"]), ("<sep>", ids["<sep>"])])
    fast = PreTrainedTokenizerFast(tokenizer_object=tok, additional_special_tokens=sentinels,
                                   **SPECIAL_TOKENS)
    return fast


def load_tokenizer(path):
    from transformers import AutoTokenizer

    return AutoTokenizer.from_pretrained(str(path))


def _load_pretrained(loader, name, **kwargs):
    try:
        return loader.from_pretrained(name, **kwargs)
    except Exception as exc:  # noqa: BLE001
        raise BackendError(f"cannot load backend {name!r}: {exc}") from exc


def build_encoder_classifier(spec: BackendSpec, num_labels: int, texts=(), multi_label=False,
                             seed: int = 0):
    """An encoder with a linear classification head over ``num_labels`` outputs."""
    from transformers import AutoModelForSequenceClassification, AutoTokenizer, BertConfig, \
        BertForSequenceClassification

    problem = "multi_label_classification" if multi_label else "single_label_classification"
    if not spec.is_tiny:
        tok = _load_pretrained(AutoTokenizer, spec.name)
        model = _load_pretrained(AutoModelForSequenceClassification, spec.name,
                                 num_labels=num_labels, problem_type=problem)
        return model, tok
    tok = train_tokenizer(texts, spec.vocab_size, kind="encoder")
    seed_everything(seed)
    config = BertConfig(vocab_size=len(tok), hidden_size=spec.d_model,
                        num_hidden_layers=spec.num_layers, num_attention_heads=spec.num_heads,
                        intermediate_size=spec.d_ff, max_position_embeddings=512,
                        hidden_dropout_prob=spec.dropout, attention_probs_dropout_prob=spec.dropout,
                        pad_token_id=tok.pad_token_id, num_labels=num_labels, problem_type=problem)
    return BertForSequenceClassification(config), tok


def build_seq2seq(spec: BackendSpec, texts=(), seed: int = 0):
    """A T5-style encoder-decoder and its tokenizer."""
    from transformers import AutoModelForSeq2SeqLM, AutoTokenizer, T5Config, \
        T5ForConditionalGeneration

    if not spec.is_tiny:
        tok = _load_pretrained(AutoTokenizer, spec.name)
        model = _load_pretrained(AutoModelForSeq2SeqLM, spec.name)
        return model, tok
    tok = train_tokenizer(texts, spec.vocab_size, kind="seq2seq")
    seed_everything(seed)
    config = T5Config(vocab_size=len(tok), d_model=spec.d_model, d_kv=spec.d_model // spec.num_heads,
                      d_ff=spec.d_ff, num_layers=spec.num_layers,
                      num_decoder_layers=spec.num_layers, num_heads=spec.num_heads,
                      dropout_rate=spec.dropout, pad_token_id=tok.pad_token_id,
                      eos_token_id=tok.eos_token_id, decoder_start_token_id=tok.pad_token_id,
                      feed_forward_proj="relu", tie_word_embeddings=True)
    return T5ForConditionalGeneration(config), tok


def span_corrupt(ids: list[int], rng: np.random.Generator, sentinel_ids: list[int],
                 noise_density: float = 0.15, mean_span: float = 3.0):
    """T5-style span corruption of a token id list; returns (inputs, targets)."""
    n = len(ids)
    n_noise = max(1, int(round(n * noise_density)))
    n_spans = max(1, min(len(sentinel_ids), int(round(n_noise / mean_span))))
    mask = np.zeros(n, dtype=bool)
    starts = np.sort(rng.choice(n, size=min(n_spans, n), replace=False))
    span_len = max(1, int(round(n_noise / len(starts))))
    for s in starts:
        mask[s:s + span_len] = True
    inputs, targets, k, i = [], [], 0, 0
    while i < n:
        if mask[i]:
            sid = sentinel_ids[min(k, len(sentinel_ids) - 1)]
            inputs.append(sid)
            targets.append(sid)
            while i < n and mask[i]:
                targets.append(ids[i])
                i += 1
            k += 1
        else:
            inputs.append(ids[i])
            i += 1
    return inputs, targets


def pretrain_denoiser(model, tokenizer, texts, steps: int = 600, batch_size: int = 16,
                      lr: float = 2e-3, max_len: int = 96, seed: int = 0, log_every: int = 100):
    """Warm-start a scratch seq2seq model with span corruption plus reconstruction.

    Stands in for the unsupervised pre-training a published checkpoint
    would already have. Only unlabeled text is used.
    """
    rng = np.random.default_rng(seed)
    seed_everything(seed)
    sentinels = [tokenizer.convert_tokens_to_ids(f"<extra_id_{i}>") for i in range(N_SENTINELS)]
    encoded = [tokenizer(t, add_special_tokens=False, truncation=True, max_length=max_len)["input_ids"]
               for t in texts]
    encoded = [e for e in encoded if e]
    eos, pad = tokenizer.eos_token_id, tokenizer.pad_token_id
    opt = torch.optim.AdamW(model.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: min(1.0, (s + 1) / 50) * max(0.05, 1 - s / steps))
    model.train()
    for step in range(steps):
        batch_in, batch_out = [], []
        for j in rng.integers(len(encoded), size=batch_size):
            ids = encoded[j]
            if rng.random() < 0.5:
                src, tgt = span_corrupt(ids, rng, sentinels)
            else:
                # full reconstruction from a lightly shuffled/dropped copy
                keep = [t for t in ids if rng.random() > 0.1] or ids
                src, tgt = keep, ids
            batch_in.append(src[:max_len] + [eos])
            batch_out.append(tgt[:max_len] + [eos])
        loss = _seq2seq_loss(model, batch_in, batch_out, pad)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(f"non-finite pre-training loss at step {step}")
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        opt.step()
        sched.step()
        if log_every and (step + 1) % log_every == 0:
            logger.info("pretrain step %d/%d loss %.4f", step + 1, steps, loss.item())
    model.eval()
    return model


def pad_batch(seqs, pad_id):
    width = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(seqs), width), dtype=torch.long)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = torch.tensor(s, dtype=torch.long)
        mask[i, :len(s)] = 1
    return ids, mask


def _seq2seq_loss(model, batch_in, batch_out, pad_id):
    ids, mask = pad_batch(batch_in, pad_id)
    labels, _ = pad_batch(batch_out, pad_id)
    labels[labels == pad_id] = -100
    return model(input_ids=ids, attention_mask=mask, labels=labels).loss


def count_parameters(model, trainable_only=False) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)
