"""Anti-vax filtering with a pluggable three-way stance backend."""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Protocol, Sequence

import numpy as np

logger = logging.getLogger(__name__)

STANCES = ("anti", "pro", "neutral")
ANTIVAX_THRESHOLD = 0.8


class StanceBackendError(RuntimeError):
    pass


class MissingStanceError(ValueError):
    pass


@dataclass(frozen=True)
class StanceScores:
    anti: float
    pro: float
    neutral: float

    def __post_init__(self):
        vals = (self.anti, self.pro, self.neutral)
        if not all(math.isfinite(v) and 0.0 <= v <= 1.0 for v in vals):
            raise ValueError(f"stance probabilities must lie in [0, 1]: {vals}")
        if abs(sum(vals) - 1.0) > 1e-6:
            raise ValueError(f"stance probabilities must sum to 1: {vals}")

    @classmethod
    def from_raw(cls, values: Sequence[float]) -> "StanceScores":
        """Normalize three non-negative scores so they sum to one."""
        arr = np.asarray(values, dtype=float)
        if arr.shape != (3,) or not np.all(np.isfinite(arr)) or np.any(arr < 0) or arr.sum() <= 0:
            raise ValueError(f"cannot normalize stance scores {values!r}")
        arr = arr / arr.sum()
        return cls(*(float(v) for v in arr))

    @classmethod
    def from_dict(cls, d: dict) -> "StanceScores":
        return cls(float(d["anti"]), float(d["pro"]), float(d["neutral"]))

    def to_dict(self) -> dict:
        return {"anti": self.anti, "pro": self.pro, "neutral": self.neutral}

    @property
    def label(self) -> str:
        """argmax stance; ties resolve in the order anti, pro, neutral."""
        vals = (self.anti, self.pro, self.neutral)
        return STANCES[int(np.argmax(vals))]


class StanceBackend(Protocol):
    backend_id: str

    def predict_scores(self, texts: Sequence[str]) -> np.ndarray:
        """Return an ``(n, 3)`` array of non-negative anti/pro/neutral scores."""


class ConstantStanceBackend:
    """Returns the same scores for every input. Used for fixtures and dry runs."""

    def __init__(self, scores=(1 / 3, 1 / 3, 1 / 3)):
        self.scores = tuple(scores)
        self.backend_id = f"constant:{','.join(f'{s:g}' for s in self.scores)}"

    def predict_scores(self, texts):
        return np.tile(np.asarray(self.scores, dtype=float), (len(texts), 1))


# Cue lexicons for the default backend. Weights are log-odds contributions.
_ANTI_CUES = {
    r"\bno(?:t)? (?:getting|taking|take|get) (?:the |your |a |any |another )?(?:vaccine|vax|jab|shot|booster)s?\b": 2.5,
    r"\bnever (?:getting|taking|get|take)\b": 2.0,
    r"\bwon'?t (?:get|take)\b": 2.0,
    r"\brefuse\w*\b": 1.5,
    r"\bpoison\w*\b": 2.0,
    r"\btoxic\b": 1.5,
    r"\bdangerous\b": 1.2,
    r"\bexperimental\b": 1.2,
    r"\bkill\w*\b": 1.2,
    r"\bdeath shot\b": 2.5,
    r"\bbig pharma\b": 1.0,
    r"\bscam\b": 1.5,
    r"\bhoax\b": 1.5,
    r"\bforced?\b": 0.8,
    r"\bmandat\w*\b": 0.6,
    r"\bside effects?\b": 0.8,
    r"\binjur\w*\b": 1.2,
    r"\bautism\b": 1.2,
    r"\bdon'?t trust\b": 1.5,
    r"\buseless\b": 1.5,
    r"\bdoesn'?t work\b": 1.5,
    r"\bdon'?t work\b": 1.5,
    r"\bunnecessary\b": 1.0,
    r"\brushed\b": 1.2,
    r"\bmy body,? my choice\b": 1.5,
    r"\bnovax\b|\bantivax\w*\b": 1.0,
    r"\bclot\w*\b": 1.0,
}
_PRO_CUES = {
    r"\b(?:got|had|getting|get) (?:my|the|our|your) (?:first |second |third |\w+ )?(?:vaccine|vax|jab|shot|booster|dose)s?\b": 2.0,
    r"\bfully vaccinated\b": 2.0,
    r"\bvaccines? (?:save|saves|saved) lives\b": 3.0,
    r"\bvaccines? work\b": 2.5,
    r"\bsafe and effective\b": 2.5,
    r"\bget vaccinated\b": 2.0,
    r"\bplease vaccinate\b": 2.0,
    r"\bgrateful\b|\bthankful\b|\bthank you\b": 1.2,
    r"\bprotect\w*\b": 0.8,
    r"\bscience\b": 0.8,
    r"\bbooked\b|\bappointment\b": 1.2,
    r"\bmisinformation\b|\banti-?vaxxers? are\b": 1.5,
    r"\bproud\b": 1.0,
    r"\bhappy\b|\brelieved\b|\bexcited\b": 1.0,
    r"\bdo your part\b": 1.5,
}
_VACCINE_TERM = re.compile(r"\b(?:vaccin\w*|vax\w*|jab\w*|shot|booster|dose|immuni[sz]\w*)\b", re.I)


class LexiconStanceBackend:
    """A transparent cue-lexicon scorer, shipped as the offline default.

    Each matched cue adds its weight to the anti or pro logit; the
    neutral logit is a fixed prior. Scores are the softmax of the three
    logits. Tweets with no vaccine term lean neutral.
    """

    backend_id = "lexicon:v1"

    def __init__(self, neutral_prior: float = 1.0):
        self.neutral_prior = neutral_prior
        self._anti = [(re.compile(p, re.I), w) for p, w in _ANTI_CUES.items()]
        self._pro = [(re.compile(p, re.I), w) for p, w in _PRO_CUES.items()]

    def _logits(self, text: str) -> np.ndarray:
        anti = sum(w for rx, w in self._anti if rx.search(text))
        pro = sum(w for rx, w in self._pro if rx.search(text))
        neutral = self.neutral_prior + (0.0 if _VACCINE_TERM.search(text) else 1.5)
        return np.array([anti, pro, neutral])

    def predict_scores(self, texts):
        logits = np.stack([self._logits(t) for t in texts]) if len(texts) else np.zeros((0, 3))
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)


class TransformerStanceBackend:
    """Wraps a Hugging Face sequence classifier with three output classes.

    ``label_order`` names the stance of each output index of the
    checkpoint, e.g. ``("neutral", "anti", "pro")``.
    """

    def __init__(self, model_path: str, label_order=STANCES, batch_size: int = 32,
                 max_length: int = 128):
        try:
            from transformers import AutoModelForSequenceClassification, AutoTokenizer

            self.tokenizer = AutoTokenizer.from_pretrained(model_path)
            self.model = AutoModelForSequenceClassification.from_pretrained(model_path).eval()
        except Exception as exc:  # noqa: BLE001 - any load failure is a backend error
            raise StanceBackendError(f"cannot load stance model {model_path!r}: {exc}") from exc
        if sorted(label_order) != sorted(STANCES):
            raise ValueError(f"label_order must be a permutation of {STANCES}")
        self._perm = [list(label_order).index(s) for s in STANCES]
        self.batch_size = batch_size
        self.max_length = max_length
        self.backend_id = f"hf:{model_path}"

    def predict_scores(self, texts):
        import torch

        out = []
        with torch.no_grad():
            for i in range(0, len(texts), self.batch_size):
                enc = self.tokenizer(list(texts[i:i + self.batch_size]), truncation=True,
                                     max_length=self.max_length, padding=True,
                                     return_tensors="pt")
                probs = torch.softmax(self.model(**enc).logits, dim=-1).numpy()
                out.append(probs[:, self._perm])
        return np.concatenate(out) if out else np.zeros((0, 3))


def score_stance(backend: StanceBackend, text: str) -> StanceScores:
    return score_stance_batch(backend, [text])[0]


def score_stance_batch(backend: StanceBackend, texts: Sequence[str]) -> list[StanceScores]:
    try:
        raw = np.asarray(backend.predict_scores(list(texts)), dtype=float)
    except StanceBackendError:
        raise
    except Exception as exc:  # noqa: BLE001
        raise StanceBackendError(f"stance backend failed: {exc}") from exc
    if raw.shape != (len(texts), 3):
        raise StanceBackendError(f"stance backend returned shape {raw.shape}")
    return [StanceScores.from_raw(row) for row in raw]


@dataclass
class FilterStats:
    threshold: float
    backend_id: str | None = None
    n_total: int = 0
    n_kept: int = 0
    n_scored: int = 0

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "backend_id": self.backend_id,
                "n_total": self.n_total, "n_kept": self.n_kept, "n_scored": self.n_scored}


def iter_antivax(records: Iterable, threshold: float = ANTIVAX_THRESHOLD,
                 backend: StanceBackend | None = None, stats: FilterStats | None = None,
                 batch_size: int = 256) -> Iterator:
    """Yield records whose anti-vax probability is at least ``threshold``.

    Records without precomputed ``stance_scores`` are scored with
    ``backend`` in batches; input order is preserved.
    """
    if stats is None:
        stats = FilterStats(threshold)
    if backend is not None:
        stats.backend_id = backend.backend_id

    def emit(batch):
        missing = [r for r in batch if r.stance_scores is None]
        if missing:
            if backend is None:
                raise MissingStanceError(
                    f"record {missing[0].id!r} has no stance scores and no backend was given")
            for rec, sc in zip(missing, score_stance_batch(backend, [r.text for r in missing])):
                rec.stance_scores = sc
            stats.n_scored += len(missing)
        for rec in batch:
            stats.n_total += 1
            if rec.stance_scores.anti >= threshold:
                stats.n_kept += 1
                yield rec

    batch = []
    for rec in records:
        batch.append(rec)
        if len(batch) >= batch_size:
            yield from emit(batch)
            batch = []
    if batch:
        yield from emit(batch)
    logger.info("stance filter kept %d of %d records (threshold %.2f)",
                stats.n_kept, stats.n_total, threshold)


def filter_antivax(records: Iterable, threshold: float = ANTIVAX_THRESHOLD,
                   backend: StanceBackend | None = None):
    """Return ``(kept_records, stats)``; see :func:`iter_antivax`."""
    stats = FilterStats(threshold)
    kept = list(iter_antivax(records, threshold, backend, stats))
    return kept, stats
