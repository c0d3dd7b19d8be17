"""Segmenting generated descriptions and matching them to canonical labels."""
from __future__ import annotations

import logging
import re
from typing import Protocol, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .labels import LABELS, LabelSpace

logger = logging.getLogger(__name__)

PROTECTED_ABBREVIATIONS = ("e.g.", "i.e.", "eg.")
_WS = re.compile(r"\s+")
_ABBREV = re.compile(r"(?:^|(?<=[^A-Za-z]))(?:" + "|".join(re.escape(a) for a in PROTECTED_ABBREVIATIONS)
                     + r")$", re.I)


class ZeroNormEmbeddingError(ArithmeticError):
    pass


def normalize_ws(text: str) -> str:
    return _WS.sub(" ", text).strip()


def split_generated(text: str) -> list[str]:
    """Split generated text into sentences at full stops.

    A full stop ends a segment when followed by whitespace or the end of
    the string, unless it closes a protected abbreviation (``e.g.``,
    ``i.e.``, ``eg.``). Segments keep their full stop; segments with no
    content are dropped.
    """
    segments, start = [], 0
    for i, ch in enumerate(text):
        if ch != ".":
            continue
        if i + 1 < len(text) and not text[i + 1].isspace():
            continue
        if _ABBREV.search(text[start:i + 1]):
            continue
        segments.append(text[start:i + 1])
        start = i + 1
    segments.append(text[start:])
    return [normalize_ws(s) for s in segments if s.strip(" \t\n\r.")]


class TextEmbedder(Protocol):
    def encode(self, sentences: Sequence[str]) -> np.ndarray:
        """Return an ``(n, d)`` float array."""


class TfidfEmbedder(BaseEstimator, TransformerMixin):
    """Character n-gram TF-IDF vectors; the offline default embedder.

    Fitted on the canonical descriptions (plus any extra text), so the
    vector space is anchored on label vocabulary.
    """

    def __init__(self, analyzer="char_wb", ngram_range=(2, 4), sublinear_tf=True):
        self.analyzer = analyzer
        self.ngram_range = ngram_range
        self.sublinear_tf = sublinear_tf

    def fit(self, X, y=None):
        from sklearn.feature_extraction.text import TfidfVectorizer

        self.vectorizer_ = TfidfVectorizer(analyzer=self.analyzer, ngram_range=self.ngram_range,
                                           sublinear_tf=self.sublinear_tf, lowercase=True)
        self.vectorizer_.fit(list(X))
        self.embedder_id_ = f"tfidf:{self.analyzer}:{self.ngram_range[0]}-{self.ngram_range[1]}"
        return self

    def transform(self, X):
        check_is_fitted(self, "vectorizer_")
        return self.vectorizer_.transform(list(X)).toarray()

    def encode(self, sentences):
        return self.transform(sentences)


class SentenceTransformerEmbedder:
    """Sentence-BERT style encoder from ``sentence-transformers``."""

    def __init__(self, model_name: str = "sentence-transformers/all-mpnet-base-v2"):
        from sentence_transformers import SentenceTransformer

        from .backends import BackendError

        try:
            self.model = SentenceTransformer(model_name)
        except Exception as exc:  # noqa: BLE001
            raise BackendError(f"cannot load sentence encoder {model_name!r}: {exc}") from exc
        self.embedder_id_ = f"sbert:{model_name}"

    def encode(self, sentences):
        return np.asarray(self.model.encode(list(sentences), convert_to_numpy=True))


def make_embedder(name) -> object:
    if not isinstance(name, str):
        return name
    if name == "tfidf":
        return TfidfEmbedder()
    if name.startswith("sbert:"):
        return SentenceTransformerEmbedder(name.split(":", 1)[1])
    raise ValueError(f"unknown embedder {name!r}")


def _exact_key(text: str) -> str:
    return normalize_ws(text).rstrip(".").rstrip()


class DescriptionMatcher(BaseEstimator):
    """Map free-text segments to the label with the most similar description.

    Segments equal to a canonical description (up to whitespace and the
    terminal full stop) resolve without the embedder. Otherwise the
    label with the highest cosine similarity wins; ties go to the
    earliest label in canonical order. With ``min_similarity`` set,
    weaker matches return ``None``. ``exact_shortcut=False`` sends every
    segment through the embedder.
    """

    def __init__(self, embedder="tfidf", space: LabelSpace = LABELS, min_similarity=None,
                 exact_shortcut=True):
        self.embedder = embedder
        self.space = space
        self.min_similarity = min_similarity
        self.exact_shortcut = exact_shortcut

    def fit(self, X=None, y=None):
        self.embedder_ = make_embedder(self.embedder)
        descriptions = list(self.space.descriptions)
        if hasattr(self.embedder_, "fit") and not hasattr(self.embedder_, "embedder_id_"):
            self.embedder_.fit(descriptions + list(X or []))
        emb = np.asarray(self.embedder_.encode(descriptions), dtype=float)
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ZeroNormEmbeddingError("a canonical description embeds to the zero vector")
        self.description_embeddings_ = emb / norms
        self.exact_ = {_exact_key(d): lab for lab, d in zip(self.space.names, descriptions)}
        return self

    def match(self, segment: str) -> tuple[str | None, float]:
        return self.match_many([segment])[0]

    def match_many(self, segments: Sequence[str]) -> list[tuple[str | None, float]]:
        check_is_fitted(self, "description_embeddings_")
        out: list = [None] * len(segments)
        todo = []
        for i, seg in enumerate(segments):
            seg = normalize_ws(seg)
            if not seg:
                raise ValueError("cannot match an empty segment")
            lab = self.exact_.get(_exact_key(seg)) if self.exact_shortcut else None
            if lab is not None:
                out[i] = (lab, 1.0)
            else:
                todo.append((i, seg))
        if todo:
            emb = np.asarray(self.embedder_.encode([s for _, s in todo]), dtype=float)
            norms = np.linalg.norm(emb, axis=1)
            for (i, seg), vec, norm in zip(todo, emb, norms):
                if norm == 0:
                    raise ZeroNormEmbeddingError(f"segment {seg!r} embeds to the zero vector")
                sims = self.description_embeddings_ @ (vec / norm)
                best = int(np.argmax(sims))
                top = float(np.clip(sims[best], -1.0, 1.0))
                if np.sum(np.isclose(sims, sims[best], rtol=0, atol=1e-12)) > 1:
                    logger.info("similarity tie for %r; choosing %s", seg, self.space.names[best])
                if self.min_similarity is not None and top < self.min_similarity:
                    out[i] = (None, top)
                else:
                    out[i] = (self.space.names[best], top)
        return out


def match_description(segment: str, matcher: DescriptionMatcher) -> tuple[str, float]:
    return matcher.match(segment)
