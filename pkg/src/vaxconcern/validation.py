"""Input checks shared by the estimators."""
from __future__ import annotations

from .labels import LABELS, LabelSpace


def check_texts(X) -> list[str]:
    if isinstance(X, str):
        raise TypeError("expected a sequence of texts, got a single string")
    X = list(X)
    for i, t in enumerate(X):
        if not isinstance(t, str):
            raise TypeError(f"text at position {i} is {type(t).__name__}, not str")
    return X


def check_label_sets(y, n: int | None = None, space: LabelSpace = LABELS) -> list[frozenset]:
    """Validate label sets; each must be a non-empty set of known labels."""
    out = []
    for i, labels in enumerate(y):
        if isinstance(labels, str):
            labels = [labels]
        labels = frozenset(labels)
        if not labels:
            raise ValueError(f"label set at position {i} is empty")
        space.validate(labels)
        out.append(labels)
    if n is not None and len(out) != n:
        raise ValueError(f"got {len(out)} label sets for {n} texts")
    return out
