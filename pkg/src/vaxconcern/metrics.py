"""Multi-label evaluation: per-class F1, macro/weighted F1, mean Jaccard."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .labels import LABELS, LabelSpace


class LengthMismatchError(ValueError):
    pass


@dataclass
class MultilabelCounts:
    """Additive sufficient statistics; shards merge with ``+``."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    jaccard_sum: float
    n_examples: int

    def __add__(self, other: "MultilabelCounts") -> "MultilabelCounts":
        return MultilabelCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn,
                                self.jaccard_sum + other.jaccard_sum,
                                self.n_examples + other.n_examples)


@dataclass
class EvalReport:
    per_class_f1: dict[str, float]
    macro_f1: float
    weighted_f1: float
    mean_jaccard: float
    support: dict[str, int]
    n_examples: int
    excluded_classes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"macro_f1": self.macro_f1, "weighted_f1": self.weighted_f1,
                "mean_jaccard": self.mean_jaccard, "n_examples": self.n_examples,
                "per_class_f1": self.per_class_f1, "support": self.support,
                "excluded_classes": self.excluded_classes}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        lines = [f"{'label':<14}{'F1':>8}{'support':>9}"]
        for lab, f1 in self.per_class_f1.items():
            lines.append(f"{lab:<14}{f1:>8.4f}{self.support[lab]:>9d}")
        lines.append("-" * 31)
        lines.append(f"{'Macro-F1':<14}{self.macro_f1:>8.4f}")
        lines.append(f"{'Weighted-F1':<14}{self.weighted_f1:>8.4f}")
        lines.append(f"{'Jaccard':<14}{self.mean_jaccard:>8.4f}")
        lines.append(f"{'n':<14}{self.n_examples:>8d}")
        return "\n".join(lines)


def count(gold, pred, space: LabelSpace = LABELS) -> MultilabelCounts:
    if len(gold) != len(pred):
        raise LengthMismatchError(f"{len(gold)} gold label sets vs {len(pred)} predictions")
    g = space.to_indicator(gold).astype(bool)
    p = space.to_indicator(pred).astype(bool)
    inter = (g & p).sum(axis=1)
    union = (g | p).sum(axis=1)
    if np.any(union == 0):
        raise ValueError("empty gold and predicted label sets; apply postprocess first")
    return MultilabelCounts(
        tp=(g & p).sum(axis=0), fp=(~g & p).sum(axis=0), fn=(g & ~p).sum(axis=0),
        jaccard_sum=float((inter / union).sum()), n_examples=len(gold))


def report_from_counts(c: MultilabelCounts, space: LabelSpace = LABELS,
                       exclude_absent: bool = False) -> EvalReport:
    """Build a report. Classes absent from both gold and predictions score F1 = 0
    and stay in the macro mean unless ``exclude_absent`` is set."""
    denom = 2 * c.tp + c.fp + c.fn
    f1 = np.where(denom > 0, 2 * c.tp / np.maximum(denom, 1), 0.0)
    support = c.tp + c.fn
    keep = np.ones(len(space), dtype=bool)
    if exclude_absent:
        keep = denom > 0
    macro = float(f1[keep].mean()) if keep.any() else 0.0
    weighted = float((f1 * support).sum() / support.sum()) if support.sum() else 0.0
    return EvalReport(
        per_class_f1={lab: float(v) for lab, v in zip(space.names, f1)},
        macro_f1=macro, weighted_f1=weighted,
        mean_jaccard=c.jaccard_sum / c.n_examples if c.n_examples else 0.0,
        support={lab: int(v) for lab, v in zip(space.names, support)},
        n_examples=c.n_examples,
        excluded_classes=[lab for lab, k in zip(space.names, keep) if not k])


def evaluate(gold, pred, space: LabelSpace = LABELS, exclude_absent: bool = False) -> EvalReport:
    if len(gold) == 0:
        raise LengthMismatchError("nothing to evaluate")
    return report_from_counts(count(gold, pred, space), space, exclude_absent)


def macro_f1(gold, pred, space: LabelSpace = LABELS) -> float:
    return evaluate(gold, pred, space).macro_f1


PARTIAL_CATEGORIES = ("exact", "subset", "superset", "overlap", "disjoint")


def match_category(gold, pred) -> str:
    gold, pred = frozenset(gold), frozenset(pred)
    if gold == pred:
        return "exact"
    if pred < gold:
        return "subset"
    if pred > gold:
        return "superset"
    if pred & gold:
        return "overlap"
    return "disjoint"


def partial_match_report(gold, pred) -> dict[str, int]:
    """Count examples by the set relation of prediction to gold."""
    if len(gold) != len(pred):
        raise LengthMismatchError(f"{len(gold)} gold label sets vs {len(pred)} predictions")
    out = dict.fromkeys(PARTIAL_CATEGORIES, 0)
    for g, p in zip(gold, pred):
        out[match_category(g, p)] += 1
    return out


def most_frequent_label_baseline(train_label_sets, space: LabelSpace = LABELS) -> frozenset[str]:
    """The single label most frequent in ``train_label_sets`` (ties by canonical order)."""
    counts = space.to_indicator(train_label_sets).sum(axis=0)
    return frozenset({space.names[int(np.argmax(counts))]})
