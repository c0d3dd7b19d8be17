"""The closed set of concern labels, their descriptions and label-set rules."""
from __future__ import annotations

import csv
import io
from importlib import resources
from pathlib import Path
from typing import Iterable

NONE = "none"

DEFAULT_TABLE = "caves_labels.tsv"


class UnknownLabelError(KeyError):
    pass


class DescriptionNotFoundError(KeyError):
    pass


def _read_table(text: str) -> list[tuple[str, str]]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    reader = csv.DictReader(io.StringIO("\n".join(lines)), delimiter="\t",
                            quoting=csv.QUOTE_NONE)
    return [(row["name"].strip(), row["description"].strip()) for row in reader]


class LabelSpace:
    """An immutable label taxonomy.

    ``names`` is the canonical label order (alphabetical). It fixes the
    column order of indicator matrices, the order of descriptions in
    generation targets and the tie-break order of description matching.
    """

    def __init__(self, rows: Iterable[tuple[str, str]], none_label: str = NONE):
        rows = list(rows)
        names = [n for n, _ in rows]
        descriptions = [d for _, d in rows]
        if len(set(names)) != len(names):
            raise ValueError("label names must be unique")
        if any(not d for d in descriptions) or len(set(descriptions)) != len(descriptions):
            raise ValueError("label descriptions must be unique and non-empty")
        if none_label not in names:
            raise ValueError(f"label table has no {none_label!r} label")
        self._desc = dict(rows)
        self._by_desc = {d: n for n, d in rows}
        self.names: tuple[str, ...] = tuple(sorted(names))
        self.none_label = none_label
        self._index = {n: i for i, n in enumerate(self.names)}

    @classmethod
    def from_file(cls, path: str | Path | None = None) -> "LabelSpace":
        if path is None:
            text = resources.files("vaxconcern.data").joinpath(DEFAULT_TABLE).read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        return cls(_read_table(text))

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, label) -> bool:
        return label in self._desc

    def __repr__(self) -> str:
        return f"LabelSpace({len(self)} labels)"

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise UnknownLabelError(label) from None

    @property
    def descriptions(self) -> tuple[str, ...]:
        """Descriptions in canonical label order."""
        return tuple(self._desc[n] for n in self.names)

    def description_of(self, label: str) -> str:
        try:
            return self._desc[label]
        except KeyError:
            raise UnknownLabelError(label) from None

    def label_of_description(self, text: str) -> str:
        """Inverse lookup; only canonical description text is accepted."""
        try:
            return self._by_desc[text]
        except KeyError:
            raise DescriptionNotFoundError(text) from None

    def validate(self, labels: Iterable[str]) -> frozenset[str]:
        labels = frozenset(labels)
        unknown = labels - self._desc.keys()
        if unknown:
            raise UnknownLabelError(", ".join(sorted(unknown)))
        return labels

    def postprocess(self, labels: Iterable[str]) -> frozenset[str]:
        """Drop ``none`` when other labels are present; map the empty set to ``{none}``."""
        labels = self.validate(labels)
        if not labels:
            return frozenset({self.none_label})
        if self.none_label in labels and len(labels) > 1:
            return labels - {self.none_label}
        return labels

    def sort(self, labels: Iterable[str]) -> list[str]:
        return sorted(labels, key=self.index)

    def to_indicator(self, label_sets) -> "np.ndarray":
        import numpy as np

        out = np.zeros((len(label_sets), len(self)), dtype=np.int8)
        for i, labels in enumerate(label_sets):
            for lab in labels:
                out[i, self.index(lab)] = 1
        return out

    def from_indicator(self, matrix) -> list[frozenset[str]]:
        return [frozenset(self.names[j] for j, v in enumerate(row) if v) for row in matrix]


LABELS = LabelSpace.from_file()


def description_of(label: str) -> str:
    return LABELS.description_of(label)


def label_of_description(text: str) -> str:
    return LABELS.label_of_description(text)


def postprocess(labels: Iterable[str]) -> frozenset[str]:
    return LABELS.postprocess(labels)


def parse_label_field(field: str, space: LabelSpace = LABELS) -> frozenset[str]:
    """Parse a pipe-separated label column (``side-effect|rushed``)."""
    tokens = [t.strip().lower() for t in field.split("|") if t.strip()]
    return space.validate(tokens)


def format_label_field(labels: Iterable[str], space: LabelSpace = LABELS) -> str:
    return "|".join(space.sort(labels))
