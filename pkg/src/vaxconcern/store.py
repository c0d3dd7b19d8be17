"""Append-only prediction store and run manifests."""
from __future__ import annotations

import hashlib
import json
import os
import platform
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

from .corpus import format_timestamp


class StalePredictionsError(RuntimeError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    labels: frozenset
    method: str
    fingerprint: str
    created_at: str

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "labels": sorted(self.labels), "method": self.method,
                           "fingerprint": self.fingerprint, "created_at": self.created_at},
                          ensure_ascii=False)


class PredictionStore:
    """JSON-lines file of prediction records.

    Records are only ever appended. Reads collapse them to one active
    record per (id, fingerprint), the last one written.
    """

    def __init__(self, path):
        self.path = Path(path)

    def _records(self):
        if not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                yield PredictionRecord(d["id"], frozenset(d["labels"]), d["method"],
                                       d["fingerprint"], d["created_at"])

    def view(self, fingerprint: str | None = None) -> dict[tuple[str, str], PredictionRecord]:
        out = {}
        for rec in self._records():
            if fingerprint is None or rec.fingerprint == fingerprint:
                out[(rec.id, rec.fingerprint)] = rec
        return out

    def fingerprints(self) -> set[str]:
        return {rec.fingerprint for rec in self._records()}

    def labels_for(self, fingerprint: str) -> dict[str, frozenset]:
        """Active labels by tweet id for one model."""
        return {i: rec.labels for (i, _), rec in self.view(fingerprint).items()}

    def require(self, fingerprint: str) -> dict[str, frozenset]:
        """Like :meth:`labels_for`, but a store holding only other models is stale."""
        labels = self.labels_for(fingerprint)
        if not labels:
            known = sorted(self.fingerprints())
            raise StalePredictionsError(
                f"store {self.path} has no predictions for model {fingerprint}"
                + (f" (it holds {', '.join(known)})" if known else " (it is empty)"))
        return labels

    def missing(self, ids: Iterable[str], fingerprint: str) -> list[str]:
        have = {i for i, _ in self.view(fingerprint)}
        return [i for i in ids if i not in have]

    def append(self, items: Iterable[tuple[str, Iterable[str]]], method: str, fingerprint: str) -> int:
        now = format_timestamp(datetime.now(timezone.utc))
        self.path.parent.mkdir(parents=True, exist_ok=True)
        n = 0
        with open(self.path, "a", encoding="utf-8") as fh:
            for tid, labels in items:
                fh.write(PredictionRecord(str(tid), frozenset(labels), method, fingerprint, now).to_json() + "\n")
                n += 1
            fh.flush()
            os.fsync(fh.fileno())
        return n


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    tool_version: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.tool_version:
            from . import __version__

            self.tool_version = f"vaxconcern {__version__} / python {platform.python_version()}"
        self._t0 = time.time()

    def add_input(self, name, path):
        self.inputs[name] = {"path": str(path), "sha256": file_hash(path)}

    def add_output(self, name, path):
        path = Path(path)
        self.outputs[name] = {"path": str(path), "sha256": file_hash(path) if path.is_file() else None}

    def write(self, path) -> Path:
        self.timings.setdefault("wall_seconds", round(time.time() - self._t0, 3))
        data = {"command": self.command, "config": self.config, "seeds": self.seeds,
                "inputs": self.inputs, "outputs": self.outputs, "timings": self.timings,
                "tool_version": self.tool_version, **({"extra": self.extra} if self.extra else {})}
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")
        return path
