"""Tweet records, labeled datasets, text cleaning and vaccine-mention tagging."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Iterator, Mapping

import emoji
import yaml

from .labels import LABELS, LabelSpace, UnknownLabelError, parse_label_field
from .stance import StanceScores

logger = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
VACCINE_FAMILIES = ("covid", "flu", "mmr", "ipv", "hpv")
NONCOVID_FAMILIES = ("flu", "mmr", "ipv", "hpv")
MAX_MALFORMED_FRACTION = 0.01


class DatasetSchemaError(ValueError):
    pass


class ManifestError(KeyError):
    pass


class CorpusCorruptError(RuntimeError):
    pass


class KeywordConfigError(ValueError):
    pass


# -- text cleaning ---------------------------------------------------------

_URL = re.compile(r"https?://\S+|www\.\S+|\bt\.co/\S+", re.I)
_MENTION = re.compile(r"@\w+")
_HASHTAG = re.compile(r"#\w+")
_SPACE = re.compile(r"\s+")


def preprocess(text: str) -> str:
    """Strip URLs, mentions, hashtags and emoji, then collapse whitespace."""
    text = _URL.sub(" ", text)
    text = _MENTION.sub(" ", text)
    text = _HASHTAG.sub(" ", text)
    text = emoji.replace_emoji(text, " ")
    return _SPACE.sub(" ", text).strip()


# -- records ---------------------------------------------------------------

@dataclass
class RawTweet:
    id: str
    text: str
    created_at: datetime
    author_key: str
    stance_scores: StanceScores | None = None

    def to_dict(self) -> dict:
        d = {"id": self.id, "text": self.text,
             "created_at": format_timestamp(self.created_at), "author_key": self.author_key}
        if self.stance_scores is not None:
            d["stance_scores"] = self.stance_scores.to_dict()
        return d


@dataclass
class LabeledExample:
    id: str
    text: str
    labels: frozenset[str]
    explanations: list[tuple[str, str]] = field(default_factory=list)
    split: str = "train"


def parse_timestamp(value: str) -> datetime:
    """Parse ISO-8601 (or the legacy Twitter format) to an aware UTC datetime."""
    value = value.strip()
    try:
        ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError:
        ts = datetime.strptime(value, "%a %b %d %H:%M:%S %z %Y")
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def obfuscate_author(raw_id: str, salt: str) -> str:
    """One-way salted hash of a platform user id or handle."""
    return hashlib.sha256(f"{salt}:{raw_id}".encode("utf-8")).hexdigest()[:20]


_RAW_AUTHOR_FIELDS = ("author_id", "user_id", "username", "screen_name", "author")


def _record_from_dict(d: dict, salt: str) -> RawTweet:
    text = d["text"]
    if not isinstance(text, str) or not text.strip():
        raise ValueError("empty text")
    if d.get("author_key"):
        author_key = str(d["author_key"])
    else:
        raw = next((d[k] for k in _RAW_AUTHOR_FIELDS if d.get(k)), None)
        if raw is None:
            raise ValueError("no author field")
        author_key = obfuscate_author(str(raw), salt)
    scores = d.get("stance_scores")
    return RawTweet(
        id=str(d["id"]),
        text=text,
        created_at=parse_timestamp(d["created_at"]),
        author_key=author_key,
        stance_scores=StanceScores.from_dict(scores) if scores else None,
    )


class TweetStream:
    """Iterate a newline-delimited JSON tweet file.

    Malformed lines (bad JSON, missing fields, bad timestamps, duplicate
    ids) are skipped and counted. When iteration finishes, more than 1%
    malformed lines raises :class:`CorpusCorruptError`.
    """

    def __init__(self, path, salt: str = "vaxconcern",
                 max_malformed_fraction: float = MAX_MALFORMED_FRACTION):
        self.path = Path(path)
        self.salt = salt
        self.max_malformed_fraction = max_malformed_fraction
        self.n_lines = 0
        self.n_skipped = 0

    def __iter__(self) -> Iterator[RawTweet]:
        self.n_lines = self.n_skipped = 0
        seen = set()
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                self.n_lines += 1
                try:
                    rec = _record_from_dict(json.loads(line), self.salt)
                    if rec.id in seen:
                        raise ValueError(f"duplicate id {rec.id}")
                except (ValueError, KeyError, TypeError) as exc:
                    self.n_skipped += 1
                    logger.debug("%s:%d skipped: %s", self.path, lineno, exc)
                    continue
                seen.add(rec.id)
                yield rec
        logger.info("%s: %d records, %d malformed lines skipped",
                    self.path, self.n_lines - self.n_skipped, self.n_skipped)
        if self.n_lines and self.n_skipped / self.n_lines > self.max_malformed_fraction:
            raise CorpusCorruptError(
                f"{self.path}: {self.n_skipped} of {self.n_lines} lines malformed")


def load_tweet_stream(path, salt: str = "vaxconcern") -> TweetStream:
    return TweetStream(path, salt=salt)


def write_tweet_stream(records, path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")
            n += 1
    return n


# -- labeled datasets ------------------------------------------------------

def _read_manifest(split_manifest) -> Mapping[str, str] | str:
    if isinstance(split_manifest, str) and split_manifest in SPLITS:
        return split_manifest
    if isinstance(split_manifest, Mapping):
        return split_manifest
    path = Path(split_manifest)
    if path.suffix == ".json":
        return json.loads(path.read_text("utf-8"))
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["id"]: row["split"] for row in csv.DictReader(fh)}


def _parse_explanations(field_value: str | None) -> list[tuple[str, str]]:
    if not field_value or not field_value.strip():
        return []
    return [(str(lab), str(span)) for lab, span in json.loads(field_value)]


def load_labeled_dataset(path, split_manifest, space: LabelSpace = LABELS) -> list[LabeledExample]:
    """Read a labeled dataset with columns ``id,text,labels[,explanations]``.

    ``split_manifest`` is a CSV (``id,split``) or JSON mapping file, a
    mapping, or one of ``train``/``validation``/``test`` to put every
    example in the same split.
    """
    manifest = _read_manifest(split_manifest)
    delimiter = "\t" if str(path).endswith(".tsv") else ","
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        missing_cols = {"id", "text", "labels"} - set(reader.fieldnames or ())
        if missing_cols:
            raise DatasetSchemaError(f"{path}: missing columns {sorted(missing_cols)}")
        for rowno, row in enumerate(reader, 2):
            ex_id = row["id"]
            try:
                labels = parse_label_field(row["labels"] or "", space)
            except UnknownLabelError as exc:
                raise DatasetSchemaError(f"{path}:{rowno} (id {ex_id}): unknown label {exc}") from None
            if not labels:
                raise DatasetSchemaError(f"{path}:{rowno} (id {ex_id}): empty label set")
            if space.none_label in labels and len(labels) > 1:
                raise DatasetSchemaError(f"{path}:{rowno} (id {ex_id}): 'none' combined with other labels")
            explanations = _parse_explanations(row.get("explanations"))
            for lab, span in explanations:
                if span not in row["text"]:
                    raise DatasetSchemaError(
                        f"{path}:{rowno} (id {ex_id}): explanation for {lab} is not a span of the text")
            if isinstance(manifest, str):
                split = manifest
            else:
                try:
                    split = manifest[ex_id]
                except KeyError:
                    raise ManifestError(f"id {ex_id} is missing from the split manifest") from None
            if split not in SPLITS:
                raise ManifestError(f"id {ex_id}: unknown split {split!r}")
            out.append(LabeledExample(ex_id, row["text"], labels, explanations, split))
    return out


def write_labeled_dataset(examples, path, space: LabelSpace = LABELS) -> None:
    from .labels import format_label_field

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "text", "labels", "explanations"])
        for ex in examples:
            expl = json.dumps([list(p) for p in ex.explanations]) if ex.explanations else ""
            w.writerow([ex.id, ex.text, format_label_field(ex.labels, space), expl])


def write_split_manifest(examples, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "split"])
        for ex in examples:
            w.writerow([ex.id, ex.split])


def split_examples(examples) -> dict[str, list[LabeledExample]]:
    out = {s: [] for s in SPLITS}
    for ex in examples:
        out[ex.split].append(ex)
    return out


# -- vaccine mentions ------------------------------------------------------

@dataclass(frozen=True)
class VaccineMentionFlags:
    covid: bool = False
    flu: bool = False
    mmr: bool = False
    ipv: bool = False
    hpv: bool = False

    @property
    def noncovid(self) -> bool:
        return self.flu or self.mmr or self.ipv or self.hpv

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in VACCINE_FAMILIES}


class KeywordConfig:
    """Compiled per-family keyword matchers."""

    def __init__(self, families: Mapping[str, list[str]]):
        missing = [f for f in VACCINE_FAMILIES if f not in families]
        if missing:
            raise KeywordConfigError(f"keyword config lacks families {missing}")
        self.families = {}
        self._patterns = {}
        for fam in VACCINE_FAMILIES:
            words = [w.strip().lower() for w in families[fam] if w and w.strip()]
            if not words:
                raise KeywordConfigError(f"empty keyword list for {fam!r}")
            self.families[fam] = words
            alts = "|".join(r"\s+".join(map(re.escape, w.split())) for w in
                            sorted(words, key=len, reverse=True))
            self._patterns[fam] = re.compile(rf"(?<!\w)(?:{alts})s?(?!\w)", re.I)

    @classmethod
    def from_file(cls, path=None) -> "KeywordConfig":
        if path is None:
            text = resources.files("vaxconcern.data").joinpath("keywords.yaml").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        data = yaml.safe_load(text)
        return cls(data.get("families", data))

    def tag(self, text: str) -> VaccineMentionFlags:
        return VaccineMentionFlags(**{f: bool(p.search(text)) for f, p in self._patterns.items()})


_DEFAULT_KEYWORDS: KeywordConfig | None = None


def default_keywords() -> KeywordConfig:
    global _DEFAULT_KEYWORDS
    if _DEFAULT_KEYWORDS is None:
        _DEFAULT_KEYWORDS = KeywordConfig.from_file()
    return _DEFAULT_KEYWORDS


def tag_vaccine_mentions(text: str, keyword_config: KeywordConfig | None = None) -> VaccineMentionFlags:
    return (keyword_config or default_keywords()).tag(text)
