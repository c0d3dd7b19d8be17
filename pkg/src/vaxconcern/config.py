"""Declarative run configuration (YAML) with command-line overrides."""
from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .analysis import DEFAULT_EXCLUSIONS, DEFAULT_PERIODS, Period, check_periods
from .corpus import KeywordConfig, default_keywords, parse_timestamp
from .labels import LABELS, LabelSpace


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "labels": None,
    "entail": {"backend": "tiny", "negative_sampling_rate": 7, "max_input_length": 128, "epochs": 3,
               "batch_size": 16, "learning_rate": None, "threshold": 0.5,
               "exclude_none_negatives": False, "resample_each_epoch": False},
    "gen": {"backend": "tiny", "lora_rank": 2, "lora_alpha": 128, "lora_targets": ["q", "k", "v", "o"],
            "epochs": 5, "batch_size": 8, "learning_rate": 5e-4, "max_input_tokens": 128,
            "max_output_tokens": 50, "num_beams": 1, "embedder": "tfidf", "min_similarity": None,
            "pretrain_steps": 600},
    "baseline": {"backend": "tiny", "max_input_length": 128, "epochs": 5, "batch_size": 16,
                 "learning_rate": None, "threshold": 0.5},
    "stance": {"backend": "lexicon", "threshold": 0.8, "batch_size": 256},
    "analysis": {"exclusions": list(DEFAULT_EXCLUSIONS), "keywords": None, "periods": None,
                 "baseline_period": "pre_covid", "series_period": "post_covid"},
}


def _merge(base: dict, extra: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where + key!r}")
        if isinstance(base[key], dict) and value is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where + key!r} must be a mapping")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the YAML file, then dotted ``overrides`` (None values ignored)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping")
        cfg = _merge(cfg, data)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = cfg
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node[p]
        if leaf not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node[leaf] = value
    return cfg


def label_space(cfg: dict) -> LabelSpace:
    return LABELS if not cfg.get("labels") else LabelSpace.from_file(cfg["labels"])


def periods(cfg: dict) -> list[Period]:
    raw = cfg["analysis"].get("periods")
    if not raw:
        return list(DEFAULT_PERIODS)
    try:
        out = [Period(p["name"], parse_timestamp(str(p["start"])), parse_timestamp(str(p["end"])))
               for p in raw]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad period table: {exc}") from exc
    return check_periods(out)


def keywords(cfg: dict) -> KeywordConfig:
    kw = cfg["analysis"].get("keywords")
    if kw is None:
        return default_keywords()
    if isinstance(kw, dict):
        return KeywordConfig(kw)
    return KeywordConfig.from_file(kw)
