"""Longitudinal concern analytics: periods, distributions, KL, cohorts."""
from __future__ import annotations

import bisect
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping, Sequence

from .labels import LABELS, LabelSpace

logger = logging.getLogger(__name__)

DEFAULT_EXCLUSIONS = ("religious", "country")
KL_EPSILON = 1e-9
COHORT_MIN_TWEETS = 3
COHORT_MIN_SHARE = (7, 10)  # 70%, kept as a ratio for exact integer comparison


class PeriodConfigError(ValueError):
    pass


class EmptyBucketError(ValueError):
    pass


def _utc(y, m, d=1):
    return datetime(y, m, d, tzinfo=timezone.utc)


@dataclass(frozen=True)
class Period:
    name: str
    start: datetime
    end: datetime

    def __contains__(self, ts: datetime) -> bool:
        return self.start <= ts < self.end


DEFAULT_PERIODS = (
    Period("pre_covid", _utc(2018, 1), _utc(2020, 2)),
    Period("covid_start", _utc(2020, 2), _utc(2021, 1)),
    Period("covid_vax", _utc(2021, 1), _utc(2022, 5)),
    Period("post_covid", _utc(2022, 5), _utc(2023, 2)),
)


def check_periods(periods: Sequence[Period]) -> list[Period]:
    ordered = sorted(periods, key=lambda p: p.start)
    for p in ordered:
        if not p.start < p.end:
            raise PeriodConfigError(f"period {p.name} is empty or reversed")
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end:
            raise PeriodConfigError(f"periods {a.name} and {b.name} overlap")
    if len({p.name for p in ordered}) != len(ordered):
        raise PeriodConfigError("period names must be unique")
    return ordered


def assign_period(timestamp: datetime, periods: Sequence[Period] = DEFAULT_PERIODS) -> Period | None:
    """The period whose ``[start, end)`` contains ``timestamp``; None when out of range."""
    ordered = check_periods(periods)
    if timestamp.tzinfo is None:
        timestamp = timestamp.replace(tzinfo=timezone.utc)
    i = bisect.bisect_right([p.start for p in ordered], timestamp) - 1
    if i >= 0 and timestamp in ordered[i]:
        return ordered[i]
    return None


@dataclass
class ConcernDistribution:
    bucket: str
    n_tweets: int
    fractions: dict[str, float]
    excluded_labels: tuple[str, ...] = DEFAULT_EXCLUSIONS
    counts: dict[str, int] = field(default_factory=dict)

    def records(self) -> list[dict]:
        return [{"bucket": self.bucket, "label": lab, "fraction": frac,
                 "count": self.counts.get(lab, 0), "n": self.n_tweets}
                for lab, frac in self.fractions.items()]


def concern_distribution(label_sets: Iterable[Iterable[str]], exclusions=DEFAULT_EXCLUSIONS,
                         bucket: str = "all", space: LabelSpace = LABELS) -> ConcernDistribution:
    """Fraction of tweets containing each label (multi-label; may sum above 1).

    ``label_sets`` may also hold ``(tweet, labels)`` pairs.
    """
    counts = Counter()
    n = 0
    for item in label_sets:
        if isinstance(item, tuple) and len(item) == 2 and not isinstance(item[0], str):
            item = item[1]
        counts.update(set(item))
        n += 1
    if n == 0:
        raise EmptyBucketError(f"bucket {bucket!r} has no tweets")
    excluded = tuple(exclusions or ())
    keep = [lab for lab in space.names if lab not in excluded]
    return ConcernDistribution(
        bucket, n, {lab: counts[lab] / n for lab in keep}, excluded,
        {lab: counts[lab] for lab in keep})


def merge_counts(parts: Iterable[ConcernDistribution], bucket: str | None = None) -> ConcernDistribution:
    """Combine shard distributions of the same bucket by summing counts."""
    parts = list(parts)
    n = sum(p.n_tweets for p in parts)
    counts = Counter()
    for p in parts:
        counts.update(p.counts)
    labels = list(parts[0].fractions)
    return ConcernDistribution(bucket or parts[0].bucket, n, {l: counts[l] / n for l in labels},
                               parts[0].excluded_labels, {l: counts[l] for l in labels})


def month_buckets(start: datetime, end: datetime) -> list[tuple[int, int]]:
    out = []
    y, m = start.year, start.month
    while _utc(y, m) < end:
        out.append((y, m))
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    return out


def monthly_series(predictions: Iterable[tuple[datetime, Iterable[str]]], label: str,
                   months: Sequence[tuple[int, int]] | None = None):
    """Per-month fraction of tweets carrying ``label``.

    ``predictions`` holds ``(timestamp, labels)`` pairs. Months without
    tweets yield ``None`` (a gap, not zero).
    """
    size, hits = Counter(), Counter()
    for ts, labels in predictions:
        key = (ts.year, ts.month)
        size[key] += 1
        if label in labels:
            hits[key] += 1
    if months is None:
        if not size:
            return []
        lo, hi = min(size), max(size)
        months = month_buckets(_utc(*lo), _utc(*hi, 2))
    return [(m, hits[m] / size[m] if size[m] else None) for m in months]


def _aligned(p: ConcernDistribution, q: ConcernDistribution):
    if list(p.fractions) != list(q.fractions):
        raise ValueError("distributions must share the same label universe")
    return list(p.fractions.values()), list(q.fractions.values())


def kl_divergence(p: ConcernDistribution, q: ConcernDistribution, eps: float = KL_EPSILON) -> float:
    """KL(p || q) in nats over renormalized, epsilon-smoothed concern fractions."""
    pv, qv = _aligned(p, q)
    if not any(pv) or not any(qv):
        raise EmptyBucketError("cannot compare an all-zero concern distribution")
    ps = [v + eps for v in pv]
    qs = [v + eps for v in qv]
    zp, zq = sum(ps), sum(qs)
    return max(0.0, sum((a / zp) * math.log((a / zp) / (b / zq)) for a, b in zip(ps, qs)))


def kl_divergence_percent(p: ConcernDistribution, q: ConcernDistribution, eps: float = KL_EPSILON) -> float:
    """Sum of P*ln(P/Q) over raw percentages, without renormalization.

    Reported next to :func:`kl_divergence` for readers who quote KL on a
    percentage scale; it is not a proper divergence and can be negative.
    """
    pv, qv = _aligned(p, q)
    return sum((100 * a + eps) * math.log((100 * a + eps) / (100 * b + eps)) for a, b in zip(pv, qv))


def split_noncovid_subsets(tweets_with_flags: Iterable[tuple[object, object]]):
    """Partition non-COVID-vaccine tweets by whether they also mention COVID vaccines.

    Input items are ``(tweet, VaccineMentionFlags)``; tweets without any
    non-COVID flag are ignored.
    """
    out = {"both_mention": [], "only_noncovid": []}
    for tweet, flags in tweets_with_flags:
        if not flags.noncovid:
            continue
        out["both_mention" if flags.covid else "only_noncovid"].append(tweet)
    return out


@dataclass(frozen=True)
class UserPeriodStance:
    author_key: str
    period: str
    n_vaccine_tweets: int
    anti_fraction: float
    pro_fraction: float
    cohort: str


def _meets(count: int, n: int) -> bool:
    num, den = COHORT_MIN_SHARE
    return n >= COHORT_MIN_TWEETS and den * count >= num * n


def classify_user_period(author_key: str, period: str, stance_labels: Sequence[str]) -> UserPeriodStance:
    """Cohort of one author in one period from per-tweet stance labels."""
    n = len(stance_labels)
    n_anti = sum(1 for s in stance_labels if s == "anti")
    n_pro = sum(1 for s in stance_labels if s == "pro")
    if _meets(n_anti, n):
        cohort = "anti_vaxxer"
    elif _meets(n_pro, n):
        cohort = "pro_vaxxer"
    else:
        cohort = "unclassified"
    return UserPeriodStance(author_key, period, n, n_anti / n if n else 0.0,
                            n_pro / n if n else 0.0, cohort)


def user_period_stances(tweets: Iterable, periods: Sequence[Period] = DEFAULT_PERIODS,
                        wanted: Iterable[str] | None = None) -> dict[tuple[str, str], UserPeriodStance]:
    """Group stance-scored tweets by (author, period) and classify each group."""
    wanted = set(wanted) if wanted is not None else None
    groups: dict[tuple[str, str], list[str]] = defaultdict(list)
    for tw in tweets:
        if tw.stance_scores is None:
            continue
        per = assign_period(tw.created_at, periods)
        if per is None or (wanted is not None and per.name not in wanted):
            continue
        groups[(tw.author_key, per.name)].append(tw.stance_scores.label)
    return {k: classify_user_period(k[0], k[1], v) for k, v in groups.items()}


def find_cohorts(stances: Mapping[tuple[str, str], UserPeriodStance] | Iterable[UserPeriodStance],
                 before: str = "pre_covid", after: str = "post_covid") -> dict[str, set[str]]:
    """Traditional (anti before and after) and converted (pro before, anti after) users."""
    if isinstance(stances, Mapping):
        stances = stances.values()
    cohort = {(s.author_key, s.period): s.cohort for s in stances}
    authors = {a for a, _ in cohort}
    traditional, converted = set(), set()
    for a in authors:
        pre, post = cohort.get((a, before)), cohort.get((a, after))
        if post != "anti_vaxxer":
            continue
        if pre == "anti_vaxxer":
            traditional.add(a)
        elif pre == "pro_vaxxer":
            converted.add(a)
    return {"traditional_antivax": traditional, "converted_antivax": converted}


class IncompletePredictionsError(ValueError):
    pass


MAX_MISSING_PREDICTIONS = 0.001


def build_report(antivax_tweets: Sequence, predictions: Mapping[str, Iterable[str]],
                 periods: Sequence[Period] = DEFAULT_PERIODS, keyword_config=None,
                 exclusions=DEFAULT_EXCLUSIONS, stance_tweets: Iterable | None = None,
                 baseline_period: str = "pre_covid", series_period: str = "post_covid",
                 space: LabelSpace = LABELS) -> dict:
    """Run the longitudinal analysis over classified anti-vax tweets.

    ``stance_tweets`` (all stance-scored vaccine tweets, any stance) feeds
    the cohort step; it defaults to ``antivax_tweets``.
    """
    from .corpus import tag_vaccine_mentions

    periods = check_periods(periods)
    missing = [t.id for t in antivax_tweets if t.id not in predictions]
    if antivax_tweets and len(missing) / len(antivax_tweets) > MAX_MISSING_PREDICTIONS:
        raise IncompletePredictionsError(
            f"{len(missing)} of {len(antivax_tweets)} tweets have no stored prediction")
    by_period: dict[str, list] = defaultdict(list)
    noncovid: dict[str, list] = defaultdict(list)
    subsets: dict[str, list] = defaultdict(list)
    out_of_range = 0
    for tw in antivax_tweets:
        if tw.id not in predictions:
            continue
        per = assign_period(tw.created_at, periods)
        if per is None:
            out_of_range += 1
            continue
        labels = frozenset(predictions[tw.id])
        by_period[per.name].append((tw, labels))
        flags = tag_vaccine_mentions(tw.text, keyword_config)
        if flags.noncovid:
            noncovid[per.name].append((tw, labels))
            if per.name == series_period:
                subsets["both_mention" if flags.covid else "only_noncovid"].append((tw, labels))

    def dist(items, bucket):
        return concern_distribution([lab for _, lab in items], exclusions, bucket, space)

    report: dict = {"n_tweets": len(antivax_tweets), "n_missing_predictions": len(missing),
                    "n_out_of_range": out_of_range, "excluded_labels": list(exclusions or ()),
                    "notices": []}
    distributions = {}
    for per in periods:
        if by_period.get(per.name):
            distributions[per.name] = dist(by_period[per.name], per.name)
        if noncovid.get(per.name):
            distributions[f"noncovid:{per.name}"] = dist(noncovid[per.name], f"noncovid:{per.name}")
    for name, items in subsets.items():
        distributions[f"{series_period}:{name}"] = dist(items, f"{series_period}:{name}")
    report["distributions"] = distributions

    series_items = by_period.get(series_period, [])
    sp = next((p for p in periods if p.name == series_period), None)
    report["monthly_series"] = {}
    if series_items and sp is not None:
        months = month_buckets(sp.start, sp.end)
        pairs = [(tw.created_at, lab) for tw, lab in series_items]
        report["monthly_series"] = {
            lab: monthly_series(pairs, lab, months)
            for lab in space.names if lab not in (exclusions or ())}

    comparisons = []
    populated = [p.name for p in periods if p.name in distributions]
    if len(populated) < 2:
        report["notices"].append("fewer than two populated periods; KL comparisons omitted")
    else:
        pairs = [(p, baseline_period) for p in populated if p != baseline_period]
        pairs += [(f"noncovid:{p}", f"noncovid:{baseline_period}") for p in populated if p != baseline_period]
        pairs += [(f"{series_period}:{s}", f"noncovid:{baseline_period}") for s in ("only_noncovid", "both_mention")]
        for a, b in pairs:
            if a in distributions and b in distributions:
                try:
                    comparisons.append({"p": a, "q": b,
                                        "kl": kl_divergence(distributions[a], distributions[b]),
                                        "kl_percent_scale": kl_divergence_percent(distributions[a], distributions[b])})
                except EmptyBucketError as exc:
                    report["notices"].append(f"KL {a} vs {b} skipped: {exc}")
    report["kl"] = comparisons
    report["subset_sizes"] = {k: len(v) for k, v in subsets.items()}

    stance_source = antivax_tweets if stance_tweets is None else stance_tweets
    stances = user_period_stances(stance_source, periods, {baseline_period, series_period})
    cohorts = find_cohorts(stances, baseline_period, series_period)
    report["cohorts"] = {k: sorted(v) for k, v in cohorts.items()}
    report["cohort_counts"] = {
        "anti_vaxxer": sum(1 for s in stances.values() if s.period == baseline_period and s.cohort == "anti_vaxxer"),
        "pro_vaxxer": sum(1 for s in stances.values() if s.period == baseline_period and s.cohort == "pro_vaxxer"),
        **{k: len(v) for k, v in cohorts.items()}}
    cohort_dists = {}
    for cname, members in cohorts.items():
        for per in (baseline_period, series_period):
            items = [(tw, lab) for tw, lab in by_period.get(per, []) if tw.author_key in members]
            if items:
                cohort_dists[f"{cname}:{per}"] = dist(items, f"{cname}:{per}")
    report["cohort_distributions"] = cohort_dists
    return report


def report_to_json(report: dict) -> dict:
    """Plain-JSON view of :func:`build_report` output."""
    out = dict(report)
    out["distributions"] = {k: {"n_tweets": d.n_tweets, "fractions": d.fractions}
                            for k, d in report["distributions"].items()}
    out["cohort_distributions"] = {k: {"n_tweets": d.n_tweets, "fractions": d.fractions}
                                   for k, d in report["cohort_distributions"].items()}
    out["monthly_series"] = {lab: [{"month": f"{y:04d}-{m:02d}", "fraction": v} for (y, m), v in series]
                             for lab, series in report["monthly_series"].items()}
    return out
