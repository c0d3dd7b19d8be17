"""Synthetic corpora with known ground truth.

``make_labeled_corpus`` produces CAVES-shaped labeled tweets (same label
scheme, skewed class frequencies, ~20% multi-label, explanation spans)
from per-concern phrase banks. ``make_analysis_corpus`` plants periods,
concern rates, stance scores and author histories for the longitudinal
analysis and returns the generator-side bookkeeping alongside.
"""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from .corpus import LabeledExample, RawTweet
from .labels import LABELS
from .stance import StanceScores

# CAVES-like label prevalence (side-effect dominates, religious/country rare).
LABEL_WEIGHTS = {
    "side-effect": 0.34, "ineffective": 0.12, "rushed": 0.10, "pharma": 0.08,
    "mandatory": 0.09, "unnecessary": 0.08, "political": 0.07, "none": 0.07,
    "conspiracy": 0.04, "ingredients": 0.04, "religious": 0.008, "country": 0.008,
}

_SLOTS = {
    "vax": ["the vaccine", "this vaccine", "the covid vaccine", "the jab", "the shot",
            "these vaccines", "the vax", "the booster", "Pfizer", "Moderna", "the mRNA shot"],
    "who": ["my aunt", "my neighbor", "a friend of mine", "my coworker", "my cousin",
            "my dad", "a nurse I know", "my brother", "my best friend", "a guy at church"],
    "harm": ["myocarditis", "blood clots", "a stroke", "seizures", "Bell's palsy",
             "a heart attack", "severe reactions", "paralysis", "shingles", "tinnitus"],
    "gov": ["the government", "Biden", "Trudeau", "Boris", "the politicians", "the Democrats",
            "the Liberals", "the ministers", "Fauci", "Congress"],
    "firm": ["Pfizer", "Moderna", "big pharma", "the drug companies", "J&J", "AstraZeneca"],
    "cure": ["ivermectin", "vitamin D", "natural immunity", "zinc and vitamin C",
             "hydroxychloroquine", "a healthy diet", "my own immune system"],
    "country": ["Russian", "Chinese", "Cuban", "Indian"],
    "stuff": ["aluminum", "mercury", "fetal cells", "graphene", "nanoparticles", "formaldehyde",
              "toxic chemicals", "spike proteins"],
}

_PHRASES = {
    "side-effect": [
        "{who} got {harm} two days after {vax}",
        "{vax} gave {who} {harm}",
        "so many people dying suddenly after {vax}",
        "the side effects of {vax} are way worse than covid",
        "{who} ended up in hospital with {harm} after the second dose",
        "how many more deaths from {vax} before they admit it",
        "{vax} is causing {harm} in young men",
        "I know three people injured by {vax}",
        "VAERS is full of deaths after {vax}",
        "my arm went numb and I had {harm} after {vax}",
        "{vax} killed {who}",
        "adverse reactions to {vax} are being ignored",
    ],
    "ineffective": [
        "{vax} doesn't even stop transmission",
        "everyone I know who got {vax} still caught covid",
        "what is the point of {vax} if you still get sick",
        "{vax} protection wears off in a few months",
        "fully vaxxed and still infected, {vax} is useless",
        "{vax} doesn't work, look at the hospital numbers",
        "a vaccine that cant prevent reinfection is not a vaccine",
        "the efficacy of {vax} keeps dropping every month",
        "booster after booster because {vax} fails",
    ],
    "rushed": [
        "{vax} was rushed through in months",
        "no long term safety data on {vax}",
        "{vax} is still experimental and in trials",
        "they skipped the animal trials for {vax}",
        "the trial data for {vax} was faked",
        "normally a vaccine takes ten years to develop",
        "{vax} only has emergency use authorization",
        "we are the guinea pigs for {vax}",
        "the published numbers on {vax} are not accurate",
    ],
    "pharma": [
        "{firm} is making billions off {vax}",
        "{firm} has paid billions in fines before, why trust them",
        "it's all about profit for {firm}",
        "{firm} cannot be sued for injuries, follow the money",
        "{firm} only cares about money not your health",
        "the shareholders of {firm} are laughing all the way to the bank",
        "never trust {firm} with their criminal history",
    ],
    "mandatory": [
        "no vaccine mandates, my body my choice",
        "I will not be forced to take {vax}",
        "vaccine passports are segregation",
        "they can't make {vax} mandatory for work",
        "no jab no job is coercion",
        "medical freedom means saying no to {vax}",
        "stop pushing {vax} on us and make it voluntary",
        "forcing {vax} on kids is wrong",
    ],
    "unnecessary": [
        "covid has a 99 percent survival rate, I don't need {vax}",
        "I'll trust {cure} over {vax}",
        "{cure} works better than {vax}",
        "kids don't need {vax}",
        "natural immunity is better than {vax}",
        "why take {vax} for a virus with such low risk",
        "I had covid already so {vax} is pointless for me",
        "just use {cure} instead",
    ],
    "political": [
        "{gov} is pushing {vax} for their own agenda",
        "{vax} is about control by {gov}",
        "{gov} wants to use {vax} to win votes",
        "this is political theatre from {gov}",
        "{gov} is lying to us about {vax}",
        "{gov} is using {vax} to divide the country",
        "mad dictator {gov} wants you to take {vax}",
    ],
    "conspiracy": [
        "{vax} has microchips to track us",
        "covid is a hoax and {vax} is the real weapon",
        "Bill Gates wants to depopulate the world with {vax}",
        "{vax} is part of the great reset",
        "5G and {vax} are connected",
        "the plandemic was planned to sell {vax}",
        "{vax} is a bioweapon",
    ],
    "ingredients": [
        "{vax} contains {stuff}",
        "{vax} will change your DNA",
        "why is there {stuff} in {vax}",
        "mRNA technology rewrites your genes",
        "{stuff} in {vax} is poison",
        "look at the ingredient list of {vax}, full of {stuff}",
    ],
    "religious": [
        "my faith forbids me from taking {vax}",
        "God gave me an immune system, I don't need {vax}",
        "{vax} is the mark of the beast",
        "taking {vax} goes against my religion",
        "I trust Jesus not {vax}",
    ],
    "country": [
        "I won't take the {country} vaccine",
        "never trusting a vaccine made in a {country} lab",
        "the {country} vaccine is dangerous",
        "would you want the {country} vaccine",
    ],
    "none": [
        "I'm not taking your damn vaccine",
        "not getting {vax}, end of story",
        "no thanks to {vax}",
        "keep your vaccine away from me",
        "nope, never, not happening",
        "I said what I said about {vax}",
        "hell no to {vax}",
    ],
}

_OPENERS = ["", "", "", "Honestly ", "Wake up people, ", "Just saying, ", "LOL ", "Fact: ",
            "Sorry but ", "Think about it, ", "Unbelievable. "]
_CLOSERS = ["", "", "", ".", "!", "!!", " smh", " wake up", " do your research",
            " think for yourself", ". Not me.", "?"]
_HASHTAGS = ["#novax", "#covid", "#vaccine", "#NoVaccinePassports", "#plandemic", "#health"]
_MENTIONS = ["@user", "@CDCgov", "@WHO", "@POTUS", "@JustinTrudeau"]
_EMOJI = ["\U0001F489", "\U0001F92C", "\U0001F622", "☠️", "\U0001F914", "\U0001F621"]


def _fill(template: str, rng: np.random.Generator) -> str:
    out = template
    for slot, values in _SLOTS.items():
        key = "{" + slot + "}"
        while key in out:
            out = out.replace(key, values[rng.integers(len(values))], 1)
    return out


def _draw_labels(rng, multi_label_rate):
    names = list(LABEL_WEIGHTS)
    p = np.array([LABEL_WEIGHTS[n] for n in names])
    p /= p.sum()
    first = names[rng.choice(len(names), p=p)]
    labels = [first]
    if first != "none" and rng.random() < multi_label_rate:
        q = p.copy()
        q[names.index("none")] = 0
        q[names.index(first)] = 0
        q /= q.sum()
        labels.append(names[rng.choice(len(names), p=q)])
    return labels


def make_tweet(labels, rng: np.random.Generator, noise: bool = True):
    """Compose a tweet voicing ``labels``; returns (text, explanations)."""
    parts, spans = [], []
    for lab in labels:
        bank = _PHRASES[lab]
        phrase = _fill(bank[rng.integers(len(bank))], rng)
        parts.append(phrase)
        spans.append((lab, phrase))
    joiner = [". ", " and ", ", plus ", ". Also "][rng.integers(4)]
    body = joiner.join(parts)
    text = _OPENERS[rng.integers(len(_OPENERS))] + body + _CLOSERS[rng.integers(len(_CLOSERS))]
    if noise:
        if rng.random() < 0.3:
            text += " " + _HASHTAGS[rng.integers(len(_HASHTAGS))]
        if rng.random() < 0.2:
            text = _MENTIONS[rng.integers(len(_MENTIONS))] + " " + text
        if rng.random() < 0.15:
            text += " https://t.co/" + "".join(rng.choice(list("abcdefXYZ123"), 8))
        if rng.random() < 0.15:
            text += " " + _EMOJI[rng.integers(len(_EMOJI))]
    return text, spans


def make_labeled_corpus(n: int, seed: int = 0, multi_label_rate: float = 0.25,
                        split_fractions=(0.7, 0.1, 0.2), id_prefix: str = "syn"):
    """CAVES-shaped labeled examples with train/validation/test splits."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        labels = _draw_labels(rng, multi_label_rate)
        text, spans = make_tweet(labels, rng)
        out.append(LabeledExample(f"{id_prefix}{i:06d}", text, frozenset(labels), spans))
    order = rng.permutation(n)
    n_train = int(round(split_fractions[0] * n))
    n_val = int(round(split_fractions[1] * n))
    for rank, idx in enumerate(order):
        out[idx].split = "train" if rank < n_train else ("validation" if rank < n_train + n_val else "test")
    return out


# -- longitudinal analysis corpus ------------------------------------------

@dataclass
class PlantedCorpus:
    tweets: list[RawTweet]
    predictions: dict[str, frozenset[str]]
    # (bucket, label) -> count and bucket -> n; buckets are period names,
    # "noncovid:<period>", "post_covid:both_mention", "post_covid:only_noncovid"
    label_counts: Counter = field(default_factory=Counter)
    bucket_sizes: Counter = field(default_factory=Counter)
    monthly_counts: Counter = field(default_factory=Counter)
    monthly_sizes: Counter = field(default_factory=Counter)
    traditional: set = field(default_factory=set)
    converted: set = field(default_factory=set)

    def fraction(self, bucket, label):
        return self.label_counts[(bucket, label)] / self.bucket_sizes[bucket]


# Planted concern rates per period (probability each label is present).
PLANTED_RATES = {
    "pre_covid": {"side-effect": 0.55, "pharma": 0.30, "mandatory": 0.10, "ineffective": 0.05,
                  "rushed": 0.03, "unnecessary": 0.04, "political": 0.04, "conspiracy": 0.04,
                  "ingredients": 0.08},
    "covid_start": {"side-effect": 0.30, "pharma": 0.15, "mandatory": 0.12, "ineffective": 0.15,
                    "rushed": 0.20, "unnecessary": 0.20, "political": 0.12, "conspiracy": 0.10,
                    "ingredients": 0.06},
    "covid_vax": {"side-effect": 0.35, "pharma": 0.12, "mandatory": 0.25, "ineffective": 0.25,
                  "rushed": 0.15, "unnecessary": 0.18, "political": 0.15, "conspiracy": 0.08,
                  "ingredients": 0.05},
    "post_covid": {"side-effect": 0.45, "pharma": 0.15, "mandatory": 0.15, "ineffective": 0.15,
                   "rushed": 0.08, "unnecessary": 0.10, "political": 0.08, "conspiracy": 0.06,
                   "ingredients": 0.05},
}


def _month_starts(start, end):
    months = []
    y, m = start.year, start.month
    while datetime(y, m, 1, tzinfo=timezone.utc) < end:
        months.append(datetime(y, m, 1, tzinfo=timezone.utc))
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    return months


def make_analysis_corpus(n_antivax: int = 10_000, seed: int = 0, periods=None,
                         n_traditional: int = 25, n_converted: int = 15, n_decoys: int = 30,
                         ineffective_decline=(0.30, 0.05)):
    """Plant a stance-scored tweet corpus with known concern statistics.

    ``n_antivax`` tweets carry anti-vax scores >= 0.8 and planted label
    sets; post-COVID ``ineffective`` rates decline linearly month by month
    from ``ineffective_decline[0]`` to ``[1]``. Author histories plant
    traditional and converted anti-vaxxers plus decoys that miss the
    cohort rules; their extra tweets (pro, neutral and anti) are added
    on top.
    """
    from .analysis import DEFAULT_PERIODS

    periods = periods or DEFAULT_PERIODS
    rng = np.random.default_rng(seed)
    pc = PlantedCorpus([], {})
    counter = [0]

    def new_id():
        counter[0] += 1
        return f"t{counter[0]:07d}"

    def random_time(start, end):
        span = (end - start).total_seconds()
        return start + timedelta(seconds=int(rng.integers(int(span))))

    def stance(kind):
        if kind == "anti":
            a = float(rng.uniform(0.81, 1.0))  # clear of the 0.8 cut after renormalising
            rest = 1 - a
            p = float(rng.uniform(0, rest))
            return StanceScores(a, p, 1 - a - p) if 1 - a - p >= 0 else StanceScores(a, rest, 0.0)
        if kind == "pro":
            p = float(rng.uniform(0.75, 0.99))
            a = float(rng.uniform(0, 1 - p))
            return StanceScores(a, p, max(0.0, 1 - p - a))
        nu = float(rng.uniform(0.6, 0.95))
        a = float(rng.uniform(0, (1 - nu) / 2))
        return StanceScores(a, max(0.0, 1 - nu - a), nu)

    def fix(s: StanceScores):
        # renormalise float drift so the sum invariant holds exactly enough
        return StanceScores.from_raw([s.anti, s.pro, s.neutral])

    noncovid_words = ["flu shot", "MMR", "HPV vaccine", "polio vaccine", "gardasil", "measles vaccine"]
    by_name = {p.name: p for p in periods}
    post = by_name["post_covid"]
    post_months = _month_starts(post.start, post.end)
    labels_all = sorted({l for r in PLANTED_RATES.values() for l in r})

    def plant(period, ts, author, bookkeep=True, kind="anti"):
        rates = dict(PLANTED_RATES[period.name])
        month_key = None
        if period.name == "post_covid":
            mi = post_months.index(datetime(ts.year, ts.month, 1, tzinfo=timezone.utc))
            frac = mi / max(1, len(post_months) - 1)
            rates["ineffective"] = ineffective_decline[0] + frac * (ineffective_decline[1] - ineffective_decline[0])
            month_key = (ts.year, ts.month)
        labs = frozenset(l for l in labels_all if rng.random() < rates[l]) or frozenset({"none"})
        u = rng.random()
        if u < 0.15:
            mention, flags = "the covid vaccine and the " + noncovid_words[rng.integers(6)], "both"
        elif u < 0.45:
            mention, flags = "the " + noncovid_words[rng.integers(6)], "only_noncovid"
        else:
            mention, flags = "the covid vaccine", "covid"
        if period.name == "pre_covid" and flags != "only_noncovid":
            mention, flags = "the " + noncovid_words[rng.integers(6)], "only_noncovid"
        text = f"Not taking {mention}. Concerns: {', '.join(sorted(labs))}"
        tid = new_id()
        tw = RawTweet(tid, text, ts, author, fix(stance(kind)))
        pc.tweets.append(tw)
        pc.predictions[tid] = labs
        if kind == "anti" and bookkeep:
            buckets = [period.name]
            if flags in ("both", "only_noncovid"):
                buckets.append(f"noncovid:{period.name}")
                if period.name == "post_covid":
                    buckets.append(f"post_covid:{'both_mention' if flags == 'both' else 'only_noncovid'}")
            for b in buckets:
                pc.bucket_sizes[b] += 1
                for l in labs:
                    pc.label_counts[(b, l)] += 1
            if month_key is not None:
                pc.monthly_sizes[month_key] += 1
                if "ineffective" in labs:
                    pc.monthly_counts[month_key] += 1
        return tw

    weights = np.array([(p.end - p.start).total_seconds() for p in periods])
    weights /= weights.sum()
    for _ in range(n_antivax):
        period = periods[rng.choice(len(periods), p=weights)]
        author = f"a{int(rng.integers(50_000)):06d}"
        plant(period, random_time(period.start, period.end), author)

    # cohort histories: (pre stance list, post stance list)
    pre, postp = by_name["pre_covid"], by_name["post_covid"]

    def history(author, pre_kinds, post_kinds):
        for kinds, per in ((pre_kinds, pre), (post_kinds, postp)):
            for kind in kinds:
                plant(per, random_time(per.start, per.end), author, kind=kind)

    for i in range(n_traditional):
        a = f"trad{i:04d}"
        n_pre = int(rng.integers(3, 8))
        history(a, ["anti"] * n_pre, ["anti"] * int(rng.integers(3, 6)))
        pc.traditional.add(a)
    for i in range(n_converted):
        a = f"conv{i:04d}"
        # exactly 70% pro in the pre period is still a pro-vaxxer
        history(a, ["pro"] * 7 + ["neutral"] * 3, ["anti"] * 3)
        pc.converted.add(a)
    decoy_patterns = [
        (["anti", "anti"], ["anti", "anti", "anti"]),             # too few pre tweets
        (["anti"] * 3, ["anti", "anti", "pro"]),                  # 66% anti post
        (["pro"] * 6 + ["anti"] * 4, ["anti"] * 3),               # 60% pro pre
        (["pro"] * 3, ["anti", "anti"]),                          # too few post tweets
        (["neutral"] * 4, ["anti"] * 4),                          # unclassified pre
    ]
    for i in range(n_decoys):
        pre_k, post_k = decoy_patterns[i % len(decoy_patterns)]
        history(f"decoy{i:04d}", pre_k, post_k)
    # Cohort tweets only count toward the bookkept distributions when anti:
    # they are real anti-vax tweets of the corpus.
    return pc
