"""Vowel and feature surprisal, harmony condition labels and contrasts."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Collection, Iterable, Mapping, Sequence

import numpy as np

from . import ipa, stats
from .errors import (
    AllZeroDifferences,
    EmptyGroup,
    EmptySampleList,
    NoPrecedingVowel,
    NonPositiveProbability,
    SchemeInventoryMismatch,
    UnknownSegment,
    ZeroMass,
)
from .lexicon import PhonemeInventory, WordForm
from .plm import TrainedModel, predict_batch

log = logging.getLogger(__name__)

NEUTRAL = "n"
MINUS, PLUS, NEUTRAL_GROUP = "minus", "plus", "neutral"

# feature -> (minus code, plus code, group listed first in contrasts, combined-row tag)
FEATURE_CODES = {
    "back": ("f", "b", MINUS, "f"),
    "round": ("u", "r", PLUS, "r"),
    "atr": ("natr", "atr", PLUS, "atr"),
}


@dataclass(frozen=True)
class HarmonyScheme:
    """Harmonic groups of one feature.

    Group members match vocabulary segments exactly or by IPA base symbol,
    so ``ɑ`` in a group also covers ``ɑː``.
    """

    feature: str
    minus: frozenset[str]
    plus: frozenset[str]
    neutral: frozenset[str] = frozenset()
    minus_code: str = ""
    plus_code: str = ""
    first: str | None = None
    tag: str = ""

    def __post_init__(self):
        for name in ("minus", "plus", "neutral"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        if not self.minus or not self.plus:
            raise EmptyGroup(f"{self.feature}: both harmonic groups must be non-empty")
        if self.minus & self.plus or self.minus & self.neutral or self.plus & self.neutral:
            raise ValueError(f"{self.feature}: groups must be pairwise disjoint")
        m, p, first, tag = FEATURE_CODES.get(self.feature, ("m", "p", MINUS, self.feature))
        if not self.minus_code:
            object.__setattr__(self, "minus_code", m)
        if not self.plus_code:
            object.__setattr__(self, "plus_code", p)
        if not self.tag:
            object.__setattr__(self, "tag", tag)
        if self.first is None:
            object.__setattr__(self, "first", first)
        if self.first not in (MINUS, PLUS):
            raise ValueError("first must be 'minus' or 'plus'")

    @property
    def second(self) -> str:
        return PLUS if self.first == MINUS else MINUS

    def code(self, group: str) -> str:
        return {MINUS: self.minus_code, PLUS: self.plus_code, NEUTRAL_GROUP: NEUTRAL}[group]

    def classify(self, segment: str) -> str | None:
        """Group name of ``segment`` (exact match first, then by base symbol)."""
        for name in (MINUS, PLUS, NEUTRAL_GROUP):
            if segment in getattr(self, name):
                return name
        base = ipa.base_symbol(segment)
        for name in (MINUS, PLUS, NEUTRAL_GROUP):
            if base and any(ipa.base_symbol(v) == base for v in getattr(self, name)):
                return name
        return None

    def swapped(self) -> HarmonyScheme:
        return HarmonyScheme(
            self.feature, self.plus, self.minus, self.neutral,
            self.plus_code, self.minus_code, self.second, self.tag,
        )

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "minus": sorted(self.minus),
            "plus": sorted(self.plus),
            "neutral": sorted(self.neutral),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> HarmonyScheme:
        codes = d.get("codes", {})
        return cls(
            d["feature"], frozenset(d["minus"]), frozenset(d["plus"]), frozenset(d.get("neutral", ())),
            codes.get("minus", ""), codes.get("plus", ""), d.get("first"), d.get("tag", ""),
        )


def load_schemes(path: str | os.PathLike | None = None) -> dict[str, list[HarmonyScheme]]:
    """Scheme file: language id -> list of schemes.  Defaults to the bundled set."""
    if path is None:
        text = resources.files("vharmony").joinpath("data/schemes.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    raw = json.loads(text)
    return {lang: [HarmonyScheme.from_dict(s) for s in entries] for lang, entries in raw.items()}


def derive_scheme(vowels: Iterable[str], feature: str) -> HarmonyScheme:
    """Groups from the IPA vowel table, for languages without a curated scheme.

    back: front vowels vs back vowels, central vowels neutral.
    round: unrounded vs rounded.
    """
    minus, plus, neutral = set(), set(), set()
    for v in vowels:
        q = ipa.quality(v)
        if q is None:
            continue
        if feature == "back":
            {"front": minus, "back": plus, "central": neutral}[q.backness].add(v)
        elif feature == "round":
            (plus if q.rounded else minus).add(v)
        else:
            raise ValueError(f"cannot derive groups for feature {feature!r}")
    return HarmonyScheme(feature, frozenset(minus), frozenset(plus), frozenset(neutral))


def schemes_for(language: str, vowels: Iterable[str], table: Mapping[str, list[HarmonyScheme]] | None = None) -> list[HarmonyScheme]:
    table = load_schemes() if table is None else table
    if language in table:
        return list(table[language])
    vowels = list(vowels)
    return [derive_scheme(vowels, "back"), derive_scheme(vowels, "round")]


# ---------------------------------------------------------------------------
# surprisal


def vowel_surprisal(p: float) -> float:
    """-log2 p, in bits."""
    p = float(p)
    if not p > 0.0 or p > 1.0 + 1e-12:
        raise NonPositiveProbability(f"probability must lie in (0, 1], got {p}")
    # log2(1/p) rather than -log2(p): exact for p = 1/n at small n
    return math.log2(1.0 / p)


def group_surprisal(distribution, group: Collection) -> float:
    """-log2 of the probability mass on ``group``.

    ``distribution`` is a mapping symbol -> probability (``group`` holds
    symbols) or an array (``group`` holds indices).
    """
    if not group:
        raise EmptyGroup("group is empty")
    if isinstance(distribution, Mapping):
        mass = math.fsum(distribution.get(v, 0.0) for v in group)
    else:
        mass = float(np.asarray(distribution)[list(group)].sum())
    if mass <= 0.0:
        raise ZeroMass("group has zero probability mass")
    return vowel_surprisal(min(mass, 1.0))


# ---------------------------------------------------------------------------
# condition labels


@dataclass(frozen=True)
class ConditionCode:
    context: tuple[str, ...]
    group: str

    def __str__(self) -> str:
        return "_".join((*self.context, self.group))


def _contexts(word: WordForm, t: int, scheme: HarmonyScheme, vowels: Collection[str]) -> list[tuple[str, ...]]:
    prior = [s for s in word.segments[:t] if s in vowels]
    if not prior:
        raise NoPrecedingVowel(f"no vowel precedes position {t} in {word}")
    c1 = scheme.classify(prior[-1])
    if c1 is None:
        return []
    out = [(scheme.code(c1),)]
    if c1 == NEUTRAL_GROUP and len(prior) >= 2:
        c0 = scheme.classify(prior[-2])
        if c0 is not None:
            out.append((scheme.code(c0), NEUTRAL))
    return out


def label_condition(word: WordForm, t: int, scheme: HarmonyScheme, vowels) -> list[ConditionCode]:
    """Condition codes for target position ``t``, each for both measured groups.

    An empty list means the nearest preceding vowel belongs to no group of
    the scheme.
    """
    if isinstance(vowels, PhonemeInventory):
        vowels = vowels.vowels
    codes = []
    for ctx in _contexts(word, t, scheme, vowels):
        codes.append(ConditionCode(ctx, scheme.code(scheme.first)))
        codes.append(ConditionCode(ctx, scheme.code(scheme.second)))
    return codes


@dataclass(frozen=True)
class SurprisalSample:
    form_index: int
    word: str
    position: int
    context: tuple[str, ...]
    eta_minus: float
    eta_plus: float
    eta_neutral: float | None = None

    def eta(self, group: str) -> float:
        return {MINUS: self.eta_minus, PLUS: self.eta_plus, NEUTRAL_GROUP: self.eta_neutral}[group]


@dataclass
class Evaluation:
    feature: str
    samples: list[SurprisalSample] = field(default_factory=list)
    skipped: list[int] = field(default_factory=list)  # form indices with unseen segments
    n_forms: int = 0


def scheme_indices(scheme: HarmonyScheme, outputs: Sequence[str]) -> dict[str, list[int]]:
    idx = {MINUS: [], PLUS: [], NEUTRAL_GROUP: []}
    for i, sym in enumerate(outputs):
        g = scheme.classify(sym)
        if g is not None:
            idx[g].append(i)
    return idx


def evaluate_testset(model: TrainedModel, forms: Sequence[WordForm], scheme: HarmonyScheme) -> Evaluation:
    """Feature surprisal at every labelled vowel target position of ``forms``.

    Samples are ordered by form index, then position, then context depth.
    """
    outputs = model.vocab.outputs
    idx = scheme_indices(scheme, outputs)
    if not idx[MINUS] or not idx[PLUS]:
        raise SchemeInventoryMismatch(
            f"{scheme.feature}: a harmonic group has no vowel in the model vocabulary {model.vocab.vowels}"
        )
    missing = [
        v for v in scheme.minus | scheme.plus | scheme.neutral
        if not any(o == v or ipa.base_symbol(o) == ipa.base_symbol(v) for o in outputs)
    ]
    if missing:
        log.warning("%s: scheme vowels absent from vocabulary: %s", scheme.feature, sorted(missing))

    result = Evaluation(scheme.feature, n_forms=len(forms))
    known = []
    for i, f in enumerate(forms):
        if model.vocab.knows(f):
            known.append(i)
        else:
            result.skipped.append(i)
    if result.skipped:
        log.info("skipped %d test forms with unseen segments", len(result.skipped))
    if not known:
        return result

    vowels = set(model.vocab.vowels)
    dists = predict_batch(model, [forms[i] for i in known])
    for i, per_pos in zip(known, dists):
        f = forms[i]
        for t, p in per_pos:
            for ctx in _contexts(f, t, scheme, vowels):
                result.samples.append(SurprisalSample(
                    i, " ".join(f.segments), t, ctx,
                    group_surprisal(p, idx[MINUS]),
                    group_surprisal(p, idx[PLUS]),
                    group_surprisal(p, idx[NEUTRAL_GROUP]) if idx[NEUTRAL_GROUP] else None,
                ))
    return result


def delta_eta(harmonic: Sequence[float], disharmonic: Sequence[float]) -> float:
    """Mean harmonic surprisal minus mean disharmonic surprisal (bits)."""
    if len(harmonic) == 0 or len(disharmonic) == 0:
        raise EmptySampleList("both sample lists must be non-empty")
    return math.fsum(harmonic) / len(harmonic) - math.fsum(disharmonic) / len(disharmonic)


def surprisal_reduction(delta: float) -> float:
    return -delta


# ---------------------------------------------------------------------------
# contrasts


@dataclass
class ContrastResult:
    condition: str
    delta_eta: float
    statistic: float
    p_value: float
    effect_size: float
    kind: str  # paired | unpaired
    n1: int
    n2: int
    feature: str = ""
    statistic_kind: str = ""
    method: str = ""
    rank_biserial: float | None = None
    normality_p: tuple[float | None, float | None] = (None, None)
    samples: tuple[tuple[float, ...], tuple[float, ...]] = field(default=((), ()), repr=False, compare=False)

    @property
    def test(self) -> str:
        return "Wilcoxon" if self.kind == "paired" else "Mann-Whitney"


@dataclass(frozen=True)
class _Paired:
    label: str
    contexts: tuple[tuple[str, ...], ...]
    first: str | None   # group name, or None for "own class" (combined rows)
    second: str | None


@dataclass(frozen=True)
class _Unpaired:
    label: str
    a: tuple[tuple[str, ...], str]
    b: tuple[tuple[str, ...], str]


def contrast_plan(scheme: HarmonyScheme) -> list:
    A, B = scheme.first, scheme.second
    a, b = scheme.code(A), scheme.code(B)
    n = NEUTRAL
    plan = [
        _Paired(f"{a}_{a}/{a}_{b}", ((a,),), A, B),
        _Paired(f"{b}_{b}/{b}_{a}", ((b,),), B, A),
    ]
    if scheme.neutral:
        plan.append(_Paired(f"{n}_{a}/{n}_{b}", ((n,),), A, B))
    plan.append(_Unpaired(f"{a}_{b}/{b}_{a}", ((a,), B), ((b,), A)))
    if scheme.neutral:
        plan += [
            _Paired(f"{a}_{n}_{a}/{a}_{n}_{b}", ((a, n),), A, B),
            _Paired(f"{b}_{n}_{b}/{b}_{n}_{a}", ((b, n),), B, A),
            _Paired(f"{n}_{n}_{a}/{n}_{n}_{b}", ((n, n),), A, B),
            _Unpaired(f"{a}_{n}_{b}/{b}_{n}_{a}", ((a, n), B), ((b, n), A)),
        ]
    plan.append(_Paired(f"{scheme.tag}_h/dish", ((a,), (b,)), None, None))
    return plan


def harmonic_pairs(samples: Iterable[SurprisalSample], scheme: HarmonyScheme) -> tuple[list[float], list[float]]:
    """(harmonic, disharmonic) surprisal at positions after a minus or plus vowel."""
    own = {(scheme.minus_code,): MINUS, (scheme.plus_code,): PLUS}
    h, d = [], []
    for s in samples:
        g = own.get(s.context)
        if g is None:
            continue
        h.append(s.eta(g))
        d.append(s.eta(PLUS if g == MINUS else MINUS))
    return h, d


def _normality(values: Sequence[float]) -> float | None:
    try:
        return stats.shapiro_wilk(values).p_value
    except (ValueError, ArithmeticError):
        return None


def _paired_result(label, feature, h, d, exact_max_n) -> ContrastResult | None:
    if not h:
        return None
    try:
        rep = stats.wilcoxon_signed_rank(h, d, exact_max_n=exact_max_n)
    except AllZeroDifferences:
        log.info("%s: all paired differences are zero; skipped", label)
        return None
    return ContrastResult(
        label, delta_eta(h, d), rep.statistic, rep.p_value, rep.effect_size, "paired",
        len(h), len(d), feature, rep.statistic_kind, rep.method,
        rep.extra["rank_biserial"], (_normality(h), _normality(d)), (tuple(h), tuple(d)),
    )


def _unpaired_result(label, feature, a, b, exact_max_product) -> ContrastResult | None:
    if not a or not b:
        return None
    rep = stats.mann_whitney_u(a, b, exact_max_product=exact_max_product)
    return ContrastResult(
        label, delta_eta(a, b), rep.statistic, rep.p_value, rep.effect_size, "unpaired",
        len(a), len(b), feature, rep.statistic_kind, rep.method,
        rep.effect_size, (_normality(a), _normality(b)), (tuple(a), tuple(b)),
    )


def compute_contrasts(
    evaluations: Sequence[tuple[HarmonyScheme, Sequence[SurprisalSample]]],
    exact_max_n: int = stats.WILCOXON_EXACT_MAX_N,
    exact_max_product: int = stats.MANN_WHITNEY_EXACT_MAX_PRODUCT,
) -> list[ContrastResult]:
    """All contrasts for one language; rows lacking samples are left out.

    Per-context rows come first (feature by feature), then each feature's
    pooled harmonic/disharmonic row.

    With two or more schemes, the pooled disharmonic surprisal of consecutive
    features is also compared (unpaired).
    """
    rows, combined = [], []
    for scheme, samples in evaluations:
        by_ctx: dict[tuple[str, ...], list[SurprisalSample]] = {}
        for s in samples:
            by_ctx.setdefault(s.context, []).append(s)
        for item in contrast_plan(scheme):
            if isinstance(item, _Paired):
                if item.first is None:
                    h, d = harmonic_pairs(samples, scheme)
                else:
                    pool = [s for c in item.contexts for s in by_ctx.get(c, ())]
                    h = [s.eta(item.first) for s in pool]
                    d = [s.eta(item.second) for s in pool]
                row = _paired_result(item.label, scheme.feature, h, d, exact_max_n)
            else:
                a = [s.eta(item.a[1]) for s in by_ctx.get(item.a[0], ())]
                b = [s.eta(item.b[1]) for s in by_ctx.get(item.b[0], ())]
                row = _unpaired_result(item.label, scheme.feature, a, b, exact_max_product)
            if row is None:
                log.info("%s: no samples for %s", scheme.feature, item.label)
            elif isinstance(item, _Paired) and item.first is None:
                combined.append(row)
            else:
                rows.append(row)
    # combined rows of every feature follow the per-context rows
    rows += combined
    for (s1, x1), (s2, x2) in zip(evaluations, evaluations[1:]):
        d1 = harmonic_pairs(x1, s1)[1]
        d2 = harmonic_pairs(x2, s2)[1]
        row = _unpaired_result(f"{s1.tag}/{s2.tag}_dish", f"{s1.feature}/{s2.feature}", d1, d2, exact_max_product)
        if row is not None:
            rows.append(row)
    return rows
