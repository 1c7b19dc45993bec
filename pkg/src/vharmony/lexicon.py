"""Word-list ingestion, preprocessing, splitting and synthetic corpora."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from . import ipa
from .errors import (
    BadSpec,
    EmptyLexicon,
    InsufficientData,
    MalformedRow,
    UnknownSegmentClass,
)

log = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class WordForm:
    segments: tuple[str, ...]
    language: str
    concept: str | None = None
    form: str | None = None

    def __post_init__(self):
        if not self.segments:
            raise MalformedRow(f"empty segment sequence for {self.language}:{self.form!r}")
        object.__setattr__(self, "segments", tuple(self.segments))

    def __len__(self) -> int:
        return len(self.segments)

    def __str__(self) -> str:
        return "[" + " ".join(self.segments) + "]"


@dataclass(frozen=True)
class PhonemeInventory:
    """Segment alphabet with its vocalic subset.

    ``provenance`` records, per segment, whether the class came from the
    built-in IPA table or from a user override.
    """

    segments: frozenset[str]
    vowels: frozenset[str]
    provenance: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.vowels <= self.segments:
            raise ValueError("vowels must be a subset of segments")

    def is_vowel(self, segment: str) -> bool:
        return segment in self.vowels

    @property
    def consonants(self) -> frozenset[str]:
        return self.segments - self.vowels

    def restrict(self, used: Iterable[str]) -> PhonemeInventory:
        keep = frozenset(used) & self.segments
        return PhonemeInventory(
            keep,
            self.vowels & keep,
            {s: p for s, p in self.provenance.items() if s in keep},
        )


@dataclass(frozen=True)
class Lexicon:
    forms: tuple[WordForm, ...]
    inventory: PhonemeInventory
    language: str
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.forms)

    def __iter__(self):
        return iter(self.forms)


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[WordForm, ...]
    valid: tuple[WordForm, ...]
    test: tuple[WordForm, ...]
    seed: int
    ratios: tuple[float, float, float]


# ---------------------------------------------------------------------------
# inventory construction


def build_inventory(
    forms: Iterable[WordForm], overrides: Mapping[str, str] | None = None
) -> PhonemeInventory:
    overrides = dict(overrides or {})
    segments: set[str] = set()
    for f in forms:
        segments.update(f.segments)
    vowels = set()
    provenance = {}
    unknown = []
    for seg in sorted(segments):
        if seg in overrides:
            cls = overrides[seg]
            provenance[seg] = "override"
        else:
            cls = ipa.classify(seg)
            provenance[seg] = "ipa-table"
        if cls is None:
            unknown.append(seg)
        elif cls == "vowel":
            vowels.add(seg)
    if unknown:
        raise UnknownSegmentClass(
            "cannot classify segment(s) " + ", ".join(repr(u) for u in unknown)
            + "; add them to an override file"
        )
    return PhonemeInventory(frozenset(segments), frozenset(vowels), provenance)


def load_overrides(path: str | os.PathLike) -> dict[str, str]:
    """Read ``segment<TAB>vowel|consonant`` lines."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                seg, cls = line.split("\t")
            except ValueError:
                raise MalformedRow(f"{path}:{lineno}: expected 'segment<TAB>class'") from None
            cls = cls.strip().lower()
            if cls not in ("vowel", "consonant"):
                raise MalformedRow(f"{path}:{lineno}: class must be vowel or consonant, got {cls!r}")
            out[seg.strip()] = cls
    return out


# ---------------------------------------------------------------------------
# parsing


def _tokenize(field_value: str) -> list[str]:
    out = []
    for tok in field_value.split():
        if tok in ipa.BOUNDARY_TOKENS:
            continue
        # CLDF "source/target" notation: keep the normalized target
        if "/" in tok and len(tok) > 1:
            tok = tok.rsplit("/", 1)[1] or tok.split("/", 1)[0]
        out.append(tok)
    return out


def _language_aliases(forms_path: Path) -> dict[str, str]:
    """Map Glottocode / ISO code / name onto Language_ID using a sibling languages table."""
    aliases: dict[str, str] = {}
    for name in ("languages.csv", "languages.tsv"):
        p = forms_path.with_name(name)
        if not p.exists():
            continue
        with open(p, encoding="utf-8", newline="") as fh:
            text = fh.read()
        reader = csv.DictReader(io.StringIO(text), delimiter="\t" if name.endswith(".tsv") else ",")
        for row in reader:
            lid = row.get("ID")
            if not lid:
                continue
            for key in ("ID", "Glottocode", "ISO639P3code", "Name"):
                v = (row.get(key) or "").strip()
                if v:
                    aliases.setdefault(v, lid)
                    aliases.setdefault(v.lower(), lid)
        break
    return aliases


def _read_source(source) -> tuple[str, Path | None]:
    if isinstance(source, os.PathLike):
        path = Path(source)
        return path.read_text(encoding="utf-8"), path
    if isinstance(source, str):
        if "\n" not in source and os.path.exists(source):
            path = Path(source)
            return path.read_text(encoding="utf-8"), path
        return source, None
    return source.read(), None


def parse_wordlist(
    source: str | os.PathLike | TextIO,
    language_filter: str | None = None,
    overrides: Mapping[str, str] | None = None,
    strict: bool = True,
) -> Lexicon:
    """Parse a CLDF FormTable-like table into a Lexicon.

    ``source`` may be a path, a file object or the table text itself.  Tab
    and comma delimiters are both accepted (sniffed from the header line).
    With ``strict=False`` malformed rows are skipped and counted instead of
    raising.
    """
    text, path = _read_source(source)
    text = text.lstrip("﻿")
    header = text.split("\n", 1)[0]
    delimiter = "\t" if "\t" in header else ","
    reader = csv.DictReader(io.StringIO(text), delimiter=delimiter)
    cols = reader.fieldnames or []
    for required in ("Language_ID", "Segments"):
        if required not in cols:
            raise MalformedRow(f"missing required column {required!r} (have {cols})")

    wanted = None
    if language_filter is not None:
        aliases = _language_aliases(path) if path is not None else {}
        wanted = aliases.get(language_filter, aliases.get(language_filter.lower(), language_filter))

    forms = []
    skipped = 0
    rows = 0
    languages = set()
    for lineno, row in enumerate(reader, 2):
        rows += 1
        lang = (row.get("Language_ID") or "").strip()
        if wanted is not None and lang != wanted:
            continue
        segs = _tokenize(row.get("Segments") or "")
        if not segs:
            if strict:
                raise MalformedRow(f"line {lineno}: empty Segments field")
            skipped += 1
            continue
        languages.add(lang)
        concept = row.get("Parameter_ID") or row.get("Concept") or None
        forms.append(WordForm(tuple(segs), lang, concept, row.get("Form") or None))

    if not forms:
        raise EmptyLexicon(f"no forms found for language {language_filter!r}")
    inventory = build_inventory(forms, overrides)
    if wanted is not None:
        language = wanted
    else:
        language = forms[0].language if len(languages) == 1 else "+".join(sorted(languages))
    meta = {"rows_read": rows, "rows_skipped": skipped, "source": str(path) if path else None}
    return Lexicon(tuple(forms), inventory, language, meta)


# ---------------------------------------------------------------------------
# preprocessing

_SEP = "\x1f"


def _key(segments: Sequence[str]) -> str:
    return _SEP + _SEP.join(segments) + _SEP


def preprocess(lexicon: Lexicon) -> Lexicon:
    """Collapse duplicate forms, then drop forms contained in another form."""
    seen = set()
    unique = []
    for f in lexicon.forms:
        if f.segments not in seen:
            seen.add(f.segments)
            unique.append(f)
    keys = [_key(f.segments) for f in unique]
    # A key occurs once (as itself) unless it is also a contiguous run inside
    # another form; the record separator keeps matches inside single forms.
    haystack = "\x1e".join(keys)
    survivors = [f for f, k in zip(unique, keys) if haystack.count(k) < 2]
    if not survivors:
        raise EmptyLexicon("nothing survived preprocessing")
    used = {s for f in survivors for s in f.segments}
    meta = dict(lexicon.metadata)
    meta.update(
        n_raw=len(lexicon.forms),
        n_duplicates=len(lexicon.forms) - len(unique),
        n_substrings=len(unique) - len(survivors),
    )
    return Lexicon(tuple(survivors), lexicon.inventory.restrict(used), lexicon.language, meta)


def split_dataset(
    lexicon: Lexicon, seed: int, ratios: Sequence[float] = (0.6, 0.1, 0.3)
) -> DatasetSplit:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive fractions summing to 1, got {ratios}")
    n = len(lexicon.forms)
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_valid = math.floor(ratios[1] * n + 1e-9)
    n_test = n - n_train - n_valid
    if min(n_train, n_valid, n_test) < 1:
        raise InsufficientData(f"{n} forms cannot fill a {ratios} split")
    order = np.random.default_rng(seed).permutation(n)
    forms = [lexicon.forms[i] for i in order]
    return DatasetSplit(
        tuple(forms[:n_train]),
        tuple(forms[n_train : n_train + n_valid]),
        tuple(forms[n_train + n_valid :]),
        seed,
        ratios,
    )


# ---------------------------------------------------------------------------
# synthetic corpora


@dataclass(frozen=True)
class SyntheticSpec:
    """Two-class CV corpus.

    ``strength`` is the probability that a non-initial vowel slot copies the
    class of the word's first vowel; otherwise its class is drawn uniformly.
    """

    minus_vowels: tuple[str, ...] = ("i", "e", "y", "ø")
    plus_vowels: tuple[str, ...] = ("ɯ", "a", "u", "o")
    consonants: tuple[str, ...] = ("p", "t", "k", "s", "m", "n", "l", "r")
    n_words: int = 1000
    min_vowels: int = 2
    max_vowels: int = 4
    strength: float = 1.0
    onset_prob: float = 0.8
    coda_prob: float = 0.5
    language: str = "synthetic"


def generate_synthetic_lexicon(spec: SyntheticSpec, seed: int) -> Lexicon:
    """Generate ``spec.n_words`` distinct forms, none a substring of another.

    The result is already a fixed point of :func:`preprocess`.
    """
    if len(spec.minus_vowels) < 2 or len(spec.plus_vowels) < 2:
        raise BadSpec("each vowel class needs at least two vowels")
    if not spec.consonants:
        raise BadSpec("no consonants")
    if spec.n_words < 1:
        raise BadSpec("n_words must be positive")
    if not 1 <= spec.min_vowels <= spec.max_vowels:
        raise BadSpec("bad vowel-count range")
    if not 0.0 <= spec.strength <= 1.0:
        raise BadSpec("strength must lie in [0, 1]")

    rng = np.random.default_rng(seed)
    classes = (spec.minus_vowels, spec.plus_vowels)
    forms: list[WordForm] = []
    keys: list[str] = []
    seen: set[tuple[str, ...]] = set()
    attempts = 0
    while len(forms) < spec.n_words:
        attempts += 1
        if attempts > 200 * spec.n_words + 1000:
            raise BadSpec(f"could only generate {len(forms)} distinct forms")
        k = int(rng.integers(spec.min_vowels, spec.max_vowels + 1))
        first = int(rng.integers(2))
        segs = []
        for slot in range(k):
            if slot == 0 or rng.random() < spec.strength:
                cls = first
            else:
                cls = int(rng.integers(2))
            if rng.random() < spec.onset_prob:
                segs.append(spec.consonants[rng.integers(len(spec.consonants))])
            segs.append(classes[cls][rng.integers(len(classes[cls]))])
        if rng.random() < spec.coda_prob:
            segs.append(spec.consonants[rng.integers(len(spec.consonants))])
        segs = tuple(segs)
        if segs in seen:
            continue
        key = _key(segs)
        if any(key in other or other in key for other in keys):
            continue
        seen.add(segs)
        keys.append(key)
        forms.append(WordForm(segs, spec.language))

    inventory = build_inventory(forms)
    meta = {"synthetic": True, "strength": spec.strength, "seed": seed}
    return Lexicon(tuple(forms), inventory, spec.language, meta)


# ---------------------------------------------------------------------------
# snapshots


def lexicon_to_dict(lexicon: Lexicon) -> dict:
    return {
        "version": SNAPSHOT_VERSION,
        "language": lexicon.language,
        "metadata": dict(lexicon.metadata),
        "inventory": {
            "segments": sorted(lexicon.inventory.segments),
            "vowels": sorted(lexicon.inventory.vowels),
            "provenance": dict(sorted(lexicon.inventory.provenance.items())),
        },
        "forms": [
            {"segments": list(f.segments), "language": f.language, "concept": f.concept, "form": f.form}
            for f in lexicon.forms
        ],
    }


def lexicon_from_dict(data: Mapping) -> Lexicon:
    if data.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported lexicon snapshot version {data.get('version')!r}")
    inv = data["inventory"]
    inventory = PhonemeInventory(
        frozenset(inv["segments"]), frozenset(inv["vowels"]), dict(inv.get("provenance", {}))
    )
    forms = tuple(
        WordForm(tuple(f["segments"]), f["language"], f.get("concept"), f.get("form"))
        for f in data["forms"]
    )
    return Lexicon(forms, inventory, data["language"], dict(data.get("metadata", {})))


def save_lexicon(lexicon: Lexicon, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(lexicon_to_dict(lexicon), fh, ensure_ascii=False, indent=1)
        fh.write("\n")


def load_lexicon(path: str | os.PathLike) -> Lexicon:
    with open(path, encoding="utf-8") as fh:
        return lexicon_from_dict(json.load(fh))


def write_wordlist(lexicon: Lexicon, path: str | os.PathLike) -> None:
    """Write the lexicon as a tab-separated FormTable."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["ID", "Language_ID", "Parameter_ID", "Form", "Segments"])
        for i, f in enumerate(lexicon.forms, 1):
            w.writerow([i, f.language, f.concept or "", f.form or "".join(f.segments), " ".join(f.segments)])
