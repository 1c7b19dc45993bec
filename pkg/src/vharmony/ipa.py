"""IPA symbol tables used to class segments as vowels or consonants.

Only base symbols are listed.  A segment such as ``aː`` or ``ɛ̃`` is classed by
its first base character after diacritics, length marks and tie bars are
stripped, so every modified vowel inherits the class of its base vowel.
"""

from __future__ import annotations

import unicodedata
from typing import NamedTuple


class VowelQuality(NamedTuple):
    backness: str  # front | central | back
    rounded: bool


VOWELS: dict[str, VowelQuality] = {
    # front
    "i": VowelQuality("front", False),
    "y": VowelQuality("front", True),
    "ɪ": VowelQuality("front", False),
    "ʏ": VowelQuality("front", True),
    "e": VowelQuality("front", False),
    "ø": VowelQuality("front", True),
    "ɛ": VowelQuality("front", False),
    "œ": VowelQuality("front", True),
    "æ": VowelQuality("front", False),
    "ɶ": VowelQuality("front", True),
    "ᴇ": VowelQuality("front", False),
    # central
    "ɨ": VowelQuality("central", False),
    "ʉ": VowelQuality("central", True),
    "ᵻ": VowelQuality("central", False),
    "ᵿ": VowelQuality("central", True),
    "ɘ": VowelQuality("central", False),
    "ɵ": VowelQuality("central", True),
    "ə": VowelQuality("central", False),
    "ɚ": VowelQuality("central", False),
    "ɜ": VowelQuality("central", False),
    "ɝ": VowelQuality("central", False),
    "ɞ": VowelQuality("central", True),
    "ɐ": VowelQuality("central", False),
    "a": VowelQuality("central", False),  # word lists use a for the low central vowel
    # back
    "ɯ": VowelQuality("back", False),
    "u": VowelQuality("back", True),
    "ʊ": VowelQuality("back", True),
    "ɤ": VowelQuality("back", False),
    "o": VowelQuality("back", True),
    "ʌ": VowelQuality("back", False),
    "ɔ": VowelQuality("back", True),
    "ɑ": VowelQuality("back", False),
    "ɒ": VowelQuality("back", True),
}

CONSONANTS: frozenset[str] = frozenset(
    "pbtdʈɖcɟkgɡqɢʔmɱnɳɲŋɴʙrʀⱱɾɽɸβfvθðszʃʒʂʐçʝxɣχʁħʕhɦɬɮʋɹɻjɰlɭʎʟ"
    "ʍwɥʜʢʡɕʑɺɧʘǀǃǂǁɓɗʄɠʛʦʧʨʣʤʥƛλɫ"
)

# Spacing modifiers that are not letters in their own right.
_MODIFIERS = frozenset("ːˑʰʷʲˠˤˀʼ˞ⁿˡ̚ʱ˭͜͡ᵝᶣᶹᵊ'ˈˌ.")

BOUNDARY_TOKENS = frozenset({"+", "_", "#", "|"})


def base_symbol(segment: str) -> str:
    """First base character of *segment*, or "" when it has none."""
    for ch in unicodedata.normalize("NFD", segment):
        if unicodedata.combining(ch) or ch in _MODIFIERS:
            continue
        return ch
    return ""


def classify(segment: str) -> str | None:
    """Return ``"vowel"``, ``"consonant"`` or None when the base is unknown."""
    base = base_symbol(segment)
    if base in VOWELS:
        return "vowel"
    if base in CONSONANTS:
        return "consonant"
    return None


def quality(segment: str) -> VowelQuality | None:
    return VOWELS.get(base_symbol(segment))
