"""Per-transcript text statistics and control-vs-dementia group comparison."""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import CONTROL, DEMENTIA, Dataset
from .errors import DegenerateGroup
from .stats import bh_adjust, t_test_independent

VOWELS = "aeiouy"
TERMINATORS = frozenset(".?!")
METRICS = ("syllables", "lexicon", "difficult", "sentences")
_VOWEL_RUN = re.compile(r"[aeiouy]+")


def _letters(token: str) -> str:
    """Lowercase letters of a word token ("she's" -> "shes"); "" for non-words."""
    stripped = token.lower().replace("'", "").replace("-", "")
    return stripped if stripped.isalpha() and stripped.isascii() else ""


def is_word(token: str) -> bool:
    return bool(_letters(token))


def count_syllables(word: str) -> int:
    """Vowel-group syllable estimate; 0 for tokens that are not words.

    Silent endings are discounted: a final "e" after a consonant (but not the
    "-le" of "table"), "-ed" not after t/d, and "-es" not after a sibilant.
    A consonant + "ying" ending ("drying") counts the y as its own syllable.
    """
    w = _letters(word)
    if not w:
        return 0
    n = len(_VOWEL_RUN.findall(w))
    if len(w) > 2 and w.endswith("e") and w[-2] not in VOWELS and not (w[-2] == "l" and w[-3] not in VOWELS):
        n -= 1
    elif len(w) > 3 and w.endswith("ed") and w[-3] not in VOWELS + "td":
        n -= 1
    elif (len(w) > 3 and w.endswith("es") and w[-3] not in VOWELS + "sxzcgh"
          and not (w[-3] == "l" and w[-4] not in VOWELS)):
        n -= 1
    if re.search(r"[^aeiou]ying$", w):
        n += 1
    return max(1, n)


def load_easy_words(path=None) -> frozenset[str]:
    """Read a one-word-per-line list ("#" starts a comment); defaults to the bundled Dale-Chall list."""
    if path is None:
        text = resources.files("adlex").joinpath("data/easy_words.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    words = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            words.add(line)
    return frozenset(words)


@dataclass(frozen=True)
class TranscriptStats:
    syllables: int = 0
    lexicon: int = 0
    difficult: int = 0
    sentences: int = 0

    def __add__(self, other: "TranscriptStats") -> "TranscriptStats":
        return TranscriptStats(*(getattr(self, m) + getattr(other, m) for m in METRICS))

    def as_tuple(self) -> tuple[int, int, int, int]:
        return tuple(getattr(self, m) for m in METRICS)


def transcript_stats(tokens: Sequence[str], easy_words: Iterable[str]) -> TranscriptStats:
    easy = easy_words if isinstance(easy_words, (set, frozenset)) else frozenset(easy_words)
    syllables = lexicon = difficult = sentences = 0
    for tok in tokens:
        if tok in TERMINATORS:
            sentences += 1
            continue
        n = count_syllables(tok)
        if n == 0:
            continue
        lexicon += 1
        syllables += n
        if n > 2 and tok.lower() not in easy:
            difficult += 1
    if tokens and sentences == 0:
        sentences = 1
    return TranscriptStats(syllables, lexicon, difficult, sentences)


@dataclass(frozen=True)
class GroupComparison:
    metric_name: str
    control_mean: float
    control_std: float
    dementia_mean: float
    dementia_std: float
    t: float
    p: float
    p_adjusted: float
    significant: bool

    def to_json(self) -> dict:
        return dict(self.__dict__)


def compare_groups(dataset: Dataset, easy_words: Iterable[str], variant: str = "student",
                   alpha_level: float = 0.05) -> list[GroupComparison]:
    """t-test each of the four metrics between groups, BH-adjusting across the four p-values."""
    easy = frozenset(w.lower() for w in easy_words)
    groups = {}
    for label in (CONTROL, DEMENTIA):
        members = dataset.by_label(label)
        if len(members) < 2:
            raise DegenerateGroup(f"class {label} has {len(members)} transcripts; at least 2 required")
        groups[label] = np.array([transcript_stats(t.tokens, easy).as_tuple() for t in members], dtype=np.float64)

    tests = [t_test_independent(groups[CONTROL][:, j], groups[DEMENTIA][:, j], variant) for j in range(len(METRICS))]
    adjusted = bh_adjust([r.p for r in tests])
    rows = []
    for j, (name, res) in enumerate(zip(METRICS, tests)):
        c, d = groups[CONTROL][:, j], groups[DEMENTIA][:, j]
        rows.append(GroupComparison(
            metric_name=name,
            control_mean=float(c.mean()), control_std=float(c.std(ddof=1)),
            dementia_mean=float(d.mean()), dementia_std=float(d.std(ddof=1)),
            t=res.t, p=res.p, p_adjusted=float(adjusted[j]),
            significant=bool(adjusted[j] < alpha_level),
        ))
    return rows
