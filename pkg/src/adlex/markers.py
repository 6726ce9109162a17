"""Linguistic-marker analysis: which unigrams and POS tags correlate with the dementia label."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Dataset
from .errors import NoFeatures, UnknownBackend
from .stats import bh_adjust, point_biserial
from .textstats import is_word

PTB_TAGS = frozenset("""
CC CD DT EX FW IN JJ JJR JJS LS MD NN NNS NNP NNPS PDT POS PRP PRP$ RB RBR RBS RP SYM TO UH
VB VBD VBG VBN VBP VBZ WDT WP WP$ WRB . , : `` '' -LRB- -RRB- # $
""".split())

_CLOSED_CLASS = {
    "DT": "the a an this that these those every each some any no another all both either neither",
    "PRP": "i you he she it we they me him her us them myself yourself himself herself itself ourselves themselves",
    "PRP$": "my your his its our their",
    "UH": "oh well yeah yes okay ok mhm uh um hm hmm ah alright wow gee huh oops uhhuh",
    "RB": "probably maybe here just really down so not very too also then now again still already always "
          "never away back almost even only perhaps quite rather soon yet somewhere anyway",
    "EX": "there",
    "IN": "in on at from into under near of for with by about over after before like through behind "
          "if because while until since against across around onto upon without outside inside beside",
    "CC": "and but or nor plus",
    "TO": "to",
    "MD": "can could will would should may might must shall",
    "WP": "what who whom",
    "WDT": "which whatever",
    "WRB": "where when how why",
    "RP": "up out off",
    "VBZ": "is has does",
    "VBP": "are have do am",
    "VB": "be go see get make take look",
    "VBN": "been gone done seen",
    "VBG": "being",
    "JJ": "little big new old other good bad small large tall whole",
    "CD": "one two three four five six seven eight nine ten",
    "VBD": "was were did had gave went took got said forgot saw fell came made knew thought ran told left "
           "sat stood broke ate began brought caught held kept lost meant met sold sent threw wore wrote "
           "drank drove fed felt found heard hid stole spilt",
}
LEXICON: dict[str, str] = {w: tag for tag, words in _CLOSED_CLASS.items() for w in words.split()}
# nouns that would otherwise hit the -ing / -ly suffix rules
LEXICON.update({w: "NN" for w in "something nothing anything everything thing ceiling morning evening "
                                 "king ring string spring wing family belly".split()})
LEXICON.update({"only": "RB", "early": "RB", "lovely": "JJ", "ugly": "JJ"})
PUNCT_TAGS = {".": ".", "?": ".", "!": ".", ",": ",", ";": ":", ":": ":"}


@dataclass(frozen=True)
class TaggedToken:
    token: str
    tag: str

    def __post_init__(self):
        if not self.token:
            raise ValueError("tagged token must be non-empty")
        if self.tag not in PTB_TAGS:
            raise ValueError(f"{self.tag!r} is not a Penn Treebank tag")


def _tag_word(word: str) -> str:
    w = word.lower()
    if w in PUNCT_TAGS:
        return PUNCT_TAGS[w]
    if w in LEXICON:
        return LEXICON[w]
    if "'" in w:
        head, _, _ = w.partition("'")
        if w.endswith("n't"):
            # didn't -> did, can't -> ca(n)
            stem = w[:-3]
            return LEXICON.get(stem, LEXICON.get(stem + "n", "VBP"))
        # clitics stay attached; tag by the host word ("she's" -> PRP)
        return LEXICON.get(head, _tag_word(head) if head else "NN")
    if w.isdigit():
        return "CD"
    if len(w) > 4 and w.endswith("ing"):
        return "VBG"
    if len(w) > 3 and w.endswith("ed"):
        return "VBD"
    if len(w) > 3 and w.endswith("ly"):
        return "RB"
    return "NN"


def pos_tag(tokens: Sequence[str], backend: str = "lexicon",
            external: Sequence[tuple[str, str]] | None = None) -> list[TaggedToken]:
    """Tag tokens with the bundled lexicon+suffix tagger, or pass through externally supplied tags."""
    if backend == "lexicon":
        return [TaggedToken(t, _tag_word(t)) for t in tokens]
    if backend == "external":
        if external is None:
            raise UnknownBackend("external backend needs the transcript's (token, tag) pairs")
        return [TaggedToken(tok, tag) for tok, tag in external]
    raise UnknownBackend(f"unknown tagger backend {backend!r}")


def load_tag_sidecar(path) -> dict[str, list[tuple[str, str]]]:
    """Read ``{"id", "tags": [[token, tag], ...]}`` JSON lines."""
    out: dict[str, list[tuple[str, str]]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            obj = json.loads(line)
            out[obj["id"]] = [(tok, tag) for tok, tag in obj["tags"]]
    return out


@dataclass(frozen=True)
class FeatureMatrix:
    features: tuple[str, ...]
    ids: tuple[str, ...]
    labels: np.ndarray
    matrix: np.ndarray  # transcripts x features, rows sum to 1
    excluded: tuple[str, ...] = ()


def _counted_features(tokens: Sequence[str], kind: str, tags) -> Counter:
    if kind == "unigram":
        return Counter(t.lower() for t in tokens if is_word(t))
    tagged = pos_tag(tokens, "external", tags) if tags is not None else pos_tag(tokens)
    return Counter(tt.tag for tt in tagged if is_word(tt.token))


def feature_matrix(dataset: Dataset, kind: str = "unigram", min_doc_freq: int = 5,
                   tags: Mapping[str, Sequence[tuple[str, str]]] | None = None) -> FeatureMatrix:
    """Relative feature frequencies per transcript.

    Features present in fewer than ``min_doc_freq`` transcripts are dropped
    before normalising; transcripts left with no counted feature are excluded
    and listed in ``excluded``.
    """
    kind = kind.lower()
    if kind not in ("unigram", "pos"):
        raise ValueError(f"kind must be 'unigram' or 'pos', got {kind!r}")
    if len(dataset) == 0:
        raise NoFeatures("empty dataset")
    counts = [_counted_features(t.tokens, kind, tags.get(t.id) if tags is not None else None) for t in dataset]
    df = Counter(f for c in counts for f in c)
    features = tuple(sorted(f for f, n in df.items() if n >= min_doc_freq))
    if not features:
        raise NoFeatures(f"no {kind} feature reaches document frequency {min_doc_freq}")
    col = {f: j for j, f in enumerate(features)}
    rows, ids, labels, excluded = [], [], [], []
    for t, c in zip(dataset, counts):
        row = np.zeros(len(features))
        for f, n in c.items():
            if f in col:
                row[col[f]] = n
        total = row.sum()
        if total == 0:
            excluded.append(t.id)
            continue
        rows.append(row / total)
        ids.append(t.id)
        labels.append(t.label)
    if not rows:
        raise NoFeatures("every transcript lacks counted features")
    return FeatureMatrix(features, tuple(ids), np.array(labels), np.vstack(rows), tuple(excluded))


@dataclass(frozen=True)
class MarkerResult:
    feature: str
    kind: str
    r: float
    p: float
    p_adjusted: float

    @property
    def direction(self) -> str:
        return "control" if self.r < 0 else "dementia"

    @property
    def magnitude(self) -> float:
        return abs(self.r)

    def to_json(self) -> dict:
        return {"feature": self.feature, "kind": self.kind, "r": self.r, "abs_r": self.magnitude,
                "p": self.p, "p_adjusted": self.p_adjusted, "direction": self.direction}


def correlate_columns(fm: FeatureMatrix, kind: str) -> list[MarkerResult]:
    """Point-biserial r of every column against the labels, BH-adjusted, unfiltered."""
    corr = [point_biserial(fm.matrix[:, j], fm.labels) for j in range(len(fm.features))]
    adjusted = bh_adjust([c.p for c in corr])
    results = [MarkerResult(f, kind, c.r, c.p, float(a)) for f, c, a in zip(fm.features, corr, adjusted)]
    return sorted(results, key=lambda m: (-m.magnitude, m.feature))


def correlate_markers(dataset: Dataset, kind: str = "pos", min_doc_freq: int = 5, alpha_level: float = 0.05,
                      tags: Mapping[str, Sequence[tuple[str, str]]] | None = None) -> list[MarkerResult]:
    """Significant markers (BH-adjusted p below ``alpha_level``), strongest first."""
    fm = feature_matrix(dataset, kind, min_doc_freq, tags)
    return [m for m in correlate_columns(fm, kind.lower()) if m.p_adjusted < alpha_level]
