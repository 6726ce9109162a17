"""Vocabulary overlap and divergence between the control and dementia groups.

Each group is pooled into one document; the collection is the concatenation of
both documents, and each group's unigram model is linearly interpolated with
the collection model (Jelinek-Mercer smoothing).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping

from .corpus import CONTROL, DEMENTIA, Dataset
from .errors import BothEmpty, DegenerateGroup, EmptyModel, ZeroDenominator
from .textstats import is_word


@dataclass(frozen=True)
class SmoothedUnigramModel:
    doc_counts: Mapping[str, int]
    doc_total: int
    coll_counts: Mapping[str, int]
    coll_total: int
    alpha_d: float

    def __post_init__(self):
        if not 0.0 <= self.alpha_d <= 1.0:
            raise ValueError(f"alpha_d must lie in [0, 1], got {self.alpha_d}")
        if self.doc_total != sum(self.doc_counts.values()):
            raise ValueError("doc_total does not match the document counts")
        if self.coll_total != sum(self.coll_counts.values()):
            raise ValueError("coll_total does not match the collection counts")
        for w, c in self.doc_counts.items():
            if c > self.coll_counts.get(w, 0):
                raise ValueError(f"document count of {w!r} exceeds its collection count")

    @classmethod
    def build(cls, doc: Iterable[str], collection: Iterable[str], alpha_d: float) -> "SmoothedUnigramModel":
        d, s = Counter(doc), Counter(collection)
        return cls(dict(d), sum(d.values()), dict(s), sum(s.values()), alpha_d)

    @property
    def vocabulary(self) -> frozenset[str]:
        return frozenset(self.coll_counts)


def jaccard(p: set[str], c: set[str]) -> float:
    p, c = set(p), set(c)
    union = p | c
    if not union:
        raise BothEmpty("Jaccard index undefined for two empty sets")
    return len(p & c) / len(union)


def jm_probability(model: SmoothedUnigramModel, w: str) -> float:
    if model.doc_total <= 0 or model.coll_total <= 0:
        raise EmptyModel("smoothed model needs non-empty document and collection")
    p_doc = model.doc_counts.get(w, 0) / model.doc_total
    p_coll = model.coll_counts.get(w, 0) / model.coll_total
    return (1.0 - model.alpha_d) * p_doc + model.alpha_d * p_coll


def kl_divergence(p_model: SmoothedUnigramModel, q_model: SmoothedUnigramModel,
                  vocabulary: Iterable[str], base: float = math.e) -> float:
    """KL(P || Q) summed over ``vocabulary``; 0 * log(0/q) is taken as 0."""
    log_base = math.log(base)
    total = 0.0
    for w in sorted(vocabulary):
        p = jm_probability(p_model, w)
        if p == 0.0:
            continue
        q = jm_probability(q_model, w)
        if q == 0.0:
            raise ZeroDenominator(f"q({w!r}) = 0 while p({w!r}) = {p}")
        total += p * math.log(p / q)
    return max(0.0, total / log_base)


def _group_words(dataset: Dataset, label: int) -> list[str]:
    return [t for tr in dataset.by_label(label) for t in tr.tokens if is_word(t)]


def group_divergence(dataset: Dataset, alpha_d: float = 0.2, base: float = math.e) -> dict[str, float]:
    """Jaccard of the two groups' vocabularies plus KL divergence in both directions."""
    control = _group_words(dataset, CONTROL)
    dementia = _group_words(dataset, DEMENTIA)
    if not control or not dementia:
        raise DegenerateGroup("both groups need at least one word token")
    collection = control + dementia
    m_control = SmoothedUnigramModel.build(control, collection, alpha_d)
    m_dementia = SmoothedUnigramModel.build(dementia, collection, alpha_d)
    vocab = m_control.vocabulary
    return {
        "jaccard": jaccard(set(control), set(dementia)),
        "kl_cd": kl_divergence(m_control, m_dementia, vocab, base),
        "kl_dc": kl_divergence(m_dementia, m_control, vocab, base),
        "alpha_d": alpha_d,
    }
