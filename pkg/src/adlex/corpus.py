"""Transcript data model, corpus loading, repeated stratified CV plans and a synthetic corpus."""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .chat import DEFAULT_POLICY, clean_utterance, parse_chat, participant_utterances
from .errors import DuplicateId, InvalidTranscript, MissingMetadata, OutOfRange, TooFewSamples

log = logging.getLogger(__name__)

CONTROL, DEMENTIA = 0, 1


class SeverityClass(enum.IntEnum):
    """MMSE severity bucket; the integer value is the class index used by the severity head."""

    HEALTHY = 0
    MILD = 1
    MODERATE = 2
    SEVERE = 3


def mmse_to_severity(mmse: int) -> SeverityClass:
    if isinstance(mmse, bool) or int(mmse) != mmse or not 0 <= mmse <= 30:
        raise OutOfRange(f"MMSE must be an integer in [0, 30], got {mmse!r}")
    if mmse >= 25:
        return SeverityClass.HEALTHY
    if mmse >= 21:
        return SeverityClass.MILD
    if mmse >= 10:
        return SeverityClass.MODERATE
    return SeverityClass.SEVERE


@dataclass(frozen=True)
class Transcript:
    id: str
    tokens: tuple[str, ...]
    label: int
    mmse: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.id:
            raise InvalidTranscript("transcript id must be non-empty")
        if self.label not in (CONTROL, DEMENTIA):
            raise InvalidTranscript(f"{self.id}: label must be 0 or 1, got {self.label!r}")
        if self.mmse is not None and not (0 <= self.mmse <= 30):
            raise InvalidTranscript(f"{self.id}: MMSE {self.mmse} outside [0, 30]")
        if not self.tokens:
            raise InvalidTranscript(f"{self.id}: no tokens")

    @property
    def severity(self) -> SeverityClass | None:
        return None if self.mmse is None else mmse_to_severity(self.mmse)

    def to_json(self) -> dict:
        return {"id": self.id, "tokens": list(self.tokens), "label": self.label, "mmse": self.mmse}

    @classmethod
    def from_json(cls, obj: dict) -> "Transcript":
        return cls(obj["id"], tuple(obj["tokens"]), int(obj["label"]), obj.get("mmse"))


@dataclass(frozen=True)
class Dataset:
    transcripts: tuple[Transcript, ...]

    def __post_init__(self):
        object.__setattr__(self, "transcripts", tuple(self.transcripts))
        seen = set()
        for t in self.transcripts:
            if t.id in seen:
                raise DuplicateId(f"duplicate transcript id {t.id!r}")
            seen.add(t.id)

    def __len__(self) -> int:
        return len(self.transcripts)

    def __iter__(self):
        return iter(self.transcripts)

    def __getitem__(self, i):
        return self.transcripts[i]

    @property
    def ids(self) -> list[str]:
        return [t.id for t in self.transcripts]

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.label for t in self.transcripts], dtype=np.int64)

    def by_label(self, label: int) -> list[Transcript]:
        return [t for t in self.transcripts if t.label == label]

    def subset(self, ids: Iterable[str]) -> "Dataset":
        index = {t.id: t for t in self.transcripts}
        return Dataset(tuple(index[i] for i in ids))

    def to_jsonl(self) -> str:
        return "".join(json.dumps(t.to_json(), ensure_ascii=False) + "\n" for t in self.transcripts)

    @classmethod
    def from_jsonl(cls, text: str) -> "Dataset":
        return cls(tuple(Transcript.from_json(json.loads(line)) for line in text.splitlines() if line.strip()))

    @classmethod
    def read(cls, path) -> "Dataset":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------------------- loading

def _parse_label(value: str, row_id: str) -> int:
    v = value.strip().lower()
    if v in ("0", "control", "cc", "cn"):
        return CONTROL
    if v in ("1", "dementia", "ad", "cd"):
        return DEMENTIA
    raise InvalidTranscript(f"{row_id}: unrecognised label {value!r}")


def read_metadata(labels_file) -> dict[str, tuple[int, int | None]]:
    meta: dict[str, tuple[int, int | None]] = {}
    with open(labels_file, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"id", "label", "mmse"} - set(reader.fieldnames or ())
        if missing:
            raise MissingMetadata(f"{labels_file}: missing columns {sorted(missing)}")
        for row in reader:
            rid = row["id"].strip()
            if rid in meta:
                raise DuplicateId(f"{labels_file}: id {rid!r} appears twice")
            mmse_raw = (row["mmse"] or "").strip()
            mmse = None if mmse_raw in ("", "NA", "nan") else int(float(mmse_raw))
            meta[rid] = (_parse_label(row["label"], rid), mmse)
    return meta


def load_transcript(path, label: int, mmse: int | None, speaker: str = "PAR") -> Transcript:
    path = Path(path)
    doc = parse_chat(path.read_text(encoding="utf-8"))
    tokens: list[str] = []
    for utt in participant_utterances(doc, speaker):
        tokens.extend(clean_utterance(utt, DEFAULT_POLICY))
    return Transcript(path.stem, tuple(tokens), label, mmse)


def load_corpus(root_dir, labels_file, speaker: str = "PAR") -> Dataset:
    """Load every ``.cha`` file under ``root_dir`` and join it to its CSV metadata row."""
    meta = read_metadata(labels_file)
    files = sorted(Path(root_dir).rglob("*.cha"))
    stems: dict[str, Path] = {}
    for f in files:
        if f.stem in stems:
            raise DuplicateId(f"transcript id {f.stem!r} found at {stems[f.stem]} and {f}")
        stems[f.stem] = f
    for rid in sorted(set(meta) - set(stems)):
        log.warning("metadata row %r has no .cha file; ignored", rid)
    out = []
    for stem, f in stems.items():
        if stem not in meta:
            raise MissingMetadata(f"{f}: no row for id {stem!r} in {labels_file}")
        label, mmse = meta[stem]
        out.append(load_transcript(f, label, mmse, speaker))
    return Dataset(tuple(out))


# --------------------------------------------------------------------------- CV plans

@dataclass(frozen=True)
class Fold:
    repeat: int
    fold: int
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


@dataclass(frozen=True)
class CVPlan:
    k: int
    repeats: int
    seed: int
    val_frac: float
    folds: tuple[Fold, ...]

    def to_json(self) -> str:
        return json.dumps({
            "k": self.k, "repeats": self.repeats, "seed": self.seed, "val_frac": self.val_frac,
            "folds": [
                {"repeat": f.repeat, "fold": f.fold, "train": list(f.train_ids),
                 "val": list(f.val_ids), "test": list(f.test_ids)}
                for f in self.folds
            ],
        }, sort_keys=True)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _largest_remainder(total: int, weights: Sequence[int]) -> list[int]:
    s = sum(weights)
    raw = [total * w / s for w in weights]
    base = [int(math.floor(r)) for r in raw]
    short = total - sum(base)
    # ties go to the earlier class for determinism
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def _stratified_val(train: list[tuple[str, int]], val_frac: float, rng: np.random.Generator):
    n_val = _round_half_up(val_frac * len(train))
    classes = sorted({lab for _, lab in train})
    members = {c: [i for i, lab in train if lab == c] for c in classes}
    quotas = _largest_remainder(n_val, [len(members[c]) for c in classes])
    val: set[str] = set()
    for c, q in zip(classes, quotas):
        ids = members[c]
        perm = rng.permutation(len(ids))
        val.update(ids[j] for j in perm[:q])
    train_ids = tuple(i for i, _ in train if i not in val)
    val_ids = tuple(i for i, _ in train if i in val)
    return train_ids, val_ids


def stratified_cv(dataset: Dataset, k: int = 10, repeats: int = 3, val_frac: float = 0.2,
                  seed: int = 0) -> CVPlan:
    """Repeated stratified k-fold plan with a stratified validation split inside each train portion."""
    if k < 2:
        raise TooFewSamples(f"k must be at least 2, got {k}")
    if repeats < 1:
        raise TooFewSamples(f"repeats must be at least 1, got {repeats}")
    if not 0.0 <= val_frac < 1.0:
        raise ValueError(f"val_frac must lie in [0, 1), got {val_frac}")
    ids = dataset.ids
    labels = dataset.labels.tolist()
    classes = sorted(set(labels))
    for c in classes:
        n_c = labels.count(c)
        if n_c < k:
            raise TooFewSamples(f"class {c} has {n_c} members, fewer than k={k}")

    folds = []
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        assignment: dict[str, int] = {}
        offset = 0
        for c in classes:
            members = [i for i, lab in zip(ids, labels) if lab == c]
            perm = rng.permutation(len(members))
            for pos, j in enumerate(perm):
                assignment[members[j]] = (offset + pos) % k
            offset = (offset + len(members)) % k
        for f in range(k):
            test = tuple(i for i in ids if assignment[i] == f)
            train = [(i, lab) for i, lab in zip(ids, labels) if assignment[i] != f]
            train_ids, val_ids = _stratified_val(train, val_frac, rng)
            folds.append(Fold(r, f, train_ids, val_ids, test))
    return CVPlan(k, repeats, seed, val_frac, tuple(folds))


# --------------------------------------------------------------------------- synthetic corpus

# Word pools.  Control speech leans on determiners, nouns and gerunds with a few
# long descriptive words; dementia speech on pronouns, past-tense verbs,
# interjections and adverbs.
_PERSONS = ["boy", "girl", "mother", "woman", "lady", "child", "kid"]
_OBJECTS = ["cookie", "jar", "stool", "sink", "water", "dishes", "plate", "window", "curtains",
            "floor", "cupboard", "kitchen", "counter", "towel", "cup", "garden", "shelf"]
_GERUNDS = ["washing", "drying", "reaching", "falling", "standing", "stepping", "holding",
            "taking", "looking", "running", "wiping", "climbing", "handing", "tipping"]
_LONG = ["overflowing", "apparently", "daydreaming", "precariously", "cabinet", "underneath",
         "spilling over", "unaware", "counterbalance", "eventually"]
_PREPS = ["on", "in", "from", "at", "into", "under", "near"]
_PRONOUNS = ["he", "she", "it", "they", "i", "you", "them"]
_PAST = ["gave", "dropped", "forgot", "started", "were", "did", "was", "went", "took", "got", "said"]
_INTERJ = ["oh", "well", "yeah", "okay", "mhm"]
_ADVERBS = ["probably", "maybe", "here", "there", "just", "really", "down", "so"]


def _pick(rng: np.random.Generator, pool: Sequence[str]) -> str:
    return pool[int(rng.integers(len(pool)))]


def _control_sentence(rng: np.random.Generator) -> list[str]:
    form = int(rng.integers(4))
    if form == 0:
        s = f"the {_pick(rng, _PERSONS)} is {_pick(rng, _GERUNDS)} the {_pick(rng, _OBJECTS)}"
    elif form == 1:
        s = (f"the {_pick(rng, _PERSONS)} is {_pick(rng, _GERUNDS)} {_pick(rng, _PREPS)} "
             f"the {_pick(rng, _OBJECTS)} and the {_pick(rng, _OBJECTS)} is {_pick(rng, _LONG)}")
    elif form == 2:
        s = f"a {_pick(rng, _OBJECTS)} is {_pick(rng, _GERUNDS)} {_pick(rng, _PREPS)} the {_pick(rng, _OBJECTS)}"
    else:
        s = (f"the {_pick(rng, _OBJECTS)} {_pick(rng, _PREPS)} the {_pick(rng, _OBJECTS)} is "
             f"{_pick(rng, _LONG)} {_pick(rng, _GERUNDS)}")
    return s.split() + ["."]


def _dementia_sentence(rng: np.random.Generator, lead_and: bool) -> list[str]:
    form = int(rng.integers(4))
    if form == 0:
        s = f"{_pick(rng, _INTERJ)} {_pick(rng, _PRONOUNS)} {_pick(rng, _PAST)} it"
    elif form == 1:
        s = f"{_pick(rng, _PRONOUNS)} {_pick(rng, _PAST)} {_pick(rng, _ADVERBS)}"
    elif form == 2:
        s = f"{_pick(rng, _INTERJ)} {_pick(rng, _PRONOUNS)} {_pick(rng, _ADVERBS)} {_pick(rng, _PAST)}"
    else:
        s = f"{_pick(rng, _PRONOUNS)} {_pick(rng, _PAST)} the {_pick(rng, _OBJECTS)}"
    words = s.split()
    if lead_and:
        words = ["and"] + words
    return words + ["?" if rng.random() < 0.1 else "."]


@dataclass(frozen=True)
class SyntheticProfile:
    """Knobs of the synthetic generator.

    ``max_mix`` bounds the share of sentences drawn from the other class's
    templates, so every transcript keeps a majority of its own style.
    """

    min_sentences: int = 4
    max_sentences: int = 12
    max_mix: float = 0.3
    and_burst_prob: float = 0.35
    dementia_mmse: tuple[int, int] = (5, 26)
    control_mmse: tuple[int, int] = (26, 30)


PROFILES = {"default": SyntheticProfile()}


def _synthetic_tokens(rng: np.random.Generator, label: int, profile: SyntheticProfile) -> list[str]:
    n = int(rng.integers(profile.min_sentences, profile.max_sentences + 1))
    n_other = int(math.floor(n * rng.uniform(0.0, profile.max_mix)))
    own = [True] * (n - n_other) + [False] * n_other
    rng.shuffle(own)
    tokens: list[str] = []
    burst = 0
    for is_own in own:
        dementia_style = is_own == (label == DEMENTIA)
        if dementia_style:
            if burst == 0 and rng.random() < profile.and_burst_prob:
                burst = int(rng.integers(2, 4))
            tokens += _dementia_sentence(rng, lead_and=burst > 0)
            burst = max(0, burst - 1)
        else:
            tokens += _control_sentence(rng)
    return tokens


def generate_synthetic(seed: int, n_per_class: int, profile: str | SyntheticProfile = "default") -> Dataset:
    """Deterministic synthetic corpus whose word usage mirrors the control/dementia contrasts."""
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be at least 1, got {n_per_class}")
    prof = PROFILES[profile] if isinstance(profile, str) else profile
    rng = np.random.default_rng(seed)
    out = []
    for label, prefix, (lo, hi) in ((CONTROL, "C", prof.control_mmse), (DEMENTIA, "D", prof.dementia_mmse)):
        for i in range(n_per_class):
            tokens = _synthetic_tokens(rng, label, prof)
            mmse = int(rng.integers(lo, hi + 1))
            out.append(Transcript(f"{prefix}{i + 1:03d}", tuple(tokens), label, mmse))
    return Dataset(tuple(out))


_INV_PROMPTS = ["tell me everything you see going on in this picture .", "mhm .", "anything else ?",
                "what else is happening ?", "okay ."]


def _chat_markup(sentence: list[str], rng: np.random.Generator) -> str:
    """Render one cleaned sentence as a CHAT utterance with removable disfluency codes."""
    words, term = sentence[:-1], sentence[-1]
    parts: list[str] = []
    for i, w in enumerate(words):
        roll = rng.random()
        if roll < 0.06:
            parts.append("&uh")
        elif roll < 0.09:
            parts.append("(.)")
        elif roll < 0.12 and i + 1 < len(words):
            # retraced two-word group
            parts.append(f"<{w} {words[i + 1]}> [//]")
        elif roll < 0.15:
            parts.append(f"{w} [/]")
        parts.append(w)
    return " ".join(parts + [term])


def _split_sentences(tokens: Sequence[str]) -> list[list[str]]:
    out, cur = [], []
    for t in tokens:
        cur.append(t)
        if t in (".", "?", "!"):
            out.append(cur)
            cur = []
    if cur:
        out.append(cur + ["."])
    return out


def write_chat_tree(dataset: Dataset, out_dir, seed: int) -> None:
    """Write one ``.cha`` file per transcript plus ``meta.csv``; loading them back restores the tokens."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 7919])
    for t in dataset:
        lines = ["@UTF8", "@Begin", "@Languages:\teng", "@Participants:\tPAR Participant, INV Investigator",
                 f"@ID:\teng|Pitt|PAR|||||Participant|||", "@Media:\t" + t.id + ", audio"]
        lines.append(f"*INV:\t{_pick(rng, _INV_PROMPTS)}")
        for sent in _split_sentences(t.tokens):
            lines.append(f"*PAR:\t{_chat_markup(sent, rng)}")
            if rng.random() < 0.3:
                lines.append(f"*INV:\t{_pick(rng, _INV_PROMPTS)}")
        lines.append("@End")
        (out_dir / f"{t.id}.cha").write_text("\n".join(lines) + "\n", encoding="utf-8")
    with open(out_dir / "meta.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "mmse"])
        for t in dataset:
            w.writerow([t.id, t.label, "" if t.mmse is None else t.mmse])
