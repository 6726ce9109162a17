"""Parser for the subset of the CHAT transcript format used by picture-description corpora.

Supported: ``@`` headers, ``*XXX:`` main tiers, ``%xxx:`` dependent tiers and
tab-continuation lines.  ``clean_utterance`` turns a main-tier string into a
flat token list with CHAT annotation removed.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .errors import EmptyDocument, MalformedTier, UnbalancedBracket

log = logging.getLogger(__name__)

MAIN_TIER_RE = re.compile(r"^\*([A-Z]{3}):\s?(.*)$")
DEP_TIER_RE = re.compile(r"^%([A-Za-z]+):\s?(.*)$")
HEADER_RE = re.compile(r"^(@[^:\t]+):?\t?(.*)$")
BULLET_RE = re.compile(r"\x15[^\x15]*\x15")
# bracket code, a "+" linker or terminator (which may contain "<"), angle-group
# delimiters, or any other run of non-space text
SCAN_RE = re.compile(r"\[[^\]]*\]|\+[^\s\[\]]*|<|>|[^\s<>\[\]]+")
PAUSE_RE = re.compile(r"^\((\.{1,3}|\d+(?::\d+)?(?:\.\d*)?)\)$")
REPEAT_RE = re.compile(r"^\[x\s*(\d+)\]$")

TERMINATORS = {".", "?", "!"}
# CHAT's special terminators, mapped onto the three plain ones
SPECIAL_TERMINATORS = {
    "+...": ".", "+..?": "?", "+!?": "?", "+/.": ".", "+/?": "?",
    "+//.": ".", "+//?": "?", "+\"/.": ".", "+\".": ".", "+.": ".",
}
UNINTELLIGIBLE = {"xxx", "yyy", "www"}
DROPPED_PUNCT = {",", ";", ":", "„", "‡", "\"", "“", "”"}
WORD_NOISE_RE = re.compile(r"[():^ˈˌ↑↓≠]")

# bracket codes that are recognised and silently removed
_KNOWN_CODE_PREFIXES = ("[:", "[*", "[+", "[=", "[%", "[^", "[-", "[<", "[>")
_KNOWN_CODES = {"[!]", "[!!]", "[?]", "[e]", "[\"]"}


@dataclass(frozen=True)
class Tier:
    speaker: str
    raw_text: str
    dependent_tiers: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class ChatDocument:
    headers: tuple[tuple[str, str], ...]
    tiers: tuple[Tier, ...]

    def header_lines(self) -> list[str]:
        return [f"{k}:\t{v}" if v else k for k, v in self.headers]


@dataclass(frozen=True)
class CleanPolicy:
    drop_retracings: bool = True
    drop_repetition_marks: bool = True
    drop_fillers: bool = True
    drop_unintelligible: bool = True
    lowercase: bool = True
    keep_terminators: bool = True


DEFAULT_POLICY = CleanPolicy()


@dataclass
class _Pending:
    kind: str  # "header", "main", "dep"
    lineno: int
    parts: list[str] = field(default_factory=list)
    key: str = ""


def parse_chat(text: str) -> ChatDocument:
    """Parse CHAT text into headers and speaker tiers.

    Raises ``MalformedTier`` for a ``*`` line without a ``*XXX:`` prefix and
    ``EmptyDocument`` when no main tier is present.
    """
    text = text.lstrip("﻿")
    headers: list[tuple[str, str]] = []
    tiers: list[dict] = []
    pending: _Pending | None = None

    def flush() -> None:
        nonlocal pending
        if pending is None:
            return
        body = " ".join(p.strip() for p in pending.parts if p.strip()) if len(pending.parts) > 1 \
            else pending.parts[0]
        if pending.kind == "header":
            headers.append((pending.key, body))
        elif pending.kind == "main":
            if not body.strip():
                raise MalformedTier(f"line {pending.lineno}: empty main tier *{pending.key}:")
            tiers.append({"speaker": pending.key, "raw": body, "deps": []})
        else:
            if not tiers:
                raise MalformedTier(f"line {pending.lineno}: dependent tier %{pending.key} before any main tier")
            tiers[-1]["deps"].append((pending.key, body))
        pending = None

    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line[0] in " \t":
            if pending is None:
                log.warning("line %d: continuation line with nothing to continue, skipped", lineno)
                continue
            pending.parts.append(line)
            continue
        flush()
        if line.startswith("*"):
            m = MAIN_TIER_RE.match(line)
            if not m:
                raise MalformedTier(f"line {lineno}: expected '*XXX:' prefix, got {line[:20]!r}")
            pending = _Pending("main", lineno, [m.group(2)], m.group(1))
        elif line.startswith("%"):
            m = DEP_TIER_RE.match(line)
            if not m:
                raise MalformedTier(f"line {lineno}: expected '%xxx:' prefix, got {line[:20]!r}")
            pending = _Pending("dep", lineno, [m.group(2)], m.group(1))
        elif line.startswith("@"):
            m = HEADER_RE.match(line)
            pending = _Pending("header", lineno, [m.group(2)], m.group(1))
        else:
            log.warning("line %d: unrecognised line skipped: %r", lineno, line[:40])
    flush()

    if not tiers:
        raise EmptyDocument("document contains no main tiers")
    return ChatDocument(
        headers=tuple(headers),
        tiers=tuple(Tier(t["speaker"], t["raw"], tuple(t["deps"])) for t in tiers),
    )


def participant_utterances(doc: ChatDocument, speaker: str) -> list[str]:
    return [t.raw_text for t in doc.tiers if t.speaker == speaker]


def _check_brackets(raw: str) -> None:
    depth = 0
    for i, ch in enumerate(raw):
        if ch == "[":
            if depth:
                raise UnbalancedBracket(f"nested '[' at offset {i} in {raw!r}")
            depth = 1
        elif ch == "]":
            if not depth:
                raise UnbalancedBracket(f"']' without '[' at offset {i} in {raw!r}")
            depth = 0
    if depth:
        raise UnbalancedBracket(f"unclosed '[' in {raw!r}")


def _apply_code(code: str, units: list, policy: CleanPolicy) -> None:
    """Apply one bracketed code to the units collected so far (in place)."""
    if code in ("[//]", "[///]"):
        if policy.drop_retracings and units:
            units.pop()
        return
    if code == "[/]":
        if policy.drop_repetition_marks and units:
            units.pop()
        return
    m = REPEAT_RE.match(code)
    if m:
        if not policy.drop_repetition_marks and units:
            units.extend([units[-1]] * (int(m.group(1)) - 1))
        return
    if code in _KNOWN_CODES or code.startswith(_KNOWN_CODE_PREFIXES):
        return
    log.warning("unknown CHAT code %s dropped", code)


def _clean_word(word: str, policy: CleanPolicy) -> list[str]:
    if word in TERMINATORS or word in SPECIAL_TERMINATORS:
        term = SPECIAL_TERMINATORS.get(word, word)
        return [term] if policy.keep_terminators else []
    if word.startswith("+"):
        # utterance linkers such as +< +^ +" carry no words
        return []
    if word in DROPPED_PUNCT:
        return []
    if PAUSE_RE.match(word):
        return []
    if word.startswith("&"):
        if word.startswith(("&=", "&+", "&*")) or policy.drop_fillers:
            return []
        word = word.lstrip("&-")
    if word.startswith("0"):
        return []
    trailing: list[str] = []
    if len(word) > 1 and word[-1] in TERMINATORS:
        trailing = [word[-1]] if policy.keep_terminators else []
        word = word[:-1]
    word = word.rstrip(",;")
    if "@" in word:
        word = word.split("@", 1)[0]
    word = WORD_NOISE_RE.sub("", word)
    if policy.drop_unintelligible and word.lower() in UNINTELLIGIBLE:
        word = ""
    if policy.lowercase:
        word = word.lower()
    return ([word] if word else []) + trailing


def clean_utterance(raw: str, policy: CleanPolicy = DEFAULT_POLICY) -> list[str]:
    """Strip CHAT annotation from one main-tier utterance and split into tokens.

    Retracing ``[//]`` and repetition ``[/]`` delete the preceding word or
    ``<...>`` group.  Terminators are kept as standalone tokens when
    ``policy.keep_terminators`` is set.
    """
    _check_brackets(raw)
    text = BULLET_RE.sub(" ", raw)
    # stack of unit lists; a unit is a word string or a list of words (angle group)
    stack: list[list] = [[]]
    for piece in SCAN_RE.findall(text):
        if piece == "<":
            stack.append([])
        elif piece == ">":
            if len(stack) == 1:
                log.warning("stray '>' in %r ignored", raw)
                continue
            group = stack.pop()
            stack[-1].append([w for unit in group for w in _flatten(unit)])
        elif piece.startswith("["):
            _apply_code(piece, stack[-1], policy)
        else:
            stack[-1].append(piece)
    while len(stack) > 1:
        log.warning("unclosed '<' in %r", raw)
        group = stack.pop()
        stack[-1].extend(group)

    tokens: list[str] = []
    for unit in stack[0]:
        for word in _flatten(unit):
            tokens.extend(_clean_word(word, policy))
    return tokens


def _flatten(unit) -> list[str]:
    return unit if isinstance(unit, list) else [unit]
