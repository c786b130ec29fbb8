"""Deterministic rule-based fact extractor.

Used as the model-free fallback and as the oracle in tests. A sentence is
split on top-level commas and coordinators only where both sides mention an
observation keyword; a leading negation cue and a trailing shared location or
predicate are copied onto every resulting fact.
"""

from __future__ import annotations

import re
from functools import lru_cache

from factline.lexicon import leading_negation
from factline.resources import table, word_list
from factline.text import tokenize

_SEP_RE = re.compile(r"\s*,\s*(?:and\s+|or\s+)?|\s+(?:and|or)\s+")
_PRED_RE = re.compile(
    r"^(?P<core>.*?\S)\s+(?:(?:is|are|was|were)\s+)?(?P<tail>identified|seen|noted|present|demonstrated|visualized)$"
)
_LOC_RE = re.compile(r"^(?P<core>.*?\S)\s+(?P<tail>(?:in|at|within|involving|along|on)\s+.+)$")
_TERMINAL_RE = re.compile(r"[\s.!?;:]+$")
_INTERNAL_TERMINATOR_RE = re.compile(r"(?<=[.!?])\s+")


@lru_cache(maxsize=None)
def _keywords() -> frozenset:
    return frozenset(word_list("observation_keywords.txt"))


@lru_cache(maxsize=None)
def _acronyms() -> frozenset:
    return frozenset(word_list("acronyms.txt"))


@lru_cache(maxsize=None)
def _spelling() -> tuple[tuple[re.Pattern, str], ...]:
    return tuple(
        (re.compile(r"(?<![A-Za-z])" + re.escape(bad) + r"(?![A-Za-z])", re.IGNORECASE), good)
        for bad, good in table("spelling.tsv")
    )


def correct_spelling(text: str) -> str:
    for pattern, good in _spelling():
        text = pattern.sub(good, text)
    return text


def restore_acronyms(text: str) -> str:
    acr = _acronyms()
    return re.sub(r"[A-Za-z]+", lambda m: m.group(0).upper() if m.group(0).lower() in acr else m.group(0), text)


def normalize_fact(text: str) -> str:
    """Canonical surface of a fact: lowercase, acronyms restored, no trailing terminator."""
    text = " ".join(text.split())
    text = _TERMINAL_RE.sub("", text)
    return restore_acronyms(text.lower())


def finalize_facts(raw_facts) -> list[str]:
    """Normalize, split on internal terminators, drop empties and duplicates (first kept)."""
    out: list[str] = []
    for raw in raw_facts:
        for piece in _INTERNAL_TERMINATOR_RE.split(str(raw)):
            fact = normalize_fact(piece)
            if fact and fact not in out:
                out.append(fact)
    return out


def has_keyword(text: str) -> bool:
    kw = _keywords()
    return any(tok in kw for tok in tokenize(text))


def _split_top_level(text: str) -> list[tuple[str, str]]:
    """Split into (separator, part) pairs at separators outside parentheses."""
    parts, last, prev_sep = [], 0, ""
    for m in _SEP_RE.finditer(text):
        depth = text[: m.start()].count("(") - text[: m.start()].count(")")
        if depth > 0 or m.start() == 0:
            continue
        parts.append((prev_sep, text[last:m.start()]))
        prev_sep, last = m.group(0), m.end()
    parts.append((prev_sep, text[last:]))
    return [(sep, part.strip()) for sep, part in parts if part.strip()]


def _split_tail(part: str) -> tuple[str, str | None]:
    m = _PRED_RE.match(part)
    if m:
        return m.group("core"), m.group("tail")
    m = _LOC_RE.match(part)
    if m:
        return m.group("core"), m.group("tail")
    return part, None


class RuleBasedExtractor:
    kind = "rule_based"

    def extract(self, text: str) -> list[str]:
        text = " ".join(correct_spelling(text).split())
        text = _TERMINAL_RE.sub("", text).lower()
        if not text:
            return []
        cue = leading_negation(text)
        body = text[len(cue):].strip() if cue else text

        groups: list[str] = []
        for sep, part in _split_top_level(body):
            if groups and has_keyword(part) and has_keyword(groups[-1]):
                groups.append(part)
            elif groups:
                groups[-1] = groups[-1] + sep + part
            else:
                groups.append(part)
        if len(groups) < 2:
            return finalize_facts([text])

        cores_tails = [_split_tail(g) for g in groups]
        shared = cores_tails[-1][1]
        facts = []
        for core, tail in cores_tails:
            tail = tail or shared
            fact = f"{core} {tail}" if tail else core
            facts.append(f"{cue} {fact}" if cue else fact)
        return finalize_facts(facts)
