"""Longest-match phrase lookup over the shipped observation and anatomy lexicons."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional

from factline.resources import anatomy_labels, gold_observation_labels, observation_labels, table, word_list


@dataclass(frozen=True)
class Match:
    start: int
    end: int
    surface: str
    label: str


class PhraseMatcher:
    """Find non-overlapping lexicon phrases in lowercased text, longest phrase first."""

    def __init__(self, entries: Iterable[tuple[str, str]]):
        seen: dict[str, str] = {}
        for surface, label in entries:
            seen.setdefault(surface.lower(), label)
        self.entries = sorted(seen.items(), key=lambda kv: (-len(kv[0]), kv[0]))
        self._patterns = [
            (re.compile(r"(?<![a-z0-9])" + re.escape(surface) + r"(?![a-z0-9])"), surface, label)
            for surface, label in self.entries
        ]

    def find(self, text: str, claimed: Optional[list[tuple[int, int]]] = None) -> list[Match]:
        low = text.lower()
        taken = list(claimed or [])
        found = []
        for pattern, surface, label in self._patterns:
            if surface not in low:
                continue
            for m in pattern.finditer(low):
                s, e = m.span()
                if any(s < te and ts < e for ts, te in taken):
                    continue
                taken.append((s, e))
                found.append(Match(s, e, text[s:e], label))
        found.sort(key=lambda m: m.start)
        return found


@lru_cache(maxsize=None)
def observation_matcher() -> PhraseMatcher:
    entries = [(label, label) for label in observation_labels()]
    entries += list(table("observation_lexicon.tsv"))
    return PhraseMatcher(entries)


@lru_cache(maxsize=None)
def gold_observation_matcher() -> PhraseMatcher:
    gold = set(gold_observation_labels())
    entries = [(label, label) for label in gold_observation_labels()]
    entries += [(s, label) for s, label in table("observation_lexicon.tsv") if label in gold]
    return PhraseMatcher(entries)


@lru_cache(maxsize=None)
def anatomy_matcher() -> PhraseMatcher:
    entries = [(label, label) for label in anatomy_labels()]
    entries += list(table("anatomy_lexicon.tsv"))
    return PhraseMatcher(entries)


@lru_cache(maxsize=None)
def negation_cues() -> tuple[str, ...]:
    return tuple(sorted(word_list("negation_cues.txt"), key=len, reverse=True))


def leading_negation(text: str) -> Optional[str]:
    """Return the negation cue that opens ``text`` (lowercased), if any."""
    low = text.lower().lstrip()
    for cue in negation_cues():
        if low.startswith(cue) and (len(low) == len(cue) or not low[len(cue)].isalnum()):
            return cue
    return None


_NEG_ANYWHERE = None


def has_negation(text: str) -> bool:
    global _NEG_ANYWHERE
    if _NEG_ANYWHERE is None:
        _NEG_ANYWHERE = re.compile(
            r"(?<![a-z0-9])(" + "|".join(map(re.escape, negation_cues())) + r")(?![a-z0-9])"
        )
    return _NEG_ANYWHERE.search(text.lower()) is not None
