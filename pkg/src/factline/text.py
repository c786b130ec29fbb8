"""Tokenization and small string helpers shared across modules."""

from __future__ import annotations

import hashlib
import re

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:[-/'][a-z0-9]+)*|[^\sa-z0-9]")
_WS_RE = re.compile(r"\s+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split into word tokens and single punctuation marks.

    Hyphens, slashes and apostrophes inside a word stay attached, so
    ``left-sided`` and ``mass/nodule`` are one token each.
    """
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens: list[str]) -> str:
    out = " ".join(tokens)
    return re.sub(r"\s+([,.;:!?)])", r"\1", out).replace("( ", "(")


def collapse_ws(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


def sha256_hex(*parts: str) -> str:
    h = hashlib.sha256()
    for i, part in enumerate(parts):
        if i:
            h.update(b"\x1f")
        h.update(part.encode("utf-8"))
    return h.hexdigest()
