"""Report ingestion: section isolation and deterministic sentence splitting."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

from factline.resources import table, word_list

FACTUAL_KINDS = ("findings", "impression")


@dataclass(frozen=True)
class RawReport:
    report_id: str
    text: str

    def __post_init__(self):
        if not self.report_id:
            raise ValueError("report_id must be non-empty")


@dataclass
class ReportSections:
    findings: Optional[str] = None
    impression: Optional[str] = None
    other_blocks: list[tuple[Optional[str], str]] = field(default_factory=list)

    def factual_blocks(self) -> list[tuple[str, str]]:
        """Blocks that flow to fact extraction: findings, impression and unheaded text."""
        blocks = [("unheaded", text) for heading, text in self.other_blocks if heading is None]
        if self.findings is not None:
            blocks.append(("findings", self.findings))
        if self.impression is not None:
            blocks.append(("impression", self.impression))
        return blocks


@dataclass(frozen=True)
class Sentence:
    report_id: str
    section_kind: str
    index: int
    text: str

    @property
    def sentence_id(self) -> str:
        return f"{self.report_id}/{self.section_kind}/{self.index}"


def _heading_regex() -> re.Pattern:
    names = sorted((name for name, _ in table("headings.tsv")), key=len, reverse=True)
    return re.compile(r"(?<![A-Za-z])(" + "|".join(map(re.escape, names)) + r")\s*:", re.IGNORECASE)


_HEADINGS = dict(table("headings.tsv"))
_HEADING_RE = _heading_regex()


def section_report(raw: RawReport) -> ReportSections:
    text = raw.text or ""
    sections = ReportSections()
    matches = list(_HEADING_RE.finditer(text))
    lead = text[: matches[0].start()] if matches else text
    if lead.strip():
        sections.other_blocks.append((None, lead.strip()))
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        body = text[m.end():end].strip()
        kind = _HEADINGS[m.group(1).lower()]
        if kind in FACTUAL_KINDS:
            previous = getattr(sections, kind)
            setattr(sections, kind, body if previous is None else f"{previous} {body}".strip())
        else:
            sections.other_blocks.append((kind, body))
    return sections


def render_sections(sections: ReportSections) -> str:
    """Inverse of :func:`section_report` up to whitespace."""
    parts = [text for heading, text in sections.other_blocks if heading is None]
    parts += [f"{heading.upper()}: {text}" for heading, text in sections.other_blocks if heading is not None]
    if sections.findings is not None:
        parts.append(f"FINDINGS: {sections.findings}")
    if sections.impression is not None:
        parts.append(f"IMPRESSION: {sections.impression}")
    return "\n".join(parts)


_TERMINATOR_RE = re.compile(r"[.!?]+[\"')\]]*(?=\s+\S)")
_PREV_WORD_RE = re.compile(r"([A-Za-z][A-Za-z.]*)$")
_ABBREVIATIONS = frozenset(word_list("abbreviations.txt"))


def _is_boundary(text: str, m: re.Match) -> bool:
    rest = text[m.end():].lstrip()
    nxt = rest[0]
    prev = _PREV_WORD_RE.search(text[: m.start()])
    prev_word = prev.group(1).lower().rstrip(".") if prev else ""
    if prev_word in _ABBREVIATIONS:
        return False
    if prev_word == "no" and nxt.isdigit():
        return False
    if nxt.isupper() or nxt.isdigit():
        return True
    # lowercase continuation: split unless the period closes a single-letter initial
    return len(prev_word) != 1


def split_sentences(section_text: str, report_id: str = "", section_kind: str = "") -> list[Sentence]:
    text = section_text or ""
    pieces, start = [], 0
    for m in _TERMINATOR_RE.finditer(text):
        if _is_boundary(text, m):
            pieces.append(text[start:m.end()])
            start = m.end()
    pieces.append(text[start:])
    out = []
    for piece in pieces:
        piece = " ".join(piece.split())
        if piece:
            out.append(Sentence(report_id, section_kind, len(out), piece))
    return out


def report_sentences(raw: RawReport) -> list[Sentence]:
    """All sentences of the factual blocks of one report, in reading order."""
    out = []
    for kind, text in section_report(raw).factual_blocks():
        out.extend(split_sentences(text, raw.report_id, kind))
    return out


def read_reports(path: str | Path) -> Iterator[RawReport]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                yield RawReport(str(obj["report_id"]), obj.get("text") or "")


def write_sentences(sentences: Iterable[Sentence], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            row = {"report_id": s.report_id, "section": s.section_kind, "index": s.index, "text": s.text}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            n += 1
    return n


def read_sentences(path: str | Path) -> list[Sentence]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append(Sentence(obj["report_id"], obj["section"], int(obj["index"]), obj["text"]))
    return out
