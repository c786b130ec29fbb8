"""NLI pair stores, dataset assembly and entailment/contradiction pools."""

from __future__ import annotations

import json
import logging
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from factline.llm import LLMClient, LLMError, parse_json_reply

logger = logging.getLogger(__name__)

LABELS = ("entailment", "neutral", "contradiction")
GENERATION_TEMPLATES = {
    "premise_to_ecn": "nli_premise_to_ecn",
    "example_to_similar": "nli_example_to_similar",
    "premise_to_contradictions": "nli_premise_to_contradictions",
}


@dataclass(frozen=True)
class NLIPair:
    premise: str
    hypothesis: str
    label: str
    source: str = ""

    def __post_init__(self):
        if not self.premise.strip() or not self.hypothesis.strip():
            raise ValueError("premise and hypothesis must be non-empty")
        if self.label not in LABELS:
            raise ValueError(f"invalid NLI label {self.label!r}")

    @property
    def label_index(self) -> int:
        return LABELS.index(self.label)


@dataclass
class NLIDatasetSummary:
    counts: dict[str, int] = field(default_factory=lambda: {l: 0 for l in LABELS})
    sources: dict[str, int] = field(default_factory=dict)
    conflicts: list[tuple[str, str]] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @classmethod
    def of(cls, pairs: Sequence[NLIPair]) -> "NLIDatasetSummary":
        s = cls()
        for p in pairs:
            s.counts[p.label] += 1
            s.sources[p.source] = s.sources.get(p.source, 0) + 1
        labels: dict[tuple[str, str], set[str]] = defaultdict(set)
        for p in pairs:
            labels[(p.premise, p.hypothesis)].add(p.label)
        s.conflicts = sorted(k for k, v in labels.items() if len(v) > 1)
        return s

    def to_record(self) -> dict:
        return {"counts": self.counts, "sources": self.sources, "conflicts": [list(c) for c in self.conflicts]}


def assemble_nli_dataset(sources: Iterable[Iterable[NLIPair]]) -> tuple[list[NLIPair], NLIDatasetSummary]:
    """Concatenate streams, dropping exact (premise, hypothesis, label) repeats.

    Pairs that share a premise and hypothesis but disagree on the label are
    kept and listed in ``summary.conflicts``.
    """
    seen: set[tuple[str, str, str]] = set()
    out: list[NLIPair] = []
    for stream in sources:
        for pair in stream:
            key = (pair.premise, pair.hypothesis, pair.label)
            if key in seen:
                continue
            seen.add(key)
            out.append(pair)
    summary = NLIDatasetSummary.of(out)
    if summary.conflicts:
        logger.warning("%d premise/hypothesis pairs carry conflicting labels", len(summary.conflicts))
    return out, summary


def derive_ec_pools(dataset: Iterable[NLIPair]) -> tuple[list[NLIPair], list[NLIPair]]:
    ent, con = [], []
    for p in dataset:
        if p.label == "entailment":
            ent.append(p)
        elif p.label == "contradiction":
            con.append(p)
    return ent, con


def sample_quadruples(ent_pool: Sequence[NLIPair], con_pool: Sequence[NLIPair], seed: int = 0
                      ) -> Iterator[tuple[NLIPair, NLIPair]]:
    """Endless (entailment pair, contradiction pair) draws, each pool sampled independently."""
    if not ent_pool or not con_pool:
        raise ValueError("both pools must be non-empty")
    rng = random.Random(seed)
    while True:
        yield ent_pool[rng.randrange(len(ent_pool))], con_pool[rng.randrange(len(con_pool))]


@dataclass
class GenerationReport:
    pairs: list[NLIPair]
    dropped: int


def _pairs_from_reply(template: str, premise: str, obj) -> list[NLIPair]:
    source = f"llm:{template}"
    if template == "premise_to_ecn":
        if not isinstance(obj, dict):
            raise ValueError("expected an object keyed by label")
        pairs = []
        for label in LABELS:
            hyps = obj.get(label, [])
            hyps = [hyps] if isinstance(hyps, str) else hyps
            pairs += [NLIPair(premise, h, label, source) for h in hyps if isinstance(h, str) and h.strip()]
        return pairs
    if template == "premise_to_contradictions":
        if not isinstance(obj, list):
            raise ValueError("expected a list of hypotheses")
        return [NLIPair(premise, h, "contradiction", source) for h in obj if isinstance(h, str) and h.strip()]
    if template == "example_to_similar":
        items = obj if isinstance(obj, list) else [obj]
        pairs = []
        for it in items:
            if not isinstance(it, dict):
                raise ValueError("expected objects with premise/hypothesis/label")
            pairs.append(NLIPair(str(it.get("premise", "")), str(it.get("hypothesis", "")),
                                 str(it.get("label", "")).lower(), source))
        return pairs
    raise ValueError(f"unknown generation template {template!r}")


def generate_llm_nli(template_id: str, inputs: Sequence[str], client: LLMClient) -> GenerationReport:
    """Query one generation template per input; unusable replies are dropped and counted.

    Transport failures (after the client's retries) propagate.
    """
    if template_id not in GENERATION_TEMPLATES:
        raise ValueError(f"unknown NLI generation template {template_id!r}; expected {sorted(GENERATION_TEMPLATES)}")
    replies = client.complete_many(GENERATION_TEMPLATES[template_id], list(inputs), operation_id="nli")
    pairs, dropped = [], 0
    for text, reply in zip(inputs, replies):
        try:
            pairs += _pairs_from_reply(template_id, text, parse_json_reply(reply))
        except (LLMError, ValueError) as exc:
            dropped += 1
            logger.warning("dropping NLI reply for %r: %s", text[:60], exc)
    return GenerationReport(pairs, dropped)


def write_nli(pairs: Iterable[NLIPair], path: str | Path, summary: Optional[NLIDatasetSummary] = None) -> None:
    pairs = list(pairs)
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({"premise": p.premise, "hypothesis": p.hypothesis, "label": p.label,
                                 "source": p.source}, ensure_ascii=False) + "\n")
    summary = summary or NLIDatasetSummary.of(pairs)
    Path(str(path) + ".summary.json").write_text(json.dumps(summary.to_record(), indent=2, sort_keys=True))


def read_nli(path: str | Path) -> tuple[list[NLIPair], NLIDatasetSummary]:
    with open(path, encoding="utf-8") as fh:
        pairs = [NLIPair(o["premise"], o["hypothesis"], o["label"], o.get("source", ""))
                 for o in map(json.loads, filter(str.strip, fh))]
    return pairs, NLIDatasetSummary.of(pairs)


def read_nli_jsonl_adapter(path: str | Path, premise_key: str = "sentence1", hypothesis_key: str = "sentence2",
                           label_key: str = "gold_label", source: str = "external") -> list[NLIPair]:
    """Import an external NLI file in the common sentence1/sentence2/gold_label layout."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for o in map(json.loads, filter(str.strip, fh)):
            label = str(o.get(label_key, "")).lower()
            if label in LABELS:
                out.append(NLIPair(o[premise_key], o[hypothesis_key], label, source))
    return out


def label_counts(pairs: Iterable[NLIPair]) -> Counter:
    return Counter(p.label for p in pairs)
