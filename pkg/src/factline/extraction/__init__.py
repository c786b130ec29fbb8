"""Sentence-to-fact extraction: extractors, difficulty ranking and distillation subsets."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np

from factline.corpus import Sentence
from factline.extraction.llm import LLMExtractor
from factline.extraction.rules import RuleBasedExtractor, finalize_facts, normalize_fact
from factline.extraction.student import (
    ExtractionPair,
    StudentConfig,
    StudentExtractor,
    train_student_extractor,
)
from factline.text import tokenize

__all__ = [
    "ExtractionPair", "Extractor", "Fact", "LLMExtractor", "RuleBasedExtractor", "StudentConfig",
    "StudentExtractor", "build_distillation_subset", "extract_facts", "finalize_facts",
    "normalize_fact", "rank_by_inverse_token_frequency", "read_facts", "read_pairs",
    "train_student_extractor", "write_facts", "write_pairs",
]


class Extractor(Protocol):
    kind: str

    def extract(self, text: str) -> list[str]: ...


@dataclass(frozen=True)
class Fact:
    text: str
    source_sentence: Optional[Sentence]
    extractor_kind: str


def extract_facts(sentence: Sentence | str, extractor: Extractor) -> list[Fact]:
    if isinstance(sentence, str):
        sentence = Sentence("", "", 0, sentence)
    texts = finalize_facts(extractor.extract(sentence.text))
    return [Fact(t, sentence, extractor.kind) for t in texts]


def rank_by_inverse_token_frequency(sentences: Sequence[Sentence | str]) -> list[tuple[Sentence | str, float]]:
    """Order sentences hardest first by the summed inverse corpus frequency of their tokens.

    The corpus is the input list itself; equal scores are ordered by text.
    """
    texts = [s if isinstance(s, str) else s.text for s in sentences]
    freq = Counter(tok for t in texts for tok in tokenize(t))
    scored = [(s, sum(1.0 / freq[tok] for tok in tokenize(t))) for s, t in zip(sentences, texts)]
    return sorted(scored, key=lambda st: (-st[1], st[0] if isinstance(st[0], str) else st[0].text))


def build_distillation_subset(sentences: Sequence[Sentence | str], aux_embeddings, k_clusters: int,
                              budget: int, seed: int = 0) -> list[Sentence | str]:
    """Round-robin over K-Means clusters, taking each cluster's hardest remaining sentence.

    Within a round, clusters are visited in order of their next candidate's
    difficulty, so a partial last round favours the hardest leftovers.
    """
    from factline.sampling import cluster_sentences

    n = len(sentences)
    if k_clusters > n:
        raise ValueError(f"k_clusters={k_clusters} exceeds the number of sentences ({n})")
    if budget >= n:
        return [s for s, _ in rank_by_inverse_token_frequency(sentences)]
    labels = cluster_sentences(np.asarray(aux_embeddings), k_clusters, seed)
    ranked = rank_by_inverse_token_frequency([_Indexed(i, s) for i, s in enumerate(sentences)])
    queues: dict[int, list] = defaultdict(list)
    for item, score in ranked:
        queues[int(labels[item.i])].append((item, score))
    picked: list = []
    while len(picked) < budget:
        heads = sorted(
            ((q[0][1], q[0][0].text, c) for c, q in queues.items() if q),
            key=lambda h: (-h[0], h[1], h[2]),
        )
        for _, _, c in heads:
            if len(picked) == budget:
                break
            picked.append(queues[c].pop(0)[0].item)
    return picked


class _Indexed:
    """Sentence wrapper carrying its corpus position through ranking."""

    __slots__ = ("i", "item", "text")

    def __init__(self, i, item):
        self.i, self.item = i, item
        self.text = item if isinstance(item, str) else item.text


def write_facts(facts: Iterable[Fact], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for f in facts:
            sid = f.source_sentence.sentence_id if f.source_sentence else ""
            fh.write(json.dumps({"sentence_id": sid, "fact": f.text, "extractor": f.extractor_kind},
                                ensure_ascii=False) + "\n")
            n += 1
    return n


def read_facts(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_pairs(pairs: Iterable[ExtractionPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({"sentence": p.sentence_text, "facts": p.fact_list}, ensure_ascii=False) + "\n")


def read_pairs(path: str | Path) -> list[ExtractionPair]:
    with open(path, encoding="utf-8") as fh:
        return [ExtractionPair(o["sentence"], list(o["facts"])) for o in map(json.loads, filter(str.strip, fh))]
