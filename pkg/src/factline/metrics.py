"""Report scorers: fact-embedding greedy matching plus BLEU, ROUGE-L and CIDEr-D."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from factline.text import tokenize


@dataclass
class SimilarityMatrix:
    values: np.ndarray
    rows: list[str] = field(default_factory=list)
    cols: list[str] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class ScoreBreakdown:
    s_row: float
    s_col: float
    score: float
    row_best: list[tuple[int, float]]
    col_best: list[tuple[int, float]]
    matrix: Optional[SimilarityMatrix] = None


def similarity_matrix(R, C, rows: Sequence[str] = (), cols: Sequence[str] = ()) -> SimilarityMatrix:
    """M[i, j] = <R[i], C[j]>.

    Products are summed along the embedding axis of an elementwise product,
    so swapping the arguments yields exactly the transpose.
    """
    R, C = (np.atleast_2d(np.asarray(X, dtype=np.float64)) if np.size(X) else np.zeros((0, 0)) for X in (R, C))
    if len(R) == 0 or len(C) == 0:
        return SimilarityMatrix(np.zeros((len(R), len(C))), list(rows), list(cols))
    M = np.clip((R[:, None, :] * C[None, :, :]).sum(-1), -1.0, 1.0)
    return SimilarityMatrix(M, list(rows), list(cols))


def greedy_score(M) -> tuple[float, float, float]:
    values = M.values if isinstance(M, SimilarityMatrix) else np.asarray(M, dtype=np.float64)
    if values.ndim != 2 or 0 in values.shape:
        raise ValueError("greedy_score needs a non-empty matrix")
    # exact rational means, rounded once, so the result is independent of summation order
    s_row = sum(map(Fraction, values.max(axis=1).tolist()), Fraction(0)) / values.shape[0]
    s_col = sum(map(Fraction, values.max(axis=0).tolist()), Fraction(0)) / values.shape[1]
    return float(s_row), float(s_col), float((s_row + s_col) / 2)


def _breakdown(M: SimilarityMatrix) -> ScoreBreakdown:
    s_row, s_col, score = greedy_score(M)
    v = M.values
    row_best = [(int(j), float(v[i, j])) for i, j in enumerate(v.argmax(axis=1))]
    col_best = [(int(i), float(v[i, j])) for j, i in enumerate(v.argmax(axis=0))]
    return ScoreBreakdown(s_row, s_col, score, row_best, col_best, M)


def report_facts(text: str, extractor) -> list[str]:
    """Split into sentences, extract, and deduplicate facts by exact text (first occurrence wins)."""
    from factline.corpus import split_sentences
    from factline.extraction import extract_facts

    facts: list[str] = []
    for sentence in split_sentences(text):
        facts += [f.text for f in extract_facts(sentence, extractor)]
    return list(dict.fromkeys(facts))


def score_fact_lists(ref_facts: Sequence[str], cand_facts: Sequence[str], encoder) -> ScoreBreakdown:
    ref_facts, cand_facts = list(dict.fromkeys(ref_facts)), list(dict.fromkeys(cand_facts))
    if not ref_facts and not cand_facts:
        return ScoreBreakdown(1.0, 1.0, 1.0, [], [])
    if not ref_facts or not cand_facts:
        return ScoreBreakdown(0.0, 0.0, 0.0, [], [])
    M = similarity_matrix(encoder.encode(ref_facts), encoder.encode(cand_facts), ref_facts, cand_facts)
    return _breakdown(M)


def cxrfescore(ref_text: str, cand_text: str, extractor, encoder) -> ScoreBreakdown:
    return score_fact_lists(report_facts(ref_text, extractor), report_facts(cand_text, extractor), encoder)


# ------------------------------------------------------------- n-gram scorers

def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(refs: Sequence[str], cand: str, max_n: int = 4) -> float:
    """Sentence BLEU, geometric mean of clipped precisions up to the effective order.

    The effective order is ``min(max_n, len(cand))`` so short identical
    strings still score 1.
    """
    c = tokenize(cand)
    rs = [tokenize(r) for r in refs]
    if not c or not rs:
        return 0.0
    order = min(max_n, len(c))
    log_p = 0.0
    for n in range(1, order + 1):
        cand_counts = _ngrams(c, n)
        max_ref: Counter = Counter()
        for r in rs:
            for g, k in _ngrams(r, n).items():
                max_ref[g] = max(max_ref[g], k)
        clipped = sum(min(k, max_ref[g]) for g, k in cand_counts.items())
        if clipped == 0:
            return 0.0
        log_p += math.log(clipped / sum(cand_counts.values())) / order
    ref_len = min((abs(len(r) - len(c)), len(r)) for r in rs)[1]
    bp = 1.0 if len(c) > ref_len else math.exp(1 - ref_len / len(c))
    return bp * math.exp(log_p)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(refs: Sequence[str], cand: str, beta: float = 1.0) -> float:
    c = tokenize(cand)
    best = 0.0
    for ref in refs:
        r = tokenize(ref)
        lcs = lcs_length(r, c)
        if lcs == 0:
            continue
        p, rec = lcs / len(c), lcs / len(r)
        best = max(best, (1 + beta ** 2) * p * rec / (rec + beta ** 2 * p))
    return best


class CiderD:
    """CIDEr-D with document frequencies taken from a reference corpus.

    ``corpus`` is a list of reference sets (one set per item); an n-gram's
    document frequency counts the sets containing it.
    """

    def __init__(self, corpus: Sequence[Sequence[str]], max_n: int = 4, sigma: float = 6.0):
        if not corpus:
            raise ValueError("CIDEr-D needs a non-empty reference corpus for idf statistics")
        self.max_n, self.sigma = max_n, sigma
        self.df: Counter = Counter()
        for ref_set in corpus:
            grams = set()
            for ref in ref_set:
                toks = tokenize(ref)
                for n in range(1, max_n + 1):
                    grams |= set(_ngrams(toks, n))
            self.df.update(grams)
        self.log_n = math.log(float(len(corpus)))

    def _vec(self, tokens):
        vecs, norms = [], []
        for n in range(1, self.max_n + 1):
            v = {g: tf * (self.log_n - math.log(max(1.0, self.df[g]))) for g, tf in _ngrams(tokens, n).items()}
            vecs.append(v)
            norms.append(math.sqrt(sum(x * x for x in v.values())))
        return vecs, norms

    def __call__(self, refs: Sequence[str], cand: str) -> float:
        c = tokenize(cand)
        if not refs:
            return 0.0
        vc, nc = self._vec(c)
        total = 0.0
        for ref in refs:
            r = tokenize(ref)
            vr, nr = self._vec(r)
            penalty = math.exp(-((len(c) - len(r)) ** 2) / (2 * self.sigma ** 2))
            per_n = []
            for n in range(self.max_n):
                dot = sum(min(x, vr[n][g]) * vr[n][g] for g, x in vc[n].items() if g in vr[n])
                per_n.append(dot / (nc[n] * nr[n]) * penalty if nc[n] and nr[n] else 0.0)
            total += sum(per_n) / self.max_n
        return total / len(refs) * 10.0


# ------------------------------------------------------------------ registry

Scorer = Callable[[Sequence[str], str], float]


class CXRFEScorer:
    def __init__(self, extractor, encoder):
        self.extractor, self.encoder = extractor, encoder

    def __call__(self, refs: Sequence[str], cand: str) -> float:
        return max(cxrfescore(r, cand, self.extractor, self.encoder).score for r in refs) if refs else 0.0


SCORERS: dict[str, Callable[..., Scorer]] = {
    "bleu": lambda max_n=4: (lambda refs, cand: bleu(refs, cand, max_n)),
    "rouge_l": lambda beta=1.0: (lambda refs, cand: rouge_l(refs, cand, beta)),
    "cider_d": lambda corpus, max_n=4, sigma=6.0: CiderD(corpus, max_n, sigma),
    "cxrfescore": lambda extractor, encoder: CXRFEScorer(extractor, encoder),
}


def register_scorer(name: str, factory: Callable[..., Scorer]) -> None:
    SCORERS[name] = factory


def get_scorer(name: str, **params) -> Scorer:
    if name not in SCORERS:
        raise KeyError(f"unknown scorer {name!r}; registered: {', '.join(sorted(SCORERS))}")
    return SCORERS[name](**params)


def baseline_score(name: str, refs: Sequence[str] | str, cand: str, params: Optional[dict] = None) -> float:
    refs = [refs] if isinstance(refs, str) else list(refs)
    return get_scorer(name, **(params or {}))(refs, cand)


def read_score_pairs(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def score_pairs(pairs: Iterable[dict], scorers: dict[str, Scorer]) -> list[tuple[str, str, float]]:
    rows = []
    for i, pair in enumerate(pairs):
        refs = pair["ref"] if isinstance(pair["ref"], list) else [pair["ref"]]
        pid = str(pair.get("id", i))
        for name, scorer in scorers.items():
            rows.append((pid, name, float(scorer(refs, pair["cand"]))))
    return rows


def write_scores(rows: Iterable[tuple[str, str, float]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["pair_id", "scorer", "score"])
        for pid, name, s in rows:
            w.writerow([pid, name, f"{s:.10f}"])
