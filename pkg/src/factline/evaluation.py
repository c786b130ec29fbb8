"""Evaluation protocols.

Per-query statistics are computed as exact rationals and only converted
to float once, after averaging, so results do not depend on summation
order. Rankings sort by descending similarity and break ties by corpus
index.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from factline.annotation import GoldLabelVector, LabelAssignment, gold_vector
from factline.resources import anatomy_labels, gold_observation_labels


# ---------------------------------------------------------- label relations

def label_entails(x: GoldLabelVector, y: GoldLabelVector) -> bool:
    """x satisfies every definite constraint of y: its non-omitted observations and set anatomy bits."""
    definite = y.observations != -1
    return bool(np.all(x.observations[definite] == y.observations[definite]) and np.all(x.anatomy[y.anatomy == 1] == 1))


def label_contradicts(x: GoldLabelVector, y: GoldLabelVector) -> bool:
    a, b = x.observations, y.observations
    return bool(np.any(((a == 1) & (b == 0)) | ((a == 0) & (b == 1))))


def relevant(x: GoldLabelVector, y: GoldLabelVector) -> bool:
    return label_entails(x, y) or label_entails(y, x)


def _query_relations(O: np.ndarray, A: np.ndarray, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-vectorized relevant() and label_contradicts() of query q against every row."""
    oq, aq = O[q], A[q]
    same = O == oq
    q_entails = ((same | (O == -1)).all(1)) & (((aq == 1) | (A == 0)).all(1))
    entails_q = ((same | (oq == -1)).all(1)) & (((A == 1) | (aq == 0)).all(1))
    contra = (((oq == 1) & (O == 0)) | ((oq == 0) & (O == 1))).any(1)
    return q_entails | entails_q, contra


# ----------------------------------------------------------------- ranking

@dataclass
class RankingResult:
    auc: float
    a_at_k: dict[int, float]
    c_at_k: dict[int, float]
    n_queries: int = 0
    n_auc_queries: int = 0


def _sim_matrix(sim, n: int) -> np.ndarray:
    if callable(sim):
        return np.array([[sim(i, j) if i != j else 0.0 for j in range(n)] for i in range(n)], dtype=np.float64)
    M = np.asarray(sim, dtype=np.float64)
    if M.shape != (n, n):
        raise ValueError(f"similarity matrix must be {n}x{n}")
    return M


def ranking(scores: Sequence[float], candidates: Sequence[int]) -> list[int]:
    return sorted(candidates, key=lambda j: (-scores[j], j))


def auc_midrank(pos: Sequence[float], neg: Sequence[float]) -> Fraction:
    """P(pos > neg) + 0.5 P(pos = neg) via the rank-sum statistic with midranks."""
    if not pos or not neg:
        raise ValueError("AUC needs at least one positive and one negative score")
    values = sorted([(v, 1) for v in pos] + [(v, 0) for v in neg])
    twice_rank_sum = 0  # twice the rank sum of positives, so midranks stay integral
    i = 0
    while i < len(values):
        j = i
        while j < len(values) and values[j][0] == values[i][0]:
            j += 1
        twice_mid = i + 1 + j  # ranks i+1 .. j
        twice_rank_sum += twice_mid * sum(flag for _, flag in values[i:j])
        i = j
    n_p, n_n = len(pos), len(neg)
    twice_u = twice_rank_sum - n_p * (n_p + 1)
    return Fraction(twice_u, 2 * n_p * n_n)


def _mean(values: Sequence[Fraction]) -> float:
    return float(sum(values, Fraction(0)) / len(values)) if values else float("nan")


def _prefix_mean(flags: Sequence[int], k: int) -> Fraction:
    hits, total = 0, Fraction(0)
    for i in range(k):
        hits += flags[i]
        total += Fraction(hits, i + 1)
    return total / k


def sentence_ranking_eval(sim, sentences: Sequence[str], labels: Sequence[GoldLabelVector],
                          ks: Sequence[int] = (50, 100)) -> RankingResult:
    """Rank all other sentences per query; k is clipped to the number of candidates."""
    n = len(sentences)
    if n < 2:
        raise ValueError("ranking evaluation needs at least 2 sentences")
    if len(labels) != n:
        raise ValueError("one label vector per sentence is required")
    M = _sim_matrix(sim, n)
    O = np.stack([lv.observations for lv in labels])
    A = np.stack([lv.anatomy for lv in labels])
    aucs: list[Fraction] = []
    a = {k: [] for k in ks}
    c = {k: [] for k in ks}
    for q in range(n):
        order = ranking(M[q], [j for j in range(n) if j != q])
        rel_row, con_row = _query_relations(O, A, q)
        rel = rel_row[order].astype(int).tolist()
        con = con_row[order].astype(int).tolist()
        pos = [M[q, j] for j, r in zip(order, rel) if r]
        neg = [M[q, j] for j, r in zip(order, rel) if not r]
        if pos and neg:
            aucs.append(auc_midrank(pos, neg))
        for k in ks:
            kk = min(k, len(order))
            a[k].append(_prefix_mean(rel, kk))
            c[k].append(Fraction(sum(con[:kk])))
    return RankingResult(_mean(aucs), {k: _mean(v) for k, v in a.items()}, {k: _mean(v) for k, v in c.items()},
                         n, len(aucs))


def _jaccard_exact(a: set, b: set) -> Fraction:
    union = a | b
    return Fraction(1) if not union else Fraction(len(a & b), len(union))


def report_jaccard_eval(sim, reports: Sequence[str], tag_bags: Sequence[Iterable[str]],
                        ks: Sequence[int] = (20, 50)) -> dict[int, float]:
    n = len(reports)
    bags = [set(b) for b in tag_bags]
    if len(bags) != n:
        raise ValueError("a tag bag is required for every report")
    if n < 2:
        raise ValueError("need at least 2 reports")
    M = _sim_matrix(sim, n)
    out = {k: [] for k in ks}
    for q in range(n):
        order = ranking(M[q], [j for j in range(n) if j != q])
        js = [_jaccard_exact(bags[q], bags[j]) for j in order]
        for k in ks:
            kk = min(k, len(order))
            out[k].append(sum(js[:kk], Fraction(0)) / kk)
    return {k: _mean(v) for k, v in out.items()}


def triplet_accuracy(encoder, triplets) -> float:
    """Fraction of triplets with cos(a, p) > cos(a, n)."""
    if not triplets:
        raise ValueError("no triplets to evaluate")
    texts = list(dict.fromkeys(t for tr in triplets for t in (tr.anchor, tr.positive, tr.negative)))
    E = dict(zip(texts, encoder.encode(texts)))
    wins = sum(float(E[t.anchor] @ E[t.positive]) > float(E[t.anchor] @ E[t.negative]) for t in triplets)
    return wins / len(triplets)


# --------------------------------------------------- NLI as similarity

@dataclass
class NLISimResult:
    bt: float
    a_E: float
    a_C: float
    a_EC: float


def _split_labeled(pairs) -> tuple[list[float], list[float]]:
    ent, con = [], []
    for s, label in pairs:
        if label in ("entailment", True, 1):
            ent.append(float(s))
        elif label in ("contradiction", False, 0):
            con.append(float(s))
        else:
            raise ValueError(f"label must be entailment or contradiction, got {label!r}")
    return ent, con


def nli_similarity_eval(pairs: Sequence[tuple[float, str]], bt: float) -> NLISimResult:
    """a_E: % entailment pairs with sim >= bt; a_C: % contradiction pairs with sim < bt; a_EC: their mean."""
    if not math.isfinite(bt):
        raise ValueError("threshold must be finite")
    ent, con = _split_labeled(pairs)
    a_e = 100 * sum(s >= bt for s in ent) / len(ent) if ent else 0.0
    a_c = 100 * sum(s < bt for s in con) / len(con) if con else 0.0
    return NLISimResult(bt, a_e, a_c, (a_e + a_c) / 2)


def threshold_candidates(sims: Iterable[float]) -> list[float]:
    u = sorted(set(float(s) for s in sims))
    mids = [(x + y) / 2 for x, y in zip(u, u[1:])]
    # finite stand-ins for -inf / +inf: everything above / everything below
    return [u[0] - 1.0] + mids + [u[-1] + 1.0]


def tune_threshold(pairs: Sequence[tuple[float, str]]) -> NLISimResult:
    """Best macro accuracy over midpoint thresholds; ties go to the lowest threshold."""
    ent, con = _split_labeled(pairs)
    if not ent or not con:
        raise ValueError("threshold tuning needs both entailment and contradiction pairs")
    best_key, best_bt = None, None
    ent_sorted, con_sorted = sorted(ent), sorted(con)
    for bt in threshold_candidates(ent + con):
        e_ok = len(ent) - _count_below(ent_sorted, bt)
        c_ok = _count_below(con_sorted, bt)
        key = e_ok * len(con) + c_ok * len(ent)  # proportional to a_EC, exact
        if best_key is None or key > best_key:
            best_key, best_bt = key, bt
    return nli_similarity_eval(pairs, best_bt)


def _count_below(sorted_values: Sequence[float], bt: float) -> int:
    import bisect

    return bisect.bisect_left(sorted_values, bt)


def nli_pair_similarities(encoder, pairs) -> list[tuple[float, str]]:
    kept = [p for p in pairs if p.label in ("entailment", "contradiction")]
    texts = list(dict.fromkeys(t for p in kept for t in (p.premise, p.hypothesis)))
    E = dict(zip(texts, encoder.encode(texts)))
    return [(float(E[p.premise] @ E[p.hypothesis]), p.label) for p in kept]


def nli_classification_eval(encoder, pairs) -> float:
    from factline.nli_data import LABELS

    if not pairs:
        raise ValueError("no NLI pairs to evaluate")
    texts = list(dict.fromkeys(t for p in pairs for t in (p.premise, p.hypothesis)))
    E = dict(zip(texts, encoder.encode(texts)))
    P = np.stack([E[p.premise] for p in pairs])
    H = np.stack([E[p.hypothesis] for p in pairs])
    pred = encoder.nli_logits(P, H).argmax(axis=1)
    return 100.0 * sum(LABELS[int(k)] == p.label for k, p in zip(pred, pairs)) / len(pairs)


def metric_entcont_auc(scorer: Callable[[Sequence[str], str], float], pairs) -> float:
    ent = [float(scorer([p.premise], p.hypothesis)) for p in pairs if p.label == "entailment"]
    con = [float(scorer([p.premise], p.hypothesis)) for p in pairs if p.label == "contradiction"]
    return float(auc_midrank(ent, con))


# ----------------------------------------------------- template recovery

def labels_to_template_report(assignments: Iterable[LabelAssignment]) -> str:
    known_obs, known_anat = set(gold_observation_labels()), set(anatomy_labels())
    sentences = []
    for a in assignments:
        if a.observation not in known_obs:
            raise ValueError(f"unknown observation label {a.observation!r}")
        if a.location is not None and a.location not in known_anat:
            raise ValueError(f"unknown anatomy label {a.location!r}")
        text = ("" if a.present else "no ") + a.observation
        if a.location is not None:
            text += f" in {a.location}"
        sentences.append(text)
    return ". ".join(sentences) + "." if sentences else ""


@dataclass
class RecoveryTable:
    rows: list[dict] = field(default_factory=list)
    means: dict[str, float] = field(default_factory=dict)
    failures: int = 0

    def write_csv(self, path: str | Path) -> None:
        names = list(self.means)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["report", *names, "failure"])
            for r in self.rows:
                w.writerow([r["report"], *[_fmt(r.get(n)) for n in names], r.get("failure", "")])
            w.writerow(["mean", *[_fmt(self.means[n]) for n in names], self.failures])


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6f}"


def render_method_output(output) -> str:
    """Assignments render through the templates; fact lists are joined as sentences; text passes through."""
    if isinstance(output, str):
        return output
    output = list(output)
    if output and all(isinstance(o, LabelAssignment) for o in output):
        return labels_to_template_report(output)
    if not output:
        return ""
    return ". ".join(str(o).rstrip(".") for o in output) + "."


def recovery_eval(label_method: Callable[[str], object], reports: Sequence[str],
                  scorers: Mapping[str, Callable[[Sequence[str], str], float]]) -> RecoveryTable:
    table = RecoveryTable(means={name: float("nan") for name in scorers})
    if not reports:
        table.means = {}
        return table
    totals = {name: [] for name in scorers}
    for i, report in enumerate(reports):
        row: dict = {"report": i}
        try:
            rendered = render_method_output(label_method(report))
            for name, scorer in scorers.items():
                row[name] = float(scorer([report], rendered))
                totals[name].append(row[name])
        except Exception as exc:  # per-report failure is recorded, not fatal
            row["failure"] = f"{type(exc).__name__}: {exc}"
            table.failures += 1
        table.rows.append(row)
    table.means = {n: math.fsum(v) / len(v) if v else float("nan") for n, v in totals.items()}
    return table


def rule_label_method(report: str) -> list[LabelAssignment]:
    from factline.annotation import assignments_from_report

    return assignments_from_report(report)


def recovered_vector(report: str) -> GoldLabelVector:
    return gold_vector(rule_label_method(report))


# ------------------------------------------------------------------ output

RANKING_COLUMNS = ("AUC", "a@50", "a@100", "c@50", "c@100")
NLI_SIM_COLUMNS = ("BT", "a_E", "a_C", "a_E+C")


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in r])


def ranking_row(name: str, r: RankingResult, ks=(50, 100)) -> list:
    return [name, r.auc, *[r.a_at_k[k] for k in ks], *[r.c_at_k[k] for k in ks]]


def nli_row(name: str, r: NLISimResult) -> list:
    return [name, r.bt, r.a_E, r.a_C, r.a_EC]


def write_curves_svg(path: str | Path, curves: Mapping[str, Sequence[tuple[float, float]]],
                     title: str = "", width: int = 640, height: int = 400) -> None:
    """Minimal line chart: one polyline per named curve of (k, value) points."""
    pad = 50
    pts = [p for c in curves.values() for p in c]
    if not pts:
        Path(path).write_text(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"/>\n')
        return
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    x0, x1 = min(xs), max(xs) if max(xs) > min(xs) else min(xs) + 1
    y0, y1 = min(ys), max(ys) if max(ys) > min(ys) else min(ys) + 1
    sx = lambda x: pad + (x - x0) / (x1 - x0) * (width - 2 * pad)
    sy = lambda y: height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif">',
             f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
             f'<text x="{pad}" y="{height - pad + 15}" font-size="10">{x0:g}</text>',
             f'<text x="{width - pad}" y="{height - pad + 15}" font-size="10" text-anchor="end">{x1:g}</text>',
             f'<text x="{pad - 5}" y="{height - pad}" font-size="10" text-anchor="end">{y0:.3g}</text>',
             f'<text x="{pad - 5}" y="{pad}" font-size="10" text-anchor="end">{y1:.3g}</text>']
    for i, (name, curve) in enumerate(curves.items()):
        color = colors[i % len(colors)]
        line = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in curve)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{line}"/>')
        parts.append(f'<text x="{width - pad + 5}" y="{pad + 14 * i}" font-size="10" fill="{color}">{name}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
