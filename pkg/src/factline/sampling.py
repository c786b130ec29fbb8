"""Triplet mining over auxiliary signals.

Six rules turn per-sentence signals (auxiliary embeddings, clusters,
health status, label sets, entity/relation items, paraphrase sets and
externally generated hard triplets) into (anchor, positive, negative)
records. Candidate generation here uses rapidfuzz and numpy; the checker
in :func:`validate_triplet` recomputes every clause in plain Python and
shares none of that code.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from rapidfuzz import process
from rapidfuzz.distance import Levenshtein

from factline.lexicon import anatomy_matcher, has_negation, observation_matcher
from factline.text import sha256_hex, tokenize

logger = logging.getLogger(__name__)

RULES = (1, 2, 3, 4, 5, 6)
# candidates must clear their thresholds by this much, so float noise between
# the vectorised sampler and the scalar validator cannot flip a decision
_SLACK = 1e-9


def levsim(x: str, y: str) -> float:
    if not x and not y:
        return 1.0
    return 1.0 - Levenshtein.distance(x, y) / max(len(x), len(y))


def jaccard(a: Iterable, b: Iterable) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def cluster_sentences(aux_embeddings, k: int, seed: int = 0, max_iter: int = 300) -> np.ndarray:
    from sklearn.cluster import KMeans

    X = np.asarray(aux_embeddings, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected a 2-D embedding matrix")
    if k < 1 or k > len(X):
        raise ValueError(f"k={k} must be in [1, {len(X)}]")
    km = KMeans(n_clusters=k, n_init=1, max_iter=max_iter, random_state=seed)
    return km.fit_predict(X).astype(np.int64)


class ConceptBagEncoder:
    """Deterministic auxiliary encoder: a weighted bag of lexicon concepts.

    Each concept (observation label, anatomy label, negation, leftover word)
    maps to a fixed pseudo-random direction derived from its hash.
    """

    weights = {"OBS": 1.0, "ANAT": 0.6, "NEG": 0.8, "TOK": 0.3}

    def __init__(self, dim: int = 128):
        self.dim = dim

    @staticmethod
    def features(text: str) -> list[str]:
        low = text.lower()
        obs = observation_matcher().find(low)
        anat = anatomy_matcher().find(low, claimed=[(m.start, m.end) for m in obs])
        feats = [f"OBS:{m.label}" for m in obs] + [f"ANAT:{m.label}" for m in anat]
        if has_negation(low):
            feats.append("NEG:")
        covered = "".join(" " if any(m.start <= i < m.end for m in obs + anat) else ch for i, ch in enumerate(low))
        feats += [f"TOK:{t}" for t in tokenize(covered) if t.isalnum()]
        return feats

    def _direction(self, feature: str) -> np.ndarray:
        return _direction(feature, self.dim)

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for i, text in enumerate(texts):
            v = np.zeros(self.dim)
            for feat in self.features(text):
                v += self.weights[feat.split(":", 1)[0]] * self._direction(feat)
            norm = np.linalg.norm(v)
            out[i] = v / norm if norm > 0 else self._direction("EMPTY:")
        return out


@lru_cache(maxsize=65536)
def _direction(feature: str, dim: int) -> np.ndarray:
    rng = np.random.default_rng(int(sha256_hex(feature)[:16], 16))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def radgraph_items(text: str) -> frozenset[str]:
    """Entity and relation tokens standing in for a RadGraph annotation."""
    low = text.lower()
    obs = observation_matcher().find(low)
    anat = anatomy_matcher().find(low, claimed=[(m.start, m.end) for m in obs])
    status = "absent" if has_negation(low) else "present"
    items = {f"obs:{m.label}:{status}" for m in obs} | {f"anat:{m.label}" for m in anat}
    items |= {f"located_at:{o.label}|{a.label}" for o in obs for a in anat}
    return frozenset(items)


class MissingSignalError(KeyError):
    def __init__(self, signal: str, text: str):
        super().__init__(f"missing aux signal {signal!r} for {text!r}")
        self.signal, self.text = signal, text


@dataclass
class AuxSignals:
    embeddings: dict[str, np.ndarray] = field(default_factory=dict)
    clusters: dict[str, int] = field(default_factory=dict)
    health: dict[str, str] = field(default_factory=dict)
    cig_labels: dict[str, frozenset[str]] = field(default_factory=dict)
    radgraph: dict[str, frozenset[str]] = field(default_factory=dict)
    paraphrases: dict[str, list[str]] = field(default_factory=dict)
    paraphrase_kind: dict[str, str] = field(default_factory=dict)
    fact_sets: dict[str, frozenset[str]] = field(default_factory=dict)
    hard_triplets: Optional[list[tuple[str, str, str]]] = None

    _signals = ("embeddings", "clusters", "health", "cig_labels", "radgraph")

    def get(self, signal: str, text: str):
        table = getattr(self, signal)
        if text not in table:
            raise MissingSignalError(signal, text)
        return table[text]

    def save(self, directory: str | Path) -> None:
        from factline.encoder.cache import write_embedding_cache

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        texts = sorted(self.embeddings)
        write_embedding_cache(d / "embeddings.bin", texts, np.stack([self.embeddings[t] for t in texts])
                              if texts else np.zeros((0, 128)))
        rows = {
            "clusters.jsonl": ((t, v) for t, v in self.clusters.items()),
            "health.jsonl": ((t, v) for t, v in self.health.items()),
            "cig_labels.jsonl": ((t, sorted(v)) for t, v in self.cig_labels.items()),
            "radgraph.jsonl": ((t, sorted(v)) for t, v in self.radgraph.items()),
            "paraphrases.jsonl": ((t, {"paraphrases": v, "kind": self.paraphrase_kind.get(t, "observation")})
                                  for t, v in self.paraphrases.items()),
            "fact_sets.jsonl": ((t, sorted(v)) for t, v in self.fact_sets.items()),
        }
        for name, items in rows.items():
            with open(d / name, "w", encoding="utf-8") as fh:
                for text, value in items:
                    fh.write(json.dumps({"text": text, "value": value}, ensure_ascii=False) + "\n")
        if self.hard_triplets is not None:
            write_triplets([Triplet(a, p, n, 6) for a, p, n in self.hard_triplets], d / "hard_triplets.jsonl")

    @classmethod
    def load(cls, directory: str | Path) -> "AuxSignals":
        from factline.encoder.cache import read_embedding_cache

        d = Path(directory)

        def rows(name):
            path = d / name
            if not path.exists():
                return []
            with open(path, encoding="utf-8") as fh:
                return [(o["text"], o["value"]) for o in map(json.loads, filter(str.strip, fh))]

        texts, matrix = read_embedding_cache(d / "embeddings.bin")
        aux = cls(embeddings={t: matrix[i].astype(np.float64) for i, t in enumerate(texts)})
        aux.clusters = {t: int(v) for t, v in rows("clusters.jsonl")}
        aux.health = dict(rows("health.jsonl"))
        aux.cig_labels = {t: frozenset(v) for t, v in rows("cig_labels.jsonl")}
        aux.radgraph = {t: frozenset(v) for t, v in rows("radgraph.jsonl")}
        for t, v in rows("paraphrases.jsonl"):
            aux.paraphrases[t] = list(v["paraphrases"])
            aux.paraphrase_kind[t] = v["kind"]
        aux.fact_sets = {t: frozenset(v) for t, v in rows("fact_sets.jsonl")}
        if (d / "hard_triplets.jsonl").exists():
            aux.hard_triplets = [(t.anchor, t.positive, t.negative) for t in read_triplets(d / "hard_triplets.jsonl")]
        return aux


def build_fact_sets(facts: Iterable[str], metadata: Mapping[str, object],
                    paraphrases: Mapping[str, Sequence[str]]) -> dict[str, frozenset[str]]:
    """S(f): the fact, its detailed and short observations, and every paraphrase of those."""
    out = {}
    for f in facts:
        members = {f}
        meta = metadata.get(f)
        if meta is not None:
            members |= {m for m in (meta.detailed_observation, meta.short_observation) if m}
        for m in list(members):
            members |= set(paraphrases.get(m, ()))
        out[f] = frozenset(members)
    return out


def build_aux_signals(texts: Sequence[str], k_clusters: int, seed: int = 0, encoder=None, annotator=None,
                      paraphrases: Optional[Mapping[str, Sequence[str]]] = None,
                      paraphrase_kind: Optional[Mapping[str, str]] = None,
                      fact_sets: Optional[Mapping[str, frozenset[str]]] = None,
                      hard_triplets: Optional[Sequence[tuple[str, str, str]]] = None) -> AuxSignals:
    """Compute every signal for ``texts`` plus all paraphrase and S(f) members."""
    from factline.annotation import RuleAnnotator

    encoder = encoder or ConceptBagEncoder()
    annotator = annotator or RuleAnnotator()
    paraphrases = {k: list(v) for k, v in (paraphrases or {}).items()}
    fact_sets = dict(fact_sets or {})
    universe = list(dict.fromkeys(
        list(texts)
        + [t for a, ps in paraphrases.items() for t in [a, *ps]]
        + [t for s in fact_sets.values() for t in sorted(s)]
    ))
    matrix = encoder.encode(universe)
    labels = cluster_sentences(matrix, k_clusters, seed)
    aux = AuxSignals(
        embeddings={t: matrix[i] for i, t in enumerate(universe)},
        clusters={t: int(labels[i]) for i, t in enumerate(universe)},
        paraphrases=paraphrases,
        paraphrase_kind={k: (paraphrase_kind or {}).get(k, "observation") for k in paraphrases},
        fact_sets=fact_sets,
        hard_triplets=list(hard_triplets) if hard_triplets is not None else None,
    )
    for t in universe:
        meta, obs, anat = annotator.annotate(t)
        aux.health[t] = meta.health_status
        aux.cig_labels[t] = frozenset([f"obs:{n}" for n in obs.names] + [f"anat:{n}" for n in anat.names])
        aux.radgraph[t] = radgraph_items(t)
    return aux


@dataclass(frozen=True)
class Triplet:
    anchor: str
    positive: str
    negative: str
    rule_id: int
    sub_kind: Optional[str] = None


@dataclass
class RuleConfig:
    margin_cos: float = 0.1
    margin_lev: float = 0.1
    margin_rg: float = 0.2
    k_clusters: int = 200
    seed: int = 0
    max_attempts: int = 1000

    def __post_init__(self):
        if min(self.margin_cos, self.margin_lev, self.margin_rg) < 0:
            raise ValueError("margins must be non-negative")


# ---------------------------------------------------------------- validator

def _edit_distance(x: str, y: str) -> int:
    prev = list(range(len(y) + 1))
    for i, cx in enumerate(x, 1):
        cur = [i]
        for j, cy in enumerate(y, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (cx != cy)))
        prev = cur
    return prev[-1]


def _string_sim(x: str, y: str) -> float:
    if not x and not y:
        return 1.0
    return 1.0 - _edit_distance(x, y) / max(len(x), len(y))


def _cosine(u, v) -> float:
    dot = sum(float(a) * float(b) for a, b in zip(u, v))
    nu = sum(float(a) ** 2 for a in u) ** 0.5
    nv = sum(float(b) ** 2 for b in v) ** 0.5
    return dot / (nu * nv) if nu and nv else 0.0


def _overlap(a: frozenset, b: frozenset) -> float:
    union = a | b
    return 1.0 if not union else len(a & b) / len(union)


def _vetoed(texts, aux, a, p, n) -> bool:
    ca_p = _cosine(aux.get("embeddings", a), aux.get("embeddings", p))
    ca_n = _cosine(aux.get("embeddings", a), aux.get("embeddings", n))
    return ca_p < ca_n and _edit_distance(a, p) > _edit_distance(a, n)


def validate_triplet(t: Triplet, aux: AuxSignals, cfg: RuleConfig) -> tuple[bool, str]:
    a, p, n = t.anchor, t.positive, t.negative
    if len({a, p, n}) < 3:
        return False, "texts not distinct"
    rule = t.rule_id
    if rule == 1:
        if p not in aux.paraphrases.get(a, ()):
            return False, "positive is not a paraphrase of anchor"
        if n in aux.paraphrases.get(a, ()):
            return False, "negative is a paraphrase of anchor"
        if _vetoed(None, aux, a, p, n):
            return False, "veto: embedding and edit distance both prefer negative"
        return True, "ok"
    if rule == 2:
        if aux.get("health", a) != aux.get("health", p):
            return False, "anchor-positive health status differs"
        ca, cp, cn = aux.get("clusters", a), aux.get("clusters", p), aux.get("clusters", n)
        if ca != cp:
            return False, "anchor-positive cluster differs"
        if cp == cn:
            return False, "positive-negative share a cluster"
        ea, ep, en = aux.get("embeddings", a), aux.get("embeddings", p), aux.get("embeddings", n)
        if not _cosine(ea, ep) > _cosine(ea, en) + cfg.margin_cos:
            return False, "cosine margin not met"
        if not _string_sim(a, p) > _string_sim(a, n) + cfg.margin_lev:
            return False, "levsim margin not met"
        return True, "ok"
    if rule == 3:
        sets = [s for s in aux.fact_sets.values() if a in s and p in s]
        if not sets:
            return False, "anchor and positive share no fact set"
        if all(n in s for s in sets):
            return False, "negative inside the fact set"
        if aux.get("clusters", a) == aux.get("clusters", n):
            return False, "anchor-negative share a cluster"
        if _vetoed(None, aux, a, p, n):
            return False, "veto: embedding and edit distance both prefer negative"
        return True, "ok"
    if rule == 4:
        la, lp, ln = aux.get("cig_labels", a), aux.get("cig_labels", p), aux.get("cig_labels", n)
        if not la & lp:
            return False, "anchor-positive share no label"
        if la & ln:
            return False, "anchor-negative label overlap"
        if lp & ln:
            return False, "positive-negative label overlap"
        ea, ep, en = aux.get("embeddings", a), aux.get("embeddings", p), aux.get("embeddings", n)
        if not (_cosine(ea, ep) > _cosine(ea, en) and _string_sim(a, p) > _string_sim(a, n)):
            return False, "embedding and levsim do not both prefer positive"
        return True, "ok"
    if rule == 5:
        ca, cp, cn = aux.get("clusters", a), aux.get("clusters", p), aux.get("clusters", n)
        if ca != cp:
            return False, "anchor-positive cluster differs"
        if ca == cn:
            return False, "anchor-negative share a cluster"
        ga, gp, gn = aux.get("radgraph", a), aux.get("radgraph", p), aux.get("radgraph", n)
        if not _overlap(ga, gp) > _overlap(ga, gn) + cfg.margin_rg:
            return False, "entity/relation overlap margin not met"
        return True, "ok"
    if rule == 6:
        if aux.hard_triplets is not None and (a, p, n) not in set(map(tuple, aux.hard_triplets)):
            return False, "not a supplied hard triplet"
        return True, "ok"
    raise ValueError(f"unknown rule id {rule}")


# ------------------------------------------------------------------ sampler

class _Pool:
    """Vectorised views of the aux signals over the sampling corpus."""

    def __init__(self, corpus: Sequence[str], aux: AuxSignals, need: Sequence[str]):
        self.texts = list(dict.fromkeys(corpus))
        self.aux = aux
        self.index = {t: i for i, t in enumerate(self.texts)}
        for signal in need:
            for t in self.texts:
                aux.get(signal, t)
        if "embeddings" in need:
            self.E = np.stack([np.asarray(aux.embeddings[t], np.float64) for t in self.texts]) if self.texts else None
            if self.E is not None:
                self.E /= np.linalg.norm(self.E, axis=1, keepdims=True)
        if "clusters" in need:
            self.C = np.array([aux.clusters[t] for t in self.texts])

    def emb(self, text: str) -> np.ndarray:
        v = np.asarray(self.aux.get("embeddings", text), np.float64)
        return v / np.linalg.norm(v)

    def cos_to(self, text: str) -> np.ndarray:
        return self.E @ self.emb(text)

    def levsim_to(self, text: str) -> np.ndarray:
        return process.cdist([text], self.texts, scorer=Levenshtein.normalized_similarity, dtype=np.float64)[0]


def _collect(draw, n: int, rng: random.Random, max_misses: int, rule: int) -> list[Triplet]:
    out: list[Triplet] = []
    seen: set[tuple[str, str, str]] = set()
    misses = 0
    while len(out) < n and misses < max_misses:
        t = draw(rng)
        if t is None or (t.anchor, t.positive, t.negative) in seen:
            misses += 1
            continue
        seen.add((t.anchor, t.positive, t.negative))
        out.append(t)
    if len(out) < n:
        logger.warning("rule %d: corpus exhausted after %d of %d requested triplets", rule, len(out), n)
    return out


def sample_triplets(rule_id: int, corpus: Sequence[str], aux: AuxSignals, cfg: RuleConfig, n: int,
                    seed: int = 0) -> list[Triplet]:
    if rule_id not in RULES:
        raise ValueError(f"unknown rule id {rule_id}")
    if rule_id == 6 and aux.hard_triplets is None:
        raise ValueError("rule 6 needs a hard-triplet source (LLM client or fixture file)")
    if n <= 0:
        return []
    rng = random.Random(f"{seed}:{rule_id}")
    max_misses = max(1000, 20 * n)
    if rule_id == 6:
        return _sample_hard(aux, n, rng)
    drawer = {1: _rule1, 2: _rule2, 3: _rule3, 4: _rule4, 5: _rule5}[rule_id]
    draw = drawer(corpus, aux, cfg)
    if draw is None:
        logger.warning("rule %d: no eligible anchors in corpus", rule_id)
        return []
    return _collect(draw, n, rng, max_misses, rule_id)


def _rejection_negative(rng, pool: _Pool, a: str, p: str, excluded, extra_ok, attempts: int) -> Optional[str]:
    """Uniform negatives outside ``excluded``, dropped if the embedding and raw edit distance both veto."""
    if len(pool.texts) <= len(excluded):
        return None
    ea, ep = pool.emb(a), pool.emb(p)
    cos_ap = float(ea @ ep)
    lev_ap = Levenshtein.distance(a, p)
    for _ in range(attempts):
        cand = pool.texts[rng.randrange(len(pool.texts))]
        if cand in excluded or not extra_ok(cand):
            continue
        cos_an = float(ea @ pool.emb(cand))
        # negative is kept unless it clearly wins on both signals (with slack toward vetoing)
        vetoed = cos_ap < cos_an + _SLACK and lev_ap > Levenshtein.distance(a, cand)
        if not vetoed:
            return cand
    return None


def _rule1(corpus, aux: AuxSignals, cfg: RuleConfig):
    pool = _Pool(corpus, aux, [])
    pairs = [(a, p) for a in sorted(aux.paraphrases) for p in aux.paraphrases[a] if p != a]
    if not pairs:
        return None
    dead: set[tuple[str, str]] = set()

    def draw(rng):
        if len(dead) == len(pairs):
            return None
        a, p = pairs[rng.randrange(len(pairs))]
        if (a, p) in dead:
            return None
        excluded = {a, p, *aux.paraphrases[a]}
        neg = _rejection_negative(rng, pool, a, p, excluded, lambda c: True, cfg.max_attempts)
        if neg is None:
            dead.add((a, p))
            return None
        return Triplet(a, p, neg, 1, aux.paraphrase_kind.get(a, "observation"))

    return draw


def _rule3(corpus, aux: AuxSignals, cfg: RuleConfig):
    pool = _Pool(corpus, aux, [])
    sets = [sorted(s) for _, s in sorted(aux.fact_sets.items()) if len(s) >= 2]
    if not sets:
        return None

    def draw(rng):
        members = sets[rng.randrange(len(sets))]
        a, p = rng.sample(members, 2)
        excluded = set(members)
        ca = aux.get("clusters", a)
        neg = _rejection_negative(rng, pool, a, p, excluded, lambda c: aux.get("clusters", c) != ca,
                                  cfg.max_attempts)
        return None if neg is None else Triplet(a, p, neg, 3)

    return draw


def _pick(rng, mask: np.ndarray, texts: list[str]) -> Optional[str]:
    idx = np.flatnonzero(mask)
    return texts[int(idx[rng.randrange(len(idx))])] if len(idx) else None


def _rule2(corpus, aux: AuxSignals, cfg: RuleConfig):
    pool = _Pool(corpus, aux, ["embeddings", "clusters", "health"])
    groups: dict[tuple[int, str], list[str]] = {}
    for t in pool.texts:
        groups.setdefault((aux.clusters[t], aux.health[t]), []).append(t)
    anchors = [t for t in pool.texts if len(groups[(aux.clusters[t], aux.health[t])]) > 1]
    if not anchors:
        return None

    def draw(rng):
        a = anchors[rng.randrange(len(anchors))]
        p = rng.choice([t for t in groups[(aux.clusters[a], aux.health[a])] if t != a])
        cos, lev = pool.cos_to(a), pool.levsim_to(a)
        i = pool.index[p]
        mask = ((pool.C != pool.C[i])
                & (cos[i] > cos + cfg.margin_cos + _SLACK)
                & (lev[i] > lev + cfg.margin_lev + _SLACK))
        neg = _pick(rng, mask, pool.texts)
        return None if neg is None else Triplet(a, p, neg, 2)

    return draw


def _rule4(corpus, aux: AuxSignals, cfg: RuleConfig):
    pool = _Pool(corpus, aux, ["embeddings", "cig_labels"])
    by_label: dict[str, list[str]] = {}
    for t in pool.texts:
        for label in sorted(aux.cig_labels[t]):
            by_label.setdefault(label, []).append(t)
    anchors = [t for t in pool.texts if any(len(by_label[l]) > 1 for l in aux.cig_labels[t])]
    if not anchors:
        return None

    def draw(rng):
        a = anchors[rng.randrange(len(anchors))]
        partners = sorted({t for l in aux.cig_labels[a] for t in by_label[l] if t != a})
        p = rng.choice(partners)
        banned = aux.cig_labels[a] | aux.cig_labels[p]
        disjoint = np.array([not (aux.cig_labels[t] & banned) for t in pool.texts])
        cos, lev = pool.cos_to(a), pool.levsim_to(a)
        i = pool.index[p]
        mask = disjoint & (cos[i] > cos + _SLACK) & (lev[i] > lev + _SLACK)
        neg = _pick(rng, mask, pool.texts)
        return None if neg is None else Triplet(a, p, neg, 4)

    return draw


def _rule5(corpus, aux: AuxSignals, cfg: RuleConfig):
    pool = _Pool(corpus, aux, ["clusters", "radgraph"])
    members: dict[int, list[str]] = {}
    for t in pool.texts:
        members.setdefault(aux.clusters[t], []).append(t)
    anchors = [t for t in pool.texts if len(members[aux.clusters[t]]) > 1]
    if not anchors:
        return None

    def draw(rng):
        a = anchors[rng.randrange(len(anchors))]
        p = rng.choice([t for t in members[aux.clusters[a]] if t != a])
        ga = aux.radgraph[a]
        j_ap = jaccard(ga, aux.radgraph[p])
        mask = np.array([aux.clusters[t] != aux.clusters[a]
                         and j_ap > jaccard(ga, aux.radgraph[t]) + cfg.margin_rg + _SLACK for t in pool.texts])
        neg = _pick(rng, mask, pool.texts)
        return None if neg is None else Triplet(a, p, neg, 5)

    return draw


def _sample_hard(aux: AuxSignals, n: int, rng: random.Random) -> list[Triplet]:
    unique = list(dict.fromkeys(tuple(t) for t in aux.hard_triplets if len(set(t)) == 3))
    rng.shuffle(unique)
    out = [Triplet(a, p, q, 6) for a, p, q in unique[:n]]
    if len(out) < n:
        logger.warning("rule 6: only %d hard triplets available for %d requested", len(out), n)
    return out


def generate_hard_triplets(client, facts: Sequence[str]) -> list[tuple[str, str, str]]:
    """Ask the chat endpoint for hard triplets anchored on each fact; unusable replies are skipped."""
    from factline.llm import LLMError, parse_json_reply

    out = []
    for fact, reply in zip(facts, client.complete_many("hard_triplets", list(facts), operation_id="hard_triplets")):
        try:
            obj = parse_json_reply(reply)
        except LLMError as exc:
            logger.warning("hard-triplet reply for %r unusable: %s", fact, exc)
            continue
        items = obj if isinstance(obj, list) else [obj]
        for item in items:
            if not isinstance(item, dict):
                continue
            anchor = item.get("anchor", fact)
            if all(isinstance(x, str) and x.strip() for x in (anchor, item.get("positive"), item.get("negative"))):
                out.append((anchor, item["positive"], item["negative"]))
    return out


def write_triplets(triplets: Iterable[Triplet], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            rec = {"rule": t.rule_id, "anchor": t.anchor, "positive": t.positive, "negative": t.negative}
            if t.sub_kind:
                rec["sub_kind"] = t.sub_kind
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_triplets(path: str | Path) -> list[Triplet]:
    with open(path, encoding="utf-8") as fh:
        return [Triplet(o["anchor"], o["positive"], o["negative"], int(o["rule"]), o.get("sub_kind"))
                for o in map(json.loads, filter(str.strip, fh))]
