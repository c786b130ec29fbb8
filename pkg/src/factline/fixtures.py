"""Seeded synthetic corpus for tests and offline runs.

A small grammar over findings, locations, severities, negation cues and
temporal modifiers. Every fact is a tuple of slots; rendering picks one
surface form per slot, so paraphrases share slots but not wording, while
contradictions reuse the anchor's wording with one slot flipped.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

from factline.annotation import LabelAssignment
from factline.evaluation import labels_to_template_report
from factline.extraction.rules import normalize_fact
from factline.nli_data import NLIPair
from factline.resources import anatomy_labels, gold_observation_labels
from factline.text import tokenize

# label -> surface forms; the first is canonical
FINDINGS = {
    "pleural effusion": ["pleural effusion", "effusion", "pleural fluid", "fluid in the pleural space"],
    "pneumothorax": ["pneumothorax", "air in the pleural space"],
    "consolidation": ["consolidation", "airspace consolidation", "consolidative change"],
    "atelectasis": ["atelectasis", "atelectatic change", "volume loss"],
    "pulmonary edema/hazy opacity": ["pulmonary edema", "edema", "alveolar edema"],
    "pneumonia": ["pneumonia", "infection", "infectious process"],
    "lung opacity": ["opacity", "opacification", "density"],
    "mass/nodule": ["nodule", "pulmonary nodule", "nodular lesion"],
    "rib fracture": ["rib fracture", "fractured rib", "broken rib"],
    "infiltration": ["infiltrate", "infiltrates"],
}
GLOBAL_FINDINGS = {
    "enlarged cardiac silhouette": ["cardiomegaly", "enlarged heart", "enlargement of the heart"],
    "fluid overload/heart failure": ["congestive heart failure", "heart failure", "chf"],
    "copd/emphysema": ["emphysema", "copd"],
}
LOCATIONS = {
    "right lung": ["right lung", "right hemithorax"],
    "left lung": ["left lung", "left hemithorax"],
    "right lower lung zone": ["right lower lung zone", "right lower lobe", "right base", "right lung base"],
    "left lower lung zone": ["left lower lung zone", "left lower lobe", "left base", "left lung base"],
    "right upper lung zone": ["right upper lung zone", "right upper lobe"],
    "left upper lung zone": ["left upper lung zone", "left upper lobe"],
    "right apical zone": ["right apical zone", "right apex"],
    "left apical zone": ["left apical zone", "left apex"],
    "right mid lung zone": ["right mid lung zone", "right middle lobe"],
    "left mid lung zone": ["left mid lung zone", "lingula"],
}
SIDE_SWAP = {"right": "left", "left": "right"}
PREPOSITIONS = ["in the", "at the", "involving the"]
NEGATIONS = ["no", "no evidence of", "negative for"]
SEVERITIES = {"small": "large", "large": "small", "mild": "severe", "severe": "mild", "moderate": "minimal",
              "minimal": "moderate"}
TEMPORALS = {"increased": "decreased", "decreased": "increased", "worsening": "improving", "improving": "worsening",
             "new": "resolved", "stable": None}
PREDICATES = ["", " seen", " noted", " present"]
_ALL_FINDINGS = {**FINDINGS, **GLOBAL_FINDINGS}


@dataclass(frozen=True)
class FactSpec:
    finding: str
    location: Optional[str] = None
    negated: bool = False
    severity: Optional[str] = None
    temporal: Optional[str] = None

    def assignment(self) -> LabelAssignment:
        return LabelAssignment(self.finding, not self.negated, self.location)


@dataclass(frozen=True)
class Wording:
    finding: int = 0
    location: int = 0
    preposition: int = 0
    negation: int = 0
    predicate: int = 0


def render(spec: FactSpec, w: Wording = Wording()) -> str:
    surfaces = _ALL_FINDINGS[spec.finding]
    parts = []
    if spec.negated:
        parts.append(NEGATIONS[w.negation % len(NEGATIONS)])
    else:
        if spec.temporal:
            parts.append(spec.temporal)
        if spec.severity:
            parts.append(spec.severity)
    parts.append(surfaces[w.finding % len(surfaces)])
    text = " ".join(parts)
    if not spec.negated and spec.location is None:
        text += PREDICATES[w.predicate % len(PREDICATES)]
    if spec.location:
        locs = LOCATIONS[spec.location]
        if not spec.negated:
            text += PREDICATES[w.predicate % len(PREDICATES)]
        text += f" {PREPOSITIONS[w.preposition % len(PREPOSITIONS)]} {locs[w.location % len(locs)]}"
    return normalize_fact(text)


def _other_wording(spec: FactSpec, w: Wording, salt: int) -> Wording:
    """A wording differing from ``w`` in every slot that has alternatives."""
    def shift(i, n):
        return (i + 1 + salt % max(1, n - 1)) % n if n > 1 else i
    nf = len(_ALL_FINDINGS[spec.finding])
    nl = len(LOCATIONS[spec.location]) if spec.location else 1
    return Wording(shift(w.finding, nf), shift(w.location, nl), shift(w.preposition, len(PREPOSITIONS)),
                   shift(w.negation, len(NEGATIONS)), shift(w.predicate, len(PREDICATES)))


def contradiction_of(spec: FactSpec, rng: random.Random) -> Optional[FactSpec]:
    options = [replace(spec, negated=not spec.negated, severity=None if not spec.negated else spec.severity,
                       temporal=None)]
    if not spec.negated and spec.severity:
        options.append(replace(spec, severity=SEVERITIES[spec.severity]))
    if not spec.negated and spec.temporal and TEMPORALS.get(spec.temporal):
        options.append(replace(spec, temporal=TEMPORALS[spec.temporal]))
    return rng.choice(options)


def side_swapped(spec: FactSpec) -> Optional[FactSpec]:
    if not spec.location:
        return None
    side, rest = spec.location.split(" ", 1)
    return replace(spec, location=f"{SIDE_SWAP[side]} {rest}")


@dataclass
class FixtureCorpus:
    seed: int
    facts: list[dict] = field(default_factory=list)
    paraphrases: dict[str, list[str]] = field(default_factory=dict)
    paraphrase_kind: dict[str, str] = field(default_factory=dict)
    reports: list[dict] = field(default_factory=list)
    template_reports: list[dict] = field(default_factory=list)
    extraction_pairs: list[dict] = field(default_factory=list)
    labeled_sentences: list[dict] = field(default_factory=list)
    nli: dict[str, list[NLIPair]] = field(default_factory=dict)
    hard_triplets: list[tuple[str, str, str]] = field(default_factory=list)
    er: list[dict] = field(default_factory=list)

    def split_facts(self, split: str) -> list[str]:
        return [f["text"] for f in self.facts if f["split"] == split]

    def bookkeeping(self) -> dict:
        return {
            "seed": self.seed,
            "facts": {s: len(self.split_facts(s)) for s in ("train", "val", "test")},
            "paraphrase_groups": len(self.paraphrases),
            "reports": len(self.reports),
            "report_sentences": sum(len(r["sentences"]) for r in self.reports),
            "template_reports": len(self.template_reports),
            "extraction_pairs": len(self.extraction_pairs),
            "nli": {s: {l: sum(p.label == l for p in ps) for l in ("entailment", "neutral", "contradiction")}
                    for s, ps in self.nli.items()},
            "hard_triplets": len(self.hard_triplets),
            "er_sentences": len(self.er),
        }

    def write(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)

        def dump(name, rows):
            with open(d / name, "w", encoding="utf-8") as fh:
                for r in rows:
                    fh.write(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n")

        dump("facts.jsonl", self.facts)
        dump("paraphrases.jsonl", [{"text": t, "paraphrases": ps, "kind": self.paraphrase_kind[t]}
                                   for t, ps in self.paraphrases.items()])
        dump("reports.jsonl", self.reports)
        dump("template_reports.jsonl", self.template_reports)
        dump("extraction_pairs.jsonl", [{"sentence": p["sentence"], "facts": p["facts"]} for p in self.extraction_pairs])
        dump("labeled_sentences.jsonl", self.labeled_sentences)
        for split, pairs in self.nli.items():
            dump(f"nli_{split}.jsonl", [{"premise": p.premise, "hypothesis": p.hypothesis, "label": p.label,
                                          "source": p.source} for p in pairs])
        dump("hard_triplets.jsonl", [{"rule": 6, "anchor": a, "positive": p, "negative": n}
                                     for a, p, n in self.hard_triplets])
        dump("er.jsonl", self.er)
        (d / "summary.json").write_text(json.dumps(self.bookkeeping(), indent=2, sort_keys=True) + "\n")


def _spec_space() -> list[FactSpec]:
    specs = []
    for finding in FINDINGS:
        for loc in [None, *LOCATIONS]:
            specs.append(FactSpec(finding, loc, negated=True))
            for sev in [None, "small", "large", "mild", "moderate"]:
                for tmp in [None, "increased", "decreased", "new", "stable"]:
                    specs.append(FactSpec(finding, loc, False, sev, tmp))
    for finding in GLOBAL_FINDINGS:
        specs.append(FactSpec(finding, None, negated=True))
        for sev in [None, "mild", "moderate", "severe"]:
            for tmp in [None, "stable", "worsening", "improving"]:
                specs.append(FactSpec(finding, None, False, sev, tmp))
    return specs


def _vector_record(text: str, assignments: list[LabelAssignment]) -> dict:
    obs = {o: i for i, o in enumerate(gold_observation_labels())}
    anat = {a: i for i, a in enumerate(anatomy_labels())}
    ov, av = [-1] * len(obs), [0] * len(anat)
    for a in assignments:
        i = obs[a.observation]
        ov[i] = 1 if a.present else (0 if ov[i] == -1 else ov[i])
        if a.location:
            av[anat[a.location]] = 1
    return {"text": text, "observations": ov, "anatomy": av}


def _capitalize(s: str) -> str:
    return s[:1].upper() + s[1:]


def generate_fixtures(seed: int = 0, n_facts: int = 900, n_reports: int = 450, n_template_reports: int = 200,
                      n_extraction_pairs: int = 800, n_er: int = 30) -> FixtureCorpus:
    rng = random.Random(seed)
    corpus = FixtureCorpus(seed)
    space = _spec_space()
    rng.shuffle(space)
    # bias toward simpler facts so negations and plain findings are common
    weighted = sorted(space, key=lambda s: (s.severity is not None) + (s.temporal is not None) + rng.random())
    chosen = weighted[:n_facts]
    rng.shuffle(chosen)
    n_val = n_test = n_facts // 8
    splits = ["val"] * n_val + ["test"] * n_test + ["train"] * (n_facts - n_val - n_test)

    fact_by_spec: dict[FactSpec, dict] = {}
    for spec, split in zip(chosen, splits):
        w = Wording(finding=0, location=0, preposition=0, negation=0, predicate=0)
        text = render(spec, w)
        paraphrases = []
        for salt in range(3):
            p = render(spec, _other_wording(spec, w, salt * (salt + 1) + rng.randrange(3)))
            if p != text and p not in paraphrases:
                paraphrases.append(p)
        rec = {"text": text, "split": split, "spec": {k: v for k, v in asdict(spec).items()},
               "paraphrases": paraphrases}
        corpus.facts.append(rec)
        fact_by_spec[spec] = rec
        corpus.paraphrases[text] = paraphrases
        corpus.paraphrase_kind[text] = "observation"
    for label, surfaces in LOCATIONS.items():
        corpus.paraphrases[label] = list(surfaces[1:])
        corpus.paraphrase_kind[label] = "anatomy"

    _nli(corpus, fact_by_spec, rng)
    _hard_triplets(corpus, fact_by_spec, rng)
    _reports(corpus, [s for s in chosen if fact_by_spec[s]["split"] == "train"], n_reports, rng)
    _template_reports(corpus, n_template_reports, rng)
    _extraction_pairs(corpus, n_extraction_pairs, rng)
    _er(corpus, n_er, rng)
    return corpus


def _nli(corpus: FixtureCorpus, fact_by_spec: dict[FactSpec, dict], rng: random.Random) -> None:
    by_split: dict[str, list[NLIPair]] = {"train": [], "val": [], "test": []}
    specs = list(fact_by_spec)
    for spec in specs:
        rec = fact_by_spec[spec]
        split = rec["split"]
        src = f"fixture:{split}"
        out = by_split[split]
        premise = rec["text"]
        w0 = Wording()
        # entailment: same meaning, different words; or a weaker statement
        for hyp in rec["paraphrases"][:2]:
            out.append(NLIPair(premise, hyp, "entailment", src))
        weaker = replace(spec, severity=None, temporal=None)
        if spec.negated and spec.location is None:
            weaker = replace(spec, location=rng.choice(list(LOCATIONS))) if spec.finding in FINDINGS else None
        elif not spec.negated:
            weaker = replace(weaker, location=None) if spec.location else (weaker if weaker != spec else None)
        else:
            weaker = None
        if weaker is not None and weaker != spec:
            out.append(NLIPair(premise, render(weaker, _other_wording(weaker, w0, rng.randrange(3))), "entailment", src))
        if split == "train":
            for text in [premise, *rec["paraphrases"]]:
                out.append(NLIPair(text, text, "entailment", src))
        # contradiction: same words with one slot flipped
        for _ in range(2):
            con = contradiction_of(spec, rng)
            hyp = render(con, w0)
            if hyp != premise:
                # contradiction is symmetric; the reverse keeps both polarities as premises
                out.append(NLIPair(premise, hyp, "contradiction", src))
                out.append(NLIPair(hyp, premise, "contradiction", src))
                if split == "train":
                    out.append(NLIPair(hyp, hyp, "entailment", src))
        # neutral: an unrelated finding
        other = rng.choice([s for s in specs[:200] if s.finding != spec.finding])
        out.append(NLIPair(premise, render(other, Wording(rng.randrange(3), rng.randrange(3))), "neutral", src))
    for split, pairs in by_split.items():
        corpus.nli[split] = list(dict.fromkeys(pairs))


def _hard_triplets(corpus: FixtureCorpus, fact_by_spec: dict[FactSpec, dict], rng: random.Random) -> None:
    out = []
    for spec, rec in fact_by_spec.items():
        if rec["split"] != "train":
            continue
        anchor = rec["text"]
        negatives = [render(contradiction_of(spec, rng))]
        swapped = side_swapped(spec)
        if swapped is not None:
            negatives.append(render(swapped))
        for pos in rec["paraphrases"][:2]:
            for neg in negatives:
                if len({anchor, pos, neg}) == 3:
                    out.append((anchor, pos, neg))
    corpus.hard_triplets = list(dict.fromkeys(out))


def _conjunction(specs: list[FactSpec], rng: random.Random) -> Optional[tuple[str, list[str], list[LabelAssignment]]]:
    """Two findings sharing negation and location: 'no X or Y' / 'X and Y in the L'."""
    from factline.extraction.rules import has_keyword

    a, b = specs
    if a.finding == b.finding:
        return None
    # surfaces with their own "in ..." phrase would be read as a shared location
    sa = [s for s in _ALL_FINDINGS[a.finding] if has_keyword(s) and " in " not in s]
    sb = [s for s in _ALL_FINDINGS[b.finding] if has_keyword(s) and " in " not in s]
    if not sa or not sb:
        return None
    x, y = rng.choice(sa), rng.choice(sb)
    if a.negated:
        cue = rng.choice(NEGATIONS)
        sentence = f"{cue} {x} or {y}"
        facts = [f"{cue} {x}", f"{cue} {y}"]
        labels = [LabelAssignment(a.finding, False), LabelAssignment(b.finding, False)]
    else:
        loc = rng.choice(list(LOCATIONS)) if a.finding in FINDINGS and b.finding in FINDINGS else None
        tail = f" in the {rng.choice(LOCATIONS[loc])}" if loc else ""
        sentence = f"{x} and {y}{tail}"
        facts = [f"{x}{tail}", f"{y}{tail}"]
        labels = [LabelAssignment(a.finding, True, loc), LabelAssignment(b.finding, True, loc)]
    return sentence, [normalize_fact(f) for f in facts], labels


def _reports(corpus: FixtureCorpus, specs: list[FactSpec], n: int, rng: random.Random) -> None:
    for r in range(n):
        sentences, facts, labels = [], [], []
        for _ in range(rng.randint(3, 6)):
            if rng.random() < 0.25:
                pair = [rng.choice(specs), rng.choice(specs)]
                pair[1] = replace(pair[1], negated=pair[0].negated)
                conj = _conjunction(pair, rng)
                if conj is None:
                    continue
                s, fs, ls = conj
            else:
                spec = rng.choice(specs)
                w = Wording(rng.randrange(4), rng.randrange(4), rng.randrange(3), rng.randrange(3), rng.randrange(4))
                s = render(spec, w)
                fs, ls = [s], [spec.assignment()]
            sentences.append(_capitalize(s) + ".")
            facts.append(fs)
            labels.append(ls)
        cut = max(1, len(sentences) - 1)
        text = "FINDINGS: " + " ".join(sentences[:cut])
        if sentences[cut:]:
            text += " IMPRESSION: " + " ".join(sentences[cut:])
        tags = sorted({tok for ls in labels for a in ls for tok in tokenize(a.observation + " " + (a.location or ""))
                       if tok.isalpha()})
        rid = f"fx{corpus.seed}-{r:04d}"
        corpus.reports.append({"report_id": rid, "text": text, "sentences": sentences, "facts": facts, "tags": tags})
        for s, ls in zip(sentences, labels):
            corpus.labeled_sentences.append(_vector_record(s, ls))


def _template_reports(corpus: FixtureCorpus, n: int, rng: random.Random) -> None:
    gold = list(gold_observation_labels())
    anat = list(anatomy_labels())
    for r in range(n):
        chosen = rng.sample(gold, rng.randint(1, 5))
        labels = []
        for obs in chosen:
            loc = rng.choice(anat) if rng.random() < 0.6 else None
            labels.append(LabelAssignment(obs, rng.random() < 0.5, loc))
        corpus.template_reports.append({
            "report_id": f"tpl{corpus.seed}-{r:04d}",
            "text": labels_to_template_report(labels),
            "labels": [{"observation": a.observation, "present": a.present, "location": a.location} for a in labels],
        })


def _extraction_pairs(corpus: FixtureCorpus, n: int, rng: random.Random) -> None:
    specs = [FactSpec(**f["spec"]) for f in corpus.facts]
    seen = set()
    attempts = 0
    while len(corpus.extraction_pairs) < n and attempts < 50 * n:
        attempts += 1
        if rng.random() < 0.5:
            pair = [rng.choice(specs), rng.choice(specs)]
            pair[1] = replace(pair[1], negated=pair[0].negated)
            conj = _conjunction(pair, rng)
            if conj is None:
                continue
            sentence, facts, _ = conj
        else:
            spec = rng.choice(specs)
            sentence = render(spec, Wording(rng.randrange(4), rng.randrange(4), rng.randrange(3), rng.randrange(3),
                                            rng.randrange(4)))
            facts = [sentence]
        sentence = _capitalize(sentence) + "."
        if sentence in seen:
            continue
        seen.add(sentence)
        corpus.extraction_pairs.append({"sentence": sentence, "facts": facts})


def _er(corpus: FixtureCorpus, n: int, rng: random.Random) -> None:
    specs = [FactSpec(**f["spec"]) for f in corpus.facts if f["spec"]["location"]]
    for spec in rng.sample(specs, min(n, len(specs))):
        w = Wording(rng.randrange(4), rng.randrange(4), rng.randrange(3), rng.randrange(3), 0)
        text = render(spec, w)
        tokens = tokenize(text)
        finding = tokenize(_ALL_FINDINGS[spec.finding][w.finding % len(_ALL_FINDINGS[spec.finding])])
        locs = LOCATIONS[spec.location]
        location = tokenize(locs[w.location % len(locs)])
        fs = _find(tokens, finding)
        ls = _find(tokens, location, start=fs + len(finding))
        kind = "observation_absent" if spec.negated else "observation_present"
        entities = [(fs, fs + len(finding), kind), (ls, ls + len(location), "anatomy")]
        relations = [(0, 1, "located_at")]
        if spec.severity and not spec.negated:
            i = tokens.index(spec.severity)
            entities.append((i, i + 1, "observation_present"))
            relations.append((2, 0, "modify"))
        corpus.er.append({"text": text, "tokens": tokens, "entities": [list(e) for e in entities],
                          "relations": [list(r) for r in relations]})


def _find(tokens: list[str], sub: list[str], start: int = 0) -> int:
    for i in range(start, len(tokens) - len(sub) + 1):
        if tokens[i:i + len(sub)] == sub:
            return i
    raise ValueError(f"{sub} not found in {tokens}")


def load_fixture_dir(directory: str | Path) -> dict:
    """Read a written fixture directory back into plain records."""
    d = Path(directory)

    def rows(name):
        with open(d / name, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]

    out = {name[:-6]: rows(name) for name in sorted(p.name for p in d.glob("*.jsonl"))}
    out["summary"] = json.loads((d / "summary.json").read_text())
    return out
