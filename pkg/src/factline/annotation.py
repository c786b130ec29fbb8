"""Per-fact metadata and label vectors.

Two annotators share one output shape: :class:`RuleAnnotator`, a keyword
and lexicon oracle that is always available, and :class:`LLMAnnotator`,
which queries the chat endpoint with the metadata, comparison, observation
and anatomy prompts.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from factline.lexicon import (
    Match,
    anatomy_matcher,
    gold_observation_matcher,
    has_negation,
    leading_negation,
    observation_matcher,
)
from factline.llm import LLMClient, LLMError, parse_json_reply
from factline.resources import (
    anatomy_labels,
    check_vocabularies,
    comparison_labels,
    gold_observation_labels,
    observation_labels,
)
from factline.text import sha256_hex, tokenize

CATEGORIES = ("anatomical finding", "disease", "technical assessment", "tubes and lines", "device")
HEALTH_STATUSES = ("normal", "abnormal", "ambiguous", "unknown")

_DEVICE = {"aortic graft/repair", "cabg grafts", "cardiac pacer and wires", "prosthetic valve"}
_TUBES = {"chest port", "chest tube", "endotracheal tube", "enteric tube", "ij line", "intra-aortic balloon pump",
          "mediastinal drain", "picc", "pigtail catheter", "subclavian line", "swan-ganz catheter",
          "tracheostomy tube"}
_TECHNICAL = {"artifact", "breast/nipple shadows", "low lung volumes", "rotated", "skin fold"}
_DISEASE = {"alveolar hemorrhage", "aspiration", "copd/emphysema", "fluid overload/heart failure", "goiter",
            "granulomatous disease", "interstitial lung disease", "lung cancer", "pericardial effusion", "pneumonia"}

# first matching keyword in reading order decides the comparison status
_COMPARISON_KEYWORDS = {
    "stable": "stable", "unchanged": "stable", "new": "new",
    "increased": "worse", "worsening": "worse", "worsened": "worse",
    "decreased": "better", "improving": "better", "improved": "better",
    "resolved": "resolved", "removed": "removed", "repositioned": "repositioned",
    "larger": "larger", "smaller": "smaller",
}
_AMBIGUOUS_RE = re.compile(r"\b(possible|possibly|may|might|likely|questionable|suspicious|could|cannot be excluded|versus)\b")
_NORMAL_RE = re.compile(r"\b(normal|clear|unremarkable|within normal limits|well inflated|well expanded)\b")
_TECHNICAL_RE = re.compile(r"\b(portable|rotated|rotation|limited|technique|low lung volumes|underpenetrated)\b")


def observation_category(label: str) -> str:
    if label in _DEVICE:
        return "device"
    if label in _TUBES:
        return "tubes and lines"
    if label in _TECHNICAL:
        return "technical assessment"
    if label in _DISEASE:
        return "disease"
    return "anatomical finding"


class AnnotationParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass
class FactMetadata:
    anatomical_location: str = ""
    detailed_observation: str = ""
    short_observation: str = ""
    category: str = "anatomical finding"
    health_status: str = "unknown"
    comparison_status: str = "no comparison"

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.health_status not in HEALTH_STATUSES:
            raise ValueError(f"unknown health status {self.health_status!r}")
        if self.comparison_status not in comparison_labels():
            raise ValueError(f"unknown comparison status {self.comparison_status!r}")

    @property
    def category_index(self) -> int:
        return CATEGORIES.index(self.category)

    @property
    def health_index(self) -> int:
        return HEALTH_STATUSES.index(self.health_status)

    @property
    def comparison_index(self) -> int:
        return comparison_labels().index(self.comparison_status)

    def to_record(self) -> dict:
        return {k.replace("_", " "): v for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


@dataclass(frozen=True)
class ObservationLabels:
    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) != len(observation_labels()):
            raise ValueError(f"observation labels must have length {len(observation_labels())}")

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "ObservationLabels":
        vocab = observation_labels()
        chosen = set(names)
        return cls(tuple(int(label in chosen) for label in vocab))

    @property
    def names(self) -> list[str]:
        return [label for label, b in zip(observation_labels(), self.bits) if b]


@dataclass(frozen=True)
class AnatomyLabels:
    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) != len(anatomy_labels()):
            raise ValueError(f"anatomy labels must have length {len(anatomy_labels())}")

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "AnatomyLabels":
        chosen = set(names)
        return cls(tuple(int(label in chosen) for label in anatomy_labels()))

    @property
    def names(self) -> list[str]:
        return [label for label, b in zip(anatomy_labels(), self.bits) if b]


@dataclass
class GoldLabelVector:
    """Observation values in {1 yes, 0 no, -1 omitted} plus anatomy mention bits."""

    observations: np.ndarray = field(default_factory=lambda: np.full(len(gold_observation_labels()), -1, np.int8))
    anatomy: np.ndarray = field(default_factory=lambda: np.zeros(len(anatomy_labels()), np.int8))

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.int8)
        self.anatomy = np.asarray(self.anatomy, dtype=np.int8)
        if self.observations.shape != (len(gold_observation_labels()),):
            raise ValueError("gold observation vector must have length 70")
        if self.anatomy.shape != (len(anatomy_labels()),):
            raise ValueError("gold anatomy vector must have length 38")
        if not np.isin(self.observations, (-1, 0, 1)).all() or not np.isin(self.anatomy, (0, 1)).all():
            raise ValueError("gold label values out of range")

    def __eq__(self, other):
        return (isinstance(other, GoldLabelVector) and np.array_equal(self.observations, other.observations)
                and np.array_equal(self.anatomy, other.anatomy))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.observations, self.anatomy])

    def to_record(self) -> dict:
        return {"observations": self.observations.tolist(), "anatomy": self.anatomy.tolist()}

    @classmethod
    def from_record(cls, obj: dict) -> "GoldLabelVector":
        return cls(np.array(obj["observations"]), np.array(obj["anatomy"]))


@dataclass(frozen=True)
class LabelAssignment:
    observation: str
    present: bool
    location: Optional[str] = None


def gold_vector(assignments: Iterable[LabelAssignment]) -> GoldLabelVector:
    obs_index = {label: i for i, label in enumerate(gold_observation_labels())}
    anat_index = {label: i for i, label in enumerate(anatomy_labels())}
    vec = GoldLabelVector()
    for a in assignments:
        i = obs_index[a.observation]
        if a.present:
            vec.observations[i] = 1
        elif vec.observations[i] == -1:
            vec.observations[i] = 0
        if a.location is not None:
            vec.anatomy[anat_index[a.location]] = 1
    return vec


def parse_metadata_record(text: str) -> FactMetadata:
    """Deserialize a metadata reply; missing or invalid fields take their defaults."""
    try:
        obj = parse_json_reply(text)
    except LLMError as exc:
        raise AnnotationParseError(str(exc), text) from exc
    if not isinstance(obj, dict):
        raise AnnotationParseError("metadata reply is not a JSON object", text)
    norm = {str(k).strip().lower().replace("_", " "): v for k, v in obj.items()}

    def text_field(name):
        v = norm.get(name, "")
        return v.strip() if isinstance(v, str) else ""

    def choice(name, allowed, default):
        v = text_field(name).lower()
        return v if v in allowed else default

    return FactMetadata(
        anatomical_location=text_field("anatomical location"),
        detailed_observation=text_field("detailed observation"),
        short_observation=text_field("short observation"),
        category=choice("category", CATEGORIES, "anatomical finding"),
        health_status=choice("health status", HEALTH_STATUSES, "unknown"),
        comparison_status=choice("comparison status", comparison_labels(), "no comparison"),
    )


def _strip_location(text: str, anatomy: list[Match]) -> str:
    """``text`` with its first anatomy mention (and the preposition introducing it) cut out."""
    if not anatomy:
        return text
    first = anatomy[0]
    head = re.sub(r"\s*(?:\b(?:in|at|within|involving|of|along|on)\b)?(?:\s+the)?\s*$", "", text[: first.start])
    head = re.sub(r"(?:^|\s+)the\s*$", "", head)
    if not head.strip():
        return text  # the location is the subject ("heart size is normal")
    rest = " ".join(f"{head} {text[first.end:]}".split())
    return rest or text


class RuleAnnotator:
    kind = "rule"

    def __init__(self):
        check_vocabularies()

    def metadata(self, fact: str) -> FactMetadata:
        low = " ".join(fact.lower().split())
        obs = observation_matcher().find(low)
        anat = anatomy_matcher().find(low, claimed=[(m.start, m.end) for m in obs])
        cue = leading_negation(low)
        body = low[len(cue):].strip() if cue else low

        comparison = "no comparison"
        for tok in tokenize(low):
            if tok in _COMPARISON_KEYWORDS:
                comparison = _COMPARISON_KEYWORDS[tok]
                break

        if has_negation(low):
            health = "normal"
        elif _AMBIGUOUS_RE.search(low):
            health = "ambiguous"
        elif obs:
            health = "abnormal"
        elif _NORMAL_RE.search(low):
            health = "normal"
        else:
            health = "unknown"

        if obs:
            category = observation_category(obs[0].label)
        elif _TECHNICAL_RE.search(low):
            category = "technical assessment"
        else:
            category = "anatomical finding"

        body_anat = anatomy_matcher().find(body, claimed=[(m.start, m.end) for m in observation_matcher().find(body)])
        detailed = _strip_location(low, anat) if anat else low
        short = obs[0].surface if obs else _strip_location(body, body_anat)
        return FactMetadata(
            anatomical_location=anat[0].surface if anat else "",
            detailed_observation=detailed,
            short_observation=short,
            category=category,
            health_status=health,
            comparison_status=comparison,
        )

    def labels(self, fact: str) -> tuple[ObservationLabels, AnatomyLabels]:
        obs = observation_matcher().find(fact)
        anat = anatomy_matcher().find(fact, claimed=[(m.start, m.end) for m in obs])
        return ObservationLabels.from_names(m.label for m in obs), AnatomyLabels.from_names(m.label for m in anat)

    def annotate(self, fact: str) -> tuple[FactMetadata, ObservationLabels, AnatomyLabels]:
        if not fact.strip():
            raise ValueError("cannot annotate an empty fact")
        obs, anat = self.labels(fact)
        return self.metadata(fact), obs, anat

    def assignments(self, sentence: str) -> list[LabelAssignment]:
        """Gold-vocabulary assignments for one sentence of a labels-rendered report."""
        obs = gold_observation_matcher().find(sentence)
        anat = anatomy_matcher().find(sentence, claimed=[(m.start, m.end) for m in obs])
        present = not has_negation(sentence)
        locations = [m.label for m in anat] or [None]
        return [LabelAssignment(o.label, present, loc) for o in obs for loc in locations]


class LLMAnnotator:
    kind = "llm"

    def __init__(self, client: LLMClient):
        check_vocabularies()
        self.client = client

    def _label_list(self, template_id: str, fact: str, vocab: Sequence[str]) -> list[str]:
        reply = self.client.complete(template_id, fact, operation_id="annotate")
        try:
            names = parse_json_reply(reply)
        except LLMError as exc:
            raise AnnotationParseError(str(exc), reply) from exc
        if not isinstance(names, list):
            raise AnnotationParseError("label reply is not a JSON array", reply)
        allowed = set(vocab)
        return [n for n in names if isinstance(n, str) and n in allowed]

    def annotate(self, fact: str) -> tuple[FactMetadata, ObservationLabels, AnatomyLabels]:
        meta = parse_metadata_record(self.client.complete("fact_to_metadata", fact, operation_id="annotate"))
        reply = self.client.complete("fact_to_comparison", fact, operation_id="annotate")
        comparison = parse_metadata_record(reply).comparison_status
        meta.comparison_status = comparison
        obs = ObservationLabels.from_names(self._label_list("fact_to_observations", fact, observation_labels()))
        anat = AnatomyLabels.from_names(self._label_list("fact_to_anatomy", fact, anatomy_labels()))
        return meta, obs, anat


def annotate_fact(fact, annotator) -> tuple[FactMetadata, ObservationLabels, AnatomyLabels]:
    text = fact if isinstance(fact, str) else fact.text
    return annotator.annotate(text)


def assignments_from_report(text: str, annotator: Optional[RuleAnnotator] = None) -> list[LabelAssignment]:
    from factline.corpus import split_sentences

    annotator = annotator or RuleAnnotator()
    out: list[LabelAssignment] = []
    for s in split_sentences(text):
        for a in annotator.assignments(s.text):
            if a not in out:
                out.append(a)
    return out


def write_annotations(rows: Iterable[tuple[str, FactMetadata, ObservationLabels, AnatomyLabels]],
                      path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for fact, meta, obs, anat in rows:
            fh.write(json.dumps({"fact_hash": sha256_hex(fact), "fact": fact, "metadata": meta.to_record(),
                                 "observations": obs.names, "anatomy": anat.names}, sort_keys=True) + "\n")


def read_annotations(path: str | Path) -> dict[str, tuple[FactMetadata, ObservationLabels, AnatomyLabels]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in filter(str.strip, fh):
            obj = json.loads(line)
            meta = parse_metadata_record(json.dumps(obj["metadata"]))
            out[obj["fact"]] = (meta, ObservationLabels.from_names(obj["observations"]),
                                AnatomyLabels.from_names(obj["anatomy"]))
    return out
