"""Loading of the versioned data files shipped with the package."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

OBSERVATION_CLASSES = 74
GOLD_OBSERVATION_CLASSES = 70
ANATOMY_CLASSES = 38
COMPARISON_CLASSES = 15


class VocabularyError(RuntimeError):
    """A shipped vocabulary file does not have its declared size."""


def _read_lines(name: str) -> list[str]:
    text = resources.files("factline").joinpath("data", name).read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")]


@lru_cache(maxsize=None)
def word_list(name: str) -> tuple[str, ...]:
    return tuple(_read_lines(name))


@lru_cache(maxsize=None)
def table(name: str) -> tuple[tuple[str, str], ...]:
    rows = []
    for line in _read_lines(name):
        key, value = line.split("\t")
        rows.append((key.strip(), value.strip()))
    return tuple(rows)


def _checked(name: str, expected: int) -> tuple[str, ...]:
    labels = word_list(name)
    if len(labels) != expected or len(set(labels)) != expected:
        raise VocabularyError(f"{name}: expected {expected} distinct labels, found {len(set(labels))}")
    return labels


@lru_cache(maxsize=None)
def observation_labels() -> tuple[str, ...]:
    return _checked("observations_74.txt", OBSERVATION_CLASSES)


@lru_cache(maxsize=None)
def gold_observation_labels() -> tuple[str, ...]:
    return _checked("observations_70.txt", GOLD_OBSERVATION_CLASSES)


@lru_cache(maxsize=None)
def anatomy_labels() -> tuple[str, ...]:
    return _checked("anatomy_38.txt", ANATOMY_CLASSES)


@lru_cache(maxsize=None)
def comparison_labels() -> tuple[str, ...]:
    return _checked("comparison_15.txt", COMPARISON_CLASSES)


def check_vocabularies() -> None:
    """Abort early when any vocabulary file disagrees with its declared size."""
    observation_labels()
    gold_observation_labels()
    anatomy_labels()
    comparison_labels()
    known = set(observation_labels())
    for surface, label in table("observation_lexicon.tsv"):
        if label not in known:
            raise VocabularyError(f"observation lexicon maps {surface!r} to unknown label {label!r}")
    known = set(anatomy_labels())
    for surface, label in table("anatomy_lexicon.tsv"):
        if label not in known:
            raise VocabularyError(f"anatomy lexicon maps {surface!r} to unknown label {label!r}")


def read_prompt(template_id: str) -> str:
    return resources.files("factline").joinpath("prompts", f"{template_id}.txt").read_text(encoding="utf-8")
