"""INI configuration with one section per module and complete defaults.

Every key has a default, so an empty file (or no file) is a valid
configuration. Unknown sections or keys are rejected to catch typos.
The resolved values are logged and embedded in each run manifest.
"""

from __future__ import annotations

import configparser
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from factline.encoder import EncoderConfig
from factline.extraction import StudentConfig
from factline.sampling import RuleConfig
from factline.training import TrainConfig

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for unparsable files, unknown keys and invalid values."""


@dataclass
class RunSettings:
    seed: int = 0
    jobs: int = 1
    cache_dir: str = ""
    log_level: str = "INFO"


@dataclass
class LLMSettings:
    model: str = "gpt-4-0613"
    max_in_flight: int = 4
    retries: int = 3
    backoff: float = 0.5
    timeout: float = 60.0


@dataclass
class ExtractionSettings:
    extractor: str = "rule_based"
    k_clusters: int = 200
    budget: int = 1000

    def __post_init__(self):
        if self.extractor not in ("rule_based", "student", "llm"):
            raise ValueError(f"unknown extractor {self.extractor!r}")


@dataclass
class AnnotationSettings:
    annotator: str = "rule"

    def __post_init__(self):
        if self.annotator not in ("rule", "llm"):
            raise ValueError(f"unknown annotator {self.annotator!r}")


@dataclass
class SamplingSettings:
    rules: tuple[int, ...] = (1, 2, 3, 4, 5)
    triplets_per_rule: int = 1000
    margin_cos: float = 0.1
    margin_lev: float = 0.1
    margin_rg: float = 0.2
    k_clusters: int = 200
    max_attempts: int = 1000

    def __post_init__(self):
        self.rules = tuple(self.rules)
        if not set(self.rules) <= {1, 2, 3, 4, 5, 6}:
            raise ValueError(f"rules must be drawn from 1..6, got {self.rules}")
        if self.triplets_per_rule < 0:
            raise ValueError("triplets_per_rule must be non-negative")

    def rule_config(self, seed: int) -> RuleConfig:
        return RuleConfig(self.margin_cos, self.margin_lev, self.margin_rg, self.k_clusters, seed,
                          self.max_attempts)


@dataclass
class EvaluationSettings:
    ks: tuple[int, ...] = (50, 100)
    jaccard_ks: tuple[int, ...] = (20, 50)
    bleu_max_n: int = 4
    cider_sigma: float = 6.0


SECTIONS: dict[str, type] = {
    "run": RunSettings,
    "llm": LLMSettings,
    "extraction": ExtractionSettings,
    "student": StudentConfig,
    "annotation": AnnotationSettings,
    "sampling": SamplingSettings,
    "encoder": EncoderConfig,
    "training": TrainConfig,
    "evaluation": EvaluationSettings,
}

# Derived from vocabulary files or the corpus, never set by hand.
_HIDDEN = {"encoder": {"vocab_size", "entity_types", "relation_types"}, "training": {"seed"},
           "student": {"seed"}, "sampling": set()}


@dataclass
class Config:
    run: RunSettings = field(default_factory=RunSettings)
    llm: LLMSettings = field(default_factory=LLMSettings)
    extraction: ExtractionSettings = field(default_factory=ExtractionSettings)
    student: StudentConfig = field(default_factory=StudentConfig)
    annotation: AnnotationSettings = field(default_factory=AnnotationSettings)
    sampling: SamplingSettings = field(default_factory=SamplingSettings)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)

    def snapshot(self) -> dict[str, dict[str, Any]]:
        out = {}
        for name in SECTIONS:
            section = getattr(self, name)
            out[name] = {f.name: _jsonable(getattr(section, f.name)) for f in dataclasses.fields(section)}
        return out

    def log(self) -> None:
        for section, values in self.snapshot().items():
            for key, value in values.items():
                logger.info("config [%s] %s = %s", section, key, value)

    def with_seed(self, seed: int) -> "Config":
        """Propagate one seed to every seeded section."""
        return dataclasses.replace(
            self,
            run=dataclasses.replace(self.run, seed=seed),
            training=dataclasses.replace(self.training, seed=seed),
            student=dataclasses.replace(self.student, seed=seed),
        )


def _jsonable(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def _parse_value(raw: str, type_str: str, default):
    raw = raw.strip()
    optional = "Optional" in type_str or "None" in type_str
    if optional and raw.lower() in ("", "none"):
        return None
    if "dict" in type_str:
        out = {}
        for item in filter(None, (s.strip() for s in raw.split(","))):
            key, sep, val = item.partition(":")
            if not sep:
                raise ValueError(f"expected key:value, got {item!r}")
            out[key.strip()] = float(val)
        return out
    if "tuple" in type_str:
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if "int" in type_str:
            return tuple(int(s) for s in items)
        return tuple(items)
    for name, kind in (("bool", bool), ("int", int), ("float", float), ("str", str)):
        if name in type_str:
            break
    else:
        kind = type(default) if default is not None else str
    if kind is bool:
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return kind(raw)


def build_section(name: str, values: dict[str, str]):
    cls = SECTIONS[name]
    fields = {f.name: f for f in dataclasses.fields(cls)}
    hidden = _HIDDEN.get(name, set())
    kwargs = {}
    for key, raw in values.items():
        if key not in fields or key in hidden:
            raise ConfigError(f"unknown key [{name}] {key}")
        f = fields[key]
        default = f.default if f.default is not dataclasses.MISSING else None
        try:
            kwargs[key] = _parse_value(raw, str(f.type), default)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from exc
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def parse_config(text: str) -> Config:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
    sections = {name: build_section(name, dict(parser.items(name))) for name in parser.sections()}
    return Config(**sections)


def load_config(path: Optional[str | Path]) -> Config:
    if path is None:
        return Config()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def render_config(cfg: Config) -> str:
    """INI text that parses back to ``cfg``."""
    lines = []
    for section, values in cfg.snapshot().items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            if key in _HIDDEN.get(section, set()):
                continue
            if value is None:
                text = "none"
            elif isinstance(value, dict):
                text = ", ".join(f"{k}:{v!r}" for k, v in value.items())
            elif isinstance(value, list):
                text = ", ".join(str(v) for v in value)
            else:
                text = str(value)
            lines.append(f"{key} = {text}")
        lines.append("")
    return "\n".join(lines)
