"""Experiment configuration: schema, TOML loading, ``--set`` overrides."""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any, Literal, Mapping

import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from genrec.click_model import ClickModelParams
from genrec.errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

Domain = Literal["e-commerce", "general-knowledge", "synthetic"]
StrategyKind = Literal["no-drop", "random-ctr", "partial-ctr", "full-ctr", "explore-exploit"]
STRATEGY_KINDS: tuple[str, ...] = ("no-drop", "random-ctr", "partial-ctr", "full-ctr", "explore-exploit")
ScorerKind = Literal["llm", "length-words", "length-chars", "keyword-persona"]
BackendKind = Literal["remote", "replay", "scripted-length", "candidate-bank"]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ClickConfig(_Model):
    temperature: float = Field(1.5, gt=0)
    rejection_score: float = 11.0

    @field_validator("temperature", "rejection_score")
    @classmethod
    def _finite(cls, v: float) -> float:
        if v != v or v in (float("inf"), float("-inf")):
            raise ValueError("must be finite")
        return v

    def params(self) -> ClickModelParams:
        return ClickModelParams(self.temperature, self.rejection_score)


class StrategyConfig(_Model):
    kind: StrategyKind = "explore-exploit"
    n: int = Field(1, ge=1)
    explore_exploit_mode: Literal["combined-prompt", "dual-set"] = "combined-prompt"
    random_ctr_range: tuple[float, float] = (0.0, 0.15)
    max_retries: int = Field(3, ge=1)

    @field_validator("random_ctr_range")
    @classmethod
    def _range(cls, v: tuple[float, float]) -> tuple[float, float]:
        low, high = v
        if not 0.0 <= low <= high <= 1.0:
            raise ValueError("random_ctr_range must satisfy 0 <= low <= high <= 1")
        return v


class KeywordTable(_Model):
    base: float = 1.0
    weights: dict[str, float] = {}


class ScorerSpec(_Model):
    kind: ScorerKind = "llm"
    # llm: template domain override; defaults to the experiment domain
    template: Domain | None = None
    # keyword-persona: per-persona override of the table carried by the persona
    keyword_tables: dict[str, KeywordTable] = {}
    max_retries: int = Field(3, ge=1)
    temperature: float = Field(1.0, ge=0)

    @property
    def scorer_id(self) -> str:
        if self.kind == "llm":
            return f"llm:{self.template}" if self.template else "llm"
        return self.kind


class RemoteSpec(_Model):
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4-1106-preview"
    temperature: float = Field(1.0, ge=0)
    timeout: float = Field(60.0, gt=0)
    max_retries: int = Field(5, ge=0)
    backoff_base: float = Field(1.0, ge=0)
    backoff_max: float = Field(30.0, ge=0)
    requests_per_minute: float = Field(60.0, gt=0)
    api_key_env: str = "OPENAI_API_KEY"
    response_path: str = "choices.0.message.content"


class ReplaySpec(_Model):
    transcript: str


class ScriptedLengthSpec(_Model):
    min_words: int = Field(4, ge=1)
    max_words: int = Field(15, ge=1)

    @model_validator(mode="after")
    def _order(self):
        if self.min_words > self.max_words:
            raise ValueError("min_words must be <= max_words")
        return self


class CandidateBankSpec(_Model):
    bank: str
    # probability that an exploit-instruction prompt is answered by an explore draw
    explore_rate: float = Field(0.25, ge=0, le=1)


_BACKEND_FIELDS = {
    "remote": "remote",
    "replay": "replay",
    "scripted-length": "scripted_length",
    "candidate-bank": "candidate_bank",
}


class BackendSpec(_Model):
    kind: BackendKind = "scripted-length"
    remote: RemoteSpec | None = None
    replay: ReplaySpec | None = None
    scripted_length: ScriptedLengthSpec | None = None
    candidate_bank: CandidateBankSpec | None = None

    @model_validator(mode="after")
    def _exactly_one(self):
        wanted = _BACKEND_FIELDS[self.kind]
        for kind, name in _BACKEND_FIELDS.items():
            if name != wanted and getattr(self, name) is not None:
                raise ValueError(f"backend kind {self.kind!r} does not take [{name}] parameters")
        if getattr(self, wanted) is None:
            if self.kind == "remote":
                self.remote = RemoteSpec()
            elif self.kind == "scripted-length":
                self.scripted_length = ScriptedLengthSpec()
            else:
                raise ValueError(f"backend kind {self.kind!r} requires a [backend.{wanted}] table")
        return self

    @property
    def params(self):
        return getattr(self, _BACKEND_FIELDS[self.kind])


class ExperimentConfig(_Model):
    topic: str = "Spray Bottles"
    domain: Domain = "e-commerce"
    personas: list[str] = ["ethical-considerations"]
    persona_file: str | None = None
    pool_size: int = Field(5, ge=1)
    iterations: int = Field(15, ge=1)
    interactions: int = Field(5000, ge=1)
    shown: int = Field(3, ge=1)
    max_words: int = Field(15, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    click: ClickConfig = ClickConfig()
    strategy: StrategyConfig = StrategyConfig()
    scorer: ScorerSpec = ScorerSpec()
    backend: BackendSpec = BackendSpec()

    @field_validator("topic")
    @classmethod
    def _topic(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("topic must be non-empty")
        return v

    @field_validator("personas")
    @classmethod
    def _personas(cls, v: list[str]) -> list[str]:
        if not v:
            raise ValueError("persona mix must be non-empty")
        if len(set(v)) != len(v):
            raise ValueError("persona mix has duplicate ids")
        return v

    @model_validator(mode="after")
    def _shown_fits_pool(self):
        if self.shown > self.pool_size:
            raise ValueError(f"shown (K={self.shown}) must not exceed pool_size (N={self.pool_size})")
        if self.strategy.kind == "explore-exploit" and self.strategy.explore_exploit_mode == "dual-set":
            if 2 * self.strategy.n > self.pool_size:
                raise ValueError("dual-set mode drops 2n questions; 2n must not exceed pool_size")
        elif self.strategy.kind != "no-drop" and self.strategy.n > self.pool_size:
            raise ValueError("n must not exceed pool_size")
        return self


# -- loading ------------------------------------------------------------------


def _format_validation(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def config_from_dict(data: Mapping[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(f"invalid config: {_format_validation(err)}") from None


def parse_override(item: str) -> tuple[list[str], Any]:
    """``"a.b=value"`` -> (["a", "b"], value).

    Values are read as TOML/JSON scalars or arrays when possible
    (``seed=7``, ``click.temperature=2.0``, ``personas=["price","quality"]``),
    otherwise kept as strings.
    """
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key or any(not part for part in key.split(".")):
        raise ConfigError(f"override {item!r} has an empty key")
    raw = raw.strip()
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
    return key.split("."), value


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    data = json.loads(json.dumps(data))  # deep copy of plain data
    for item in overrides:
        path, value = parse_override(item)
        node = data
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override {item!r}: {part!r} is not a table")
            node = child
        node[path[-1]] = value
    return data


def read_config_data(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            if path.suffix == ".json":
                return json.load(fh)
            return tomllib.load(fh)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot parse {path}: {err}") from None


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    data = read_config_data(path)
    if overrides:
        data = apply_overrides(data, overrides)
    return config_from_dict(data)


def config_to_dict(config: ExperimentConfig) -> dict[str, Any]:
    return config.model_dump(mode="json", exclude_none=True)


def dump_toml(config: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_dict(config))


PRESETS = ("remote", "length", "synthetic")


def preset_config(name: str) -> ExperimentConfig:
    """Ready-made configurations: ``remote`` calls a live chat-completion endpoint, the others run offline."""
    if name == "remote":
        return ExperimentConfig(
            backend=BackendSpec(kind="remote"),
            scorer=ScorerSpec(kind="llm"),
        )
    if name == "length":
        return ExperimentConfig(
            strategy=StrategyConfig(kind="full-ctr"),
            scorer=ScorerSpec(kind="length-words"),
            backend=BackendSpec(kind="scripted-length"),
        )
    if name == "synthetic":
        return ExperimentConfig(
            domain="synthetic",
            personas=["eco-shopper"],
            scorer=ScorerSpec(kind="keyword-persona"),
            backend=BackendSpec(
                kind="candidate-bank", candidate_bank=CandidateBankSpec(bank="bundled:synthetic_bank.jsonl")
            ),
        )
    raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
