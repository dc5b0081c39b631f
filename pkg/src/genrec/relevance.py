"""Relevance scoring of (question, persona, topic) triples.

Four scorer kinds share one cache: an LLM judge, two deterministic
length-based scorers and a keyword table scorer for synthetic personas.
Each triple is scored once; later lookups return the cached value.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Hashable, Mapping

from genrec import prompts
from genrec.config import ScorerSpec
from genrec.errors import ConfigError, InvalidInputError, ParseError, ScoringError

MIN_SCORE = 1.0
MAX_SCORE = 10.0


def clamp_score(value: float) -> float:
    return max(min(value, MAX_SCORE), MIN_SCORE)


@dataclass(frozen=True)
class Persona:
    id: str
    name: str
    description: str
    domain: str
    base_score: float = 1.0
    keywords: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if not self.description.strip():
            raise InvalidInputError(f"persona {self.id!r} has an empty description")
        if self.domain not in prompts.DOMAINS:
            raise InvalidInputError(f"persona {self.id!r} has unknown domain {self.domain!r}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "Persona":
        keywords = data.get("keywords") or {}
        if isinstance(keywords, Mapping):
            keywords = keywords.items()
        return cls(
            id=data["id"],
            name=data.get("name", data["id"]),
            description=data["description"],
            domain=data["domain"],
            base_score=float(data.get("base_score", 1.0)),
            keywords=tuple((str(p), float(w)) for p, w in keywords),
        )

    def to_dict(self) -> dict:
        out = {"id": self.id, "name": self.name, "description": self.description, "domain": self.domain}
        if self.keywords:
            out["base_score"] = self.base_score
            out["keywords"] = dict(self.keywords)
        return out


def load_personas(path: str | Path | None = None) -> dict[str, Persona]:
    """Persona registry keyed by id. Defaults to the bundled table."""
    try:
        if path is None:
            text = (resources.files("genrec") / "data" / "personas.json").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        raw = json.loads(text)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read persona registry {path}: {err}") from None
    registry: dict[str, Persona] = {}
    for item in raw["personas"] if isinstance(raw, dict) else raw:
        persona = Persona.from_dict(item)
        if persona.id in registry:
            raise ConfigError(f"duplicate persona id {persona.id!r}")
        registry[persona.id] = persona
    return registry


def resolve_personas(ids, path=None) -> list[Persona]:
    registry = load_personas(path)
    unknown = [pid for pid in ids if pid not in registry]
    if unknown:
        raise ConfigError(f"unknown persona ids {unknown}; known: {sorted(registry)}")
    return [registry[pid] for pid in ids]


# -- deterministic scorers ----------------------------------------------------


def score_length_words(question: str) -> float:
    """max(min((words - 4) * 9/11 + 1, 10), 1); words are whitespace-separated tokens."""
    return clamp_score((len(question.split()) - 4) * 9 / 11 + 1)


def score_length_chars(question: str) -> float:
    """max(min((chars - 20) * 9/55 + 1, 10), 1); every character counts, spaces included."""
    return clamp_score((len(question) - 20) * 9 / 55 + 1)


def score_keyword_persona(
    question: str,
    persona: Persona,
    weights: Mapping[str, float] | None = None,
    base: float | None = None,
) -> float:
    """base + sum of weights whose pattern occurs in the question (case-insensitive), clamped to [1, 10]."""
    table = dict(persona.keywords) if weights is None else dict(weights)
    base = persona.base_score if base is None else base
    folded = question.casefold()
    total = base + sum(w for pattern, w in table.items() if pattern.casefold() in folded)
    return clamp_score(total)


# -- cache --------------------------------------------------------------------


@dataclass(frozen=True)
class RelevanceScore:
    question_id: str
    persona_id: str
    topic: str
    value: float
    scorer_id: str

    def __post_init__(self):
        if not MIN_SCORE <= self.value <= MAX_SCORE:
            raise InvalidInputError(f"relevance score {self.value} outside [1, 10]")

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "persona_id": self.persona_id,
            "topic": self.topic,
            "value": self.value,
            "scorer_id": self.scorer_id,
        }


class ScoreCache:
    """Thread-safe get-or-insert; a key is computed at most once even under races."""

    def __init__(self):
        self._values: dict[Hashable, RelevanceScore] = {}
        self._locks: dict[Hashable, threading.Lock] = {}
        self._guard = threading.Lock()

    def __len__(self) -> int:
        return len(self._values)

    def __contains__(self, key) -> bool:
        return key in self._values

    def get(self, key):
        return self._values.get(key)

    def get_or_compute(self, key, compute: Callable[[], RelevanceScore]) -> tuple[RelevanceScore, bool]:
        """Returns (score, computed_now)."""
        found = self._values.get(key)
        if found is not None:
            return found, False
        with self._guard:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            found = self._values.get(key)
            if found is not None:
                return found, False
            value = compute()
            self._values[key] = value
            return value, True

    def values(self) -> list[RelevanceScore]:
        return list(self._values.values())


# -- scorer -------------------------------------------------------------------


@dataclass
class RelevanceScorer:
    """Scores triples with the configured scorer kind and caches the results.

    ``backend`` is any object with ``complete(prompt) -> str``; only the llm
    kind needs it. ``on_score`` is called once per freshly computed score
    (the experiment uses it to journal the cache).
    """

    spec: ScorerSpec
    domain: str = "e-commerce"
    backend: object | None = None
    on_score: Callable[[RelevanceScore], None] | None = None
    cache: ScoreCache = field(default_factory=ScoreCache)
    backend_calls: int = 0

    @property
    def scorer_id(self) -> str:
        return self.spec.scorer_id

    def score(self, question, persona: Persona, topic: str) -> RelevanceScore:
        """``question`` is a pool Question (keyed by id) or bare text (keyed by the text)."""
        qid = getattr(question, "id", None)
        text = getattr(question, "text", question)
        if not isinstance(text, str) or not text.strip():
            raise InvalidInputError("question must be non-empty text")
        key = (qid if qid is not None else text, persona.id, topic, self.scorer_id)

        def compute() -> RelevanceScore:
            value = clamp_score(float(self._raw_score(text, persona, topic)))
            return RelevanceScore(key[0], persona.id, topic, value, self.scorer_id)

        result, fresh = self.cache.get_or_compute(key, compute)
        if fresh and self.on_score is not None:
            self.on_score(result)
        return result

    def value(self, question, persona: Persona, topic: str) -> float:
        return self.score(question, persona, topic).value

    def _raw_score(self, text: str, persona: Persona, topic: str) -> float:
        kind = self.spec.kind
        if kind == "length-words":
            return score_length_words(text)
        if kind == "length-chars":
            return score_length_chars(text)
        if kind == "keyword-persona":
            table = self.spec.keyword_tables.get(persona.id)
            if table is not None:
                return score_keyword_persona(text, persona, table.weights, table.base)
            if not persona.keywords:
                raise ScoringError(f"persona {persona.id!r} has no keyword table for the keyword-persona scorer")
            return score_keyword_persona(text, persona)
        return self._llm_score(text, persona, topic)

    def _llm_score(self, text: str, persona: Persona, topic: str) -> float:
        if self.backend is None:
            raise ScoringError("llm scorer needs a generation backend")
        domain = self.spec.template or self.domain
        prompt = prompts.scoring_prompt(text, persona.name, persona.description, topic, domain)
        raw = ""
        for _ in range(self.spec.max_retries):
            self.backend_calls += 1
            raw = self.backend.complete(prompt, temperature=self.spec.temperature)
            try:
                return float(prompts.parse_score(raw))
            except ParseError:
                continue
        raise ScoringError(
            f"unparseable score after {self.spec.max_retries} attempts for {text!r} / {persona.id}", raw
        )
