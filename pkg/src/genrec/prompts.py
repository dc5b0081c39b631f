"""Prompt templates and the parsers that read prompts and responses back.

Templates live in ``genrec/data/prompts`` as plain text with ``{name}``
placeholders. The offline backends parse the same prompts they receive, so
the block formats here are the wire format between strategies and backends.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

from genrec.errors import InvalidInputError, ParseError

DOMAINS = ("e-commerce", "general-knowledge", "synthetic")

INITIAL = "initial"
REFINE_FULL_CTR = "refine.full-ctr"
REFINE_EXPLORE_EXPLOIT = "refine.explore-exploit"
REFINE_EXPLORE = "refine.explore"
SCORE = "score"

EXPLOIT_MARKER = "around the same general topic as the best performing question"
SCORE_MARKER = "Score the question on a scale from 1 to 10"

_NEW_QUESTION_RE = re.compile(r"new\s+question\s*:\s*(.*)", re.IGNORECASE | re.DOTALL)
_SCORE_RE = re.compile(r"^\s*score\s*:\s*(\d+)\s*$", re.IGNORECASE | re.MULTILINE)
_CTR_BLOCK_RE = re.compile(r"^Question: (.*)\nCTR: (\d+(?:\.\d+)?)%$", re.MULTILINE)
_PLAIN_BLOCK_RE = re.compile(r"^Question: (.*)$", re.MULTILINE)
_INITIAL_RE = re.compile(r"\bwrite (\d+) (?:general|short) questions\b", re.IGNORECASE)
_LIST_PREFIX_RE = re.compile(r"^\s*(?:[-*•]+|\(?\d+[.):]|Q\d*[.:])\s*")

_TOPIC_PATTERNS = (
    re.compile(r"gain information about '(.*)'\."),
    re.compile(r"^Title: (.*)$", re.MULTILINE),
    re.compile(r"for the category of (.*) that "),
    re.compile(r"for the Wikipedia article titled '(.*)' that "),
)


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    path = resources.files("genrec") / "data" / "prompts" / f"{name}.txt"
    try:
        return path.read_text(encoding="utf-8").strip("\n")
    except FileNotFoundError:
        raise InvalidInputError(f"unknown prompt template {name!r}") from None


def _template_domain(domain: str) -> str:
    # the synthetic domain borrows the shopping wording
    if domain not in DOMAINS:
        raise InvalidInputError(f"unknown domain {domain!r}")
    return "general-knowledge" if domain == "general-knowledge" else "e-commerce"


def _subject_fields(topic: str, domain: str) -> dict[str, str]:
    if _template_domain(domain) == "general-knowledge":
        return {"subject": f"the Wikipedia article titled '{topic}'", "audience": "readers", "unit": "article"}
    return {"subject": f"the category of {topic}", "audience": "the customers", "unit": "category"}


def format_ctr(ctr: float) -> str:
    """CTR as a one-decimal percentage, e.g. ``0.137 -> '13.7%'``."""
    return f"{100.0 * ctr:.1f}%"


def ctr_blocks(items: Iterable[tuple[str, float]]) -> str:
    """``Question:/CTR:`` blocks sorted ascending by CTR (stable for ties)."""
    ordered = sorted(items, key=lambda item: item[1])
    return "\n\n".join(f"Question: {text}\nCTR: {format_ctr(ctr)}" for text, ctr in ordered)


def plain_blocks(texts: Iterable[str]) -> str:
    return "\n\n".join(f"Question: {text}" for text in texts)


def initial_prompt(topic: str, n: int, domain: str) -> str:
    return load_template(f"{INITIAL}.{_template_domain(domain)}").format(topic=topic, n=n)


def full_ctr_prompt(topic: str, domain: str, items: Sequence[tuple[str, float]]) -> str:
    return load_template(REFINE_FULL_CTR).format(question_blocks=ctr_blocks(items), **_subject_fields(topic, domain))


def explore_exploit_prompt(topic: str, domain: str, items: Sequence[tuple[str, float]]) -> str:
    return load_template(REFINE_EXPLORE_EXPLOIT).format(
        question_blocks=ctr_blocks(items), **_subject_fields(topic, domain)
    )


def explore_prompt(topic: str, domain: str, texts: Sequence[str]) -> str:
    return load_template(REFINE_EXPLORE).format(question_blocks=plain_blocks(texts), **_subject_fields(topic, domain))


def scoring_prompt(question: str, persona_name: str, persona_description: str, topic: str, domain: str) -> str:
    tdomain = _template_domain(domain)
    if tdomain == "e-commerce":
        persona = f"{persona_name}: {persona_description}"
    else:
        persona = persona_description
    return load_template(f"{SCORE}.{tdomain}").format(question=question, persona=persona, topic=topic)


# -- response parsing ---------------------------------------------------------


def parse_new_question(raw: str) -> str:
    """Text after the first ``New Question:`` marker (case-insensitive), first line only."""
    match = _NEW_QUESTION_RE.search(raw or "")
    if not match:
        raise ParseError("response has no 'New Question:' marker", raw)
    body = match.group(1).strip()
    text = body.splitlines()[0].strip() if body else ""
    if not text:
        raise ParseError("empty question after 'New Question:' marker", raw)
    return text


def parse_question_list(raw: str) -> list[str]:
    """One question per non-empty line; list bullets and numbering are stripped."""
    out = []
    for line in (raw or "").splitlines():
        line = _LIST_PREFIX_RE.sub("", line).strip()
        if line:
            out.append(line)
    return out


def parse_score(raw: str) -> int:
    """Integer from a ``Score: <1-10>`` response line."""
    match = _SCORE_RE.search(raw or "")
    if not match:
        raise ParseError("response has no 'Score: <integer>' line", raw)
    value = int(match.group(1))
    if not 1 <= value <= 10:
        raise ParseError(f"score {value} outside 1..10", raw)
    return value


# -- prompt introspection (used by the offline backends) ---------------------


@dataclass(frozen=True)
class CtrBlock:
    question: str
    ctr: float  # as a fraction


def parse_ctr_blocks(prompt: str) -> list[CtrBlock]:
    return [CtrBlock(q, float(c) / 100.0) for q, c in _CTR_BLOCK_RE.findall(prompt)]


def parse_listed_questions(prompt: str) -> list[str]:
    return _PLAIN_BLOCK_RE.findall(prompt)


def initial_request_size(prompt: str) -> int | None:
    """``n`` if ``prompt`` is an initial-pool prompt, else None."""
    match = _INITIAL_RE.search(prompt)
    return int(match.group(1)) if match else None


def is_scoring_prompt(prompt: str) -> bool:
    return SCORE_MARKER in prompt


def is_exploit_prompt(prompt: str) -> bool:
    return EXPLOIT_MARKER in prompt


def scored_question(prompt: str) -> str:
    """Question text in a scoring prompt (its last ``Question:`` line)."""
    found = parse_listed_questions(prompt)
    if not found:
        raise ParseError("scoring prompt has no question", prompt)
    return found[-1]


def extract_topic(prompt: str) -> str | None:
    for pattern in _TOPIC_PATTERNS:
        match = pattern.search(prompt)
        if match:
            return match.group(1).strip()
    return None
