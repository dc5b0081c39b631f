"""Item pool: the per-topic question set and its iteration history.

Every drop and add is written to ``PoolState.events``; folding those events
from an empty pool reproduces the active set (see :func:`replay_active_ids`).
Questions are never deleted, only deactivated, so prompts can list every
question ever generated.
"""

from __future__ import annotations

import re
import string
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Literal, Mapping

from genrec.errors import DuplicateItemError, InvalidInputError, InvalidStateError

Origin = Literal["init", "explore", "exploit", "refine"]
MAX_TEXT_CHARS = 500

_WS_RE = re.compile(r"\s+")
_TERMINAL_PUNCT = string.punctuation + "¿¡…"


def normalize_text(text: str) -> str:
    """Key used for duplicate detection: case-folded, whitespace collapsed, trailing punctuation removed."""
    return _WS_RE.sub(" ", text.casefold()).strip().rstrip(_TERMINAL_PUNCT).rstrip()


def word_count(text: str) -> int:
    return len(text.split())


@dataclass
class Question:
    id: str
    text: str
    created_iteration: int
    created_by: Origin
    active: bool = True

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise InvalidInputError("question text must be non-empty")
        if len(self.text) > MAX_TEXT_CHARS:
            raise InvalidInputError(f"question text longer than {MAX_TEXT_CHARS} characters")

    def exceeds_word_limit(self, max_words: int = 15) -> bool:
        return word_count(self.text) > max_words


@dataclass
class IterationRecord:
    """Measurement of one pool state plus the transition that followed it."""

    iteration: int
    interactions: int
    shown: int
    question_ids: list[str]
    impressions: dict[str, int]
    clicks: dict[str, int]
    ctr: dict[str, float]
    overall_ctr: float
    mean_score: float | None = None
    dropped: list[str] = field(default_factory=list)
    added: list[str] = field(default_factory=list)

    def __post_init__(self):
        if sum(self.impressions.values()) != self.interactions * self.shown:
            raise InvalidStateError("impressions must sum to interactions * shown")
        if not 0.0 <= self.overall_ctr <= 1.0:
            raise InvalidStateError(f"overall_ctr {self.overall_ctr} outside [0, 1]")
        if any(not 0.0 <= c <= 1.0 for c in self.ctr.values()):
            raise InvalidStateError("per-question ctr outside [0, 1]")

    @property
    def total_clicks(self) -> int:
        return sum(self.clicks.values())

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "IterationRecord":
        return cls(**dict(data))


@dataclass(frozen=True)
class PoolEvent:
    iteration: int
    action: Literal["add", "drop"]
    question_id: str


@dataclass
class PoolState:
    topic: str
    iteration: int = 0
    questions: dict[str, Question] = field(default_factory=dict)
    active_ids: list[str] = field(default_factory=list)
    history: list[IterationRecord] = field(default_factory=list)
    events: list[PoolEvent] = field(default_factory=list)
    last_ctr: dict[str, float] = field(default_factory=dict)

    @property
    def active_questions(self) -> list[Question]:
        return [self.questions[qid] for qid in self.active_ids]

    @property
    def all_questions(self) -> list[Question]:
        """Every question ever generated for this pool, in creation order."""
        return list(self.questions.values())

    def new_question(self, text: str, created_by: Origin) -> Question:
        """A fresh Question with the next sequential id (not yet added)."""
        qid = f"q{len(self.questions) + 1:04d}"
        while qid in self.questions:
            qid += "x"
        return Question(id=qid, text=text.strip(), created_iteration=self.iteration, created_by=created_by)

    def find_duplicate(self, text: str) -> Question | None:
        key = normalize_text(text)
        for q in self.questions.values():
            if normalize_text(q.text) == key:
                return q
        return None

    def observe(self, record: IterationRecord) -> None:
        if record.iteration != self.iteration:
            raise InvalidStateError(f"record for iteration {record.iteration} but pool is at {self.iteration}")
        if set(record.question_ids) != set(self.active_ids):
            raise InvalidStateError("record does not measure the current active pool")
        self.history.append(record)
        self.last_ctr.update(record.ctr)

    def events_at(self, iteration: int, action: str) -> list[str]:
        return [e.question_id for e in self.events if e.iteration == iteration and e.action == action]


def drop_worst(state: PoolState, n: int, ctr_by_question: Mapping[str, float]) -> PoolState:
    """Deactivate the ``n`` active questions with the lowest CTR.

    Ties go to the older question (smaller created_iteration), then the
    lexicographically smaller id.
    """
    if n < 1:
        raise InvalidInputError(f"n must be positive, got {n}")
    if n > len(state.active_ids):
        raise InvalidStateError(f"cannot drop {n} of {len(state.active_ids)} active questions")
    missing = [qid for qid in state.active_ids if qid not in ctr_by_question]
    if missing:
        raise InvalidStateError(f"no CTR for active questions {missing}")
    ranked = sorted(
        state.active_questions,
        key=lambda q: (ctr_by_question[q.id], q.created_iteration, q.id),
    )
    for q in ranked[:n]:
        q.active = False
        state.active_ids.remove(q.id)
        state.events.append(PoolEvent(state.iteration, "drop", q.id))
    return state


def add_questions(state: PoolState, new: Iterable[Question]) -> PoolState:
    """Append questions to the active set.

    Raises DuplicateItemError if a normalised text collides with any question
    ever in the pool (active or dropped) or with another new one; nothing is
    added in that case.
    """
    new = list(new)
    seen: dict[str, str] = {}
    for q in new:
        if q.id in state.questions:
            raise InvalidStateError(f"question id {q.id} already used")
        key = normalize_text(q.text)
        existing = state.find_duplicate(q.text)
        if existing is not None:
            raise DuplicateItemError(q.text, existing.id)
        if key in seen:
            raise DuplicateItemError(q.text, seen[key])
        seen[key] = q.id
    for q in new:
        q.created_iteration = state.iteration
        q.active = True
        state.questions[q.id] = q
        state.active_ids.append(q.id)
        state.events.append(PoolEvent(state.iteration, "add", q.id))
    return state


def replay_active_ids(events: Iterable[PoolEvent]) -> list[str]:
    active: list[str] = []
    for e in events:
        if e.action == "add":
            active.append(e.question_id)
        else:
            active.remove(e.question_id)
    return active


def replay_from_history(initial_ids: Iterable[str], history: Iterable[IterationRecord]) -> list[str]:
    """Fold the per-iteration drop/add lists over the initial pool."""
    active = list(initial_ids)
    for record in history:
        for qid in record.dropped:
            active.remove(qid)
        active.extend(record.added)
    return active
