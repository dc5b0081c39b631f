"""Pool initialization and the CTR-driven refinement strategies.

Each refine call advances the pool by one iteration: it drops questions
according to the strategy's notion of CTR and asks the backend for
replacements. What the backend sees differs per strategy:

=================  ===================  =========================================
kind               drops by             generation prompt
=================  ===================  =========================================
no-drop            nothing              active questions, no CTR
random-ctr         fresh random CTRs    every question so far, random CTRs
partial-ctr        observed CTR         active questions, no CTR
full-ctr           observed CTR         every question so far, observed CTRs
explore-exploit    observed CTR         exploit prompt (combined-prompt), or an
                                        explore prompt plus an exploit prompt
                                        (dual-set, drops 2n)
=================  ===================  =========================================
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from genrec import prompts
from genrec.config import STRATEGY_KINDS, StrategyConfig
from genrec.errors import (
    ConfigError,
    DuplicateItemError,
    InvalidStateError,
    ParseError,
    StrategyError,
)
from genrec.pool import (
    IterationRecord,
    Origin,
    PoolState,
    Question,
    add_questions,
    drop_worst,
    normalize_text,
)

parse_new_question = prompts.parse_new_question


@dataclass
class GenerationRequest:
    prompt: str
    template_id: str
    topic: str


@dataclass
class GenerationResult:
    request: GenerationRequest
    raw: str
    questions: list[str]
    retry_count: int = 0
    metadata: dict = field(default_factory=dict)


def _metadata(backend) -> dict:
    return dict(getattr(backend, "last_metadata", {}) or {})


def initialize_pool(
    topic: str,
    n_init: int,
    domain: str,
    backend,
    state: PoolState | None = None,
    max_retries: int = 3,
) -> tuple[list[Question], GenerationResult]:
    """Generate ``n_init`` distinct initial questions and add them to ``state``.

    A response with fewer than ``n_init`` usable questions is retried, up to
    ``max_retries`` retries in total.
    """
    state = state if state is not None else PoolState(topic=topic)
    request = GenerationRequest(prompts.initial_prompt(topic, n_init, domain), prompts.INITIAL, topic)
    raw = ""
    for attempt in range(max_retries + 1):
        raw = backend.complete(request.prompt)
        picked, keys = [], set()
        for text in prompts.parse_question_list(raw):
            key = normalize_text(text)
            if key and key not in keys and state.find_duplicate(text) is None:
                keys.add(key)
                picked.append(text)
        if len(picked) >= n_init:
            picked = picked[:n_init]
            questions = []
            for text in picked:
                # ids come from the pool size, so each question is added before the next is allocated
                q = state.new_question(text, "init")
                add_questions(state, [q])
                questions.append(q)
            return questions, GenerationResult(request, raw, picked, attempt, _metadata(backend))
    raise StrategyError(
        f"initial prompt yielded fewer than {n_init} distinct questions after {max_retries + 1} attempts"
    )


def _generate_one(
    state: PoolState,
    build_prompt: Callable[[], str],
    template_id: str,
    origin: Origin,
    backend,
    max_retries: int,
) -> GenerationResult:
    """Ask for one new question, retrying on parse failures and duplicates; adds it to the pool."""
    prompt = build_prompt()
    request = GenerationRequest(prompt, template_id, state.topic)
    problems = []
    raw = ""
    for attempt in range(max_retries + 1):
        raw = backend.complete(prompt)
        try:
            text = prompts.parse_new_question(raw)
            q = state.new_question(text, origin)
            add_questions(state, [q])
        except (ParseError, DuplicateItemError) as err:
            problems.append(str(err))
            continue
        return GenerationResult(request, raw, [text], attempt, _metadata(backend))
    raise StrategyError(
        f"{template_id}: no usable new question after {max_retries + 1} attempts ({'; '.join(problems)})"
    )


def _all_with_ctr(state: PoolState, ctr: Mapping[str, float]) -> list[tuple[str, float]]:
    return [(q.text, ctr[q.id]) for q in state.all_questions if q.id in ctr]


def refine(
    state: PoolState,
    strategy: StrategyConfig,
    observed: IterationRecord,
    backend,
    rng: np.random.Generator,
    domain: str = "e-commerce",
) -> list[GenerationResult]:
    """Move ``state`` from iteration i to i+1 according to ``strategy``.

    ``observed`` must be the measurement of the current pool. Returns the
    generation results in call order.
    """
    if strategy.kind not in STRATEGY_KINDS:
        raise ConfigError(f"unknown strategy kind {strategy.kind!r}")
    if observed.iteration != state.iteration or set(observed.question_ids) != set(state.active_ids):
        raise InvalidStateError("observed record does not describe the current pool")

    n = strategy.n
    topic = state.topic
    retries = strategy.max_retries
    state.iteration += 1
    results: list[GenerationResult] = []

    def gen(build, template_id, origin):
        results.append(_generate_one(state, build, template_id, origin, backend, retries))

    def plain():
        return prompts.explore_prompt(topic, domain, [q.text for q in state.active_questions])

    kind = strategy.kind
    if kind == "no-drop":
        for _ in range(n):
            gen(plain, prompts.REFINE_EXPLORE, "refine")

    elif kind == "random-ctr":
        low, high = strategy.random_ctr_range
        fake = {q.id: float(rng.uniform(low, high)) for q in state.all_questions}
        drop_worst(state, n, fake)
        items = _all_with_ctr(state, fake)
        for _ in range(n):
            gen(lambda: prompts.full_ctr_prompt(topic, domain, items), prompts.REFINE_FULL_CTR, "refine")

    elif kind == "partial-ctr":
        drop_worst(state, n, observed.ctr)
        for _ in range(n):
            gen(plain, prompts.REFINE_EXPLORE, "refine")

    elif kind == "full-ctr":
        drop_worst(state, n, observed.ctr)
        for _ in range(n):
            gen(
                lambda: prompts.full_ctr_prompt(topic, domain, _all_with_ctr(state, state.last_ctr)),
                prompts.REFINE_FULL_CTR,
                "refine",
            )

    else:  # explore-exploit
        def exploit():
            return prompts.explore_exploit_prompt(topic, domain, _all_with_ctr(state, state.last_ctr))

        if strategy.explore_exploit_mode == "dual-set":
            drop_worst(state, 2 * n, observed.ctr)
            for _ in range(n):
                gen(plain, prompts.REFINE_EXPLORE, "explore")
            for _ in range(n):
                gen(exploit, prompts.REFINE_EXPLORE_EXPLOIT, "exploit")
        else:
            drop_worst(state, n, observed.ctr)
            for _ in range(n):
                gen(exploit, prompts.REFINE_EXPLORE_EXPLOIT, "exploit")

    observed.dropped = state.events_at(state.iteration, "drop")
    observed.added = state.events_at(state.iteration, "add")
    return results
