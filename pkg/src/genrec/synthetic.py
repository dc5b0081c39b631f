"""Synthetic candidate banks with a matching keyword persona.

Every bank entry mentions exactly one tag keyword, and the paired persona
weights each keyword so that its keyword score equals the entry's hidden
quality. The population therefore has a hidden preference (the dominant
tag) that only CTR feedback can reveal.
"""

from __future__ import annotations

import itertools

import numpy as np

from genrec.errors import InvalidInputError
from genrec.llm_gateway import BankEntry, CandidateBank
from genrec.relevance import Persona, score_keyword_persona

DEFAULT_TAG_QUALITIES = {
    "eco-friendly": 9.0,
    "warranty": 5.0,
    "brand": 4.0,
    "cleaning": 3.0,
    "size": 2.0,
    "setup": 2.0,
}

_OPENERS = ("How does the", "What makes the", "Why does the", "When does the", "Which", "Can the")
_ASPECTS = (
    "choice", "label", "option", "detail", "rating", "standard",
    "policy", "claim", "guide", "trend", "feature", "question",
)


def keyword_persona(tag_qualities: dict[str, float], persona_id: str = "synthetic", base: float = 1.0) -> Persona:
    return Persona(
        id=persona_id,
        name=persona_id.replace("-", " ").title(),
        description="Synthetic shopper whose interest is set by keyword weights.",
        domain="synthetic",
        base_score=base,
        keywords=tuple((tag, q - base) for tag, q in tag_qualities.items()),
    )


def build_candidate_bank(
    topic: str = "Spray Bottles",
    tag_qualities: dict[str, float] | None = None,
    per_tag: int = 12,
    seed: int = 0,
) -> tuple[CandidateBank, Persona]:
    """Bank of ``per_tag`` questions per tag plus the persona that scores them by tag."""
    tag_qualities = dict(tag_qualities or DEFAULT_TAG_QUALITIES)
    combos = list(itertools.product(_OPENERS, _ASPECTS))
    if per_tag > len(combos):
        raise InvalidInputError(f"per_tag must be <= {len(combos)}")
    rng = np.random.default_rng(seed)
    persona = keyword_persona(tag_qualities)
    entries = []
    for tag, quality in tag_qualities.items():
        for k in rng.choice(len(combos), size=per_tag, replace=False):
            opener, aspect = combos[int(k)]
            text = f"{opener} {tag} {aspect} matter for {topic}?"
            entries.append(BankEntry(text, tag, float(quality)))
    for e in entries:
        got = score_keyword_persona(e.text, persona)
        if got != e.hidden_quality:
            raise InvalidInputError(f"tag keywords overlap: {e.text!r} scores {got}, expected {e.hidden_quality}")
    order = rng.permutation(len(entries))
    return CandidateBank(entries[int(i)] for i in order), persona
