"""Softmax click model with a rejection logit.

A user shown K questions with relevance scores r_1..r_K takes one of K+1
actions: click question i with probability

    exp(r_i / T) / (exp(RS / T) + sum_k exp(r_k / T))

or click nothing with the remaining mass, where T is the softmax temperature
and RS the fixed rejection score. Everything is evaluated with max-logit
subtraction so extreme score/temperature combinations do not overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from genrec.errors import InvalidInputError

NO_CLICK = -1


@dataclass(frozen=True)
class ClickModelParams:
    temperature: float = 1.5
    rejection_score: float = 11.0

    def __post_init__(self):
        if not (isinstance(self.temperature, (int, float)) and self.temperature > 0):
            raise InvalidInputError(f"temperature must be > 0, got {self.temperature!r}")
        if not math.isfinite(self.temperature):
            raise InvalidInputError("temperature must be finite")
        if not math.isfinite(self.rejection_score):
            raise InvalidInputError(f"rejection_score must be finite, got {self.rejection_score!r}")


@dataclass(frozen=True)
class ActionDistribution:
    click_probabilities: tuple[tuple[Hashable, float], ...]
    no_click_probability: float

    @property
    def total_click_probability(self) -> float:
        return math.fsum(p for _, p in self.click_probabilities)

    def as_array(self) -> np.ndarray:
        """Probabilities ordered ``[click_0, ..., click_{K-1}, no_click]``."""
        return np.array([p for _, p in self.click_probabilities] + [self.no_click_probability])


def _check_scores(scores) -> np.ndarray:
    arr = np.asarray(scores, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError("scores must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"scores must be finite, got {list(scores)!r}")
    return arr


def action_probabilities(scores: np.ndarray, params: ClickModelParams) -> np.ndarray:
    """Vectorised action distribution.

    ``scores`` has shape (..., K); the result has shape (..., K+1) with the
    no-click probability in the last column.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim == 0 or scores.shape[-1] == 0:
        raise InvalidInputError("scores must have at least one column")
    if not np.all(np.isfinite(scores)):
        raise InvalidInputError("scores must be finite")
    rs = np.full(scores.shape[:-1] + (1,), params.rejection_score)
    logits = np.concatenate([scores, rs], axis=-1) / params.temperature
    logits -= logits.max(axis=-1, keepdims=True)
    weights = np.exp(logits)
    return weights / weights.sum(axis=-1, keepdims=True)


def action_distribution(
    scores: Sequence[float],
    params: ClickModelParams = ClickModelParams(),
    ids: Sequence[Hashable] | None = None,
) -> ActionDistribution:
    arr = _check_scores(scores)
    if ids is None:
        ids = range(arr.size)
    ids = list(ids)
    if len(ids) != arr.size:
        raise InvalidInputError("ids and scores differ in length")
    probs = action_probabilities(arr, params)
    return ActionDistribution(
        click_probabilities=tuple(zip(ids, (float(p) for p in probs[:-1]))),
        no_click_probability=float(probs[-1]),
    )


def _inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    # Actions are ordered [click_0 .. click_{K-1}, no_click]; index K means no click.
    cum = np.cumsum(probs, axis=-1)
    k = probs.shape[-1] - 1
    idx = (u[..., None] >= cum[..., :-1]).sum(axis=-1)
    return np.where(idx >= k, NO_CLICK, idx)


def sample_action(
    scores: Sequence[float], params: ClickModelParams, rng: np.random.Generator
) -> int:
    """Index of the clicked question, or ``NO_CLICK``.

    Draws exactly one uniform from ``rng`` and inverts the CDF of
    ``[click_0, ..., click_{K-1}, no_click]``.
    """
    arr = _check_scores(scores)
    probs = action_probabilities(arr, params)
    return int(_inverse_cdf(probs, np.asarray(rng.random()))[()])


def sample_actions(
    score_matrix: np.ndarray, params: ClickModelParams, rng: np.random.Generator
) -> np.ndarray:
    """Batch version of :func:`sample_action` for an (S, K) score matrix."""
    score_matrix = np.asarray(score_matrix, dtype=float)
    if score_matrix.ndim != 2 or score_matrix.shape[1] == 0:
        raise InvalidInputError("score_matrix must have shape (S, K) with K >= 1")
    if not np.all(np.isfinite(score_matrix)):
        raise InvalidInputError("scores must be finite")
    probs = action_probabilities(score_matrix, params)
    return _inverse_cdf(probs, rng.random(score_matrix.shape[0]))


def theoretical_ctr(score: float, k: int, params: ClickModelParams = ClickModelParams()) -> float:
    """Total click probability when all ``k`` shown questions share ``score``.

    Equals k*exp(r/T) / (exp(RS/T) + k*exp(r/T)), i.e. a logistic function
    of ln(k) + (r - RS)/T.
    """
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise InvalidInputError(f"k must be a positive integer, got {k!r}")
    if not math.isfinite(score):
        raise InvalidInputError("score must be finite")
    z = math.log(k) + (score - params.rejection_score) / params.temperature
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)
