"""Experiment runner: initialize, then alternate measurement and refinement.

A run measures the pool I+1 times (iterations 0..I) and refines it I times.
Every interaction samples a persona uniformly and K distinct questions
uniformly from the active pool, then one action from the click model.
"""

from __future__ import annotations

import itertools
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from genrec import strategies
from genrec.click_model import ClickModelParams, action_probabilities, sample_actions
from genrec.config import BackendSpec, ExperimentConfig, ReplaySpec, config_to_dict
from genrec.errors import GenRecError, InvalidInputError, InvalidStateError, LogParseError
from genrec.llm_gateway import JournalingBackend, make_backend
from genrec.pool import IterationRecord, PoolState, Question
from genrec.relevance import Persona, RelevanceScorer, resolve_personas
from genrec.rng import derive_seed, stream

log = logging.getLogger(__name__)

LOG_FORMAT_VERSION = 1


# -- simulation ---------------------------------------------------------------


def _ids(items) -> list[str]:
    return [getattr(x, "id", x) for x in items]


def score_matrix(question_ids: Sequence[str], persona_ids: Sequence[str], scores) -> np.ndarray:
    """(n_questions, n_personas) matrix from an array or a ``{(qid, pid): value}`` mapping."""
    if isinstance(scores, np.ndarray):
        m = np.asarray(scores, dtype=float)
        if m.shape != (len(question_ids), len(persona_ids)):
            raise InvalidInputError(f"score matrix shape {m.shape} does not match pool x personas")
        return m
    try:
        return np.array([[float(scores[(q, p)]) for p in persona_ids] for q in question_ids])
    except KeyError as err:
        raise InvalidStateError(f"no relevance score for {err.args[0]}") from None


def simulate_batch(
    questions: Sequence[Question | str],
    personas: Sequence[Persona | str],
    scores,
    interactions: int,
    shown: int,
    params: ClickModelParams,
    rng: np.random.Generator,
    iteration: int = 0,
) -> IterationRecord:
    """Simulate ``interactions`` users and tally impressions and clicks per question."""
    qids, pids = _ids(questions), _ids(personas)
    if interactions < 1:
        raise InvalidInputError("interactions must be >= 1")
    if not pids:
        raise InvalidInputError("persona mix is empty")
    if not 1 <= shown <= len(qids):
        raise InvalidInputError(f"cannot show {shown} of {len(qids)} questions")
    m = score_matrix(qids, pids, scores)
    n_q, n_p = m.shape

    persona_idx = rng.integers(n_p, size=interactions)
    # first K columns of a uniformly random permutation = K-subset without replacement
    shown_idx = np.argsort(rng.random((interactions, n_q)), axis=1)[:, :shown]
    actions = sample_actions(m[shown_idx, persona_idx[:, None]], params, rng)

    impressions = np.bincount(shown_idx.ravel(), minlength=n_q)
    hit = actions >= 0
    clicks = np.bincount(shown_idx[hit, actions[hit]], minlength=n_q)
    ctr = {}
    for qid, imp, clk in zip(qids, impressions, clicks):
        if imp == 0:
            log.warning("question %s got no impressions in iteration %d; CTR set to 0", qid, iteration)
            ctr[qid] = 0.0
        else:
            ctr[qid] = float(clk) / float(imp)
    return IterationRecord(
        iteration=iteration,
        interactions=interactions,
        shown=shown,
        question_ids=list(qids),
        impressions={q: int(v) for q, v in zip(qids, impressions)},
        clicks={q: int(v) for q, v in zip(qids, clicks)},
        ctr=ctr,
        overall_ctr=float(hit.sum()) / interactions,
    )


def expected_overall_ctr(scores: np.ndarray, shown: int, params: ClickModelParams) -> float:
    """Exact population CTR of a frozen pool: average over personas and all K-subsets."""
    m = np.asarray(scores, dtype=float)
    subsets = np.array(list(itertools.combinations(range(m.shape[0]), shown)))
    total = 0.0
    for p in range(m.shape[1]):
        probs = action_probabilities(m[subsets, p], params)
        total += float(np.mean(1.0 - probs[:, -1]))
    return total / m.shape[1]


# -- metrics ------------------------------------------------------------------


@dataclass
class Metrics:
    avg_ctr: float
    last_ctr: float
    mean_scores: list[float | None]


def compute_metrics(records: Sequence[IterationRecord]) -> Metrics:
    if not records:
        raise InvalidInputError("need at least one iteration record")
    ctrs = [r.overall_ctr for r in records]
    return Metrics(
        avg_ctr=float(np.mean(ctrs)),
        last_ctr=ctrs[-1],
        mean_scores=[r.mean_score for r in records],
    )


@dataclass
class VarianceRow:
    interactions: int
    replications: int
    question_ctr_variance: float  # mean over questions of the per-question variance
    overall_ctr_variance: float
    overall_ctr_mean: float
    overall_ctr_std_error: float
    theoretical_ctr: float
    per_question_variance: list[float] = field(default_factory=list)


def random_pool_scores(pool_size: int, n_personas: int, rng: np.random.Generator) -> np.ndarray:
    """Integer relevance scores drawn uniformly from 1..10."""
    return rng.integers(1, 11, size=(pool_size, n_personas)).astype(float)


def variance_study(
    scores: np.ndarray,
    s_values: Iterable[int],
    replications: int,
    shown: int = 3,
    params: ClickModelParams = ClickModelParams(),
    seed: int = 0,
) -> list[VarianceRow]:
    """Spread of measured CTRs across independent replications of one frozen pool."""
    if replications < 2:
        raise InvalidInputError("replications must be >= 2")
    m = np.asarray(scores, dtype=float)
    qids = [f"q{i}" for i in range(m.shape[0])]
    pids = [f"p{j}" for j in range(m.shape[1])]
    theory = expected_overall_ctr(m, shown, params)
    rows = []
    for s in s_values:
        s = int(s)
        overall, per_q = [], []
        for rep in range(replications):
            rec = simulate_batch(qids, pids, m, s, shown, params, stream(seed, "variance", s, rep))
            overall.append(rec.overall_ctr)
            per_q.append([rec.ctr[q] for q in qids])
        overall = np.array(overall)
        pq_var = np.var(np.array(per_q), axis=0, ddof=1)
        rows.append(VarianceRow(
            interactions=s,
            replications=replications,
            question_ctr_variance=float(pq_var.mean()),
            overall_ctr_variance=float(np.var(overall, ddof=1)),
            overall_ctr_mean=float(overall.mean()),
            overall_ctr_std_error=float(overall.std(ddof=1) / np.sqrt(replications)),
            theoretical_ctr=theory,
            per_question_variance=[float(v) for v in pq_var],
        ))
    return rows


def variance_study_for_config(
    config: ExperimentConfig, s_values: Iterable[int], replications: int
) -> list[VarianceRow]:
    """Variance study on a pool of ``config.pool_size`` random scores, one column per persona."""
    m = random_pool_scores(config.pool_size, len(config.personas), stream(config.seed, "variance-pool"))
    return variance_study(m, s_values, replications, config.shown, config.click.params(), config.seed)


# -- run log ------------------------------------------------------------------


def _dumps(record: Mapping[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, allow_nan=False, separators=(",", ":"))


class RunLog:
    """Line-delimited JSON run log. Each record is flushed as soon as it is written."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = self.path.open("w", encoding="utf-8")

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self._fh is not None:
            self._fh.write(_dumps(record) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _question_record(q: Question) -> dict:
    return {"type": "question", **asdict(q)}


# -- run ----------------------------------------------------------------------


@dataclass
class RunResult:
    config: dict
    records: list[IterationRecord]
    avg_ctr: float
    last_ctr: float
    mean_scores: list[float | None]
    questions: list[dict]
    final_pool: list[str]
    timing: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "config": self.config,
            "avg_ctr": self.avg_ctr,
            "last_ctr": self.last_ctr,
            "mean_scores": self.mean_scores,
            "overall_ctr": [r.overall_ctr for r in self.records],
            "final_pool": self.final_pool,
            "iterations": [r.to_dict() for r in self.records],
            "questions": self.questions,
            "timing": self.timing,
        }


def run(
    config: ExperimentConfig,
    log_path: str | Path | None = None,
    backend=None,
    personas: Sequence[Persona] | None = None,
) -> RunResult:
    """Execute one experiment. ``backend``/``personas`` override what the config names."""
    t0 = time.perf_counter()
    personas = list(personas) if personas is not None else resolve_personas(config.personas, config.persona_file)
    params = config.click.params()
    seed = config.seed

    runlog = RunLog(log_path)
    try:
        runlog.write({
            "type": "config",
            "version": LOG_FORMAT_VERSION,
            "config": config_to_dict(config),
            "personas": [p.to_dict() for p in personas],
        })
        inner = backend if backend is not None else make_backend(config.backend, seed=derive_seed(seed, "backend"))
        journaled = JournalingBackend(inner, runlog.write)
        scorer = RelevanceScorer(
            config.scorer,
            domain=config.domain,
            backend=journaled,
            on_score=lambda s: runlog.write({"type": "score", **s.to_dict()}),
        )

        state = PoolState(topic=config.topic)
        iteration = 0
        try:
            init_questions, _ = strategies.initialize_pool(
                config.topic, config.pool_size, config.domain, journaled, state,
                max_retries=config.strategy.max_retries,
            )
            for q in init_questions:
                runlog.write(_question_record(q))

            for iteration in range(config.iterations + 1):
                active = state.active_questions
                m = np.array([[scorer.value(q, p, config.topic) for p in personas] for q in active])
                record = simulate_batch(
                    active, personas, m, config.interactions, config.shown, params,
                    stream(seed, "simulate", iteration), iteration=iteration,
                )
                record.mean_score = float(m.mean())
                state.observe(record)
                if iteration < config.iterations:
                    before = len(state.questions)
                    strategies.refine(
                        state, config.strategy, record, journaled,
                        stream(seed, "strategy", iteration), domain=config.domain,
                    )
                    for q in state.all_questions[before:]:
                        runlog.write(_question_record(q))
                runlog.write({"type": "iteration", "record": record.to_dict()})
        except GenRecError as err:
            runlog.write({
                "type": "aborted",
                "iteration": iteration,
                "resume_from": iteration,
                "error": f"{type(err).__name__}: {err}",
            })
            raise

        metrics = compute_metrics(state.history)
        runlog.write({
            "type": "summary",
            "avg_ctr": metrics.avg_ctr,
            "last_ctr": metrics.last_ctr,
            "mean_scores": metrics.mean_scores,
            "final_pool": list(state.active_ids),
        })
    finally:
        runlog.close()

    return RunResult(
        config=config_to_dict(config),
        records=list(state.history),
        avg_ctr=metrics.avg_ctr,
        last_ctr=metrics.last_ctr,
        mean_scores=metrics.mean_scores,
        questions=[asdict(q) for q in state.all_questions],
        final_pool=list(state.active_ids),
        timing={"seconds": round(time.perf_counter() - t0, 3)},
    )


def replay_config(config: ExperimentConfig, transcript: str | Path) -> ExperimentConfig:
    """Same experiment, with generation answered from ``transcript``."""
    return config.model_copy(update={"backend": BackendSpec(kind="replay", replay=ReplaySpec(transcript=str(transcript)))})


def load_run_log(path: str | Path) -> list[dict]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise LogParseError(path, None, str(err)) from None
    out = []
    for i, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as err:
            raise LogParseError(path, i, f"not JSON: {err.msg}") from None
        if not isinstance(rec, dict) or "type" not in rec:
            raise LogParseError(path, i, "record has no 'type'")
        out.append(rec)
    if not out or out[0]["type"] != "config":
        raise LogParseError(path, 1, "run log must start with a config record")
    return out
