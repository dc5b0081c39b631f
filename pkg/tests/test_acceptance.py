"""Acceptance criteria, one test per criterion at its stated tolerance.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""

import csv
import json
import os
import re
import time

import httpx
import mpmath as mp
import numpy as np
import pytest
from scipy import stats

from genrec import cli, experiment, prompts
from genrec.click_model import ClickModelParams, action_probabilities, theoretical_ctr
from genrec.config import RemoteSpec, preset_config
from genrec.errors import ParseError
from genrec.experiment import simulate_batch, variance_study
from genrec.llm_gateway import CandidateBank, RemoteBackend, ScriptedLengthBackend, TokenBucket
from genrec.rng import stream

pytestmark = pytest.mark.acceptance

DEFAULT = ClickModelParams()
STATED_CTR_R10 = 0.60668


def oracle_ctr(score, k, t, rs, dps=50):
    mp.mp.dps = dps
    term = k * mp.e ** (mp.mpf(score) / t)
    return term / (mp.e ** (mp.mpf(rs) / t) + term)


def with_strategy(config, kind, seed):
    return config.model_copy(update={"seed": seed, "strategy": config.strategy.model_copy(update={"kind": kind})})


# -- 1 ------------------------------------------------------------------------


def test_criterion_1_analytic_fidelity(verdict):
    start = time.perf_counter()
    oracle = float(oracle_ctr(10, 3, 1.5, 11))
    got = theoretical_ctr(10, 3, DEFAULT)
    value_ok = abs(got - oracle) <= 1e-5

    # 10,000 randomized inputs: 100 random (T, RS) pairs x 100 random score rows each
    rng = np.random.default_rng(1)
    invariants_ok = True
    for _ in range(100):
        t, rs, shift = rng.uniform(0.2, 5.0), rng.uniform(0.0, 20.0), rng.uniform(-5, 5)
        params = ClickModelParams(t, rs)
        scores = rng.uniform(1, 10, size=(100, 3))
        p = action_probabilities(scores, params)
        up = scores.copy()
        up[:, 0] += rng.uniform(0.01, 2.0, size=100)
        p_up = action_probabilities(up, params)
        p_shift = action_probabilities(scores + shift, ClickModelParams(t, rs + shift))
        p_rs = action_probabilities(scores, ClickModelParams(t, rs + 1.0))
        invariants_ok &= bool(
            np.all(p >= 0)
            and np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
            and np.all(p_up[:, 0] > p[:, 0])
            and np.allclose(p_shift, p, atol=1e-12)
            and np.all(p_rs[:, :-1].sum(axis=1) < p[:, :-1].sum(axis=1))
        )
    elapsed = time.perf_counter() - start
    ok = value_ok and invariants_ok and elapsed < 1.0
    verdict("1", ok, f"theoretical_ctr(10)={got:.7f} oracle={oracle:.7f} invariants={invariants_ok} ({elapsed:.2f}s)")
    assert ok


@pytest.mark.xfail(strict=True, reason="stated reference 0.60668 disagrees with the 50-digit oracle 0.6063382")
def test_criterion_1_stated_reference_value(verdict):
    got = theoretical_ctr(10, 3, DEFAULT)
    ok = abs(got - STATED_CTR_R10) <= 1e-5
    verdict("1 (stated 0.60668)", ok, f"|{got:.7f} - {STATED_CTR_R10}| = {abs(got - STATED_CTR_R10):.2e}; "
            "the formula evaluates to 0.6063382, see decisions ledger")
    assert ok


# -- 2 ------------------------------------------------------------------------


def test_criterion_2_monte_carlo(verdict):
    start = time.perf_counter()
    analytic = float(oracle_ctr(10, 3, 1.5, 11))
    qids = [f"q{i}" for i in range(5)]
    scores = np.full((5, 1), 10.0)
    within = 0
    for rep in range(100):
        rec = simulate_batch(qids, ["p"], scores, 5000, 3, DEFAULT, stream(rep, "criterion-2"))
        within += abs(rec.overall_ctr - analytic) <= 0.02
    elapsed = time.perf_counter() - start
    ok = within >= 95 and elapsed < 10
    verdict("2", ok, f"{within}/100 replications within 2pp of {analytic:.5f} ({elapsed:.2f}s)")
    assert ok


# -- 3 ------------------------------------------------------------------------


def test_criterion_3_variance_study(verdict):
    start = time.perf_counter()
    reps = 100
    m = experiment.random_pool_scores(5, 1, stream(0, "variance-pool"))
    rows = variance_study(m, [100, 1000, 5000, 50_000], reps, seed=0)
    v = [r.overall_ctr_variance for r in rows]
    # sample-variance standard error under normality
    se = [x * np.sqrt(2 / (reps - 1)) for x in v]
    nonincreasing = all(v[i + 1] <= v[i] + 2 * np.hypot(se[i], se[i + 1]) for i in range(len(v) - 1))
    elapsed = time.perf_counter() - start
    ok = v[-1] < v[0] and nonincreasing and elapsed < 120
    verdict("3", ok, "variances " + ", ".join(f"S={r.interactions}:{r.overall_ctr_variance:.2e}" for r in rows)
            + f" ({elapsed:.1f}s)")
    assert ok


# -- 4 ------------------------------------------------------------------------


def test_criterion_4_sweeps(tmp_path, verdict):
    start = time.perf_counter()
    assert cli.main(["sweep", "rs", "--rs-values", "8:14:0.5", "-o", str(tmp_path / "rs.csv")]) == 0
    assert cli.main(["sweep", "temperature", "--t-values", "1.0:1.5:0.25", "-o", str(tmp_path / "t.csv")]) == 0
    with open(tmp_path / "rs.csv", newline="") as fh:
        rs_rows = list(csv.DictReader(fh))
    with open(tmp_path / "t.csv", newline="") as fh:
        t_rows = list(csv.DictReader(fh))

    decreasing_in_rs = True
    for score in range(1, 11):
        col = [float(r["theoretical_ctr"]) for r in rs_rows if float(r["score"]) == score]
        decreasing_in_rs &= all(b < a for a, b in zip(col, col[1:]))
    increasing_in_score = True
    spreads = []
    for t in (1.0, 1.25, 1.5):
        col = [float(r["theoretical_ctr"]) for r in t_rows if float(r["temperature"]) == t]
        increasing_in_score &= all(b > a for a, b in zip(col, col[1:]))
        spreads.append(max(col) - min(col))
    widening = all(b > a for a, b in zip(spreads, spreads[1:]))
    elapsed = time.perf_counter() - start
    ok = decreasing_in_rs and increasing_in_score and widening and elapsed < 1.0
    verdict("4", ok, f"CTR decreasing in RS={decreasing_in_rs}; spread T=1.0/1.25/1.5: "
            + "/".join(f"{s:.4f}" for s in spreads) + f" ({elapsed:.2f}s)")
    assert ok


# -- 5 ------------------------------------------------------------------------


def test_criterion_5_length_end_to_end(verdict):
    start = time.perf_counter()
    base = preset_config("length")
    change = {}
    for kind in ("partial-ctr", "random-ctr"):
        change[kind] = []
        for seed in range(10):
            result = experiment.run(with_strategy(base, kind, seed))
            assert len(result.records) == 16
            change[kind].append(result.mean_scores[15] - result.mean_scores[0])
    partial = float(np.mean(change["partial-ctr"]))
    random_ = float(np.mean(change["random-ctr"]))
    elapsed = time.perf_counter() - start
    ok = partial >= 2 and abs(random_) <= 1 and elapsed < 30
    verdict("5", ok, f"mean score change over seeds 0-9: partial-ctr {partial:+.2f}, random-ctr {random_:+.2f} "
            f"(per-seed ranges {min(change['partial-ctr']):+.2f}..{max(change['partial-ctr']):+.2f} and "
            f"{min(change['random-ctr']):+.2f}..{max(change['random-ctr']):+.2f}; {elapsed:.1f}s)")
    assert ok


# -- 6 ------------------------------------------------------------------------


def test_criterion_6_strategy_ordering(verdict):
    start = time.perf_counter()
    base = preset_config("synthetic")
    bank = CandidateBank.load(base.backend.candidate_bank.bank)
    qualities = {}
    for e in bank.entries:
        qualities.setdefault(e.topic_tag, set()).add(e.hidden_quality)
    top = [t for t, q in qualities.items() if min(q) >= 8]
    bank_ok = len(bank) >= 60 and len(top) == 1 and all(max(q) <= 5 for t, q in qualities.items() if t not in top)

    avg = {}
    sizes_ok = True
    for kind in ("explore-exploit", "random-ctr"):
        avg[kind] = []
        for seed in range(20):
            result = experiment.run(with_strategy(base, kind, seed))
            sizes_ok &= all(len(r.question_ids) == base.pool_size for r in result.records)
            avg[kind].append(result.avg_ctr)
    test = stats.ttest_ind(avg["explore-exploit"], avg["random-ctr"], equal_var=False, alternative="greater")
    elapsed = time.perf_counter() - start
    ok = bank_ok and sizes_ok and test.pvalue < 0.05 and elapsed < 60
    verdict("6", ok, f"avg_ctr explore-exploit {np.mean(avg['explore-exploit']):.4f} vs random-ctr "
            f"{np.mean(avg['random-ctr']):.4f}, Welch p={test.pvalue:.2e}; bank={len(bank)} entries; "
            f"pool sizes constant={sizes_ok} ({elapsed:.1f}s)")
    assert ok


# -- 7 ------------------------------------------------------------------------


def _canonical(result):
    records = json.dumps([r.to_dict() for r in result.records], sort_keys=True).encode()
    metrics = json.dumps([result.avg_ctr, result.last_ctr, result.mean_scores]).encode()
    return records, metrics


def test_criterion_7_replay_determinism(tmp_path, verdict, monkeypatch):
    start = time.perf_counter()
    same = []
    for name, config in (
        ("synthetic", preset_config("synthetic")),
        ("length", with_strategy(preset_config("length"), "explore-exploit", 3)),
    ):
        log = tmp_path / f"{name}.jsonl"
        first = experiment.run(config, log_path=log)
        again = experiment.run(experiment.replay_config(config, log))
        same.append(_canonical(first) == _canonical(again))

    # a journaled remote run (served by a mock endpoint) replays offline
    monkeypatch.setenv("ACCEPTANCE_TOKEN", "x")
    scripted = ScriptedLengthBackend(seed=5)

    def handler(request):
        content = scripted.complete(json.loads(request.content)["messages"][0]["content"])
        return httpx.Response(200, json={"choices": [{"message": {"content": content}}]})

    remote = RemoteBackend(
        RemoteSpec(endpoint="https://mock.invalid/v1", api_key_env="ACCEPTANCE_TOKEN"),
        client=httpx.Client(transport=httpx.MockTransport(handler)),
        limiter=TokenBucket(1e9),
    )
    config = with_strategy(preset_config("length"), "full-ctr", 8)
    first = experiment.run(config, log_path=tmp_path / "remote.jsonl", backend=remote)
    again = experiment.run(experiment.replay_config(config, tmp_path / "remote.jsonl"))
    same.append(_canonical(first) == _canonical(again))

    elapsed = time.perf_counter() - start
    ok = all(same) and elapsed < 30
    verdict("7", ok, f"byte-identical records+metrics for synthetic/length/remote-mock: {same} ({elapsed:.1f}s)")
    assert ok


# -- 8 ------------------------------------------------------------------------

CTR_TEXT = re.compile(r"\d+(?:\.\d+)?%")


def _refine_prompts(log_path):
    """(prompt, questions generated before it) for every refine call in a run log."""
    out, seen = [], []
    for rec in experiment.load_run_log(log_path):
        if rec["type"] == "question":
            seen.append(rec["text"])
        elif rec["type"] == "call" and prompts.initial_request_size(rec["prompt"]) is None:
            out.append((rec["prompt"], list(seen)))
    return out


def _fuzz_text(rng):
    alphabet = list("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 ,'-?!()&é") + ["ü", "ç", "中"]
    n = int(rng.integers(1, 80))
    text = "".join(rng.choice(alphabet, size=n)).strip()
    return text or "x"


def test_criterion_8_protocol_conformance(tmp_path, verdict):
    start = time.perf_counter()
    base = preset_config("length")
    experiment.run(with_strategy(base, "full-ctr", 2), log_path=tmp_path / "full.jsonl")
    experiment.run(with_strategy(base, "partial-ctr", 2), log_path=tmp_path / "partial.jsonl")

    full_ok = True
    full_calls = _refine_prompts(tmp_path / "full.jsonl")
    for prompt, history in full_calls:
        blocks = prompts.parse_ctr_blocks(prompt)
        listed = [b.question for b in blocks]
        ctr_lines = re.findall(r"^CTR: (.*)$", prompt, re.MULTILINE)
        full_ok &= (
            sorted(listed) == sorted(history)
            and all(prompt.count(f"Question: {q}\n") == 1 for q in history)
            and all(re.fullmatch(r"\d+\.\d%", c) for c in ctr_lines)
            and len(ctr_lines) == len(history)
            and [b.ctr for b in blocks] == sorted(b.ctr for b in blocks)
        )
    partial_calls = _refine_prompts(tmp_path / "partial.jsonl")
    partial_ok = all(not CTR_TEXT.search(p) and "CTR" not in p for p, _ in partial_calls)

    rng = np.random.default_rng(8)
    round_trips = 0
    for _ in range(100):
        text = _fuzz_text(rng)
        marker = str(rng.choice(["New Question:", "new question:", "NEW QUESTION:", "New Question: "]))
        lead = str(rng.choice(["", "Reasoning about the pool.\n", "Thoughts: ok\n\n", "  "]))
        tail = str(rng.choice(["", "\n", "\nAnything after the line is ignored."]))
        round_trips += prompts.parse_new_question(f"{lead}{marker} {text}{tail}") == text
    rejected = 0
    for i in range(100):
        text = _fuzz_text(rng)
        malformed = [
            text,
            f"Question: {text}",
            "New Question:",
            f"New Question:   \n\n   ",
            f"New {text}",
            f"NewQuestion {text}",
            "",
            "   \n  ",
            f"{text}\nNew Question:   ",
            f"Answer: {text}",
        ][i % 10]
        try:
            prompts.parse_new_question(malformed)
        except ParseError:
            rejected += 1
    elapsed = time.perf_counter() - start
    ok = bool(full_calls) and full_ok and bool(partial_calls) and partial_ok and round_trips == 100 \
        and rejected == 100 and elapsed < 5
    verdict("8", ok, f"full-ctr prompts ok={full_ok} ({len(full_calls)}), partial-ctr CTR-free={partial_ok} "
            f"({len(partial_calls)}), round-trips {round_trips}/100, rejections {rejected}/100 ({elapsed:.2f}s)")
    assert ok


# -- 9 ------------------------------------------------------------------------

REMOTE_ENDPOINT = os.environ.get("GENREC_REMOTE_ENDPOINT")
REMOTE_KEY_ENV = os.environ.get("GENREC_REMOTE_KEY_ENV", "OPENAI_API_KEY")


@pytest.mark.network
@pytest.mark.skipif(
    not (REMOTE_ENDPOINT and os.environ.get(REMOTE_KEY_ENV)),
    reason="set GENREC_REMOTE_ENDPOINT and the credential variable (GENREC_REMOTE_KEY_ENV) to run",
)
def test_criterion_9_remote_smoke(tmp_path, verdict):
    config = preset_config("remote")
    remote = config.backend.remote.model_copy(update={
        "endpoint": REMOTE_ENDPOINT,
        "api_key_env": REMOTE_KEY_ENV,
        "model": os.environ.get("GENREC_REMOTE_MODEL", config.backend.remote.model),
    })
    config = config.model_copy(update={
        "iterations": 1,
        "interactions": 500,
        "strategy": config.strategy.model_copy(update={"kind": "full-ctr"}),
        "backend": config.backend.model_copy(update={"remote": remote}),
    })
    log = tmp_path / "remote.jsonl"
    result = experiment.run(config, log_path=log)
    calls = [r for r in experiment.load_run_log(log) if r["type"] == "call"]
    ok = len(result.records) == 2 and len(result.final_pool) == config.pool_size and len(calls) >= 2
    verdict("9", ok, f"{len(calls)} journaled calls, final pool {len(result.final_pool)}")
    assert ok
