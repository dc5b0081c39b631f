"""Generation backends.

All backends expose ``complete(prompt, temperature=None) -> str`` and a
``last_metadata`` dict describing the most recent call:

* ``RemoteBackend``: JSON chat-completion over HTTP with bounded retries,
  exponential backoff and a token-bucket rate limiter.
* ``ReplayBackend``: answers from a transcript, checking a digest of each
  prompt against the recorded one.
* ``ScriptedLengthBackend``: deterministic stand-in that reacts to CTR lines
  by writing longer (or shorter) questions.
* ``CandidateBankBackend``: draws pre-written questions with hidden quality
  from a bank, exploring uniformly or exploiting the best question's tag.

``JournalingBackend`` wraps any of them and reports every call to a sink.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable, Literal

import httpx
import numpy as np

from genrec import prompts
from genrec.config import (
    BackendSpec,
    CandidateBankSpec,
    RemoteSpec,
    ScriptedLengthSpec,
)
from genrec.errors import (
    BackendError,
    BackendUnavailableError,
    BankExhaustedError,
    ConfigError,
    InvalidInputError,
    TranscriptExhaustedError,
    TranscriptMismatchError,
)
from genrec.pool import normalize_text
from genrec.relevance import score_length_words
from genrec.rng import stream

_WS_RE = re.compile(r"\s+")


def prompt_digest(prompt: str) -> str:
    """sha256 of the prompt with whitespace runs collapsed and ends trimmed."""
    normalized = _WS_RE.sub(" ", prompt).strip()
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


# -- remote -------------------------------------------------------------------


class TokenBucket:
    """Allows ``rate_per_minute`` acquisitions per minute with bursts up to ``capacity``."""

    def __init__(self, rate_per_minute: float, capacity: float | None = None, clock=time.monotonic, sleep=time.sleep):
        if rate_per_minute <= 0:
            raise InvalidInputError("rate_per_minute must be positive")
        self.rate = rate_per_minute / 60.0
        self.capacity = capacity if capacity is not None else max(1.0, self.rate)
        self.tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        """Take one token, sleeping if needed. Returns seconds waited."""
        with self._lock:
            now = self._clock()
            self.tokens = min(self.capacity, self.tokens + (now - self._last) * self.rate)
            self._last = now
            wait = 0.0
            if self.tokens < 1.0:
                wait = (1.0 - self.tokens) / self.rate
                self._sleep(wait)
                self._last = self._clock()
                self.tokens = 1.0
            self.tokens -= 1.0
            return wait


def _extract_path(payload: Any, path: str) -> Any:
    node = payload
    for part in path.split("."):
        if isinstance(node, list):
            node = node[int(part)]
        elif isinstance(node, dict):
            node = node[part]
        else:
            raise KeyError(part)
    return node


_RETRYABLE_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


class RemoteBackend:
    def __init__(
        self,
        spec: RemoteSpec,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        limiter: TokenBucket | None = None,
    ):
        self.spec = spec
        self._client = client or httpx.Client(timeout=spec.timeout)
        self._sleep = sleep
        self._limiter = limiter or TokenBucket(spec.requests_per_minute, sleep=sleep)
        self.last_metadata: dict[str, Any] = {}

    def _headers(self) -> dict[str, str]:
        token = os.environ.get(self.spec.api_key_env)
        if not token:
            raise BackendUnavailableError(f"environment variable {self.spec.api_key_env} is not set")
        return {"Authorization": f"Bearer {token}", "Content-Type": "application/json"}

    def complete(self, prompt: str, temperature: float | None = None) -> str:
        body = {
            "model": self.spec.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.spec.temperature if temperature is None else temperature,
        }
        headers = self._headers()
        attempts = self.spec.max_retries + 1
        last_error = ""
        start = time.perf_counter()
        for attempt in range(attempts):
            self._limiter.acquire()
            try:
                resp = self._client.post(self.spec.endpoint, json=body, headers=headers, timeout=self.spec.timeout)
            except (httpx.TimeoutException, httpx.TransportError) as err:
                last_error = f"{type(err).__name__}: {err}"
            else:
                if resp.status_code == 200:
                    try:
                        content = _extract_path(resp.json(), self.spec.response_path)
                    except (ValueError, KeyError, IndexError, TypeError) as err:
                        raise BackendError(f"response has no {self.spec.response_path!r}: {err}") from None
                    self.last_metadata = {
                        "backend": "remote",
                        "model": self.spec.model,
                        "retries": attempt,
                        "status": 200,
                        "latency": round(time.perf_counter() - start, 6),
                    }
                    return str(content)
                last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
                if resp.status_code not in _RETRYABLE_STATUS:
                    raise BackendUnavailableError(f"{self.spec.endpoint} returned {last_error}")
            if attempt + 1 < attempts:
                self._sleep(min(self.spec.backoff_max, self.spec.backoff_base * 2**attempt))
        raise BackendUnavailableError(f"{self.spec.endpoint} failed after {attempts} attempts: {last_error}")


# -- replay -------------------------------------------------------------------


@dataclass(frozen=True)
class TranscriptEntry:
    prompt_digest: str
    response: str
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"prompt_digest": self.prompt_digest, "response": self.response, "metadata": self.metadata}


def read_transcript(path: str | Path) -> list[TranscriptEntry]:
    """Transcript records from a transcript file or a run log (its ``call`` records)."""
    entries = []
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise ConfigError(f"cannot read transcript {path}: {err}") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}:{lineno}: not JSON ({err})") from None
        if "type" in rec and rec["type"] != "call":
            continue
        try:
            entries.append(TranscriptEntry(rec["prompt_digest"], rec["response"], rec.get("metadata") or {}))
        except KeyError as err:
            raise ConfigError(f"{path}:{lineno}: transcript record lacks {err}") from None
    return entries


def write_transcript(path: str | Path, entries: Iterable[TranscriptEntry]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


class ReplayBackend:
    def __init__(self, entries: Iterable[TranscriptEntry]):
        self.entries = list(entries)
        self.position = 0
        self.last_metadata: dict[str, Any] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayBackend":
        return cls(read_transcript(path))

    def complete(self, prompt: str, temperature: float | None = None) -> str:
        with self._lock:
            if self.position >= len(self.entries):
                raise TranscriptExhaustedError(f"transcript exhausted after {len(self.entries)} entries")
            entry = self.entries[self.position]
            actual = prompt_digest(prompt)
            if entry.prompt_digest != actual:
                raise TranscriptMismatchError(self.position, entry.prompt_digest, actual)
            self.position += 1
            self.last_metadata = dict(entry.metadata)
            return entry.response


# -- scripted length ----------------------------------------------------------

_OPENERS = ("How", "What", "Why", "When", "Which", "Can", "Does", "Is", "Should", "Do")
_FILLER = (
    "really", "typically", "usually", "often", "generally", "still", "actually", "commonly",
    "daily", "home", "outdoor", "kitchen", "garden", "travel", "office", "family", "modern",
    "simple", "small", "large", "light", "heavy", "safe", "clean", "quick", "easy", "quiet",
    "work", "last", "compare", "differ", "matter", "help", "fit", "hold", "break", "change",
    "need", "require", "include", "offer", "support", "handle", "perform", "improve", "affect",
)


def length_target(blocks: list[prompts.CtrBlock], min_words: int = 4, max_words: int = 15) -> int:
    """Word count a CTR-following writer aims for, given the listed questions.

    Starts from the best-CTR question and moves one word in the direction in
    which CTR rises with length across the listed questions: longer if the
    length/CTR correlation is positive or undefined, shorter if negative.
    """
    if not blocks:
        raise InvalidInputError("no CTR blocks")
    best_ctr = max(b.ctr for b in blocks)
    best = [b for b in blocks if b.ctr == best_ctr][-1]
    best_len = len(best.question.split())
    lengths = np.array([len(b.question.split()) for b in blocks], dtype=float)
    ctrs = np.array([b.ctr for b in blocks])
    if lengths.std() > 0 and ctrs.std() > 0 and np.corrcoef(lengths, ctrs)[0, 1] < 0:
        return max(best_len - 1, min_words)
    return min(best_len + 1, max_words)


def synthesize_question(topic: str, n_words: int, rng: np.random.Generator) -> str:
    """A question of exactly ``n_words`` whitespace tokens mentioning the topic."""
    if n_words < 1:
        raise InvalidInputError("n_words must be positive")
    words = [str(rng.choice(_OPENERS))]
    topic_words = (topic or "it").split()
    words += topic_words[: max(n_words - 1, 0)]
    while len(words) < n_words:
        words.append(str(rng.choice(_FILLER)))
    words = words[:n_words]
    return " ".join(words) + "?"


class ScriptedLengthBackend:
    """Deterministic function of (prompt, seed, call counter).

    * initial-pool prompt asking for N questions -> N lines, lengths uniform in
      [min_words, max_words];
    * prompt with CTR lines -> one question of :func:`length_target` words;
    * prompt without CTR lines -> one question, length uniform in range;
    * scoring prompt -> ``Score: <rounded length-words score>``.
    """

    def __init__(self, spec: ScriptedLengthSpec | None = None, seed: int = 0):
        self.spec = spec or ScriptedLengthSpec()
        self.seed = seed
        self.calls = 0
        self.last_metadata: dict[str, Any] = {}
        self._lock = threading.Lock()

    def _uniform_length(self, rng) -> int:
        return int(rng.integers(self.spec.min_words, self.spec.max_words + 1))

    def complete(self, prompt: str, temperature: float | None = None) -> str:
        with self._lock:
            call = self.calls
            self.calls += 1
        rng = stream(self.seed, "scripted-length", call)
        self.last_metadata = {"backend": "scripted-length", "call": call}
        if prompts.is_scoring_prompt(prompt):
            question = prompts.scored_question(prompt)
            return f"Score: {int(round(score_length_words(question)))}"
        topic = prompts.extract_topic(prompt) or "it"
        n = prompts.initial_request_size(prompt)
        if n is not None:
            lines, seen = [], set()
            for _ in range(50 * n):
                if len(lines) == n:
                    break
                q = synthesize_question(topic, self._uniform_length(rng), rng)
                if normalize_text(q) not in seen:
                    seen.add(normalize_text(q))
                    lines.append(q)
            return "\n".join(lines)
        blocks = prompts.parse_ctr_blocks(prompt)
        if blocks:
            target = length_target(blocks, self.spec.min_words, self.spec.max_words)
        else:
            target = self._uniform_length(rng)
        return f"New Question: {synthesize_question(topic, target, rng)}"


# -- candidate bank -----------------------------------------------------------


@dataclass
class BankEntry:
    text: str
    topic_tag: str
    hidden_quality: float
    consumed: bool = False

    def __post_init__(self):
        if not 1.0 <= self.hidden_quality <= 10.0:
            raise InvalidInputError(f"hidden_quality {self.hidden_quality} outside [1, 10]")


class CandidateBank:
    def __init__(self, entries: Iterable[BankEntry]):
        self.entries = list(entries)
        self._by_text: dict[str, int] = {}
        for i, e in enumerate(self.entries):
            key = normalize_text(e.text)
            if key in self._by_text:
                raise InvalidInputError(f"duplicate bank text {e.text!r}")
            self._by_text[key] = i
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def load(cls, path: str | Path) -> "CandidateBank":
        """JSON-lines (or JSON array) of ``{text, topic_tag, hidden_quality}``.

        ``bundled:<name>`` reads a file shipped in ``genrec/data``.
        """
        path = str(path)
        try:
            if path.startswith("bundled:"):
                text = (resources.files("genrec") / "data" / path[len("bundled:"):]).read_text(encoding="utf-8")
            else:
                text = Path(path).read_text(encoding="utf-8")
        except OSError as err:
            raise ConfigError(f"cannot read candidate bank {path}: {err}") from None
        stripped = text.lstrip()
        try:
            records = json.loads(text) if stripped.startswith("[") else [
                json.loads(line) for line in text.splitlines() if line.strip()
            ]
            return cls(BankEntry(r["text"], r["topic_tag"], float(r["hidden_quality"])) for r in records)
        except (json.JSONDecodeError, KeyError) as err:
            raise ConfigError(f"malformed candidate bank {path}: {err}") from None

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for e in self.entries:
                rec = {"text": e.text, "topic_tag": e.topic_tag, "hidden_quality": e.hidden_quality}
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    def lookup(self, text: str) -> BankEntry | None:
        i = self._by_text.get(normalize_text(text))
        return None if i is None else self.entries[i]

    def unconsumed(self, tag: str | None = None) -> list[int]:
        return [i for i, e in enumerate(self.entries) if not e.consumed and (tag is None or e.topic_tag == tag)]

    def take(self, candidates: list[int], rng: np.random.Generator) -> BankEntry:
        with self._lock:
            live = [i for i in candidates if not self.entries[i].consumed]
            if not live:
                raise BankExhaustedError("candidate bank has no unconsumed entries")
            entry = self.entries[live[int(rng.integers(len(live)))]]
            entry.consumed = True
            return entry


def candidate_bank_generate(
    prompt: str,
    bank: CandidateBank,
    mode: Literal["explore", "exploit"],
    rng: np.random.Generator,
) -> str:
    """One bank question in ``New Question:`` format.

    explore: uniform over unconsumed entries. exploit: uniform over unconsumed
    entries sharing the tag of the highest-CTR question listed in ``prompt``,
    falling back to explore when there is none.
    """
    if mode == "exploit":
        blocks = prompts.parse_ctr_blocks(prompt)
        if blocks:
            best_ctr = max(b.ctr for b in blocks)
            best = [b for b in blocks if b.ctr == best_ctr][-1]
            entry = bank.lookup(best.question)
            if entry is not None:
                same_tag = bank.unconsumed(entry.topic_tag)
                if same_tag:
                    return f"New Question: {bank.take(same_tag, rng).text}"
    elif mode != "explore":
        raise InvalidInputError(f"unknown mode {mode!r}")
    return f"New Question: {bank.take(bank.unconsumed(), rng).text}"


class CandidateBankBackend:
    """Prompts without CTR lines explore; prompts with CTR lines exploit.

    Prompts carrying the explore-exploit instruction are answered with an
    explore draw with probability ``explore_rate``. Initial-pool prompts get N
    explore draws, one per line. Scoring prompts get the entry's rounded
    hidden quality.
    """

    def __init__(self, bank: CandidateBank, spec: CandidateBankSpec | None = None, seed: int = 0):
        self.bank = bank
        self.explore_rate = spec.explore_rate if spec is not None else 0.25
        self.seed = seed
        self.calls = 0
        self.last_metadata: dict[str, Any] = {}
        self._lock = threading.Lock()

    def complete(self, prompt: str, temperature: float | None = None) -> str:
        with self._lock:
            call = self.calls
            self.calls += 1
        rng = stream(self.seed, "candidate-bank", call)
        if prompts.is_scoring_prompt(prompt):
            entry = self.bank.lookup(prompts.scored_question(prompt))
            if entry is None:
                raise BackendError("scoring prompt names a question that is not in the bank")
            self.last_metadata = {"backend": "candidate-bank", "call": call, "mode": "score"}
            return f"Score: {int(round(entry.hidden_quality))}"
        n = prompts.initial_request_size(prompt)
        if n is not None:
            self.last_metadata = {"backend": "candidate-bank", "call": call, "mode": "initial"}
            return "\n".join(self.bank.take(self.bank.unconsumed(), rng).text for _ in range(n))
        mode = "exploit" if prompts.parse_ctr_blocks(prompt) else "explore"
        if mode == "exploit" and prompts.is_exploit_prompt(prompt) and rng.random() < self.explore_rate:
            mode = "explore"
        self.last_metadata = {"backend": "candidate-bank", "call": call, "mode": mode}
        return candidate_bank_generate(prompt, self.bank, mode, rng)


# -- journaling ---------------------------------------------------------------


class JournalingBackend:
    """Reports every call (prompt, digest, response, metadata) to ``sink``."""

    def __init__(self, inner, sink: Callable[[dict], None]):
        self.inner = inner
        self.sink = sink
        self.calls = 0

    @property
    def last_metadata(self) -> dict:
        return getattr(self.inner, "last_metadata", {})

    def complete(self, prompt: str, temperature: float | None = None) -> str:
        seq = self.calls
        self.calls += 1
        digest = prompt_digest(prompt)
        try:
            response = self.inner.complete(prompt, temperature=temperature)
        except Exception as err:
            self.sink({"type": "call-error", "seq": seq, "prompt": prompt, "prompt_digest": digest,
                       "error": f"{type(err).__name__}: {err}"})
            raise
        self.sink({
            "type": "call",
            "seq": seq,
            "prompt": prompt,
            "prompt_digest": digest,
            "response": response,
            "metadata": dict(self.last_metadata),
        })
        return response


def make_backend(spec: BackendSpec, seed: int = 0):
    """Instantiate the backend described by ``spec``; ``seed`` feeds the offline stubs."""
    if spec.kind == "remote":
        return RemoteBackend(spec.remote)
    if spec.kind == "replay":
        return ReplayBackend.from_file(spec.replay.transcript)
    if spec.kind == "scripted-length":
        return ScriptedLengthBackend(spec.scripted_length, seed=seed)
    if spec.kind == "candidate-bank":
        return CandidateBankBackend(CandidateBank.load(spec.candidate_bank.bank), spec.candidate_bank, seed=seed)
    raise ConfigError(f"unknown backend kind {spec.kind!r}")
