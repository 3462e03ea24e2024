"""LLM-as-a-judge scoring over an OpenAI-compatible chat endpoint.

Six scoring dimensions (readability, coherence, grammar, fluency,
consistency, clarity) with plain, analysis-first (cot), and worked-example
variants where a template exists.  Templates ship as data files and are
instantiated byte-exactly: the target text is substituted into the
``<Text></Text>`` slot and nothing else changes.  Scores are integers in
[1, 100], extracted as the last in-range integer of the reply because the
analysis-first variants emit prose before the number.
"""

from __future__ import annotations

import json
import logging
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import requests

logger = logging.getLogger(__name__)

DIMENSIONS = ("readability", "coherence", "grammar", "fluency", "consistency", "clarity")
VARIANTS = ("plain", "cot", "examples")
TEXT_SLOT = "<Text></Text>"

# (dimension, variant) pairs with a shipped template
AVAILABLE_PROMPTS = (
    ("readability", "plain"),
    ("readability", "cot"),
    ("readability", "examples"),
    ("coherence", "plain"),
    ("coherence", "cot"),
    ("coherence", "examples"),
    ("grammar", "plain"),
    ("fluency", "plain"),
    ("consistency", "plain"),
    ("clarity", "plain"),
)


class UnknownPromptError(KeyError):
    """No template ships for this dimension/variant combination."""


class UnparseableScoreError(ValueError):
    """The reply contains no integer in [1, 100]; carries the raw reply."""

    def __init__(self, raw_response: str):
        super().__init__(f"no integer score in [1, 100] found in reply: {raw_response!r}")
        self.raw_response = raw_response


class TransportError(RuntimeError):
    """Chat endpoint unreachable or returned a non-success status."""


@dataclass(frozen=True)
class JudgePrompt:
    dimension: str
    variant: str
    system_text: str
    user_template: str


@dataclass(frozen=True)
class JudgeScore:
    value: int
    raw_response: str
    model_id: str
    dimension: str
    variant: str


@dataclass
class JudgeConfig:
    endpoint_url: str = "http://localhost:8000/v1/chat/completions"
    model_name: str = "judge-model"
    temperature: float = 0.0
    max_retries: int = 3
    timeout: float = 60.0
    max_in_flight: int = 4
    api_key_env: str = "CORPUSMETRICS_API_KEY"
    backoff_base: float = 0.5


def load_prompt(dimension: str, variant: str) -> JudgePrompt:
    """Load a shipped template; unknown combinations are an error."""
    if (dimension, variant) not in AVAILABLE_PROMPTS:
        raise UnknownPromptError(
            f"no template for dimension={dimension!r} variant={variant!r}; "
            f"available: {sorted(AVAILABLE_PROMPTS)}"
        )
    path = resources.files("corpusmetrics") / "data" / "judge" / f"{dimension}_{variant}.json"
    payload = json.loads(path.read_text(encoding="utf-8"))
    template = JudgePrompt(dimension, variant, payload["system"], payload["user"])
    if template.user_template.count(TEXT_SLOT) != 1:
        raise ValueError(f"template {dimension}/{variant} must contain exactly one {TEXT_SLOT} slot")
    return template


def render_prompt(dimension: str, variant: str, text: str) -> tuple[str, str]:
    """Instantiate the template with `text` inside the <Text></Text> slot."""
    if not text:
        raise ValueError("cannot judge empty text")
    prompt = load_prompt(dimension, variant)
    user = prompt.user_template.replace(TEXT_SLOT, f"<Text>{text}</Text>")
    return prompt.system_text, user


_INT_RE = re.compile(r"(?<![\d.])(\d+)(?!\.?\d)")


def parse_score(response: str) -> int:
    """Last integer in [1, 100]; decimals are not scores."""
    last = None
    for m in _INT_RE.finditer(response):
        value = int(m.group(1))
        if 1 <= value <= 100:
            last = value
    if last is None:
        raise UnparseableScoreError(response)
    return last


class HttpChatTransport:
    """One POST /v1/chat/completions round trip per completion."""

    def __init__(self, config: JudgeConfig):
        self.config = config
        self.session = requests.Session()

    def complete(self, system_text: str, user_text: str) -> str:
        import os

        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": system_text},
                {"role": "user", "content": user_text},
            ],
            "temperature": self.config.temperature,
        }
        try:
            resp = self.session.post(
                self.config.endpoint_url,
                json=payload,
                headers=headers,
                timeout=self.config.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"chat request failed: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"chat endpoint returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"malformed chat response: {resp.text[:200]}") from exc


class ScriptedTransport:
    """Replays canned replies in order, cycling; thread-safe.

    Used by the offline --mock mode and the test suite.
    """

    def __init__(self, replies: list[str]):
        if not replies:
            raise ValueError("scripted transport needs at least one reply")
        self.replies = list(replies)
        self._lock = threading.Lock()
        self._next = 0
        self.calls = 0
        self.in_flight = 0
        self.max_in_flight_seen = 0
        self.delay = 0.0

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedTransport":
        """One reply per line; lines starting with '\"' are JSON-decoded."""
        replies = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                replies.append(json.loads(line) if line.startswith('"') else line)
        return cls(replies)

    def complete(self, system_text: str, user_text: str) -> str:
        with self._lock:
            reply = self.replies[self._next % len(self.replies)]
            self._next += 1
            self.calls += 1
            self.in_flight += 1
            self.max_in_flight_seen = max(self.max_in_flight_seen, self.in_flight)
        try:
            if self.delay:
                time.sleep(self.delay)
            if reply.startswith("HTTP "):
                raise TransportError(f"scripted failure: {reply}")
            return reply
        finally:
            with self._lock:
                self.in_flight -= 1


def judge_text(
    text: str,
    dimension: str,
    variant: str,
    config: JudgeConfig,
    transport=None,
) -> JudgeScore:
    """Score one text, retrying transport failures and unparseable replies."""
    system_text, user_text = render_prompt(dimension, variant, text)
    if transport is None:
        transport = HttpChatTransport(config)
    attempts = config.max_retries + 1
    last_error: Exception | None = None
    for attempt in range(attempts):
        if attempt and config.backoff_base:
            time.sleep(config.backoff_base * (2 ** (attempt - 1)))
        try:
            reply = transport.complete(system_text, user_text)
            value = parse_score(reply)
        except (TransportError, UnparseableScoreError) as exc:
            last_error = exc
            logger.debug("judge attempt %d/%d failed: %s", attempt + 1, attempts, exc)
            continue
        return JudgeScore(value, reply, config.model_name, dimension, variant)
    raise last_error


@dataclass
class CorpusJudgeResult:
    scores: dict[str, JudgeScore]
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        import math

        return math.fsum(s.value for s in self.scores.values()) / len(self.scores)


def judge_corpus(
    texts: dict[str, str],
    dimension: str,
    variant: str,
    config: JudgeConfig,
    sample_size: int | None = None,
    seed: int = 0,
    transport=None,
) -> CorpusJudgeResult:
    """Judge a corpus (or a seeded sample of it) with bounded concurrency.

    Failed documents are recorded and excluded from the mean; it is an error
    for every document to fail.
    """
    if not texts:
        raise ValueError("corpus is empty")
    doc_ids = list(texts)
    if sample_size is not None and sample_size < len(doc_ids):
        chosen = set(random.Random(seed).sample(doc_ids, sample_size))
        doc_ids = [d for d in doc_ids if d in chosen]
    if transport is None:
        transport = HttpChatTransport(config)

    def one(doc_id: str):
        try:
            return doc_id, judge_text(texts[doc_id], dimension, variant, config, transport), None
        except (TransportError, UnparseableScoreError, ValueError) as exc:
            return doc_id, None, str(exc)

    with ThreadPoolExecutor(max_workers=max(config.max_in_flight, 1)) as pool:
        outcomes = list(pool.map(one, doc_ids))

    result = CorpusJudgeResult(scores={})
    for doc_id, score, error in outcomes:  # pool.map preserves input order
        if score is not None:
            result.scores[doc_id] = score
        else:
            result.failures[doc_id] = error
    if not result.scores:
        raise RuntimeError(f"all {len(doc_ids)} documents failed to judge")
    if result.failures:
        logger.warning("judging failed for %d/%d documents", len(result.failures), len(doc_ids))
    return result


def write_scores_csv(result: CorpusJudgeResult, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("doc_id,dimension,variant,score,model_id\n")
        for doc_id, s in result.scores.items():
            fh.write(f"{doc_id},{s.dimension},{s.variant},{s.value},{s.model_id}\n")
