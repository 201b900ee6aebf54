"""Ports for model-backed capabilities, deterministic mocks, and a remote adapter.

Four ports sit behind the engine wherever a language model would:

* feature extraction (dialogue window -> candidate profile features)
* summarisation (chunk text -> abstract)
* tutoring responses (task + chunks + profile + action -> text)
* judging (turn transcript + indicator -> score in [1, 10], or abstain)

The mocks are pure functions of their inputs.  The remote adapter speaks a
chat-completions style JSON protocol and expects the structured part of
each reply inside a fenced block.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Protocol, Sequence

import requests

from .cpl_memory import ProfileFeature, ShortTermMemory, features_from
from .errors import ConfigurationError, ExtractorError, ProviderError
from .lifecycle import Summarizer
from .markers import ASSERTS, NEGATES, evidence_claims, kp_marker, probe_marker, trap_id
from .transcript import Indicator, TurnTranscript
from .vector_index import Embedder, HashingEmbedder

if TYPE_CHECKING:
    from .knowledge_store import KnowledgeChunk

log = logging.getLogger(__name__)

_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


def first_sentence(text: str) -> str:
    return _SENTENCE_END.split(text.strip(), maxsplit=1)[0]


# -- ports -------------------------------------------------------------------

class Responder(Protocol):
    def respond(self, task, chunks: Sequence["KnowledgeChunk"], profile_view: Sequence[ProfileFeature],
                action, context: Sequence[str] | None = None) -> str: ...


class Judge(Protocol):
    judge_id: str

    def judge(self, transcript: TurnTranscript, indicator: Indicator) -> float | None: ...


# -- mocks -------------------------------------------------------------------

class MockExtractor:
    """Rule-based extraction over simulator reply markers.

    Majority correct/incorrect markers per topic give a mastery feature
    (asserts "solid" / negates "weak"); trap and resolved markers give
    misconception features; preference markers give preference features.
    """

    def __init__(self, embedder: Embedder):
        self.embedder = embedder

    def extract_features(self, history: ShortTermMemory, now: int) -> list[ProfileFeature]:
        claims = evidence_claims(qa.answer for qa in history.window)
        return features_from(claims, self.embedder, now)


class MockSummarizer:
    """First sentence plus an ``[abstract:<source>]`` tag."""

    def summarize(self, text: str, source: str = "other") -> str:
        return f"{first_sentence(text)} [abstract:{source}]"


_ROLE_OPENERS = {
    "explanation": "Let me explain {topic}.",
    "diagnosis": "Let me check how you think about {topic}. {probe}",
    "question_generation": "Here is a question on {topic}: what changes if the signal doubles in length?",
    "knowledge_reconstruction": "Let us rebuild {topic} from the basics, one step at a time.",
}

_STRATEGY_LINES = {
    "direct_instruction": "Directly: the key facts follow.",
    "hinting": "Hint: look at what the definition forces before computing anything.",
    "socratic_questioning": "What would you expect to happen, and why?",
    "analogical_demonstration": "Think of it like a strobe light freezing a spinning wheel.",
    "diagnostic_test": "Quick test: which of the two statements below is false?",
}


class MockResponder:
    """Templated experts, one per agent role.

    The response is the role opener, a strategy line, a difficulty note,
    the full text of each adopted chunk, the ids of the other retrieved
    chunks, and up to three profile notes.  Its length grows with the number
    of retrieved chunks, so retrieval width has a cost.
    """

    def respond(self, task, chunks, profile_view, action, context=None, others: Sequence[str] = ()) -> str:
        role = _enum_value(action.role)
        strategy = _enum_value(action.strategy)
        parts = [
            _ROLE_OPENERS[role].format(topic=task.topic, probe=probe_marker(trap_id(task.topic))),
            _STRATEGY_LINES[strategy],
            f"(difficulty {action.difficulty}/5)",
        ]
        if chunks:
            parts += [c.text for c in chunks if c.text]
        else:
            parts.append(f"In general terms, {task.topic} is part of signal processing.")
        if others:
            parts.append("See also: " + ", ".join(others) + ".")
        notes = [f"{f.key} ({f.value})" for f in list(profile_view)[:3]]
        if notes:
            parts.append("Noted: " + "; ".join(notes) + ".")
        if context:
            parts.append("Earlier: " + context[-1])
        return " ".join(parts)


def _enum_value(x) -> str:
    return x.value if isinstance(x, enum.Enum) else str(x)


def _clamp_score(x: float) -> float:
    return min(10.0, max(1.0, x))


def rubric_score(t: TurnTranscript, indicator: Indicator) -> float:
    """Deterministic rubric scores in [1, 10] from a turn's logged ground truth."""
    if indicator is Indicator.FACTUAL_CORRECTNESS:
        points = [c for c in t.checklist if not c.endswith(".trap")]
        if not points:
            return 10.0
        grounded = len(set(t.grounded_hits) & set(points)) / len(points)
        return _clamp_score(1.0 + 9.0 * grounded)
    if indicator is Indicator.CONTEXTUAL_RELEVANCE:
        if not t.adopted:
            return 1.0 if t.needs_retrieval else 10.0
        rate = sum(a.get("topic") == t.topic for a in t.adopted) / len(t.adopted)
        return _clamp_score(10.0 * rate)
    if indicator is Indicator.MEMORY_CONSISTENCY:
        if not t.truth_facts:
            return 10.0
        agree = sum(t.memory_claims.get(k) == v for k, v in t.truth_facts.items())
        return _clamp_score(10.0 * agree / len(t.truth_facts))
    if indicator is Indicator.PERSONALIZATION_ALIGNMENT:
        gap = abs(int(t.action["difficulty"]) - t.student_level)
        difficulty_fit = max(0.0, 1.0 - gap / 2.0)
        return _clamp_score(1.0 + 9.0 * 0.5 * (difficulty_fit + t.strategy_fit))
    if indicator is Indicator.KNOWLEDGE_GUIDANCE:
        if not t.checklist:
            return 10.0
        cov = len(set(t.hits) & set(t.checklist)) / len(t.checklist)
        return _clamp_score(1.0 + 9.0 * cov)
    if indicator is Indicator.STRATEGY_FLEXIBILITY:
        prev = t.previous_action
        if t.previous_correct is False and prev is not None:
            switched = prev["strategy"] != t.action["strategy"] or prev["role"] != t.action["role"]
            return 10.0 if switched else 1.0
        return 10.0 if t.action["strategy"] == t.ideal_strategy else 1.0
    raise ValueError(f"unknown indicator {indicator!r}")


@dataclass(frozen=True)
class MockJudge:
    """Rubric judge with a fixed leniency offset (clamped to [1, 10])."""

    judge_id: str = "mock-neutral"
    bias: float = 0.0

    def judge(self, transcript: TurnTranscript, indicator: Indicator) -> float | None:
        return _clamp_score(rubric_score(transcript, Indicator(indicator)) + self.bias)


def mock_judges() -> list[MockJudge]:
    return [MockJudge("mock-strict", -0.3), MockJudge("mock-neutral", 0.0), MockJudge("mock-lenient", 0.3)]


# -- remote adapter ----------------------------------------------------------

class ProviderKind(str, enum.Enum):
    MOCK = "mock"
    REMOTE_CHAT = "remote_chat"


@dataclass
class ProviderConfig:
    kind: ProviderKind = ProviderKind.MOCK
    endpoint: str | None = None
    model: str = "mock"
    api_key_env: str = "EVOTUTOR_API_KEY"
    timeout: float = 30.0
    max_retries: int = 3
    backoff: float = 0.5
    transcript_path: str | None = None

    def __post_init__(self):
        self.kind = ProviderKind(self.kind)
        if self.kind is ProviderKind.REMOTE_CHAT and not self.endpoint:
            raise ConfigurationError("remote_chat providers need an endpoint")
        if self.timeout <= 0 or self.max_retries < 0:
            raise ConfigurationError("timeout must be positive and max_retries non-negative")

    def api_key(self) -> str:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise ConfigurationError(f"environment variable {self.api_key_env} is not set")
        return key

    @classmethod
    def from_dict(cls, d: dict) -> "ProviderConfig":
        return cls(**d)


_FENCE_RE = re.compile(r"```(?:json)?\s*\n?(.*?)```", re.DOTALL)


def parse_fenced_json(content: str):
    """Decode the first fenced block of ``content`` (or the whole text)."""
    m = _FENCE_RE.search(content)
    body = m.group(1) if m else content
    try:
        return json.loads(body)
    except json.JSONDecodeError as exc:
        raise ProviderError(f"reply is not valid JSON: {exc}") from exc


class RemoteChatClient:
    """Minimal chat-completions client with timeout and exponential backoff."""

    RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}

    def __init__(self, config: ProviderConfig, session: requests.Session | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        if config.kind is not ProviderKind.REMOTE_CHAT:
            raise ConfigurationError("RemoteChatClient needs a remote_chat config")
        self.config = config
        self._key = config.api_key()
        self.session = session or requests.Session()
        self.sleep = sleep

    def _audit(self, messages: list[dict], reply: str | None, error: str | None) -> None:
        if not self.config.transcript_path:
            return
        rec = {"model": self.config.model, "messages": messages, "reply": reply, "error": error}
        with open(self.config.transcript_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def complete(self, messages: list[dict]) -> str:
        payload = {"model": self.config.model, "messages": messages, "temperature": 0}
        headers = {"Authorization": f"Bearer {self._key}", "Content-Type": "application/json"}
        last_error = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self.sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                resp = self.session.post(
                    self.config.endpoint, json=payload, headers=headers, timeout=self.config.timeout
                )
            except requests.RequestException as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code in self.RETRY_STATUS:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                last_error = f"HTTP {resp.status_code}"
                break
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                last_error = f"malformed response: {exc!r}"
                break
            self._audit(messages, content, None)
            return content
        self._audit(messages, None, last_error)
        raise ProviderError(f"chat completion failed after {attempt + 1} attempt(s): {last_error}")

    def ask_json(self, system: str, user: str):
        content = self.complete([
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ])
        return parse_fenced_json(content)


_EXTRACT_PROMPT = (
    "You maintain a structured student profile. From the dialogue, list stable features "
    "(knowledge mastery, misconceptions, preferences). Reply with a ```json``` block holding a "
    'list of objects {"key": str, "value": str, "polarity": "asserts"|"negates"}.'
)
_SUMMARY_PROMPT = (
    "Condense the passage into one short abstract that keeps its index terms. "
    'Reply with a ```json``` block {"abstract": str}.'
)
_RESPOND_PROMPT = (
    "You are the {role} agent of a tutoring team. Use the {strategy} strategy at difficulty "
    '{difficulty}/5. Reply with a ```json``` block {{"response": str}}.'
)
_JUDGE_PROMPT = (
    "Score the tutor turn on '{indicator}' from 1 to 10 given the ground-truth checklist and "
    'student state. Reply with a ```json``` block {{"score": number}}.'
)


class RemoteExtractor:
    def __init__(self, client: RemoteChatClient, embedder: Embedder):
        self.client = client
        self.embedder = embedder

    def extract_features(self, history: ShortTermMemory, now: int) -> list[ProfileFeature]:
        dialogue = "\n".join(f"Q{qa.turn_index}: {qa.question}\nA{qa.turn_index}: {qa.answer}"
                             for qa in history.window)
        try:
            rows = self.client.ask_json(_EXTRACT_PROMPT, dialogue)
            claims = [_Claim(r["key"], r["value"], r.get("polarity", ASSERTS)) for r in rows]
            if any(c.polarity not in (ASSERTS, NEGATES) for c in claims):
                raise ProviderError("unknown polarity in extractor reply")
        except (ProviderError, KeyError, TypeError) as exc:
            raise ExtractorError(str(exc)) from exc
        return features_from(claims, self.embedder, now)


@dataclass
class _Claim:
    key: str
    value: str
    polarity: str


class RemoteSummarizer:
    def __init__(self, client: RemoteChatClient):
        self.client = client

    def summarize(self, text: str, source: str = "other") -> str:
        reply = self.client.ask_json(_SUMMARY_PROMPT, f"[{source}]\n{text}")
        try:
            return str(reply["abstract"])
        except (KeyError, TypeError) as exc:
            raise ProviderError("summary reply lacks 'abstract'") from exc


class RemoteResponder:
    def __init__(self, client: RemoteChatClient):
        self.client = client

    def respond(self, task, chunks, profile_view, action, context=None, others=()) -> str:
        system = _RESPOND_PROMPT.format(role=_enum_value(action.role),
                                        strategy=_enum_value(action.strategy),
                                        difficulty=action.difficulty)
        notes = "\n".join(f"- {f.key}: {f.value} (confidence {f.confidence:.2f})" for f in profile_view)
        material = "\n---\n".join(c.text for c in chunks if c.text)
        user = f"Question: {task.question}\nStudent profile:\n{notes}\nMaterial:\n{material}"
        if context:
            user += "\nRecent turns:\n" + "\n".join(context)
        reply = self.client.ask_json(system, user)
        try:
            return str(reply["response"])
        except (KeyError, TypeError) as exc:
            raise ProviderError("responder reply lacks 'response'") from exc


class RemoteJudge:
    """Judge backed by a remote model; abstains (returns None) on any failure."""

    def __init__(self, client: RemoteChatClient, judge_id: str | None = None):
        self.client = client
        self.judge_id = judge_id or client.config.model

    def judge(self, transcript: TurnTranscript, indicator: Indicator) -> float | None:
        indicator = Indicator(indicator)
        try:
            reply = self.client.ask_json(
                _JUDGE_PROMPT.format(indicator=indicator.value),
                json.dumps(transcript.to_dict(), sort_keys=True),
            )
            return _clamp_score(float(reply["score"]))
        except (ProviderError, KeyError, TypeError, ValueError) as exc:
            log.warning("judge %s abstained on %s: %s", self.judge_id, indicator.value, exc)
            return None


# -- bundles -----------------------------------------------------------------

@dataclass
class Providers:
    embedder: Embedder
    extractor: object
    summarizer: Summarizer
    responder: Responder
    judges: list = field(default_factory=list)


def mock_providers(embedder: Embedder | None = None) -> Providers:
    embedder = embedder or HashingEmbedder()
    return Providers(embedder, MockExtractor(embedder), MockSummarizer(), MockResponder(), mock_judges())


def build_providers(config: ProviderConfig, embedder: Embedder | None = None,
                    judge_configs: Sequence[ProviderConfig] = ()) -> Providers:
    """Providers for ``config``; remote judges come from ``judge_configs``."""
    embedder = embedder or HashingEmbedder()
    if config.kind is ProviderKind.MOCK:
        p = mock_providers(embedder)
    else:
        client = RemoteChatClient(config)
        p = Providers(embedder, RemoteExtractor(client, embedder), RemoteSummarizer(client),
                      RemoteResponder(client), [])
    if judge_configs:
        p.judges = [RemoteJudge(RemoteChatClient(jc)) if jc.kind is ProviderKind.REMOTE_CHAT
                    else MockJudge() for jc in judge_configs]
    elif not p.judges:
        p.judges = mock_judges()
    return p


def load_provider_config(path: str | Path) -> ProviderConfig:
    return ProviderConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
