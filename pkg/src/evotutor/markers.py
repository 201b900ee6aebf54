"""Inline markers shared by the simulator templates, mock providers and judges.

Simulated replies and corpus texts carry bracketed tags so that mock
components can recover ground truth with plain pattern matching:

* ``[kp:aliasing.2]``  key point 2 of topic "aliasing" (corpus text)
* ``[probe:aliasing.trap]``  a diagnostic probe of a misconception
* ``[topic=aliasing] [correct]`` / ``[incorrect]``  reply header
* ``[trap=aliasing.trap]``  reply exhibits a misconception
* ``[resolved=aliasing.trap]``  misconception cleared this turn
* ``[pref=intuition]``  stated learning preference
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

ASSERTS = "asserts"
NEGATES = "negates"

_KP_RE = re.compile(r"\[(?:kp|probe):([\w.\-]+)\]")
_TOPIC_RE = re.compile(r"\[topic=([\w\-]+)\]")
_TRAP_RE = re.compile(r"\[trap=([\w.\-]+)\]")
_RESOLVED_RE = re.compile(r"\[resolved=([\w.\-]+)\]")
_PREF_RE = re.compile(r"\[pref=([\w\-]+)\]")


def kp_marker(point_id: str) -> str:
    return f"[kp:{point_id}]"


def probe_marker(point_id: str) -> str:
    return f"[probe:{point_id}]"


def trap_id(topic: str) -> str:
    return f"{topic}.trap"


def find_key_points(text: str) -> list[str]:
    """Key-point and probe ids mentioned in ``text``, in first-seen order."""
    return list(dict.fromkeys(_KP_RE.findall(text)))


def mastery_key(topic: str) -> str:
    return f"mastery: {topic}"


def misconception_key(point_id: str) -> str:
    return f"misconception: {point_id}"


def preference_key(pref: str) -> str:
    return f"preference: {pref}"


@dataclass(frozen=True)
class ReplyMarkers:
    topic: str | None
    correct: bool | None
    traps: tuple[str, ...] = ()
    resolved: tuple[str, ...] = ()
    prefs: tuple[str, ...] = ()


def parse_reply(text: str) -> ReplyMarkers:
    topic = _TOPIC_RE.search(text)
    if "[correct]" in text:
        correct: bool | None = True
    elif "[incorrect]" in text:
        correct = False
    else:
        correct = None
    return ReplyMarkers(
        topic=topic.group(1) if topic else None,
        correct=correct,
        traps=tuple(_TRAP_RE.findall(text)),
        resolved=tuple(_RESOLVED_RE.findall(text)),
        prefs=tuple(_PREF_RE.findall(text)),
    )


@dataclass
class EvidenceClaim:
    key: str
    value: str
    polarity: str


@dataclass
class _TopicTally:
    correct: int = 0
    incorrect: int = 0


def evidence_claims(replies: Iterable[str]) -> list[EvidenceClaim]:
    """Structured claims supported by a run of student replies.

    Mastery per topic follows the majority of correct/incorrect markers (ties
    yield nothing).  A trap marker asserts a misconception; a later resolved
    marker for the same id negates it.  Preference markers assert the
    preference.  Claims come out grouped (mastery, misconception, preference),
    each group in first-seen order.
    """
    tallies: dict[str, _TopicTally] = {}
    misconceptions: dict[str, str] = {}
    prefs: dict[str, None] = {}
    for text in replies:
        m = parse_reply(text)
        if m.topic is not None and m.correct is not None:
            t = tallies.setdefault(m.topic, _TopicTally())
            if m.correct:
                t.correct += 1
            else:
                t.incorrect += 1
        for tid in m.traps:
            misconceptions[tid] = ASSERTS
        for tid in m.resolved:
            misconceptions[tid] = NEGATES
        for p in m.prefs:
            prefs.setdefault(p, None)

    claims: list[EvidenceClaim] = []
    for topic, t in tallies.items():
        if t.correct > t.incorrect:
            claims.append(EvidenceClaim(mastery_key(topic), "solid", ASSERTS))
        elif t.incorrect > t.correct:
            claims.append(EvidenceClaim(mastery_key(topic), "weak", NEGATES))
    for tid, pol in misconceptions.items():
        value = f"holds {tid}" if pol == ASSERTS else f"cleared {tid}"
        claims.append(EvidenceClaim(misconception_key(tid), value, pol))
    for p in prefs:
        claims.append(EvidenceClaim(preference_key(p), f"prefers {p}", ASSERTS))
    return claims

