"""Per-turn transcript record consumed by judges, and the six indicators."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field


class Indicator(str, enum.Enum):
    FACTUAL_CORRECTNESS = "factual_correctness"
    CONTEXTUAL_RELEVANCE = "contextual_relevance"
    MEMORY_CONSISTENCY = "memory_consistency"
    PERSONALIZATION_ALIGNMENT = "personalization_alignment"
    KNOWLEDGE_GUIDANCE = "knowledge_guidance"
    STRATEGY_FLEXIBILITY = "strategy_flexibility"


# column order of the comparison table
INDICATORS = tuple(Indicator)

DIMENSIONS = {
    "knowledge_precision": (Indicator.FACTUAL_CORRECTNESS, Indicator.CONTEXTUAL_RELEVANCE),
    "cognitive_coherence": (Indicator.MEMORY_CONSISTENCY, Indicator.PERSONALIZATION_ALIGNMENT),
    "pedagogical_strategy": (Indicator.KNOWLEDGE_GUIDANCE, Indicator.STRATEGY_FLEXIBILITY),
}


@dataclass
class TurnTranscript:
    """Everything a judge may look at for one tutoring turn.

    Ground-truth fields (``checklist``, ``truth_facts``, ``student_level``,
    ``strategy_fit``) come from the simulator; the rest is what the tutor did.
    """

    episode: str
    turn: int
    topic: str
    question: str
    checklist: list[str]
    ideal_strategy: str
    action: dict
    response: str = ""
    needs_retrieval: bool = True
    previous_action: dict | None = None
    previous_correct: bool | None = None
    retrieved: list[dict] = field(default_factory=list)
    adopted: list[dict] = field(default_factory=list)
    hits: list[str] = field(default_factory=list)
    grounded_hits: list[str] = field(default_factory=list)
    memory_claims: dict[str, str] = field(default_factory=dict)
    truth_facts: dict[str, str] = field(default_factory=dict)
    archetype: str = ""
    student_level: int = 3
    strategy_fit: float = 0.0
    correct: bool | None = None
    provider_error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TurnTranscript":
        return cls(**d)
