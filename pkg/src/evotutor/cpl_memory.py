"""Short-term dialogue window and confidence-weighted long-term profile.

The short-term window collects raw question/answer pairs.  When it
saturates, :func:`consolidate` asks a feature extractor for candidate
profile features and fuses each one into the profile:

* a matching, consistent candidate *reinforces* the old feature,
  ``w <- w + eta * (1 - w)``
* a matching candidate of opposite polarity *corrects* it,
  ``w <- w - eta * w``; once ``w`` drops under :data:`OMEGA_FLOOR` the
  feature adopts the candidate's value and restarts at :data:`OMEGA_INIT`
* anything else is inserted as a new feature.

All values are immutable; operations return new objects.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .errors import CapacityError, ConfigurationError, ExtractorError, InputError, OrderingError
from .markers import ASSERTS, NEGATES
from .vector_index import NORM_TOL, Embedder, cosine, embed

OMEGA_INIT = 0.5
OMEGA_FLOOR = 0.15


@dataclass(frozen=True)
class QaPair:
    turn_index: int
    question: str
    answer: str
    timestamp: int = 0

    def __post_init__(self):
        if self.turn_index < 0:
            raise InputError("turn_index must be non-negative")


@dataclass(frozen=True)
class ShortTermMemory:
    capacity: int
    window: tuple[QaPair, ...] = ()

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigurationError("window capacity must be positive")
        if len(self.window) > self.capacity:
            raise CapacityError("window longer than its capacity")

    def __len__(self) -> int:
        return len(self.window)

    @property
    def saturated(self) -> bool:
        return len(self.window) >= self.capacity

    def cleared(self) -> "ShortTermMemory":
        return replace(self, window=())


def append_interaction(stm: ShortTermMemory, qa: QaPair) -> tuple[ShortTermMemory, bool]:
    """Append ``qa``; report whether the window just reached capacity.

    A full window must be consolidated (and cleared) before more turns are
    appended, otherwise :class:`CapacityError` is raised.
    """
    if stm.window and qa.turn_index <= stm.window[-1].turn_index:
        raise OrderingError(
            f"turn_index {qa.turn_index} not after {stm.window[-1].turn_index}"
        )
    if stm.saturated:
        raise CapacityError("short-term window is saturated; consolidate first")
    new = replace(stm, window=stm.window + (qa,))
    return new, new.saturated


class Event(str, enum.Enum):
    REINFORCEMENT = "reinforcement"
    CORRECTION = "correction"


def update_confidence(omega_old: float, eta: float, event: Event | str) -> float:
    """Momentum update of a confidence weight."""
    event = Event(event)
    if event is Event.REINFORCEMENT:
        omega = omega_old + eta * (1.0 - omega_old)
    else:
        omega = omega_old - eta * omega_old
    return min(1.0, max(0.0, omega))


@dataclass(frozen=True)
class ProfileFeature:
    key: str
    value: str
    confidence: float
    embedding: np.ndarray = field(compare=False, repr=False)
    polarity: str = ASSERTS
    created_at: int = 0
    last_updated: int = 0
    evidence_count: int = 1

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise InputError(f"confidence {self.confidence} outside [0, 1]")
        if self.polarity not in (ASSERTS, NEGATES):
            raise InputError(f"unknown polarity {self.polarity!r}")
        if abs(float(np.linalg.norm(self.embedding)) - 1.0) > NORM_TOL:
            raise InputError("feature embedding must be unit-norm")

    @classmethod
    def create(
        cls,
        key: str,
        value: str,
        embedder: Embedder,
        polarity: str = ASSERTS,
        now: int = 0,
    ) -> "ProfileFeature":
        """New feature at the initial confidence, embedded from key and value."""
        return cls(
            key=key,
            value=value,
            confidence=OMEGA_INIT,
            embedding=embed(f"{key} {value}", embedder),
            polarity=polarity,
            created_at=now,
            last_updated=now,
        )

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "value": self.value,
            "confidence": self.confidence,
            "polarity": self.polarity,
            "evidence_count": self.evidence_count,
            "created_at": self.created_at,
            "last_updated": self.last_updated,
            "embedding": self.embedding.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProfileFeature":
        return cls(
            key=d["key"],
            value=d["value"],
            confidence=float(d["confidence"]),
            embedding=np.asarray(d["embedding"], dtype=float),
            polarity=d.get("polarity", ASSERTS),
            created_at=int(d["created_at"]),
            last_updated=int(d["last_updated"]),
            evidence_count=int(d["evidence_count"]),
        )


@dataclass(frozen=True)
class Profile:
    student_id: str
    features: dict[str, ProfileFeature] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.features)

    def get(self, key: str) -> ProfileFeature | None:
        return self.features.get(key)

    def with_feature(self, feature: ProfileFeature, replaces: str | None = None) -> "Profile":
        feats = dict(self.features)
        if replaces is not None and replaces != feature.key:
            del feats[replaces]
        feats[feature.key] = feature
        return replace(self, features=feats)


@dataclass(frozen=True)
class ConsolidationConfig:
    learning_rate: float = 0.3
    match_threshold: float = 0.8
    window_size: int = 4

    def __post_init__(self):
        if not 0.0 < self.learning_rate < 1.0:
            raise ConfigurationError("learning_rate must lie in (0, 1)")
        if not 0.0 < self.match_threshold < 1.0:
            raise ConfigurationError("match_threshold must lie in (0, 1)")
        if self.window_size < 1:
            raise ConfigurationError("window_size must be positive")


class FusionOutcome(str, enum.Enum):
    INSERTED = "inserted"
    REINFORCED = "reinforced"
    CORRECTED = "corrected"
    REPLACED = "replaced"  # corrected below the floor; value switched over


def _best_match(
    profile: Profile,
    candidate: ProfileFeature,
    similarity: Callable[[np.ndarray, np.ndarray], float],
) -> tuple[ProfileFeature | None, float]:
    best, best_sim = None, -np.inf
    # sorted keys keep tie resolution independent of insertion history
    for key in sorted(profile.features):
        feat = profile.features[key]
        if feat.embedding.shape != candidate.embedding.shape:
            raise ConfigurationError("profile and candidate embedding dimensions differ")
        sim = similarity(candidate.embedding, feat.embedding)
        if sim > best_sim:
            best, best_sim = feat, sim
    return best, best_sim


def fuse(
    profile: Profile,
    candidate: ProfileFeature,
    cfg: ConsolidationConfig,
    similarity: Callable[[np.ndarray, np.ndarray], float] = cosine,
) -> tuple[Profile, FusionOutcome]:
    """Fuse one candidate feature into ``profile``.

    An existing feature with the candidate's exact key always matches (this
    keeps keys unique whatever the embedder); otherwise the most similar
    feature matches when its similarity exceeds the match threshold.
    """
    old = profile.get(candidate.key)
    if old is not None:
        if old.embedding.shape != candidate.embedding.shape:
            raise ConfigurationError("profile and candidate embedding dimensions differ")
    else:
        old, sim = _best_match(profile, candidate, similarity)
        if old is None or sim <= cfg.match_threshold:
            inserted = replace(candidate, confidence=OMEGA_INIT, evidence_count=max(1, candidate.evidence_count))
            return profile.with_feature(inserted), FusionOutcome.INSERTED

    now = candidate.last_updated
    if candidate.polarity == old.polarity:
        updated = replace(
            old,
            value=candidate.value,
            embedding=candidate.embedding,
            confidence=update_confidence(old.confidence, cfg.learning_rate, Event.REINFORCEMENT),
            evidence_count=old.evidence_count + 1,
            last_updated=now,
        )
        return profile.with_feature(updated), FusionOutcome.REINFORCED

    omega = update_confidence(old.confidence, cfg.learning_rate, Event.CORRECTION)
    if omega < OMEGA_FLOOR:
        updated = replace(
            old,
            value=candidate.value,
            polarity=candidate.polarity,
            embedding=candidate.embedding,
            confidence=OMEGA_INIT,
            evidence_count=old.evidence_count + 1,
            last_updated=now,
        )
        return profile.with_feature(updated), FusionOutcome.REPLACED
    updated = replace(old, confidence=omega, evidence_count=old.evidence_count + 1, last_updated=now)
    return profile.with_feature(updated), FusionOutcome.CORRECTED


class FeatureExtractor(Protocol):
    """Port turning a dialogue window into candidate profile features."""

    def extract_features(self, history: ShortTermMemory, now: int) -> list[ProfileFeature]: ...


@dataclass
class ConsolidationResult:
    profile: Profile
    stm: ShortTermMemory
    outcomes: list[tuple[str, FusionOutcome]]
    error: str | None = None


def consolidate(
    profile: Profile,
    stm: ShortTermMemory,
    extractor: FeatureExtractor,
    cfg: ConsolidationConfig,
    now: int | None = None,
    similarity: Callable[[np.ndarray, np.ndarray], float] = cosine,
) -> ConsolidationResult:
    """Fuse everything the extractor finds in ``stm``, then clear the window.

    If the extractor fails the profile is returned unchanged with the
    window intact and the error recorded, so no evidence is lost.
    """
    if now is None:
        now = stm.window[-1].timestamp if stm.window else 0
    try:
        candidates = extractor.extract_features(stm, now)
    except ExtractorError as exc:
        return ConsolidationResult(profile, stm, [], error=str(exc))
    outcomes = []
    for cand in candidates:
        profile, outcome = fuse(profile, cand, cfg, similarity)
        outcomes.append((cand.key, outcome))
    return ConsolidationResult(profile, stm.cleared(), outcomes)


def query_profile(
    profile: Profile, min_confidence: float = 0.0, key_filter: str | None = None
) -> list[ProfileFeature]:
    """Features with confidence >= ``min_confidence`` whose key matches ``key_filter``.

    Sorted by confidence descending, then most recently updated, then key.
    ``key_filter`` is a regular expression searched within the key.
    """
    if not 0.0 <= min_confidence <= 1.0:
        raise InputError("min_confidence must lie in [0, 1]")
    pattern = re.compile(key_filter) if key_filter else None
    feats = [
        f for f in profile.features.values()
        if f.confidence >= min_confidence and (pattern is None or pattern.search(f.key))
    ]
    return sorted(feats, key=lambda f: (-f.confidence, -f.last_updated, f.key))


# -- persistence -------------------------------------------------------------

def _canon(obj):
    if isinstance(obj, float):
        return float(f"{obj:.9g}")
    if isinstance(obj, dict):
        return {k: _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    return obj


def canonical_json(obj) -> str:
    """JSON with sorted keys and floats limited to 9 significant digits."""
    return json.dumps(_canon(obj), sort_keys=True, separators=(",", ":"))


def dumps_profile(profile: Profile) -> str:
    lines = [canonical_json(profile.features[k].to_dict()) for k in sorted(profile.features)]
    return "".join(line + "\n" for line in lines)


def save_profile(profile: Profile, path: str | Path) -> None:
    """One JSON object per feature; the file name identifies the student."""
    Path(path).write_text(dumps_profile(profile), encoding="utf-8")


def load_profile(path: str | Path, student_id: str | None = None) -> Profile:
    path = Path(path)
    feats = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            f = ProfileFeature.from_dict(json.loads(line))
            feats[f.key] = f
    return Profile(student_id or path.stem, feats)


def profile_view_dicts(features: Sequence[ProfileFeature]) -> list[dict]:
    """Compact, embedding-free rendering used in logs and state digests."""
    return [
        {"key": f.key, "value": f.value, "polarity": f.polarity, "confidence": round(f.confidence, 9)}
        for f in features
    ]


def features_from(claims: Iterable, embedder: Embedder, now: int) -> list[ProfileFeature]:
    """Build candidate features from objects with key/value/polarity."""
    return [ProfileFeature.create(c.key, c.value, embedder, c.polarity, now) for c in claims]
