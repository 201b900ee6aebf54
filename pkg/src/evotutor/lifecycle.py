"""Evolution pass over a knowledge store: keep, compress, or forget."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Protocol

from .errors import CompressionRejected, ProviderError
from .knowledge_store import ChunkState, KnowledgeStore, LifecycleThresholds, ValueWeights
from .vector_index import Embedder, embed

log = logging.getLogger(__name__)


class Summarizer(Protocol):
    def summarize(self, text: str, source: str = "other") -> str: ...


def partition(
    scores: Mapping[str, float], thresholds: LifecycleThresholds
) -> tuple[list[str], list[str], list[str]]:
    """Split ids into (active, solidified, deleted) by value score.

    ``V >= solid`` is active, ``forget <= V < solid`` is solidified and
    ``V < forget`` is deleted.  Each list keeps the input order.
    """
    act, sol, dele = [], [], []
    for cid, v in scores.items():
        if v >= thresholds.solid:
            act.append(cid)
        elif v >= thresholds.forget:
            sol.append(cid)
        else:
            dele.append(cid)
    return act, sol, dele


def compress(store: KnowledgeStore, chunk_id: str, summarizer: Summarizer, embedder: Embedder) -> bool:
    """Replace a chunk's text by its abstract and mark it Solidified.

    Returns False (no change) for chunks that are already abstracts.  Raises
    :class:`CompressionRejected` if the summary is not strictly shorter.
    """
    chunk = store.get(chunk_id)
    if chunk.state is ChunkState.SOLIDIFIED or chunk.is_abstract:
        return False
    abstract = summarizer.summarize(chunk.text, chunk.source)
    if not abstract or len(abstract) >= len(chunk.text):
        raise CompressionRejected(
            f"summary of {chunk_id} has {len(abstract or '')} chars, input {len(chunk.text)}"
        )
    store.set_text(chunk_id, abstract, embed(abstract, embedder), ChunkState.SOLIDIFIED)
    return True


@dataclass
class EvolutionReport:
    timestamp: int
    scored: int
    activated: list[str]
    solidified: list[str]
    deleted: list[str]
    bytes_before: int
    bytes_after: int
    transitions: list[tuple[str, str, str]] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)
    scores: dict[str, float] = field(default_factory=dict)

    @property
    def changed(self) -> int:
        return len(self.transitions)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transitions"] = [list(t) for t in self.transitions]
        d["failures"] = [list(t) for t in self.failures]
        return d

    def summary(self) -> str:
        return (
            f"t={self.timestamp} scored={self.scored} active={len(self.activated)} "
            f"solidified={len(self.solidified)} deleted={len(self.deleted)} "
            f"chars {self.bytes_before}->{self.bytes_after} changes={self.changed} "
            f"failures={len(self.failures)}"
        )


def evolve(
    store: KnowledgeStore,
    weights: ValueWeights,
    thresholds: LifecycleThresholds,
    summarizer: Summarizer,
    embedder: Embedder,
    now: int,
) -> tuple[KnowledgeStore, EvolutionReport]:
    """Score every live chunk at ``now`` and apply the three-way partition in place.

    All scores are taken before any transition.  A repeated pass at the same
    tick with no access or ingestion in between re-reports the previous
    partition and changes nothing: the pass is a function of the access
    history up to ``now``, and compression is not an access event.
    """
    before = store.storage_chars()
    if store.last_evolution == (now, store.version) and store.last_partition is not None:
        p = store.last_partition
        report = EvolutionReport(
            now, sum(len(v) for v in p.values()), list(p["active"]), list(p["solidified"]),
            list(p["deleted"]), before, before,
        )
        return store, report

    scores = store.value_scores(now, weights)
    act, sol, dele = partition(scores, thresholds)
    report = EvolutionReport(now, len(scores), act, sol, dele, before, before, scores=dict(scores))

    for cid in act:
        chunk = store.get(cid)
        if chunk.state is not ChunkState.ACTIVE:
            store.set_state(cid, ChunkState.ACTIVE)
            report.transitions.append((cid, ChunkState.SOLIDIFIED.value, ChunkState.ACTIVE.value))
    for cid in sol:
        chunk = store.get(cid)
        if chunk.state is ChunkState.SOLIDIFIED:
            continue
        if chunk.is_abstract:
            # promoted abstract falling back into the band: relabel only
            store.set_state(cid, ChunkState.SOLIDIFIED)
            report.transitions.append((cid, ChunkState.ACTIVE.value, ChunkState.SOLIDIFIED.value))
            continue
        try:
            compress(store, cid, summarizer, embedder)
        except (CompressionRejected, ProviderError) as exc:
            log.warning("compression of %s failed: %s", cid, exc)
            report.failures.append((cid, str(exc)))
            continue
        report.transitions.append((cid, ChunkState.ACTIVE.value, ChunkState.SOLIDIFIED.value))
    for cid in dele:
        prior = store.get(cid).state.value
        store.tombstone(cid, now)
        report.transitions.append((cid, prior, ChunkState.DELETED.value))

    report.bytes_after = store.storage_chars()
    store.last_evolution = (now, store.version)
    store.last_partition = {"active": act, "solidified": sol, "deleted": dele}
    return store, report


def append_report(report: EvolutionReport, path: str | Path) -> None:
    """Append one report as a JSON line to an audit log."""
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")
