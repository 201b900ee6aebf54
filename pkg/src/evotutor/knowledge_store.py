"""Knowledge chunks, their spatiotemporal value score, and retrieval.

The value of a live chunk at tick ``now`` is::

    V = alpha * f / max_f  +  beta * exp(-(now - last_access) / tau_decay)  +  gamma * D

where ``f`` counts adopted retrievals and ``D`` is the mean cosine to the
chunk's ``k_density`` nearest live neighbours.  ``V`` is clamped to [0, 1].
"""

from __future__ import annotations

import copy
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ChunkLookupError, ConfigurationError, InputError, OrderingError
from .vector_index import Embedder, VectorIndex, embed

DEFAULT_CHUNK_SIZE = 512


class ChunkState(str, enum.Enum):
    ACTIVE = "active"
    SOLIDIFIED = "solidified"
    DELETED = "deleted"


class Scope(str, enum.Enum):
    ACTIVE_ONLY = "active_only"
    ACTIVE_PLUS_SOLIDIFIED = "active_plus_solidified"


@dataclass
class KnowledgeChunk:
    id: str
    text: str | None
    embedding: np.ndarray | None = field(repr=False)
    source: str = "other"
    topic: str | None = None
    access_count: int = 0
    last_access: int = 0
    state: ChunkState = ChunkState.ACTIVE
    original_length: int = 0
    deleted_at: int | None = None

    @property
    def is_abstract(self) -> bool:
        return self.state is ChunkState.SOLIDIFIED or (
            self.text is not None and len(self.text) < self.original_length
        )

    @property
    def live(self) -> bool:
        return self.state is not ChunkState.DELETED

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "abstract": self.is_abstract if self.live else None,
            "source": self.source,
            "topic": self.topic,
            "access_count": self.access_count,
            "last_access": self.last_access,
            "state": self.state.value,
            "original_length": self.original_length,
            "deleted_at": self.deleted_at,
            "embedding": None if self.embedding is None else self.embedding.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KnowledgeChunk":
        emb = d.get("embedding")
        return cls(
            id=d["id"],
            text=d.get("text"),
            embedding=None if emb is None else np.asarray(emb, dtype=float),
            source=d.get("source", "other"),
            topic=d.get("topic"),
            access_count=int(d.get("access_count", 0)),
            last_access=int(d.get("last_access", 0)),
            state=ChunkState(d["state"]),
            original_length=int(d.get("original_length", 0)),
            deleted_at=d.get("deleted_at"),
        )


@dataclass
class ValueWeights:
    """Weights of the value score; alpha/beta/gamma are renormalised to sum 1."""

    alpha: float = 0.5
    beta: float = 0.3
    gamma: float = 0.2
    tau_decay: float = 50.0
    k_density: int = 3

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigurationError("value weights must be non-negative")
        total = self.alpha + self.beta + self.gamma
        if total <= 0:
            raise ConfigurationError("value weights must not all be zero")
        self.alpha, self.beta, self.gamma = self.alpha / total, self.beta / total, self.gamma / total
        if self.tau_decay <= 0:
            raise ConfigurationError("tau_decay must be positive")
        if self.k_density < 1:
            raise ConfigurationError("k_density must be positive")


@dataclass(frozen=True)
class LifecycleThresholds:
    solid: float = 0.7
    forget: float = 0.3

    def __post_init__(self):
        if not (0.0 <= self.forget < self.solid <= 1.0):
            raise ConfigurationError("thresholds need 0 <= forget < solid <= 1")


@dataclass(frozen=True)
class Document:
    text: str
    source: str = "other"
    topic: str | None = None


@dataclass(frozen=True)
class ChunkerConfig:
    size: int = DEFAULT_CHUNK_SIZE
    stride: int | None = None

    def __post_init__(self):
        if self.size < 1 or (self.stride is not None and self.stride < 1):
            raise ConfigurationError("chunk size and stride must be positive")

    def split(self, text: str) -> list[str]:
        step = self.stride or self.size
        pieces = []
        for start in range(0, len(text), step):
            piece = text[start:start + self.size]
            if piece.strip():
                pieces.append(piece)
            if start + self.size >= len(text):
                break
        return pieces


@dataclass(frozen=True)
class RetrievalHit:
    chunk_id: str
    similarity: float
    is_abstract: bool


def frequency_term(f: int, max_f: int) -> float:
    return f / max_f if max_f > 0 else 0.0


class KnowledgeStore:
    """Mutable chunk store with an exact vector index over live chunks.

    Mutations (``record_access``, ``ingest``, lifecycle transitions) are not
    synchronised; callers running sessions in parallel give each one its own
    :meth:`copy`.
    """

    def __init__(self, dimension: int, embedder_id: str = "unknown", chunk_size: int = DEFAULT_CHUNK_SIZE):
        self.dimension = dimension
        self.embedder_id = embedder_id
        self.chunk_size = chunk_size
        self.chunks: dict[str, KnowledgeChunk] = {}
        self.index = VectorIndex(dimension)
        self.warnings: list[str] = []
        self.version = 0
        self._next = 0
        # (tick, version) of the last evolution pass and its partition
        self.last_evolution: tuple[int, int] | None = None
        self.last_partition: dict[str, list[str]] | None = None

    @classmethod
    def for_embedder(cls, embedder: Embedder, chunk_size: int = DEFAULT_CHUNK_SIZE) -> "KnowledgeStore":
        return cls(embedder.dimension, embedder.embedder_id, chunk_size)

    def __len__(self) -> int:
        return len(self.chunks)

    def copy(self) -> "KnowledgeStore":
        return copy.deepcopy(self)

    # -- basic access --------------------------------------------------------

    def _new_id(self) -> str:
        cid = f"c{self._next:06d}"
        self._next += 1
        return cid

    def add_chunk(
        self,
        text: str,
        embedding: np.ndarray,
        source: str = "other",
        topic: str | None = None,
        now: int = 0,
        chunk_id: str | None = None,
        access_count: int = 0,
    ) -> KnowledgeChunk:
        cid = chunk_id or self._new_id()
        if cid in self.chunks:
            raise InputError(f"duplicate chunk id {cid!r}")
        embedding = np.asarray(embedding, dtype=float)
        if embedding.shape != (self.dimension,):
            raise ConfigurationError("chunk embedding dimension does not match the store")
        chunk = KnowledgeChunk(
            id=cid, text=text, embedding=embedding, source=source, topic=topic,
            access_count=access_count, last_access=now, original_length=len(text),
        )
        self.chunks[cid] = chunk
        self.index.add(cid, embedding)
        self.version += 1
        return chunk

    def get(self, chunk_id: str) -> KnowledgeChunk:
        try:
            return self.chunks[chunk_id]
        except KeyError:
            raise ChunkLookupError(chunk_id) from None

    def live_chunks(self) -> list[KnowledgeChunk]:
        return [c for c in self.chunks.values() if c.live]

    def active_chunks(self) -> list[KnowledgeChunk]:
        return [c for c in self.chunks.values() if c.state is ChunkState.ACTIVE]

    def storage_chars(self) -> int:
        return sum(len(c.text) for c in self.chunks.values() if c.live and c.text)

    def record_access(self, chunk_id: str, now: int) -> KnowledgeChunk:
        """Count one adopted retrieval of ``chunk_id`` at tick ``now``."""
        chunk = self.get(chunk_id)
        if not chunk.live:
            raise ChunkLookupError(f"{chunk_id} is a tombstone")
        if now < chunk.last_access:
            raise OrderingError(f"access at {now} precedes last access {chunk.last_access}")
        chunk.access_count += 1
        chunk.last_access = now
        self.version += 1
        return chunk

    # -- lifecycle mutations (used by the lifecycle module) ------------------

    def set_text(self, chunk_id: str, text: str, embedding: np.ndarray, state: ChunkState) -> None:
        chunk = self.get(chunk_id)
        chunk.text = text
        chunk.embedding = np.asarray(embedding, dtype=float)
        chunk.state = state
        self.index.update(chunk_id, chunk.embedding)

    def set_state(self, chunk_id: str, state: ChunkState) -> None:
        self.get(chunk_id).state = state

    def tombstone(self, chunk_id: str, now: int) -> None:
        chunk = self.get(chunk_id)
        if not chunk.live:
            return
        self.index.remove(chunk_id)
        chunk.text = None
        chunk.embedding = None
        chunk.state = ChunkState.DELETED
        chunk.deleted_at = now

    # -- value ---------------------------------------------------------------

    def max_access(self) -> int:
        return max((c.access_count for c in self.chunks.values() if c.live), default=0)

    def semantic_density(self, chunk_id: str, k: int) -> float:
        """Mean cosine to the ``k`` nearest live neighbours (0 with no neighbours)."""
        chunk = self.get(chunk_id)
        if not chunk.live:
            raise ChunkLookupError(f"{chunk_id} is a tombstone")
        nbrs = self.index.knn(chunk.embedding, k, exclude=chunk_id)
        if not nbrs:
            return 0.0
        return float(np.mean([s for _, s in nbrs]))

    def densities(self, k: int, block: int = 2048) -> dict[str, float]:
        """Semantic density of every live chunk, computed blockwise."""
        ids = self.index.ids
        n = len(ids)
        if n <= 1:
            return {cid: 0.0 for cid in ids}
        mat = self.index.matrix()
        kk = min(k, n - 1)
        out = np.empty(n)
        for start in range(0, n, block):
            sims = mat[start:start + block] @ mat.T
            rows = np.arange(sims.shape[0])
            sims[rows, rows + start] = -np.inf
            top = -np.partition(-sims, kk - 1, axis=1)[:, :kk]
            out[start:start + block] = np.clip(top, -1.0, 1.0).mean(axis=1)
        return dict(zip(ids, out.tolist()))

    def _check_time(self, chunk: KnowledgeChunk, now: int) -> None:
        if now < chunk.last_access:
            raise OrderingError(f"tick {now} precedes last access {chunk.last_access} of {chunk.id}")

    def value_score(self, chunk_id: str, now: int, w: ValueWeights) -> float:
        chunk = self.get(chunk_id)
        if not chunk.live:
            raise ChunkLookupError(f"{chunk_id} is a tombstone")
        self._check_time(chunk, now)
        density = self.semantic_density(chunk_id, w.k_density)
        return _value(chunk, self.max_access(), now, density, w)

    def value_scores(self, now: int, w: ValueWeights) -> dict[str, float]:
        """Value of every live chunk at ``now``."""
        live = self.live_chunks()
        for c in live:
            self._check_time(c, now)
        dens = self.densities(w.k_density)
        max_f = self.max_access()
        return {c.id: _value(c, max_f, now, dens[c.id], w) for c in live}

    # -- retrieval -----------------------------------------------------------

    def retrieve(
        self,
        query: str,
        top_k: int,
        scope: Scope | str = Scope.ACTIVE_PLUS_SOLIDIFIED,
        embedder: Embedder | None = None,
        query_embedding: np.ndarray | None = None,
    ) -> list[RetrievalHit]:
        """Exact cosine top-k over chunks admitted by ``scope``.

        No side effects: callers invoke :meth:`record_access` for the chunks
        they actually adopt.
        """
        if top_k < 1:
            raise InputError("top_k must be >= 1")
        scope = Scope(scope)
        if query_embedding is None:
            if embedder is None:
                raise ConfigurationError("retrieve needs an embedder or a query embedding")
            query_embedding = embed(query, embedder)
        if scope is Scope.ACTIVE_ONLY:
            include = lambda cid: self.chunks[cid].state is ChunkState.ACTIVE  # noqa: E731
        else:
            include = None
        hits = self.index.knn(query_embedding, top_k, include=include)
        return [RetrievalHit(cid, sim, self.chunks[cid].is_abstract) for cid, sim in hits]

    def ingest(
        self,
        documents: Sequence[Document],
        embedder: Embedder,
        chunker: ChunkerConfig | None = None,
        now: int = 0,
    ) -> list[str]:
        """Split, embed and insert documents as Active chunks; returns new ids."""
        if not documents:
            raise InputError("ingest needs at least one document")
        if embedder.dimension != self.dimension:
            raise ConfigurationError("embedder dimension does not match the store")
        chunker = chunker or ChunkerConfig(self.chunk_size)
        new_ids = []
        for i, doc in enumerate(documents):
            if not doc.text or not doc.text.strip():
                self.warnings.append(f"skipped empty document #{i}")
                continue
            for piece in chunker.split(doc.text):
                chunk = self.add_chunk(piece, embed(piece, embedder), doc.source, doc.topic, now)
                new_ids.append(chunk.id)
        return new_ids

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """JSON Lines: a header line, then one line per chunk (tombstones included)."""
        header = {
            "embedder_id": self.embedder_id,
            "dimension": self.dimension,
            "chunk_size": self.chunk_size,
            "next_id": self._next,
        }
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(c.to_dict(), sort_keys=True) for c in self.chunks.values()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeStore":
        rows = [json.loads(l) for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]
        if not rows:
            raise InputError(f"{path} is empty")
        header, body = rows[0], rows[1:]
        store = cls(int(header["dimension"]), header.get("embedder_id", "unknown"),
                    int(header.get("chunk_size", DEFAULT_CHUNK_SIZE)))
        for d in body:
            chunk = KnowledgeChunk.from_dict(d)
            store.chunks[chunk.id] = chunk
            if chunk.live:
                store.index.add(chunk.id, chunk.embedding)
        store._next = int(header.get("next_id", len(body)))
        return store


def _value(chunk: KnowledgeChunk, max_f: int, now: int, density: float, w: ValueWeights) -> float:
    dt = now - chunk.last_access
    v = (
        w.alpha * frequency_term(chunk.access_count, max_f)
        + w.beta * math.exp(-dt / w.tau_decay)
        + w.gamma * density
    )
    return min(1.0, max(0.0, v))
