"""Embeddings, cosine similarity and exact k-nearest-neighbour search.

Every embedding is a unit-norm float64 numpy vector.  Search is brute force
over a dense matrix; ties are broken by id ascending so results are totally
ordered and reproducible.
"""

from __future__ import annotations

import re
import zlib
from typing import Callable, Iterable, Protocol

import numpy as np

from .errors import ConfigurationError, InputError

NORM_TOL = 1e-6

_TOKEN_RE = re.compile(r"\w+")


class Embedder(Protocol):
    """Port for text embedders. Implementations must be deterministic."""

    embedder_id: str
    dimension: int

    def __call__(self, text: str) -> np.ndarray: ...


STOPWORDS = frozenset(
    "a an and are as at be by for from has in into is it its of on or so that the this to "
    "when while with".split()
)


class HashingEmbedder:
    """Bag-of-words embedder: lowercase word tokens hashed into buckets.

    Token counts are L2-normalised, so repeating a token does not change the
    direction ("fourier fourier" == "fourier").  Common function words are
    dropped unless nothing else is left.  CRC32 is used instead of ``hash``
    because the builtin is salted per process.
    """

    def __init__(self, dimension: int = 256):
        if dimension < 1:
            raise ConfigurationError("embedding dimension must be positive")
        self.dimension = dimension
        self.embedder_id = f"hashing-bow-{dimension}"

    def tokens(self, text: str) -> list[str]:
        toks = _TOKEN_RE.findall(text.lower())
        return [t for t in toks if t not in STOPWORDS] or toks

    def __call__(self, text: str) -> np.ndarray:
        toks = self.tokens(text)
        if not toks:
            raise InputError(f"cannot embed text without word tokens: {text!r}")
        vec = np.zeros(self.dimension)
        for tok in toks:
            vec[zlib.crc32(tok.encode("utf-8")) % self.dimension] += 1.0
        return vec / np.linalg.norm(vec)

    def __repr__(self) -> str:
        return f"HashingEmbedder(dimension={self.dimension})"


def embed(text: str, embedder: Embedder) -> np.ndarray:
    """Embed ``text`` and check the unit-norm contract."""
    if not text:
        raise InputError("cannot embed empty text")
    vec = np.asarray(embedder(text), dtype=float)
    if vec.shape != (embedder.dimension,):
        raise ConfigurationError(
            f"embedder returned shape {vec.shape}, expected ({embedder.dimension},)"
        )
    if abs(np.linalg.norm(vec) - 1.0) > NORM_TOL:
        raise ConfigurationError("embedder returned a vector that is not unit-norm")
    return vec


def as_unit(values: Iterable[float]) -> np.ndarray:
    """Normalise an arbitrary non-zero vector."""
    vec = np.array(list(values), dtype=float)
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise InputError("zero vector has no direction")
    return vec / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two unit vectors (their dot product)."""
    if a.shape != b.shape:
        raise ConfigurationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def rank_top_k(ids: list[str], sims: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Top ``k`` of ``sims`` by similarity descending, then id ascending.

    Uses a partial partition to find the k-th value, then fully orders every
    candidate tied with or above it, so boundary ties resolve by id.
    """
    n = len(ids)
    if n == 0 or k < 1:
        return []
    if k < n:
        kth = np.partition(sims, n - k)[n - k]
        cand = np.flatnonzero(sims >= kth)
    else:
        cand = np.arange(n)
    order = sorted(cand.tolist(), key=lambda i: (-sims[i], ids[i]))
    return [(ids[i], float(sims[i])) for i in order[:k]]


class VectorIndex:
    """Exact cosine index over unit vectors keyed by unique ids."""

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ConfigurationError("index dimension must be positive")
        self.dimension = dimension
        self._ids: list[str] = []
        self._pos: dict[str, int] = {}
        self._buf = np.zeros((16, dimension))  # rows past len(self) are spare capacity

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._pos

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def _check(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.dimension,):
            raise ConfigurationError(
                f"embedding dimension {vec.shape} does not match index dimension {self.dimension}"
            )
        return vec

    def add(self, item_id: str, vec: np.ndarray) -> None:
        if item_id in self._pos:
            raise InputError(f"duplicate index id {item_id!r}")
        vec = self._check(vec)
        n = len(self._ids)
        if n == len(self._buf):
            grown = np.zeros((2 * n, self.dimension))
            grown[:n] = self._buf
            self._buf = grown
        self._buf[n] = vec
        self._pos[item_id] = n
        self._ids.append(item_id)

    def update(self, item_id: str, vec: np.ndarray) -> None:
        self._buf[self._pos[item_id]] = self._check(vec)

    def remove(self, item_id: str) -> None:
        pos = self._pos.pop(item_id)
        n = len(self._ids)
        self._buf[pos:n - 1] = self._buf[pos + 1:n]
        self._buf[n - 1] = 0.0
        del self._ids[pos]
        for i in range(pos, len(self._ids)):
            self._pos[self._ids[i]] = i

    def vector(self, item_id: str) -> np.ndarray:
        return self._buf[self._pos[item_id]].copy()

    def matrix(self) -> np.ndarray:
        return self._buf[:len(self._ids)]

    def similarities(self, query: np.ndarray) -> np.ndarray:
        return self.matrix() @ self._check(query)

    def knn(
        self,
        query: np.ndarray,
        k: int,
        exclude: str | None = None,
        include: Callable[[str], bool] | None = None,
    ) -> list[tuple[str, float]]:
        """Ranked ``(id, similarity)`` pairs for the ``k`` nearest entries.

        ``exclude`` drops one id (the query's own entry when computing
        density); ``include`` optionally restricts the candidate set.
        """
        if k < 1:
            raise InputError("k must be >= 1")
        if not self._ids:
            return []
        sims = self.similarities(query)
        ids = self._ids
        if exclude is not None or include is not None:
            keep = [
                i for i, item in enumerate(ids)
                if item != exclude and (include is None or include(item))
            ]
            ids = [ids[i] for i in keep]
            sims = sims[keep]
        return rank_top_k(ids, sims, k)
