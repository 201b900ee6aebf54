import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evotutor.errors import CompressionRejected, ProviderError
from evotutor.knowledge_store import ChunkState, KnowledgeStore, LifecycleThresholds, Scope, ValueWeights
from evotutor.lifecycle import append_report, compress, evolve, partition
from evotutor.providers import MockSummarizer
from evotutor.vector_index import as_unit

TH = LifecycleThresholds(0.7, 0.3)
W = ValueWeights(0.5, 0.3, 0.2, tau_decay=50, k_density=3)
SUM = MockSummarizer()


class LookupEmbedder:
    """Maps known texts to fixed vectors; anything else gets a fallback axis."""

    embedder_id = "lookup"

    def __init__(self, table, dimension):
        self.table, self.dimension = table, dimension

    def __call__(self, text):
        if text in self.table:
            return self.table[text]
        v = np.zeros(self.dimension)
        v[-1] = 1.0
        return v


class EchoSummarizer:
    def summarize(self, text, source="other"):
        return text


class FailingSummarizer:
    def summarize(self, text, source="other"):
        raise ProviderError("timeout")


THREE = [
    "Aliasing folds energy. It happens above Nyquist. Filters prevent it.",
    "Windowing trades resolution for leakage. Hann is common. Rectangular leaks most.",
    "The FFT is fast. It needs N log N work. Radix two is classic.",
]


def three_chunk_store():
    """Orthogonal embeddings (zero density) and accesses that give V = 0.8, ~0.50, ~0."""
    table = {t: np.eye(4)[i] for i, t in enumerate(THREE)}
    emb = LookupEmbedder(table, 4)
    s = KnowledgeStore(4, emb.embedder_id)
    for t in THREE:
        s.add_chunk(t, table[t], source="textbook")
    s.record_access("c000000", 1000)
    s.record_access("c000000", 1000)
    s.record_access("c000001", 990)
    return s, emb


def test_partition_example():
    assert partition({"a": 0.9, "b": 0.5, "c": 0.1}, TH) == (["a"], ["b"], ["c"])


def test_partition_boundaries():
    act, sol, dele = partition({"s": 0.7, "f": 0.3, "below": np.nextafter(0.3, 0)}, TH)
    assert act == ["s"] and sol == ["f"] and dele == ["below"]


@given(st.dictionaries(st.text(min_size=1, max_size=4), st.floats(0, 1), max_size=40),
       st.floats(0.05, 1.0), st.floats(0.0, 0.95))
def test_partition_disjoint_exhaustive(scores, solid, forget):
    if solid <= forget:
        return
    th = LifecycleThresholds(solid, forget)
    act, sol, dele = partition(scores, th)
    assert sorted(act + sol + dele) == sorted(scores)
    assert all(scores[i] >= solid for i in act)
    assert all(forget <= scores[i] < solid for i in sol)
    assert all(scores[i] < forget for i in dele)


def test_compress_mock_summary():
    s, emb = three_chunk_store()
    assert compress(s, "c000001", SUM, emb)
    c = s.get("c000001")
    assert c.text == "Windowing trades resolution for leakage. [abstract:textbook]"
    assert c.is_abstract and c.state is ChunkState.SOLIDIFIED
    assert c.original_length == len(THREE[1])
    assert np.array_equal(c.embedding, emb(c.text))
    # already an abstract: nothing happens
    assert not compress(s, "c000001", SUM, emb)


def test_compress_rejects_non_shrinking_summary():
    s, emb = three_chunk_store()
    with pytest.raises(CompressionRejected):
        compress(s, "c000002", EchoSummarizer(), emb)
    assert s.get("c000002").state is ChunkState.ACTIVE and s.get("c000002").text == THREE[2]


def test_evolve_three_chunk_example():
    s, emb = three_chunk_store()
    before = sum(map(len, THREE))
    _, rep = evolve(s, W, TH, SUM, emb, 1000)
    assert (rep.activated, rep.solidified, rep.deleted) == (["c000000"], ["c000001"], ["c000002"])
    assert rep.scores["c000000"] == pytest.approx(0.8)
    abstract = SUM.summarize(THREE[1], "textbook")
    assert rep.bytes_before == before
    assert rep.bytes_after == len(THREE[0]) + len(abstract) < before
    assert s.get("c000002").state is ChunkState.DELETED and s.get("c000002").text is None


def test_evolve_no_op_when_all_active():
    s, emb = three_chunk_store()
    # bring every chunk to the same access count, 5
    for cid, extra in zip(sorted(s.chunks), (3, 4, 5)):
        for _ in range(extra):
            s.record_access(cid, 1000)
    _, rep = evolve(s, W, TH, SUM, emb, 1000)
    assert rep.solidified == rep.deleted == [] and rep.bytes_after == rep.bytes_before
    assert rep.changed == 0


def test_evolve_twice_same_tick_changes_nothing():
    s, emb = three_chunk_store()
    evolve(s, W, TH, SUM, emb, 1000)
    snapshot = [c.to_dict() for c in s.chunks.values()]
    _, rep = evolve(s, W, TH, SUM, emb, 1000)
    assert rep.changed == 0
    assert [c.to_dict() for c in s.chunks.values()] == snapshot


def test_summarizer_failure_keeps_chunk_active():
    s, emb = three_chunk_store()
    _, rep = evolve(s, W, TH, FailingSummarizer(), emb, 1000)
    assert s.get("c000001").state is ChunkState.ACTIVE
    assert [cid for cid, _ in rep.failures] == ["c000001"]
    assert rep.bytes_after <= rep.bytes_before


def test_abstract_promoted_then_relabelled():
    s, emb = three_chunk_store()
    evolve(s, W, TH, SUM, emb, 1000)
    for _ in range(5):
        s.record_access("c000001", 1001)
    _, rep = evolve(s, W, TH, SUM, emb, 1001)
    assert "c000001" in rep.activated
    assert s.get("c000001").state is ChunkState.ACTIVE and s.get("c000001").is_abstract
    # c000000 becomes the most used chunk, so c000001 drops back into the band
    for _ in range(20):
        s.record_access("c000000", 1400)
    _, rep = evolve(s, W, TH, SUM, emb, 1400)
    assert "c000001" in rep.solidified
    assert s.get("c000001").state is ChunkState.SOLIDIFIED
    assert s.get("c000001").text == SUM.summarize(THREE[1], "textbook")


def test_report_log(tmp_path):
    s, emb = three_chunk_store()
    _, rep = evolve(s, W, TH, SUM, emb, 1000)
    log = tmp_path / "evo.jsonl"
    append_report(rep, log)
    append_report(rep, log)
    rows = [json.loads(l) for l in log.read_text().splitlines()]
    assert len(rows) == 2 and rows[0]["deleted"] == ["c000002"]
    assert "solidified=1 deleted=1" in rep.summary()


def random_store(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    s = KnowledgeStore(6, "rand")
    words = "alpha beta gamma delta. epsilon zeta eta theta. iota kappa lambda."
    for i in range(n):
        s.add_chunk(f"{words} {i}", as_unit(rng.normal(size=6)))
    now = 0
    for _ in range(int(rng.integers(0, 80))):
        now += int(rng.integers(0, 4))
        s.record_access(f"c{int(rng.integers(n)):06d}", now)
    return s, now + int(rng.integers(0, 100))


class RandEmbedder:
    embedder_id, dimension = "rand", 6

    def __call__(self, text):
        rng = np.random.default_rng(len(text))
        return as_unit(rng.normal(size=6))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_evolve_respects_thresholds(seed):
    s, now = random_store(seed)
    scores = s.value_scores(now, W)
    _, rep = evolve(s, W, TH, SUM, RandEmbedder(), now)
    assert rep.scores == scores
    assert rep.bytes_after <= rep.bytes_before
    for cid in rep.deleted:
        assert scores[cid] < TH.forget and not s.get(cid).live
    for cid in rep.activated:
        assert scores[cid] >= TH.solid and s.get(cid).state is ChunkState.ACTIVE
    for cid in rep.solidified:
        assert s.get(cid).state is ChunkState.SOLIDIFIED
    live = {h.chunk_id for h in s.retrieve(None, 10**6, Scope.ACTIVE_PLUS_SOLIDIFIED,
                                          query_embedding=as_unit(np.ones(6)))}
    assert live == {c.id for c in s.live_chunks()}
    assert not live & set(rep.deleted)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_evolve_deterministic(seed):
    (a, now), (b, _) = random_store(seed), random_store(seed)
    _, ra = evolve(a, W, TH, SUM, RandEmbedder(), now)
    _, rb = evolve(b, W, TH, SUM, RandEmbedder(), now)
    assert ra.to_dict() == rb.to_dict()
