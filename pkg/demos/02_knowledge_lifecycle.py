"""
Knowledge lifecycle: value scores, compression and forgetting
=============================================================

"""

# Every chunk gets a value from three terms: how often it was used (relative
# to the busiest chunk), how recently, and how many close neighbours it has.
# Two thresholds split chunks into kept, compressed and deleted.
import numpy as np

from evotutor.knowledge_store import Scope
from evotutor.lifecycle import evolve
from evotutor.meta_control import HyperParams
from evotutor.providers import mock_providers
from evotutor.simulation import build_store

providers = mock_providers()
store = build_store(providers)
print(len(store), "chunks,", store.storage_chars(), "characters")

# simulate traffic: sampling and aliasing are asked about every tick, the
# DFT now and then, and nothing else at all
rng = np.random.default_rng(0)
for now in range(1, 60):
    topics = [rng.choice(["sampling", "aliasing"])] + (["discrete fourier transform"] if now % 6 == 0 else [])
    for topic in topics:
        for hit in store.retrieve(f"{topic} nyquist", 2, embedder=providers.embedder):
            store.record_access(hit.chunk_id, now)

hyper = HyperParams()
scores = store.value_scores(60, hyper.value_weights())
for cid in sorted(scores, key=scores.get, reverse=True)[:4]:
    print(f"{scores[cid]:.3f}  {cid}  {store.get(cid).topic}")
print("...")
for cid in sorted(scores, key=scores.get)[:3]:
    print(f"{scores[cid]:.3f}  {cid}  {store.get(cid).topic}")

# One evolution pass.  Mid-value chunks are replaced by an abstract (first
# sentence plus a source tag); low-value chunks become id-only tombstones.
_, report = evolve(store, hyper.value_weights(), hyper.thresholds(), providers.summarizer,
                   providers.embedder, 60)
print(report.summary())
cid = report.solidified[0]
print("abstract:", store.get(cid).text)

# Abstracts stay retrievable unless the caller asks for full chunks only.
q = "aliasing nyquist"
print([h.chunk_id for h in store.retrieve(q, 3, Scope.ACTIVE_ONLY, providers.embedder)])
print([(h.chunk_id, h.is_abstract) for h in store.retrieve(q, 3, Scope.ACTIVE_PLUS_SOLIDIFIED, providers.embedder)])
