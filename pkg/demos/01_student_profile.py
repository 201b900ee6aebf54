"""
Student profile: short-term window and confidence fusion
========================================================

"""

# A profile is a set of keyed features, each carrying a confidence in [0, 1].
# New evidence either reinforces a feature (pulls its confidence towards 1)
# or corrects it (pulls it towards 0).
from evotutor.cpl_memory import (ConsolidationConfig, Event, Profile, QaPair, ShortTermMemory,
                                 append_interaction, consolidate, query_profile, update_confidence)
from evotutor.providers import MockExtractor
from evotutor.vector_index import HashingEmbedder

omega = 0.5
for step in range(5):
    omega = update_confidence(omega, 0.3, Event.REINFORCEMENT)
    print(f"after reinforcement {step + 1}: {omega:.4f}")

# one correction takes back a share of what was gained
print("after a correction:", round(update_confidence(omega, 0.3, Event.CORRECTION), 4))

# The short-term window holds the last few question/answer pairs.  The
# simulated student tags its replies with markers that the mock extractor
# reads, so the whole pipeline runs without a language model.
emb = HashingEmbedder()
cfg = ConsolidationConfig(learning_rate=0.3, match_threshold=0.8, window_size=3)
stm = ShortTermMemory(3)
replies = [
    "[topic=aliasing] [incorrect] [trap=aliasing.trap] I thought folding only happens in audio.",
    "[topic=aliasing] [incorrect] [pref=intuition] Could you draw it?",
    "[topic=fft] [correct] The butterfly reuses twiddle factors.",
]
for turn, text in enumerate(replies):
    stm, saturated = append_interaction(stm, QaPair(turn, "tutor question", text, turn))
print("window saturated:", saturated)

# Saturation triggers consolidation: extract candidates, fuse each one, clear.
res = consolidate(Profile("UserB"), stm, MockExtractor(emb), cfg, now=3)
for key, outcome in res.outcomes:
    print(f"{outcome.value:>10}  {key}")
print("window after consolidation:", len(res.stm))

# A second window that shows the misconception resolved corrects it.
stm = ShortTermMemory(1, (QaPair(4, "q", "[topic=aliasing] [correct] [resolved=aliasing.trap]", 4),))
res = consolidate(res.profile, stm, MockExtractor(emb), cfg, now=4)
for f in query_profile(res.profile):
    print(f"{f.confidence:.2f}  {f.polarity:>7}  {f.key}")
