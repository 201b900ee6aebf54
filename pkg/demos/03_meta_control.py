"""
Meta-control: picking a teaching action, then tuning the controller
====================================================================

"""

from collections import Counter

import numpy as np

from evotutor.cpl_memory import Profile, ProfileFeature
from evotutor.markers import ASSERTS, misconception_key, trap_id
from evotutor.meta_control import (HyperParams, SearchConfig, TaskView, default_policy, observe,
                                   outer_update, select_action)
from evotutor.vector_index import HashingEmbedder

# The controller sees binary features of the state (weak topic, misconception
# on topic, preferences, valuable knowledge at hand) and scores each option of
# each action component linearly, then samples from a softmax.
emb = HashingEmbedder()
task = TaskView("aliasing", "Why does a 7 kHz tone sampled at 10 kHz sound like 3 kHz?")
f = ProfileFeature.create(misconception_key(trap_id("aliasing")), "holds", emb, ASSERTS, 0)
profile = Profile("UserB", {f.key: ProfileFeature(f.key, f.value, 0.9, f.embedding, ASSERTS)})

plain = observe(Profile("UserA"), None, task)
flagged = observe(profile, None, task)
print("features with a known misconception:", {k: v for k, v in flagged.features().items() if v})

policy = default_policy()
rng = np.random.default_rng(0)
for name, state in [("no profile", plain), ("misconception", flagged)]:
    roles = Counter(select_action(policy, state, rng).role.value for _ in range(2000))
    print(name, roles.most_common(3))

# The outer loop is coordinate random search: perturb one coordinate, keep it
# if the objective improved.  Here a toy objective peaks at alpha = 0.6 and
# theta_solid = 0.75.
def objective(policy, hyper):
    return -(hyper.alpha - 0.6) ** 2 - (hyper.theta_solid - 0.75) ** 2

res = outer_update(policy, HyperParams(), objective, SearchConfig(budget=200), np.random.default_rng(0))
print(f"alpha {res.hyper.alpha:.3f}  theta_solid {res.hyper.theta_solid:.3f}")
print("accepted scores:", [round(s, 5) for s in res.accepted_scores()])
