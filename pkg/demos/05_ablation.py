"""
Comparing five settings with rubric judges
==========================================

"""

# Each setting runs the same students on the same scripts with the same
# seeds.  Three mock judges (strict, neutral, lenient) score every turn on six
# indicators; scores are averaged over judges per turn, then over turns.
import time

from evotutor.evaluation import run_ablation

t0 = time.perf_counter()
result = run_ablation(seed=0)
print(result.table())
print(f"{sum(len(t) for t in result.trajectories.values())} episodes in {time.perf_counter() - t0:.1f} s")

# The stored values are unrounded; only the table rounds.
full = result.reports["e"]
print("full system average:", full.average)
print("judges per indicator:", {i.value: n for i, n in full.judge_counts.items()})
