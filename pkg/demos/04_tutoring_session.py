"""
A simulated tutoring session
============================

"""

# Three synthetic students ship with the package.  Each has a starting
# mastery, a few misconceptions, a forgetting rate and a table of how well
# each teaching strategy works on them.
from evotutor.evaluation import ablation_config
from evotutor.simulation import Archetype, SimulatedStudent, TutoringSession, default_scripts

student = SimulatedStudent.from_archetype(Archetype.MISCONCEPTION_PRONE, seed=1)
print(student.student_id, "misconceptions:", sorted(t for t, _ in student.misconceptions))

script = default_scripts()[1]
print(script.name, len(script), "turns, first task:", script.tasks[0].question)

# Full system: profile memory, evolving knowledge base, policy-driven actions.
sess = TutoringSession(student, script, ablation_config("e"), seed=1)
traj = sess.run()
for step in traj.steps[:6]:
    a, out = step.action, step.transcript["outcome"]
    print(f"t{step.turn:02d} {a['role']:<24} {a['strategy']:<24} d={a['difficulty']} "
          f"r={step.reward.r:+.3f} correct={out['correct']}")

print("return:", round(traj.episode_return, 4))
print("misconceptions left:", sorted(t for t, _ in sess.student.misconceptions))
kinds = [e["kind"] for e in traj.events]
print({k: kinds.count(k) for k in set(kinds)})
print("profile:")
for f in sorted(sess.profile.features.values(), key=lambda f: -f.confidence)[:6]:
    print(f"  {f.confidence:.2f} {f.polarity:>7} {f.key}")
