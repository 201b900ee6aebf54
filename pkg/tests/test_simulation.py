import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evotutor.errors import InputError, ProviderError
from evotutor.markers import trap_id
from evotutor.meta_control import COMPONENTS, HyperParams, Role, Strategy, TeachingAction
from evotutor.providers import mock_providers
from evotutor.simulation import (
    DEFAULT_TOPICS,
    TASK_KINDS,
    Archetype,
    ControlMode,
    CorpusSpec,
    InteractionScript,
    MemoryMode,
    RetrievalMode,
    SimulatedStudent,
    SystemConfig,
    Task,
    TutorTurn,
    TutoringSession,
    build_synthetic_corpus,
    default_scripts,
    generate_default_scripts,
    make_script,
    make_task,
    run_session,
    student_respond,
)
from evotutor.vector_index import HashingEmbedder, embed

EMB = HashingEmbedder()


def turn_for(task, action, hits=()):
    return TutorTurn(action, "response text", tuple(hits), task.topic, task.checklist, 1)


# -- student response model ----------------------------------------------------

def test_far_too_hard_never_helps():
    s = SimulatedStudent.from_archetype(Archetype.NOVICE_INTUITIVE)
    task = make_task("dft", "concept")
    assert s.level("dft") == 2
    action = TeachingAction(Role.EXPLANATION, Strategy.ANALOGICAL_DEMONSTRATION, difficulty=5)
    _, out = student_respond(s, turn_for(task, action, task.checklist), np.random.default_rng(0))
    assert out.mastery_delta <= 0


def test_in_band_matching_strategy_helps():
    s = SimulatedStudent.from_archetype(Archetype.NOVICE_INTUITIVE)
    task = make_task("dft", "concept")
    action = TeachingAction(Role.EXPLANATION, Strategy.ANALOGICAL_DEMONSTRATION, difficulty=2)
    s2, out = student_respond(s, turn_for(task, action, task.checklist), np.random.default_rng(0))
    assert out.mastery_delta > 0 and s2.mastery["dft"] > s.mastery["dft"]


def test_diagnosis_removes_misconception():
    s = SimulatedStudent.from_archetype(Archetype.MISCONCEPTION_PRONE)
    task = make_task("aliasing", "diagnosis")
    assert s.holds_misconception("aliasing") and trap_id("aliasing") in task.checklist
    action = TeachingAction(Role.DIAGNOSIS, Strategy.DIAGNOSTIC_TEST, difficulty=3)
    s2, out = student_respond(s, turn_for(task, action), np.random.default_rng(0))
    assert not s2.holds_misconception("aliasing")
    # the trap id is the only covered checklist entry
    assert out.checklist_coverage_delta == pytest.approx(1 / len(task.checklist))
    assert f"[resolved={trap_id('aliasing')}]" in out.student_reply
    assert s2.misconceptions == s.misconceptions - {("aliasing", trap_id("aliasing"))}


def test_other_roles_keep_misconceptions():
    s = SimulatedStudent.from_archetype(Archetype.MISCONCEPTION_PRONE)
    task = make_task("aliasing", "diagnosis")
    for role in (Role.EXPLANATION, Role.QUESTION_GENERATION, Role.KNOWLEDGE_RECONSTRUCTION):
        s2, _ = student_respond(s, turn_for(task, TeachingAction(role), task.checklist), np.random.default_rng(0))
        assert s2.misconceptions == s.misconceptions


def test_no_turn_with_zero_decay_is_identity():
    s = replace(SimulatedStudent.from_archetype(Archetype.ADVANCED_ENGINEER), forgetfulness=0.0)
    s2, out = student_respond(s, None, np.random.default_rng(0))
    assert s2.mastery == s.mastery and out.mastery_delta == 0.0 and out.student_reply == ""


def test_no_turn_applies_decay():
    s = SimulatedStudent.from_archetype(Archetype.NOVICE_INTUITIVE)
    s2, _ = student_respond(s, None, np.random.default_rng(0))
    assert all(s2.mastery[t] == pytest.approx(0.15 * 0.98) for t in DEFAULT_TOPICS)


def test_student_validation():
    with pytest.raises(InputError):
        SimulatedStudent(Archetype.NOVICE_INTUITIVE, {"dft": 1.5}, frozenset(), 0.1)
    with pytest.raises(InputError):
        SimulatedStudent(Archetype.NOVICE_INTUITIVE, {"dft": 0.5}, frozenset(), -0.1)


ACTIONS = st.builds(
    TeachingAction,
    st.sampled_from(list(Role)),
    st.sampled_from(list(Strategy)),
    st.sampled_from(COMPONENTS["difficulty"]),
)


@given(st.sampled_from(list(Archetype)), st.integers(0, 2**32 - 1),
       st.lists(st.tuples(ACTIONS, st.sampled_from(DEFAULT_TOPICS), st.sampled_from(TASK_KINDS), st.booleans()),
                min_size=200, max_size=200))
@settings(max_examples=25, deadline=None)
def test_mastery_stays_in_range(arch, seed, turns):
    s = SimulatedStudent.from_archetype(arch, seed)
    rng = np.random.default_rng(seed)
    for action, topic, kind, covered in turns:
        task = make_task(topic, kind)
        s, out = student_respond(s, turn_for(task, action, task.checklist if covered else ()), rng)
        assert all(0.0 <= m <= 1.0 for m in s.mastery.values())
        assert np.isfinite(out.mastery_delta) and out.chunks_adopted >= 0 and out.response_len >= 0


# -- sessions ------------------------------------------------------------------

def fixed(action, **kw):
    return SystemConfig("fixed", control=ControlMode.FIXED, fixed_action=action, **kw)


def test_direct_instruction_never_clears_misconceptions():
    s = SimulatedStudent.from_archetype(Archetype.MISCONCEPTION_PRONE, 3)
    script = make_script("di", TASK_KINDS, turns=24)
    sess_cfg = fixed(TeachingAction(Role.EXPLANATION, Strategy.DIRECT_INSTRUCTION))

    sess = TutoringSession(s, script, sess_cfg, seed=3)
    sess.run()
    assert sess.student.misconceptions == s.misconceptions


def test_diagnosis_reduces_misconceptions():
    s = SimulatedStudent.from_archetype(Archetype.MISCONCEPTION_PRONE, 3)
    script = make_script("dx", ("diagnosis",), turns=6)
    sess = TutoringSession(s, script, fixed(TeachingAction(Role.DIAGNOSIS, Strategy.DIAGNOSTIC_TEST)), seed=3)
    sess.run()
    assert sess.student.misconceptions < s.misconceptions
    assert not any(sess.student.holds_misconception(t) for t in DEFAULT_TOPICS)


def dumps(traj):
    return json.dumps(traj.to_dict(), sort_keys=True)


def test_one_turn_session_return():
    s = SimulatedStudent.from_archetype(Archetype.NOVICE_INTUITIVE)
    t = run_session(s, make_script("one", ("concept",), turns=1), SystemConfig(), seed=1)
    assert len(t.steps) == 1
    assert t.episode_return == t.steps[0].reward.r


def test_session_is_deterministic():
    s = SimulatedStudent.from_archetype(Archetype.ADVANCED_ENGINEER, 5)
    script = make_script("det", TASK_KINDS, turns=25)
    cfg = SystemConfig(hyper=HyperParams(evolve_every=10))
    assert dumps(run_session(s, script, cfg, seed=5)) == dumps(run_session(s, script, cfg, seed=5))
    assert dumps(run_session(s, script, cfg, seed=5)) != dumps(run_session(s, script, cfg, seed=6))


def consolidations(traj):
    return [e for e in traj.events if e["kind"] == "consolidation"]


def test_window_four_twelve_turns_three_consolidations():
    s = SimulatedStudent.from_archetype(Archetype.MISCONCEPTION_PRONE)
    t = run_session(s, make_script("w4", TASK_KINDS, turns=12), SystemConfig(hyper=HyperParams(window_size=4)))
    assert len(consolidations(t)) == 3
    assert not any(e["final"] for e in consolidations(t))


@pytest.mark.parametrize("turns,w", [(1, 4), (7, 3), (10, 5), (13, 4), (9, 1)])
def test_consolidation_count_rule(turns, w):
    s = SimulatedStudent.from_archetype(Archetype.NOVICE_INTUITIVE)
    t = run_session(s, make_script("c", TASK_KINDS, turns=turns), SystemConfig(hyper=HyperParams(window_size=w)))
    assert len(consolidations(t)) == turns // w + (1 if turns % w else 0)


def test_non_profile_memory_never_consolidates():
    s = SimulatedStudent.from_archetype(Archetype.NOVICE_INTUITIVE)
    cfg = SystemConfig(memory=MemoryMode.SUMMARY, retrieval=RetrievalMode.STATIC)
    t = run_session(s, make_script("c", TASK_KINDS, turns=9), cfg)
    assert consolidations(t) == [] and not [e for e in t.events if e["kind"] == "evolution"]


class FlakyResponder:
    def __init__(self, inner):
        self.inner, self.calls = inner, 0

    def respond(self, *args, **kw):
        self.calls += 1
        if self.calls == 2:
            raise ProviderError("HTTP 503")
        return self.inner.respond(*args, **kw)


def test_provider_failure_scores_zero_gain_turn():
    p = mock_providers()
    p.responder = FlakyResponder(p.responder)
    s = SimulatedStudent.from_archetype(Archetype.NOVICE_INTUITIVE)
    t = run_session(s, make_script("f", TASK_KINDS, turns=3), SystemConfig(), p)
    assert len(t.steps) == 3
    bad = t.steps[1]
    assert bad.transcript["provider_error"] == "HTTP 503"
    assert bad.reward.r == 0.0 and bad.transcript["outcome"]["student_reply"] == ""
    assert t.steps[2].reward.r != 0.0


def test_attached_store_sees_adopted_accesses():

    s = SimulatedStudent.from_archetype(Archetype.ADVANCED_ENGINEER)
    sess = TutoringSession(s, make_script("a", TASK_KINDS, turns=4), SystemConfig(adopt=2), seed=0)
    sess.run()
    assert sum(c.access_count for c in sess.store.chunks.values()) == 8


# -- corpus and scripts --------------------------------------------------------

def test_corpus_counts_and_determinism():
    docs = build_synthetic_corpus()
    assert len(docs) == 18
    assert [d.text for d in docs] == [d.text for d in build_synthetic_corpus(CorpusSpec())]
    assert {d.source for d in docs} == {"textbook", "derivation", "code"}
    more = build_synthetic_corpus(CorpusSpec(("fft", "dft"), theory=2, derivation=0, code=3))
    assert len(more) == 10 and len({d.text for d in more}) == 10


def test_same_topic_more_similar_than_cross_topic():
    docs = build_synthetic_corpus()
    vecs = [embed(d.text, EMB) for d in docs]
    cross = [float(vecs[i] @ vecs[j]) for i in range(18) for j in range(i + 1, 18) if docs[i].topic != docs[j].topic]
    mean_cross = sum(cross) / len(cross)
    assert mean_cross > 0  # shared vocabulary: density is not trivial
    for i in range(18):
        for j in range(i + 1, 18):
            if docs[i].topic == docs[j].topic:
                assert float(vecs[i] @ vecs[j]) > mean_cross


def test_script_topics_validated():
    good = make_task("fft", "debug")
    with pytest.raises(InputError):
        InteractionScript("bad", (good, Task("quantum", "?", ("quantum.1",), Strategy.HINTING)))


def test_shipped_scripts_match_generator():
    shipped = default_scripts()
    assert [s.to_dict() for s in shipped] == [s.to_dict() for s in generate_default_scripts()]
    assert all(len(s) == 20 for s in shipped)
    assert InteractionScript.from_dict(shipped[0].to_dict()) == shipped[0]
