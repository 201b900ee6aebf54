"""Simulated students, scripted sessions, and the inner-loop session runner.

Everything here is synthetic: a small templated DSP corpus, three student
archetypes with hand-set receptivity tables, and scripts of topic-tagged
tasks with key-point checklists.  A session wires profile memory, the
knowledge store and the teaching policy together turn by turn.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .cpl_memory import (
    Profile,
    QaPair,
    ShortTermMemory,
    append_interaction,
    consolidate,
    profile_view_dicts,
)
from .errors import CapacityError, InputError, ProviderError
from .knowledge_store import ChunkerConfig, Document, KnowledgeStore, Scope
from .lifecycle import evolve
from .markers import evidence_claims, find_key_points, parse_reply, trap_id
from .meta_control import (
    DEFAULT_ACTION,
    HyperParams,
    PolicyParams,
    Role,
    Strategy,
    TeachingAction,
    Trajectory,
    TrajectoryStep,
    compute_reward,
    default_policy,
    observe,
    select_action,
)
from .providers import Providers, mock_providers
from .transcript import TurnTranscript

DEFAULT_TOPICS = ("sampling", "aliasing", "dft", "fft", "windowing", "filters")
TASK_KINDS = ("concept", "diagnosis", "debug", "review")

# key points per task kind, as indices into a topic's facts (".trap" = misconception probe)
CHECKLISTS = {
    "concept": ("1", "2"),
    "diagnosis": ("1", "3", "trap"),
    "debug": ("4", "3"),
    "review": ("2", "4"),
}
IDEAL_STRATEGY = {
    "concept": Strategy.SOCRATIC_QUESTIONING,
    "diagnosis": Strategy.DIAGNOSTIC_TEST,
    "debug": Strategy.HINTING,
    "review": Strategy.ANALOGICAL_DEMONSTRATION,
}

BASE_GAIN = 0.15
CONFUSION_LOSS = 0.03
MISCONCEPTION_DAMPING = 0.5
SLIP = 0.1
SUMMARY_CHARS = 80


def _data_path(*parts: str):
    path = resources.files("evotutor").joinpath("data")
    for part in parts:
        path = path.joinpath(part)
    return path


@lru_cache(maxsize=None)
def topic_catalog() -> dict:
    return json.loads(_data_path("dsp_topics.json").read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def archetype_table() -> dict:
    return json.loads(_data_path("archetypes.json").read_text(encoding="utf-8"))


class Archetype(str, enum.Enum):
    NOVICE_INTUITIVE = "novice_intuitive"
    MISCONCEPTION_PRONE = "misconception_prone"
    ADVANCED_ENGINEER = "advanced_engineer"


def receptivity(archetype: Archetype | str, strategy: Strategy | str) -> float:
    return archetype_table()[Archetype(archetype).value]["receptivity"][Strategy(strategy).value]


def strategy_fit(archetype: Archetype | str, strategy: Strategy | str) -> float:
    """Receptivity of ``strategy`` relative to the archetype's best strategy."""
    row = archetype_table()[Archetype(archetype).value]["receptivity"]
    return receptivity(archetype, strategy) / max(row.values())


# -- corpus -------------------------------------------------------------------

@dataclass(frozen=True)
class CorpusSpec:
    topics: tuple[str, ...] = DEFAULT_TOPICS
    theory: int = 1
    derivation: int = 1
    code: int = 1


def _generic_topic(topic: str) -> dict:
    t = topic.replace("_", " ")
    return {
        "title": t.capitalize(),
        "neighbor": "signal spectra",
        "facts": [f"{t.capitalize()} fact {i} concerns the frequency content of a sampled signal." for i in range(1, 5)],
    }


def build_synthetic_corpus(layout: CorpusSpec = CorpusSpec()) -> list[Document]:
    """Templated theory / derivation / code documents for each topic.

    Texts share signal-processing vocabulary across topics and name a
    neighbouring topic, so similarities between chunks are not trivial.
    Repeated documents of one kind get an ordinal so texts stay distinct.
    """
    catalog = topic_catalog()
    docs = []
    for topic in layout.topics:
        info = catalog.get(topic) or _generic_topic(topic)
        title, nb, f = info["title"], info["neighbor"], info["facts"]
        kp = [f"[kp:{topic}.{i}]" for i in range(1, 5)]
        for n in range(layout.theory):
            tag = f" (part {n + 1})" if layout.theory > 1 else ""
            docs.append(Document(
                f"{title}{tag} is a central idea in digital signal processing. "
                f"{kp[0]} {f[0]} {kp[1]} {f[1]} "
                f"It is closely tied to {nb} and to the frequency content of a sampled signal.",
                "textbook", topic))
        for n in range(layout.derivation):
            tag = f" (part {n + 1})" if layout.derivation > 1 else ""
            docs.append(Document(
                f"The derivation of {title.lower()}{tag} starts from a discrete signal model. "
                f"Recall the premise: {f[0]} "
                f"{kp[2]} {f[2]} The same algebra reappears when studying {nb}.",
                "derivation", topic))
        for n in range(layout.code):
            tag = f" (part {n + 1})" if layout.code > 1 else ""
            docs.append(Document(
                f"A Python implementation of {title.lower()}{tag} uses numpy arrays of samples. "
                f"It encodes {f[0][0].lower() + f[0][1:]} "
                f"{kp[3]} {f[3]} Checking the output spectrum against theory catches most bugs.",
                "code", topic))
    return docs


def build_store(providers: Providers, layout: CorpusSpec = CorpusSpec()) -> KnowledgeStore:
    store = KnowledgeStore.for_embedder(providers.embedder)
    store.ingest(build_synthetic_corpus(layout), providers.embedder, ChunkerConfig(), now=0)
    return store


# -- scripts ------------------------------------------------------------------

@dataclass(frozen=True)
class Task:
    topic: str
    question: str
    checklist: tuple[str, ...]
    ideal_strategy: Strategy
    kind: str = "concept"

    def to_dict(self) -> dict:
        return {"topic": self.topic, "question": self.question, "checklist": list(self.checklist),
                "ideal_strategy": self.ideal_strategy.value, "kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> "Task":
        return cls(d["topic"], d["question"], tuple(d["checklist"]), Strategy(d["ideal_strategy"]),
                   d.get("kind", "concept"))


@dataclass(frozen=True)
class InteractionScript:
    name: str
    tasks: tuple[Task, ...]

    def __post_init__(self):
        known = set(topic_catalog())
        for t in self.tasks:
            if t.topic not in known:
                raise InputError(f"task topic {t.topic!r} is not in the corpus")

    def __len__(self) -> int:
        return len(self.tasks)

    def to_dict(self) -> dict:
        return {"name": self.name, "tasks": [t.to_dict() for t in self.tasks]}

    @classmethod
    def from_dict(cls, d: dict) -> "InteractionScript":
        return cls(d["name"], tuple(Task.from_dict(t) for t in d["tasks"]))


def make_task(topic: str, kind: str) -> Task:
    q = topic_catalog()[topic]["questions"][kind]
    checklist = tuple(f"{topic}.{p}" for p in CHECKLISTS[kind])
    return Task(topic, q, checklist, IDEAL_STRATEGY[kind], kind)


def make_script(name: str, kinds: Sequence[str], turns: int = 20, topic_offset: int = 0,
                topics: Sequence[str] = DEFAULT_TOPICS) -> InteractionScript:
    """Cycle topics (from ``topic_offset``) and task kinds for ``turns`` turns."""
    tasks = tuple(
        make_task(topics[(topic_offset + i) % len(topics)], kinds[i % len(kinds)])
        for i in range(turns)
    )
    return InteractionScript(name, tasks)


SCRIPT_PLANS = {
    "conceptual_discrimination": (("concept", "concept", "review"), 0),
    "fault_diagnosis": (("diagnosis", "concept", "diagnosis"), 1),
    "code_debugging": (("debug", "debug", "review"), 2),
    "mixed_review": (TASK_KINDS, 3),
}


def generate_default_scripts(turns: int = 20) -> list[InteractionScript]:
    return [make_script(name, kinds, turns, offset) for name, (kinds, offset) in SCRIPT_PLANS.items()]


def load_script(path: str | Path) -> InteractionScript:
    return InteractionScript.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_script(script: InteractionScript, path: str | Path) -> None:
    Path(path).write_text(json.dumps(script.to_dict(), indent=2) + "\n", encoding="utf-8")


def default_scripts() -> list[InteractionScript]:
    """The four shipped 20-turn scripts."""
    return [
        InteractionScript.from_dict(json.loads(_data_path("scripts", f"{name}.json").read_text(encoding="utf-8")))
        for name in SCRIPT_PLANS
    ]


# -- students -----------------------------------------------------------------

@dataclass(frozen=True)
class SimulatedStudent:
    archetype: Archetype
    mastery: dict[str, float]
    misconceptions: frozenset[tuple[str, str]]
    forgetfulness: float
    seed: int = 0
    student_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "archetype", Archetype(self.archetype))
        if any(not 0.0 <= m <= 1.0 for m in self.mastery.values()):
            raise InputError("mastery values must lie in [0, 1]")
        if not 0.0 <= self.forgetfulness <= 1.0:
            raise InputError("forgetfulness must lie in [0, 1]")

    @classmethod
    def from_archetype(cls, archetype: Archetype | str, seed: int = 0,
                       topics: Sequence[str] = DEFAULT_TOPICS) -> "SimulatedStudent":
        a = Archetype(archetype)
        row = archetype_table()[a.value]
        return cls(
            archetype=a,
            mastery={t: float(row["initial_mastery"]) for t in topics},
            misconceptions=frozenset((t, trap_id(t)) for t in row["misconceptions"] if t in topics),
            forgetfulness=float(row["forgetfulness"]),
            seed=seed,
            student_id=row["student_id"],
        )

    @property
    def preference(self) -> str:
        return archetype_table()[self.archetype.value]["preference"]

    def level(self, topic: str) -> int:
        """Difficulty level (1..5) implied by mastery of ``topic``."""
        return int(min(5, max(1, 1 + round(4 * self.mastery.get(topic, 0.0)))))

    def holds_misconception(self, topic: str) -> bool:
        return any(t == topic for t, _ in self.misconceptions)


@dataclass(frozen=True)
class TutorTurn:
    action: TeachingAction
    response: str
    hits: tuple[str, ...]
    topic: str
    checklist: tuple[str, ...]
    chunks_adopted: int = 0


@dataclass(frozen=True)
class StepOutcome:
    checklist_coverage_delta: float
    mastery_delta: float
    chunks_adopted: int
    response_len: int
    student_reply: str
    correct: bool

    def to_dict(self) -> dict:
        return {"checklist_coverage_delta": self.checklist_coverage_delta, "mastery_delta": self.mastery_delta,
                "chunks_adopted": self.chunks_adopted, "response_len": self.response_len,
                "student_reply": self.student_reply, "correct": self.correct}


def zero_outcome() -> StepOutcome:
    return StepOutcome(0.0, 0.0, 0, 0, "", False)


def mastery_gain(student: SimulatedStudent, topic: str, action: TeachingAction, coverage: float) -> float:
    """Change in mastery of ``topic`` from one tutor turn, before decay.

    Inside the difficulty band (|difficulty - level| <= 1) the gain scales
    with the archetype's receptivity to the strategy, the remaining headroom
    and the key-point coverage; two levels off stalls; further off confuses.
    """
    m = student.mastery.get(topic, 0.0)
    gap = abs(action.difficulty - student.level(topic))
    if gap >= 3:
        return -CONFUSION_LOSS
    if gap == 2:
        return 0.0
    gain = BASE_GAIN * receptivity(student.archetype, action.strategy) * (1.0 - m) * (0.5 + 0.5 * coverage)
    if student.holds_misconception(topic):
        gain *= MISCONCEPTION_DAMPING
    return gain


def student_respond(student: SimulatedStudent, turn: TutorTurn | None,
                    rng: np.random.Generator) -> tuple[SimulatedStudent, StepOutcome]:
    """Apply one tutor turn to the student and produce their reply.

    Order: learning on the task topic, misconception removal (only by the
    diagnosis role on that topic), decay of every topic by the forgetting
    rate, then a seeded correctness roll: correct iff post-update mastery
    plus a uniform slip in [-0.1, 0.1] reaches 0.5 and no misconception on
    the topic remains.  ``turn=None`` applies decay only.
    """
    mastery = dict(student.mastery)
    misconceptions = set(student.misconceptions)
    if turn is None:
        for t in mastery:
            mastery[t] = min(1.0, max(0.0, mastery[t] * (1.0 - student.forgetfulness)))
        return replace(student, mastery=mastery), zero_outcome()

    topic = turn.topic
    before = mastery.get(topic, 0.0)
    checklist = set(turn.checklist)
    covered = set(turn.hits) & checklist
    kp_points = [c for c in checklist if not c.endswith(".trap")]
    kp_cov = len(covered & set(kp_points)) / len(kp_points) if kp_points else 0.0

    mastery[topic] = min(1.0, max(0.0, before + mastery_gain(student, topic, turn.action, kp_cov)))
    resolved = []
    if turn.action.role is Role.DIAGNOSIS:
        for item in sorted(misconceptions):
            if item[0] == topic:
                misconceptions.discard(item)
                resolved.append(item[1])
                if item[1] in checklist:
                    covered.add(item[1])
    for t in mastery:
        mastery[t] = min(1.0, max(0.0, mastery[t] * (1.0 - student.forgetfulness)))

    new = replace(student, mastery=mastery, misconceptions=frozenset(misconceptions))
    roll = float(rng.uniform(-SLIP, SLIP))
    correct = mastery[topic] + roll >= 0.5 and not new.holds_misconception(topic)
    show_pref = bool(rng.random() < 0.5)
    reply = _reply_text(new, topic, correct, resolved, show_pref)
    coverage = len(covered) / len(checklist) if checklist else 0.0
    outcome = StepOutcome(coverage, mastery[topic] - before, turn.chunks_adopted, len(turn.response), reply, correct)
    return new, outcome


def _reply_text(student: SimulatedStudent, topic: str, correct: bool, resolved: Sequence[str], show_pref: bool) -> str:
    row = archetype_table()[student.archetype.value]
    parts = [f"[topic={topic}]", "[correct]" if correct else "[incorrect]",
             row["replies"]["correct" if correct else "incorrect"]]
    for _, tid in sorted(m for m in student.misconceptions if m[0] == topic):
        parts += [f"[trap={tid}]", topic_catalog().get(topic, {}).get("trap", "")]
    for tid in resolved:
        parts.append(f"[resolved={tid}]")
    if show_pref:
        parts.append(f"[pref={student.preference}]")
    return " ".join(p for p in parts if p)


# -- sessions -----------------------------------------------------------------

class RetrievalMode(str, enum.Enum):
    NONE = "none"
    STATIC = "static"
    EVOLVING = "evolving"


class MemoryMode(str, enum.Enum):
    NONE = "none"
    SUMMARY = "summary"
    PROFILE = "profile"


class ControlMode(str, enum.Enum):
    FIXED = "fixed"
    POLICY = "policy"


@dataclass
class SystemConfig:
    """Which layers are switched on, plus the policy and hyperparameters."""

    name: str = "full"
    retrieval: RetrievalMode = RetrievalMode.EVOLVING
    memory: MemoryMode = MemoryMode.PROFILE
    control: ControlMode = ControlMode.POLICY
    hyper: HyperParams = field(default_factory=HyperParams)
    policy: PolicyParams = field(default_factory=default_policy)
    fixed_action: TeachingAction = DEFAULT_ACTION
    adopt: int = 2
    summary_turns: int = 6

    def __post_init__(self):
        self.retrieval = RetrievalMode(self.retrieval)
        self.memory = MemoryMode(self.memory)
        self.control = ControlMode(self.control)


class TutoringSession:
    """One student working through one script under one system config.

    Per turn: observe, select an action, retrieve, respond, record adopted
    chunks, let the student respond, score the reward, append to short-term
    memory (consolidating on saturation), and every ``evolve_every`` turns
    run a knowledge evolution pass.  All randomness comes from ``seed``.
    """

    def __init__(self, student: SimulatedStudent, script: InteractionScript, config: SystemConfig,
                 providers: Providers | None = None, seed: int = 0, store: KnowledgeStore | None = None,
                 profile: Profile | None = None):
        if not script.tasks:
            raise InputError("script has no tasks")
        self.providers = providers or mock_providers()
        self.student = student
        self.script = script
        self.config = config
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        if config.retrieval is RetrievalMode.NONE:
            self.store = None
        else:
            self.store = store if store is not None else build_store(self.providers)
        self.profile = profile or Profile(student.student_id or student.archetype.value)
        self.stm = ShortTermMemory(config.hyper.window_size)
        self.summaries: list[str] = []
        self.replies: list[str] = []
        self.episode = f"{config.name}:{self.profile.student_id}:{script.name}:{seed}"
        self.trajectory = Trajectory(self.profile.student_id, self.episode)
        self._prev_action: TeachingAction | None = None
        self._prev_correct: bool | None = None

    # -- helpers --------------------------------------------------------------

    def _consolidate(self, now: int, final: bool = False) -> None:
        res = consolidate(self.profile, self.stm, self.providers.extractor,
                          self.config.hyper.consolidation_config(), now)
        self.profile, self.stm = res.profile, res.stm
        self.trajectory.events.append({
            "kind": "consolidation", "turn": now, "final": final, "error": res.error,
            "outcomes": [[k, o.value] for k, o in res.outcomes],
        })

    def _remember(self, qa: QaPair, now: int) -> None:
        if self.stm.saturated:
            # a previous consolidation failed; retry before evicting anything
            self._consolidate(now)
            if self.stm.saturated:
                dropped = self.stm.window[0]
                self.stm = replace(self.stm, window=self.stm.window[1:])
                self.trajectory.events.append({"kind": "eviction", "turn": now, "evicted_turn": dropped.turn_index})
        self.stm, saturated = append_interaction(self.stm, qa)
        if saturated:
            self._consolidate(now)

    def _memory_claims(self, view) -> dict[str, str]:
        mode = self.config.memory
        if mode is MemoryMode.PROFILE:
            claims = {f.key: f.polarity for f in view}
            claims.update({c.key: c.polarity for c in evidence_claims(qa.answer for qa in self.stm.window)})
            return claims
        if mode is MemoryMode.SUMMARY:
            return {c.key: c.polarity for c in evidence_claims(self.summaries)}
        return {}

    # -- main loop ------------------------------------------------------------

    def step(self, turn: int, task: Task) -> TrajectoryStep:
        cfg, hyper, now = self.config, self.config.hyper, turn
        weights = hyper.value_weights()
        uses_profile = cfg.memory is MemoryMode.PROFILE
        struggle = uses_profile and self._prev_correct is False
        state = observe(self.profile if uses_profile else Profile(self.profile.student_id),
                        self.store, task, now, weights, struggle)
        if cfg.control is ControlMode.POLICY:
            action = select_action(cfg.policy, state, self.rng)
        else:
            action = cfg.fixed_action

        hits_r = []
        if self.store is not None:
            hits_r = self.store.retrieve(task.question, action.top_k, action.scope, self.providers.embedder)
        adopted = [self.store.get(h.chunk_id) for h in hits_r[:cfg.adopt]]
        others = [h.chunk_id for h in hits_r[cfg.adopt:]]
        context = self.summaries if cfg.memory is MemoryMode.SUMMARY else None

        transcript = TurnTranscript(
            episode=self.episode, turn=turn, topic=task.topic, question=task.question,
            checklist=list(task.checklist), ideal_strategy=task.ideal_strategy.value,
            action=action.to_dict(),
            previous_action=self._prev_action.to_dict() if self._prev_action else None,
            previous_correct=self._prev_correct,
            retrieved=[{"id": h.chunk_id, "similarity": h.similarity, "is_abstract": h.is_abstract,
                        "topic": self.store.get(h.chunk_id).topic} for h in hits_r],
            adopted=[{"id": c.id, "topic": c.topic, "is_abstract": c.is_abstract} for c in adopted],
            memory_claims=self._memory_claims(state.profile_view),
            truth_facts={c.key: c.polarity for c in evidence_claims(self.replies)},
            archetype=self.student.archetype.value,
            student_level=self.student.level(task.topic),
            strategy_fit=strategy_fit(self.student.archetype, action.strategy),
        )

        try:
            response = self.providers.responder.respond(task, adopted, state.profile_view, action,
                                                        context=context, others=others)
        except ProviderError as exc:
            transcript.provider_error = str(exc)
            self.student, outcome = student_respond(self.student, None, self.rng)
        else:
            for c in adopted:
                self.store.record_access(c.id, now)
            found = find_key_points(response)
            hits = tuple(c for c in found if c in task.checklist)
            grounded = set()
            for c in adopted:
                grounded.update(find_key_points(c.text or ""))
            transcript.response = response
            transcript.hits = list(hits)
            transcript.grounded_hits = sorted(grounded & set(task.checklist))
            self.student, outcome = student_respond(
                self.student, TutorTurn(action, response, hits, task.topic, task.checklist, len(adopted)), self.rng)
        reward = compute_reward(outcome, hyper)
        transcript.correct = outcome.correct if transcript.provider_error is None else None

        if outcome.student_reply:
            qa = QaPair(turn, task.question, outcome.student_reply, now)
            if uses_profile:
                self._remember(qa, now)
            elif cfg.memory is MemoryMode.SUMMARY:
                self.summaries.append(f"t{turn} {task.topic}: {outcome.student_reply[:SUMMARY_CHARS]}")
                self.summaries = self.summaries[-cfg.summary_turns:]
            self.replies.append(outcome.student_reply)

        if cfg.retrieval is RetrievalMode.EVOLVING and turn % hyper.evolve_every == 0:
            _, report = evolve(self.store, weights, hyper.thresholds(), self.providers.summarizer,
                               self.providers.embedder, now)
            ev = report.to_dict()
            ev.pop("scores")
            self.trajectory.events.append({"kind": "evolution", "turn": now, "report": ev})

        self._prev_action = action
        self._prev_correct = outcome.correct if transcript.provider_error is None else None
        step = TrajectoryStep(turn, state.digest(), action.to_dict(), reward,
                              {**transcript.to_dict(), "outcome": outcome.to_dict()})
        self.trajectory.append(step)
        return step

    def run(self) -> Trajectory:
        for turn, task in enumerate(self.script.tasks, start=1):
            self.step(turn, task)
        if self.config.memory is MemoryMode.PROFILE and self.stm.window:
            self._consolidate(len(self.script.tasks), final=True)
        return self.trajectory


def run_session(student: SimulatedStudent, script: InteractionScript, config: SystemConfig,
                providers: Providers | None = None, seed: int = 0,
                store: KnowledgeStore | None = None) -> Trajectory:
    """Run one full episode and return its trajectory."""
    return TutoringSession(student, script, config, providers, seed, store).run()
