"""Inner-loop teaching policy and outer-loop search over policy and hyperparameters.

The inner loop observes a control state built from the student profile, the
active knowledge and the current task, and samples a composite teaching
action.  Each action component (role, strategy, difficulty, retrieval width,
retrieval scope) gets a linear score over binary state features and is drawn
from its own softmax.

The outer loop perturbs one coordinate of (policy weights, hyperparameters)
at a time, projects the candidate back into its valid range, and keeps it
only if the estimated objective improves.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .cpl_memory import ConsolidationConfig, Profile, ProfileFeature, profile_view_dicts, query_profile
from .errors import ConfigurationError, InputError
from .knowledge_store import KnowledgeStore, LifecycleThresholds, Scope, ValueWeights
from .markers import ASSERTS, NEGATES, mastery_key, misconception_key, preference_key, trap_id

log = logging.getLogger(__name__)

PROFILE_VIEW_MIN_CONFIDENCE = 0.3
MISCONCEPTION_CONFIDENCE = 0.6
HIGH_VALUE_MEAN = 0.7
TOP_M = 3
DELTA_GAP = 0.05


class Role(str, enum.Enum):
    EXPLANATION = "explanation"
    DIAGNOSIS = "diagnosis"
    QUESTION_GENERATION = "question_generation"
    KNOWLEDGE_RECONSTRUCTION = "knowledge_reconstruction"


class Strategy(str, enum.Enum):
    DIRECT_INSTRUCTION = "direct_instruction"
    HINTING = "hinting"
    SOCRATIC_QUESTIONING = "socratic_questioning"
    ANALOGICAL_DEMONSTRATION = "analogical_demonstration"
    DIAGNOSTIC_TEST = "diagnostic_test"


COMPONENTS: dict[str, tuple] = {
    "role": tuple(Role),
    "strategy": tuple(Strategy),
    "difficulty": (1, 2, 3, 4, 5),
    "top_k": tuple(range(1, 11)),
    "scope": tuple(Scope),
}

FEATURES = (
    "bias",
    "topic_weak",
    "topic_strong",
    "misconception_on_topic",
    "pref_intuition",
    "pref_implementation",
    "pref_examples",
    "high_value_knowledge",
    "recent_struggle",
)


def _opt_name(option) -> str:
    return option.value if isinstance(option, enum.Enum) else str(option)


def weight_key(feature: str, component: str, option) -> str:
    return f"{feature}|{component}={_opt_name(option)}"


@lru_cache(maxsize=None)
def _weight_keys(feature: str, component: str) -> tuple[str, ...]:
    return tuple(weight_key(feature, component, o) for o in COMPONENTS[component])


@dataclass(frozen=True)
class TeachingAction:
    role: Role = Role.EXPLANATION
    strategy: Strategy = Strategy.DIRECT_INSTRUCTION
    difficulty: int = 3
    top_k: int = 5
    scope: Scope = Scope.ACTIVE_PLUS_SOLIDIFIED

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "scope", Scope(self.scope))
        if self.difficulty not in COMPONENTS["difficulty"] or self.top_k not in COMPONENTS["top_k"]:
            raise InputError("difficulty must be 1..5 and top_k 1..10")

    def to_dict(self) -> dict:
        return {"role": self.role.value, "strategy": self.strategy.value, "difficulty": self.difficulty,
                "top_k": self.top_k, "scope": self.scope.value}

    @classmethod
    def from_dict(cls, d: dict) -> "TeachingAction":
        return cls(**d)


DEFAULT_ACTION = TeachingAction()


@dataclass(frozen=True)
class TaskView:
    topic: str
    question: str


@dataclass(frozen=True)
class ActiveKnowledge:
    size: int = 0
    mean_value: float = 0.0
    top_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class ControlState:
    profile_view: tuple[ProfileFeature, ...]
    active_knowledge: ActiveKnowledge
    task: TaskView
    recent_struggle: bool = False

    def features(self) -> dict[str, float]:
        """Binary state features read by the policy."""
        pol = {f.key: f for f in self.profile_view}
        mastery = pol.get(mastery_key(self.task.topic))
        misc = pol.get(misconception_key(trap_id(self.task.topic)))

        def asserted(key: str) -> bool:
            f = pol.get(key)
            return f is not None and f.polarity == ASSERTS

        return {
            "bias": 1.0,
            "topic_weak": float(mastery is not None and mastery.polarity == NEGATES),
            "topic_strong": float(mastery is not None and mastery.polarity == ASSERTS),
            "misconception_on_topic": float(
                misc is not None and misc.polarity == ASSERTS and misc.confidence >= MISCONCEPTION_CONFIDENCE
            ),
            "pref_intuition": float(asserted(preference_key("intuition"))),
            "pref_implementation": float(asserted(preference_key("implementation"))),
            "pref_examples": float(asserted(preference_key("examples"))),
            "high_value_knowledge": float(self.active_knowledge.mean_value > HIGH_VALUE_MEAN),
            "recent_struggle": float(self.recent_struggle),
        }

    def digest(self) -> dict:
        return {
            "topic": self.task.topic,
            "profile": profile_view_dicts(self.profile_view),
            "active_size": self.active_knowledge.size,
            "active_mean_value": round(self.active_knowledge.mean_value, 9),
            "active_top": list(self.active_knowledge.top_ids),
            "features": {k: v for k, v in self.features().items() if v},
        }


def observe(
    profile: Profile,
    store: KnowledgeStore | None,
    task,
    now: int = 0,
    weights: ValueWeights | None = None,
    recent_struggle: bool = False,
) -> ControlState:
    """Project (profile, active knowledge, task) into a control state.

    ``recent_struggle`` carries the outcome of the last dialogue turn held
    in short-term memory.
    """
    view = tuple(query_profile(profile, PROFILE_VIEW_MIN_CONFIDENCE))
    active = ActiveKnowledge()
    if store is not None and store.active_chunks():
        scores = store.value_scores(now, weights or ValueWeights())
        act = {c.id: scores[c.id] for c in store.active_chunks()}
        top = sorted(act, key=lambda cid: (-act[cid], cid))[:TOP_M]
        active = ActiveKnowledge(len(act), float(np.mean(list(act.values()))), tuple(top))
    return ControlState(view, active, TaskView(task.topic, task.question), recent_struggle)


@dataclass
class PolicyParams:
    weights: dict[str, float] = field(default_factory=dict)
    temperature: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigurationError("temperature must be positive")
        if not all(math.isfinite(w) for w in self.weights.values()):
            raise ConfigurationError("policy weights must be finite")

    def scores(self, component: str, feats: dict[str, float]) -> np.ndarray:
        out = np.zeros(len(COMPONENTS[component]))
        for f, x in feats.items():
            if x:
                out += x * np.array([self.weights.get(k, 0.0) for k in _weight_keys(f, component)])
        return out

    def to_dict(self) -> dict:
        return {"weights": dict(sorted(self.weights.items())), "temperature": self.temperature, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyParams":
        return cls(dict(d.get("weights", {})), float(d.get("temperature", 0.5)), int(d.get("seed", 0)))


def default_policy(temperature: float = 0.5, seed: int = 0) -> PolicyParams:
    """Initial weights wiring the intended couplings.

    A confident misconception favours the diagnosis role and diagnostic
    strategies; dense high-value knowledge favours explanation; weak topics
    lower difficulty, strong ones raise it; stated preferences pick the
    strategy each learner responds to; a struggling last turn pushes the
    tutor off its current path.
    """
    S, R = Strategy, Role
    table: dict[tuple[str, str, object], float] = {
        ("bias", "role", R.EXPLANATION): 1.0,
        ("bias", "role", R.QUESTION_GENERATION): 0.3,
        ("misconception_on_topic", "role", R.DIAGNOSIS): 3.0,
        ("high_value_knowledge", "role", R.EXPLANATION): 1.0,
        ("topic_weak", "role", R.KNOWLEDGE_RECONSTRUCTION): 1.0,
        ("recent_struggle", "role", R.DIAGNOSIS): 1.0,
        ("recent_struggle", "role", R.KNOWLEDGE_RECONSTRUCTION): 1.0,
        ("bias", "strategy", S.DIRECT_INSTRUCTION): 0.5,
        ("bias", "strategy", S.SOCRATIC_QUESTIONING): 0.3,
        ("pref_intuition", "strategy", S.ANALOGICAL_DEMONSTRATION): 2.5,
        ("pref_implementation", "strategy", S.DIRECT_INSTRUCTION): 2.5,
        ("pref_examples", "strategy", S.SOCRATIC_QUESTIONING): 1.5,
        ("pref_examples", "strategy", S.DIAGNOSTIC_TEST): 1.5,
        ("misconception_on_topic", "strategy", S.DIAGNOSTIC_TEST): 2.0,
        ("misconception_on_topic", "strategy", S.SOCRATIC_QUESTIONING): 1.0,
        ("topic_weak", "strategy", S.HINTING): 0.5,
        ("recent_struggle", "strategy", S.DIAGNOSTIC_TEST): 1.0,
        ("recent_struggle", "strategy", S.HINTING): 1.0,
        ("recent_struggle", "strategy", S.DIRECT_INSTRUCTION): -1.0,
        ("bias", "difficulty", 3): 1.0,
        ("bias", "difficulty", 2): 0.5,
        ("bias", "difficulty", 4): 0.5,
        ("topic_weak", "difficulty", 1): 1.5,
        ("topic_weak", "difficulty", 2): 2.5,
        ("topic_weak", "difficulty", 3): -1.0,
        ("topic_strong", "difficulty", 4): 2.5,
        ("topic_strong", "difficulty", 5): 1.5,
        ("topic_strong", "difficulty", 3): -1.0,
        ("pref_intuition", "difficulty", 2): 1.0,
        ("pref_implementation", "difficulty", 4): 1.0,
        ("bias", "top_k", 3): 2.0,
        ("bias", "top_k", 4): 2.0,
        ("bias", "top_k", 5): 1.5,
        ("bias", "scope", Scope.ACTIVE_PLUS_SOLIDIFIED): 2.0,
    }
    weights = {weight_key(f, c, o): w for (f, c, o), w in table.items()}
    return PolicyParams(weights, temperature, seed)


def softmax(scores: np.ndarray, temperature: float) -> np.ndarray:
    z = scores / temperature
    z = z - z.max()
    p = np.exp(z)
    return p / p.sum()


def select_action(policy: PolicyParams, s: ControlState, rng: np.random.Generator) -> TeachingAction:
    """Sample each action component independently from its softmax."""
    feats = s.features()
    chosen = {}
    for comp, options in COMPONENTS.items():
        p = softmax(policy.scores(comp, feats), policy.temperature)
        idx = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
        chosen[comp] = options[min(idx, len(options) - 1)]
    return TeachingAction(**chosen)


@dataclass
class HyperParams:
    """Hyperparameters governing profile consolidation, knowledge value and reward."""

    learning_rate: float = 0.3
    match_threshold: float = 0.8
    window_size: int = 4
    alpha: float = 0.5
    beta: float = 0.3
    gamma: float = 0.2
    tau_decay: float = 50.0
    theta_solid: float = 0.7
    theta_forget: float = 0.3
    k_density: int = 3
    evolve_every: int = 20
    c_cost: float = 0.05

    def __post_init__(self):
        # the constructors below validate their own ranges
        w = self.value_weights()
        self.alpha, self.beta, self.gamma = w.alpha, w.beta, w.gamma
        self.consolidation_config()
        self.thresholds()
        if self.evolve_every < 1 or self.c_cost < 0:
            raise ConfigurationError("evolve_every must be positive and c_cost non-negative")

    def consolidation_config(self) -> ConsolidationConfig:
        return ConsolidationConfig(self.learning_rate, self.match_threshold, self.window_size)

    def value_weights(self) -> ValueWeights:
        return ValueWeights(self.alpha, self.beta, self.gamma, self.tau_decay, self.k_density)

    def thresholds(self) -> LifecycleThresholds:
        return LifecycleThresholds(self.theta_solid, self.theta_forget)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class RewardRecord:
    learning_gain: float
    interaction_cost: float
    r: float

    def to_dict(self) -> dict:
        return asdict(self)


def compute_reward(outcome, hyper: HyperParams) -> RewardRecord:
    """Learning gain minus weighted interaction cost."""
    gain = outcome.checklist_coverage_delta + outcome.mastery_delta
    cost = outcome.chunks_adopted + outcome.response_len / 1000.0
    r = gain - hyper.c_cost * cost
    if not math.isfinite(r):
        raise InputError("reward is not finite")
    return RewardRecord(gain, cost, r)


@dataclass
class TrajectoryStep:
    turn: int
    state: dict
    action: dict
    reward: RewardRecord
    transcript: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"turn": self.turn, "state": self.state, "action": self.action,
                "reward": self.reward.to_dict(), "transcript": self.transcript}

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryStep":
        return cls(d["turn"], d["state"], d["action"], RewardRecord(**d["reward"]), d.get("transcript", {}))


@dataclass
class Trajectory:
    student_id: str
    episode: str = ""
    steps: list[TrajectoryStep] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    episode_return: float = 0.0

    def append(self, step: TrajectoryStep) -> None:
        self.steps.append(step)
        self.episode_return += step.reward.r

    def recomputed_return(self) -> float:
        return math.fsum(s.reward.r for s in self.steps)

    def events_of(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["kind"] == kind]

    def to_dict(self) -> dict:
        return {"student_id": self.student_id, "episode": self.episode,
                "episode_return": self.episode_return,
                "steps": [s.to_dict() for s in self.steps], "events": self.events}

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(d["student_id"], d.get("episode", ""), [TrajectoryStep.from_dict(s) for s in d["steps"]],
                   list(d.get("events", [])), float(d["episode_return"]))


def estimate_objective(trajectories: Sequence[Trajectory]) -> float:
    """Monte Carlo estimate of the expected episode return."""
    if not trajectories:
        raise InputError("need at least one trajectory")
    return math.fsum(t.episode_return for t in trajectories) / len(trajectories)


# -- outer loop ---------------------------------------------------------------

# name -> (low, high, is_integer)
LAMBDA_SPACE: dict[str, tuple[float, float, bool]] = {
    "learning_rate": (0.01, 0.99, False),
    "match_threshold": (0.05, 0.99, False),
    "window_size": (1, 16, True),
    "alpha": (0.0, 1.0, False),
    "beta": (0.0, 1.0, False),
    "gamma": (0.0, 1.0, False),
    "tau_decay": (1.0, 500.0, False),
    "theta_solid": (DELTA_GAP, 1.0, False),
    "theta_forget": (0.0, 1.0 - DELTA_GAP, False),
    "k_density": (1, 10, True),
    "evolve_every": (1, 100, True),
    "c_cost": (0.0, 0.5, False),
}
WEIGHT_RANGE = (-5.0, 5.0)
TEMPERATURE_RANGE = (0.05, 5.0)


@dataclass(frozen=True)
class SearchConfig:
    budget: int = 50
    step_scale: float = 0.1
    delta_gap: float = DELTA_GAP
    search_policy: bool = True
    search_hyper: bool = True

    def __post_init__(self):
        if self.budget < 1:
            raise ConfigurationError("search budget must be >= 1")
        if not (self.search_policy or self.search_hyper):
            raise ConfigurationError("nothing to search")


@dataclass
class SearchResult:
    policy: PolicyParams
    hyper: HyperParams
    best_score: float
    history: list[dict]

    def accepted_scores(self) -> list[float]:
        return [h["score"] for h in self.history if h["accepted"]]


def policy_coordinates() -> list[str]:
    keys = [weight_key(f, c, o) for f in FEATURES for c, opts in COMPONENTS.items() for o in opts]
    return keys + ["temperature"]


def project_hyper(h: dict, coord: str, delta_gap: float = DELTA_GAP) -> dict:
    """Re-project a perturbed hyperparameter dict into the valid region."""
    h = dict(h)
    if coord in ("alpha", "beta", "gamma"):
        a, b, g = (max(0.0, h[k]) for k in ("alpha", "beta", "gamma"))
        total = a + b + g
        if total <= 0:
            a = b = g = total = 1.0
        h["alpha"], h["beta"], h["gamma"] = a / total, b / total, g / total
    if coord == "theta_solid":
        h["theta_solid"] = min(1.0, max(h["theta_solid"], h["theta_forget"] + delta_gap))
    elif h["theta_solid"] - h["theta_forget"] < delta_gap:
        h["theta_forget"] = max(0.0, h["theta_solid"] - delta_gap)
    return h


def _perturb(value: float, lo: float, hi: float, is_int: bool, scale: float, rng) -> float:
    new = value + rng.normal() * scale * (hi - lo)
    new = min(hi, max(lo, new))
    return int(round(new)) if is_int else float(new)


def outer_update(
    policy: PolicyParams,
    hyper: HyperParams,
    eval_fn: Callable[[PolicyParams, HyperParams], float],
    search: SearchConfig,
    rng: np.random.Generator,
) -> SearchResult:
    """Coordinate-wise random search with accept-if-improved.

    Every iteration picks the policy or hyperparameter block (uniformly
    among the enabled ones), then one coordinate within it, adds a Gaussian
    step of ``step_scale`` times the coordinate's range, projects, and
    evaluates.  Failing evaluations are logged and skipped.
    """
    blocks = [b for b, on in (("policy", search.search_policy), ("hyper", search.search_hyper)) if on]
    pcoords = policy_coordinates()
    hcoords = list(LAMBDA_SPACE)
    history: list[dict] = []

    try:
        best = float(eval_fn(policy, hyper))
    except Exception as exc:  # eval_fn is user code
        log.warning("baseline evaluation failed: %s", exc)
        best = -math.inf
    history.append({"iteration": 0, "block": None, "coordinate": None, "value": None,
                    "score": best, "accepted": True, "error": None})

    for it in range(1, search.budget + 1):
        block = blocks[int(rng.integers(len(blocks)))]
        if block == "policy":
            coord = pcoords[int(rng.integers(len(pcoords)))]
            if coord == "temperature":
                new_val = _perturb(policy.temperature, *TEMPERATURE_RANGE, False, search.step_scale, rng)
                cand_policy = replace(policy, temperature=new_val)
            else:
                w = dict(policy.weights)
                new_val = _perturb(w.get(coord, 0.0), *WEIGHT_RANGE, False, search.step_scale, rng)
                w[coord] = new_val
                cand_policy = replace(policy, weights=w)
            cand_hyper = hyper
        else:
            coord = hcoords[int(rng.integers(len(hcoords)))]
            lo, hi, is_int = LAMBDA_SPACE[coord]
            h = hyper.to_dict()
            h[coord] = _perturb(h[coord], lo, hi, is_int, search.step_scale, rng)
            h = project_hyper(h, coord, search.delta_gap)
            new_val = h[coord]
            cand_policy, cand_hyper = policy, HyperParams.from_dict(h)

        entry = {"iteration": it, "block": block, "coordinate": coord, "value": new_val,
                 "score": None, "accepted": False, "error": None}
        try:
            score = float(eval_fn(cand_policy, cand_hyper))
        except Exception as exc:
            log.warning("evaluation failed at iteration %d: %s", it, exc)
            entry["error"] = f"{type(exc).__name__}: {exc}"
            history.append(entry)
            continue
        entry["score"] = score
        if score > best:
            best, policy, hyper = score, cand_policy, cand_hyper
            entry["accepted"] = True
        history.append(entry)
    return SearchResult(policy, hyper, best, history)
