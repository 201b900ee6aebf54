"""Judge-ensemble scoring, aggregation, and the five-configuration ablation."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigurationError
from .meta_control import HyperParams, PolicyParams, Trajectory, default_policy, estimate_objective
from .providers import Providers, mock_providers
from .simulation import (
    Archetype,
    ControlMode,
    InteractionScript,
    MemoryMode,
    RetrievalMode,
    SimulatedStudent,
    SystemConfig,
    build_store,
    default_scripts,
    run_session,
)
from .transcript import INDICATORS, Indicator, TurnTranscript

CONFIG_LABELS = {
    "a": "LLM Only",
    "b": "Static RAG",
    "c": "Simple Memory",
    "d": "Single Agent",
    "e": "Full System",
}

TABLE_HEADERS = ("Factual", "Contextual", "Memory", "Personalization", "Knowledge", "Strategy", "Average")


@dataclass(frozen=True)
class IndicatorScore:
    indicator: Indicator
    judge_id: str
    episode: str
    turn: int
    score: float | None  # None = abstained

    def __post_init__(self):
        object.__setattr__(self, "indicator", Indicator(self.indicator))
        if self.score is not None and not 1.0 <= self.score <= 10.0:
            raise ValueError(f"score {self.score} outside [1, 10]")

    def to_dict(self) -> dict:
        return {"indicator": self.indicator.value, "judge_id": self.judge_id, "episode": self.episode,
                "turn": self.turn, "score": self.score}

    @classmethod
    def from_dict(cls, d: dict) -> "IndicatorScore":
        return cls(**d)


@dataclass
class EvaluationReport:
    config: str
    indicator_means: dict[Indicator, float | None]
    average: float | None
    cells: dict[Indicator, int]
    judge_counts: dict[Indicator, int]
    missing: list[Indicator] = field(default_factory=list)

    def row(self) -> list[float | None]:
        return [self.indicator_means.get(i) for i in INDICATORS] + [self.average]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "indicator_means": {i.value: v for i, v in self.indicator_means.items()},
            "average": self.average,
            "cells": {i.value: n for i, n in self.cells.items()},
            "judge_counts": {i.value: n for i, n in self.judge_counts.items()},
            "missing": [i.value for i in self.missing],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        return cls(
            d["config"],
            {Indicator(k): v for k, v in d["indicator_means"].items()},
            d["average"],
            {Indicator(k): n for k, n in d["cells"].items()},
            {Indicator(k): n for k, n in d["judge_counts"].items()},
            [Indicator(k) for k in d.get("missing", [])],
        )


def aggregate(scores: Iterable[IndicatorScore], config: str = "") -> EvaluationReport:
    """Mean over judges within each (episode, turn) cell, then over cells.

    Abstentions are excluded.  An indicator without any score is reported
    as missing and left out of the overall average.
    """
    cells: dict[Indicator, dict[tuple[str, int], list[float]]] = defaultdict(lambda: defaultdict(list))
    judges: dict[Indicator, set[str]] = defaultdict(set)
    for s in scores:
        if s.score is None:
            continue
        cells[s.indicator][(s.episode, s.turn)].append(s.score)
        judges[s.indicator].add(s.judge_id)

    means: dict[Indicator, float | None] = {}
    counts, missing = {}, []
    for ind in INDICATORS:
        per_cell = cells.get(ind)
        if not per_cell:
            means[ind] = None
            counts[ind] = 0
            missing.append(ind)
            continue
        # sorted keys keep float summation order independent of input order
        cell_means = [math.fsum(v) / len(v) for _, v in sorted(per_cell.items())]
        means[ind] = math.fsum(cell_means) / len(cell_means)
        counts[ind] = len(cell_means)
    present = [v for v in means.values() if v is not None]
    average = math.fsum(present) / len(present) if present else None
    return EvaluationReport(config, means, average, counts,
                            {i: len(judges.get(i, ())) for i in INDICATORS}, missing)


def judge_trajectory(trajectory: Trajectory, judges: Sequence) -> list[IndicatorScore]:
    out = []
    for step in trajectory.steps:
        d = dict(step.transcript)
        d.pop("outcome", None)
        t = TurnTranscript.from_dict(d)
        for ind in INDICATORS:
            for j in judges:
                out.append(IndicatorScore(ind, j.judge_id, t.episode, t.turn, j.judge(t, ind)))
    return out


# -- ablation -----------------------------------------------------------------

def ablation_config(name: str, hyper: HyperParams | None = None,
                    policy: PolicyParams | None = None) -> SystemConfig:
    """One of the five compared settings.

    a: responder only.  b: fixed top-k retrieval, no profile, no evolution.
    c: sliding-window reply summaries, no retrieval.  d: profile memory and
    evolving knowledge with a constant action.  e: everything, policy-driven.
    """
    hyper = hyper or HyperParams()
    policy = policy or default_policy()
    layers = {
        "a": (RetrievalMode.NONE, MemoryMode.NONE, ControlMode.FIXED),
        "b": (RetrievalMode.STATIC, MemoryMode.NONE, ControlMode.FIXED),
        "c": (RetrievalMode.NONE, MemoryMode.SUMMARY, ControlMode.FIXED),
        "d": (RetrievalMode.EVOLVING, MemoryMode.PROFILE, ControlMode.FIXED),
        "e": (RetrievalMode.EVOLVING, MemoryMode.PROFILE, ControlMode.POLICY),
    }
    if name not in layers:
        raise ConfigurationError(f"unknown ablation config {name!r}; expected one of a-e")
    r, m, c = layers[name]
    return SystemConfig(name=name, retrieval=r, memory=m, control=c, hyper=hyper, policy=policy)


def episode_seed(seed: int, archetype_index: int, script_index: int) -> int:
    return seed * 1000 + archetype_index * 100 + script_index


@dataclass
class AblationResult:
    reports: dict[str, EvaluationReport]
    trajectories: dict[str, list[Trajectory]]
    scores: dict[str, list[IndicatorScore]]

    def table(self, digits: int = 2) -> str:
        return format_table(self.reports.values(), digits)


def run_episodes(config: SystemConfig, scripts: Sequence[InteractionScript],
                 archetypes: Sequence[Archetype], seed: int, providers: Providers) -> list[Trajectory]:
    base_store = build_store(providers) if config.retrieval is not RetrievalMode.NONE else None
    out = []
    for ai, arch in enumerate(archetypes):
        for si, script in enumerate(scripts):
            s = episode_seed(seed, ai, si)
            student = SimulatedStudent.from_archetype(arch, seed=s)
            store = base_store.copy() if base_store is not None else None
            out.append(run_session(student, script, config, providers, s, store))
    return out


def run_ablation(configs: Sequence[str] = tuple(CONFIG_LABELS), scripts: Sequence[InteractionScript] | None = None,
                 archetypes: Sequence[Archetype] = tuple(Archetype), seed: int = 0,
                 providers: Providers | None = None, hyper: HyperParams | None = None,
                 policy: PolicyParams | None = None) -> AblationResult:
    """Run every config on identical scripts, students and seeds, then judge."""
    providers = providers or mock_providers()
    scripts = list(scripts) if scripts is not None else default_scripts()
    reports, trajs, scores = {}, {}, {}
    for name in configs:
        try:
            cfg = ablation_config(name, hyper, policy)
        except Exception as exc:
            raise ConfigurationError(f"cannot build config {name!r}: {exc}") from exc
        trajs[name] = run_episodes(cfg, scripts, archetypes, seed, providers)
        scores[name] = [s for t in trajs[name] for s in judge_trajectory(t, providers.judges)]
        reports[name] = aggregate(scores[name], name)
    return AblationResult(reports, trajs, scores)


def _fmt(v: float | None, digits: int) -> str:
    return "-" if v is None else f"{v:.{digits}f}"


def format_table(reports: Iterable[EvaluationReport], digits: int = 2) -> str:
    """Plain-text comparison table; rounding happens only here."""
    head = ["Setting"] + list(TABLE_HEADERS)
    rows = []
    for r in reports:
        label = f"({r.config}) {CONFIG_LABELS.get(r.config, r.config)}"
        rows.append([label] + [_fmt(v, digits) for v in r.row()])
    widths = [max(len(str(x)) for x in col) for col in zip(head, *rows)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(line, widths)).rstrip() for line in [head] + rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def write_bench(result: AblationResult, out_dir: str | Path) -> dict[str, Path]:
    """Write trajectories, raw scores and the report as JSON files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "trajectories": out / "trajectories.jsonl",
        "scores": out / "scores.jsonl",
        "report": out / "report.json",
    }
    with open(paths["trajectories"], "w", encoding="utf-8") as fh:
        for name, ts in result.trajectories.items():
            for t in ts:
                fh.write(json.dumps({"config": name, **t.to_dict()}, sort_keys=True) + "\n")
    with open(paths["scores"], "w", encoding="utf-8") as fh:
        for name, ss in result.scores.items():
            for s in ss:
                fh.write(json.dumps({"config": name, **s.to_dict()}, sort_keys=True) + "\n")
    report = {"configs": [r.to_dict() for r in result.reports.values()]}
    paths["report"].write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return paths


def load_reports(path: str | Path) -> list[EvaluationReport]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [EvaluationReport.from_dict(d) for d in data["configs"]]


def load_scores(path: str | Path) -> dict[str, list[IndicatorScore]]:
    out: dict[str, list[IndicatorScore]] = defaultdict(list)
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            d = json.loads(line)
            name = d.pop("config")
            out[name].append(IndicatorScore.from_dict(d))
    return dict(out)


def episode_batch_objective(providers: Providers | None = None, seed: int = 0,
                            scripts: Sequence[InteractionScript] | None = None,
                            archetypes: Sequence[Archetype] = tuple(Archetype)):
    """Objective for the outer loop: mean return of the full system over a fixed batch.

    The batch (one episode per archetype and script) and its seeds are the
    same for every candidate, so two candidates are compared on identical
    students rather than on independent noise.
    """
    providers = providers or mock_providers()
    scripts = list(scripts) if scripts is not None else default_scripts()
    base_store = build_store(providers)

    def evaluate(policy: PolicyParams, hyper: HyperParams) -> float:
        cfg = ablation_config("e", hyper, policy)
        trajs = []
        for ai, arch in enumerate(archetypes):
            for si, script in enumerate(scripts):
                s = episode_seed(seed, ai, si)
                student = SimulatedStudent.from_archetype(arch, seed=s)
                trajs.append(run_session(student, script, cfg, providers, s, base_store.copy()))
        return estimate_objective(trajs)

    return evaluate
