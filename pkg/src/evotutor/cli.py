"""Command-line entry points: evolve, tune, run, bench, report.

Configuration files are JSON objects with optional ``hyper``, ``policy``,
``provider`` and ``judges`` sections; anything missing falls back to the
defaults.  Every command exits 0 on success, 2 on bad input or config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EvoTutorError
from .evaluation import (
    CONFIG_LABELS,
    ablation_config,
    episode_batch_objective,
    format_table,
    load_reports,
    run_ablation,
    write_bench,
)
from .knowledge_store import KnowledgeStore
from .lifecycle import append_report, evolve
from .meta_control import HyperParams, PolicyParams, SearchConfig, default_policy, outer_update
from .providers import ProviderConfig, Providers, build_providers
from .simulation import (
    Archetype,
    InteractionScript,
    SimulatedStudent,
    build_store,
    default_scripts,
    load_script,
    run_session,
)

log = logging.getLogger("evotutor")


@dataclass
class RunConfig:
    hyper: HyperParams = field(default_factory=HyperParams)
    policy: PolicyParams = field(default_factory=default_policy)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    judges: list[ProviderConfig] = field(default_factory=list)

    def providers(self) -> Providers:
        return build_providers(self.provider, judge_configs=self.judges)

    def to_dict(self) -> dict:
        return {
            "hyper": self.hyper.to_dict(),
            "policy": self.policy.to_dict(),
            "provider": {k: (v.value if hasattr(v, "value") else v) for k, v in vars(self.provider).items()},
        }


def load_config(path: str | Path | None) -> RunConfig:
    if path is None or not Path(path).exists():
        if path is not None:
            log.info("config %s not found, using defaults", path)
        return RunConfig()
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise EvoTutorError(f"{path}: config must be a JSON object")
    cfg = RunConfig()
    if "hyper" in raw:
        cfg.hyper = HyperParams.from_dict({**HyperParams().to_dict(), **raw["hyper"]})
    if "policy" in raw:
        cfg.policy = PolicyParams.from_dict(raw["policy"])
    if "provider" in raw:
        cfg.provider = ProviderConfig.from_dict(raw["provider"])
    cfg.judges = [ProviderConfig.from_dict(j) for j in raw.get("judges", [])]
    return cfg


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _script(arg: str) -> InteractionScript:
    """A script file path, or the name of one of the bundled scripts."""
    p = Path(arg)
    if p.exists():
        return load_script(p)
    by_name = {s.name: s for s in default_scripts()}
    if arg in by_name:
        return by_name[arg]
    raise EvoTutorError(f"no script file or bundled script named {arg!r} (bundled: {', '.join(sorted(by_name))})")


# -- commands -----------------------------------------------------------------

def cmd_evolve(args) -> int:
    cfg = load_config(args.config)
    providers = cfg.providers()
    kb = Path(args.kb)
    if kb.exists():
        store = KnowledgeStore.load(kb)
    elif args.init:
        store = build_store(providers)
    else:
        raise EvoTutorError(f"{kb} does not exist (pass --init to build the synthetic corpus)")
    if store.embedder_id != providers.embedder.embedder_id:
        raise EvoTutorError(f"{kb} was embedded with {store.embedder_id}, not {providers.embedder.embedder_id}")
    now = args.now
    if now is None:
        now = max((c.last_access for c in store.chunks.values()), default=0)
    _, report = evolve(store, cfg.hyper.value_weights(), cfg.hyper.thresholds(), providers.summarizer,
                       providers.embedder, now)
    store.save(kb)
    audit = Path(args.audit) if args.audit else kb.with_suffix(".evolution.jsonl")
    append_report(report, audit)
    print(report.summary())
    return 0


def cmd_tune(args) -> int:
    cfg = load_config(args.config)
    objective = episode_batch_objective(cfg.providers(), seed=args.seed)
    search = SearchConfig(budget=args.budget, step_scale=args.step_scale)
    result = outer_update(cfg.policy, cfg.hyper, objective, search, np.random.default_rng(args.seed))
    cfg.policy, cfg.hyper = result.policy, result.hyper
    out = Path(args.out or args.config)
    save_config(cfg, out)
    if args.history:
        with open(args.history, "w", encoding="utf-8") as fh:
            for h in result.history:
                fh.write(json.dumps(h, sort_keys=True) + "\n")
    accepted = sum(h["accepted"] for h in result.history) - 1
    print(f"baseline {result.history[0]['score']:.4f} -> best {result.best_score:.4f} "
          f"({accepted} accepted of {args.budget}); wrote {out}")
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    providers = cfg.providers()
    script = _script(args.script)
    student = SimulatedStudent.from_archetype(Archetype(args.student), seed=args.seed)
    traj = run_session(student, script, ablation_config(args.system, cfg.hyper, cfg.policy), providers, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "a" if args.append else "w", encoding="utf-8") as fh:
        fh.write(json.dumps(traj.to_dict(), sort_keys=True) + "\n")
    print(f"{traj.episode}: {len(traj.steps)} turns, return {traj.episode_return:.4f} -> {out}")
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    names = [c.strip() for c in args.configs.split(",") if c.strip()]
    unknown = [c for c in names if c not in CONFIG_LABELS]
    if unknown:
        raise EvoTutorError(f"unknown configs {unknown}; choose from {','.join(CONFIG_LABELS)}")
    result = run_ablation(names, seed=args.seed, providers=cfg.providers(), hyper=cfg.hyper, policy=cfg.policy)
    paths = write_bench(result, args.out)
    print(result.table())
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0


def cmd_report(args) -> int:
    path = Path(args.input)
    if path.is_dir():
        path = path / "report.json"
    if not path.exists():
        raise EvoTutorError(f"{path} not found; run `bench` first")
    reports = load_reports(path)
    if args.format == "json":
        print(json.dumps({"configs": [r.to_dict() for r in reports]}, sort_keys=True, indent=2))
    else:
        print(format_table(reports))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evotutor", description="Adaptive tutoring engine with evolving knowledge.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("evolve", help="run one knowledge evolution pass on a store file")
    e.add_argument("--kb", required=True, help="knowledge store (JSON Lines)")
    e.add_argument("--config", default=None)
    e.add_argument("--now", type=int, default=None, help="tick to score at (default: latest access)")
    e.add_argument("--audit", default=None, help="report log (default: <kb>.evolution.jsonl)")
    e.add_argument("--init", action="store_true", help="build the synthetic corpus if --kb is missing")
    e.set_defaults(func=cmd_evolve)

    t = sub.add_parser("tune", help="outer-loop search over policy and hyperparameters")
    t.add_argument("--budget", type=int, default=50)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--config", required=True, help="starting config; best result is written back here")
    t.add_argument("--out", default=None, help="write the tuned config here instead")
    t.add_argument("--history", default=None, help="search history (JSON Lines)")
    t.add_argument("--step-scale", type=float, default=0.1)
    t.set_defaults(func=cmd_tune)

    r = sub.add_parser("run", help="one simulated tutoring episode")
    r.add_argument("--student", required=True, choices=[a.value for a in Archetype])
    r.add_argument("--script", required=True, help="script file or bundled script name")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--config", default=None)
    r.add_argument("--system", default="e", choices=list(CONFIG_LABELS))
    r.add_argument("--out", default="trajectories.jsonl")
    r.add_argument("--append", action="store_true")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="compare settings a-e and write result files")
    b.add_argument("--configs", default="a,b,c,d,e")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--config", default=None)
    b.add_argument("--out", default="bench_out")
    b.set_defaults(func=cmd_bench)

    rep = sub.add_parser("report", help="print a saved bench report")
    rep.add_argument("--format", choices=["table", "json"], default="table")
    rep.add_argument("--input", default="bench_out")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (EvoTutorError, ValueError, KeyError, OSError) as exc:
        print(f"evotutor {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
