import json
import math

import pytest
from hypothesis import given, strategies as st

from evotutor.errors import ConfigurationError
from evotutor.evaluation import (
    CONFIG_LABELS,
    TABLE_HEADERS,
    EvaluationReport,
    IndicatorScore,
    ablation_config,
    aggregate,
    format_table,
    load_reports,
    load_scores,
    run_ablation,
    write_bench,
)
from evotutor.meta_control import DEFAULT_ACTION, HyperParams
from evotutor.simulation import Archetype, RetrievalMode, TASK_KINDS, make_script
from evotutor.transcript import INDICATORS, Indicator

FC = Indicator.FACTUAL_CORRECTNESS


def score(ind, judge, turn, value, episode="ep"):
    return IndicatorScore(ind, judge, episode, turn, value)


# -- aggregation -----------------------------------------------------------------

def test_judge_mean_in_one_cell():
    r = aggregate([score(FC, j, 1, v) for j, v in zip("xyz", (9.0, 9.3, 9.6))])
    assert r.indicator_means[FC] == pytest.approx(9.3, abs=1e-12)
    assert r.judge_counts[FC] == 3 and r.cells[FC] == 1


def test_table_row_average():
    means = dict(zip(INDICATORS, (5.8, 6.5, 4.2, 4.8, 5.5, 5.1)))
    r = aggregate([score(i, "j", 0, v) for i, v in means.items()], "a")
    assert f"{r.average:.2f}" == "5.32"
    assert r.average == pytest.approx(sum(means.values()) / 6, abs=1e-9)
    assert "5.32" in format_table([r])


def test_constant_scores():
    scores = [score(i, j, t, 7.25, ep) for i in INDICATORS for j in "ab" for t in range(3) for ep in ("p", "q")]
    r = aggregate(scores)
    assert all(v == 7.25 for v in r.indicator_means.values()) and r.average == 7.25


def test_judge_mean_before_turn_mean():
    # two judges on turn 1, one judge on turn 2: (avg(2,4) + 9) / 2, not (2+4+9)/3
    r = aggregate([score(FC, "a", 1, 2.0), score(FC, "b", 1, 4.0), score(FC, "a", 2, 9.0)])
    assert r.indicator_means[FC] == pytest.approx(6.0)


def test_abstentions_and_missing():
    scores = [score(FC, "a", 1, 8.0), score(FC, "b", 1, None),
              score(Indicator.MEMORY_CONSISTENCY, "a", 1, None)]
    r = aggregate(scores)
    assert r.indicator_means[FC] == 8.0 and r.judge_counts[FC] == 1
    assert r.indicator_means[Indicator.MEMORY_CONSISTENCY] is None
    assert Indicator.MEMORY_CONSISTENCY in r.missing and r.average == 8.0
    assert "-" in format_table([r]).splitlines()[-1]


def test_score_range_validated():
    with pytest.raises(ValueError):
        score(FC, "a", 1, 0.5)
    with pytest.raises(ValueError):
        score(FC, "a", 1, 10.5)


CELL = st.tuples(st.sampled_from(INDICATORS), st.sampled_from("abc"), st.integers(0, 5),
                 st.sampled_from(["e1", "e2"]), st.one_of(st.none(), st.floats(1, 10)))


@given(st.lists(CELL, min_size=1, max_size=80), st.randoms(use_true_random=False))
def test_aggregate_permutation_invariant(cells, rnd):
    scores = [score(i, j, t, v, ep) for i, j, t, ep, v in cells]
    shuffled = list(scores)
    rnd.shuffle(shuffled)
    assert aggregate(scores).to_dict() == aggregate(shuffled).to_dict()


def test_report_round_trip():
    r = aggregate([score(i, "j", 0, 3.0) for i in INDICATORS[:4]], "b")
    assert EvaluationReport.from_dict(json.loads(json.dumps(r.to_dict()))) == r


# -- ablation ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def small():
    scripts = [make_script("s1", TASK_KINDS, turns=6), make_script("s2", ("diagnosis",), turns=5, topic_offset=2)]
    return run_ablation(scripts=scripts, archetypes=(Archetype.MISCONCEPTION_PRONE, Archetype.NOVICE_INTUITIVE),
                        seed=4, hyper=HyperParams(evolve_every=3))


def test_config_a_never_retrieves(small):
    for t in small.trajectories["a"]:
        assert all(step.transcript["retrieved"] == [] and step.transcript["adopted"] == [] for step in t.steps)
        assert not [e for e in t.events if e["kind"] == "evolution"]


def test_config_d_constant_action(small):
    acts = {json.dumps(s.action, sort_keys=True) for t in small.trajectories["d"] for s in t.steps}
    assert acts == {json.dumps(DEFAULT_ACTION.to_dict(), sort_keys=True)}
    assert len({json.dumps(s.action, sort_keys=True) for t in small.trajectories["e"] for s in t.steps}) > 1


def test_identical_inputs_across_configs(small):
    questions = {name: [[s.transcript["question"] for s in t.steps] for t in ts]
                 for name, ts in small.trajectories.items()}
    assert all(q == questions["a"] for q in questions.values())


def test_report_recomputed_from_raw_logs(small, tmp_path):
    paths = write_bench(small, tmp_path)
    raw = load_scores(paths["scores"])
    for rep in load_reports(paths["report"]):
        again = aggregate(raw[rep.config], rep.config)
        assert again.average == pytest.approx(rep.average, abs=1e-9)
        for ind in INDICATORS:
            assert again.indicator_means[ind] == pytest.approx(rep.indicator_means[ind], abs=1e-9)
        present = [v for v in rep.indicator_means.values() if v is not None]
        assert rep.average == pytest.approx(math.fsum(present) / len(present), abs=1e-9)


def test_bench_files(small, tmp_path):
    paths = write_bench(small, tmp_path)
    lines = paths["trajectories"].read_text().splitlines()
    assert len(lines) == 5 * 4
    assert [r.config for r in load_reports(paths["report"])] == list("abcde")
    n_scores = sum(len(s.steps) for ts in small.trajectories.values() for s in ts) * 6 * 3
    assert sum(map(len, load_scores(paths["scores"]).values())) == n_scores


def test_ablation_reproducible(small):
    again = run_ablation(scripts=[make_script("s1", TASK_KINDS, turns=6),
                                  make_script("s2", ("diagnosis",), turns=5, topic_offset=2)],
                         archetypes=(Archetype.MISCONCEPTION_PRONE, Archetype.NOVICE_INTUITIVE),
                         seed=4, hyper=HyperParams(evolve_every=3))
    assert {k: r.to_dict() for k, r in again.reports.items()} == {k: r.to_dict() for k, r in small.reports.items()}


def test_table_layout(small):
    lines = small.table().splitlines()
    assert lines[0].split()[1:] == list(TABLE_HEADERS)
    assert [l.split(")")[0] + ")" for l in lines[2:]] == [f"({c}" + ")" for c in "abcde"]
    assert "Full System" in lines[-1]


def test_config_construction():
    assert ablation_config("a").retrieval is RetrievalMode.NONE
    assert ablation_config("b").retrieval is RetrievalMode.STATIC
    assert set(CONFIG_LABELS) == set("abcde")
    with pytest.raises(ConfigurationError, match="'f'"):
        ablation_config("f")
    with pytest.raises(ConfigurationError, match="'z'"):
        run_ablation(configs=["a", "z"], scripts=[make_script("x", ("concept",), turns=1)])
