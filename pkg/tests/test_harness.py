import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracklearn.env import DoneReason
from tracklearn.errors import UsageError
from tracklearn.geometry import SourceTag
from tracklearn.harness import (DEFAULT_DEVIATIONS, EXIT_NONCOMPLETION, EXIT_OK, AgentPolicy, CellStats, EvalGrid,
                                EvalReport, TangentOracle, ZeroSteer, format_cell, gap_ratio, load_metrics,
                                render_report, run_episode, run_grid, streaming_stats)
from tracklearn.learn.sac import SacAgent, SacConfig
from tracklearn.vehicle import ModelTier

from conftest import circle_path, straight_path


@pytest.fixture(scope="module")
def eval_paths(scenarios):
    return scenarios.select(SourceTag.VIRTUAL, "eval")


def small_grid(paths, policies=None, devs=(0.0, 1.0)):
    return EvalGrid(policies or [("zero", ZeroSteer())], paths, devs)


def test_default_deviation_grid():
    assert DEFAULT_DEVIATIONS == (-1.25, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5)
    assert EvalGrid([], []).init_deviations == DEFAULT_DEVIATIONS
    with pytest.raises(UsageError):
        EvalGrid([], [], ())


@pytest.mark.parametrize("tier", list(ModelTier))
def test_oracle_tracks_every_eval_path(eval_paths, tier):
    rep = run_grid(EvalGrid([("oracle", TangentOracle())], eval_paths), tier)
    assert rep.completion_rate() == 1.0
    assert rep.policies["oracle"].mean_abs < 0.02
    assert all(c.mean_abs < 0.02 for c in rep.cells.values())


def test_zero_steer_leaves_arc():
    devs, _, reason, _ = run_episode(ZeroSteer(), circle_path(n=600), 0.0)
    assert reason is DoneReason.DEVIATION
    assert devs[-1] > 2.0


def test_grid_row_count_and_frozen_params(eval_paths):
    rep = run_grid(EvalGrid([("zero", ZeroSteer())], eval_paths, max_steps=60), ModelTier.ST)
    assert len(rep.episodes) == 56
    assert len({e.params_digest for e in rep.episodes}) == 1
    for e in rep.episodes:
        assert e.mean_abs <= e.max_abs and e.std_abs >= 0.0


def test_transient_window(scenarios):
    buf = straight_path(n=200)
    rep = run_grid(EvalGrid([("zero", ZeroSteer())], [buf], (0.5,)), ModelTier.ST)
    row = rep.episodes[0]
    assert row.n_samples == row.steps - 50
    assert row.mean_abs == pytest.approx(0.5)


def test_statistics_match_streaming_pass(eval_paths):
    rep = run_grid(small_grid(eval_paths[:3], [("oracle", TangentOracle()), ("zero", ZeroSteer())]))
    for e in rep.episodes:
        mean, std, mx = streaming_stats(e.samples)
        assert abs(mean - e.mean_abs) <= 1e-12 and abs(std - e.std_abs) <= 1e-12 and mx == e.max_abs
    pooled = np.concatenate([e.samples for e in rep.episodes if e.policy == "zero"])
    mean, std, mx = streaming_stats(pooled)
    agg = rep.policies["zero"]
    assert abs(mean - agg.mean_abs) <= 1e-12 and abs(std - agg.std_abs) <= 1e-12 and mx == agg.max_abs


def test_order_independence(eval_paths):
    grid = small_grid(eval_paths[:3], [("oracle", TangentOracle()), ("zero", ZeroSteer())])
    base = run_grid(grid)
    n = len(base.episodes)
    shuffled = run_grid(grid, order=np.random.default_rng(0).permutation(n))
    threaded = run_grid(grid, jobs=3)
    for other in (shuffled, threaded):
        assert other.aggregates_dict() == base.aggregates_dict()
    with pytest.raises(UsageError):
        run_grid(grid, order=[0] * n)


def test_agent_policy_is_deterministic():
    agent = SacAgent(SacConfig(seed=1))
    agent.log_std[...] = 0.0
    agent.noise_reset(np.random.default_rng(0))
    pol = AgentPolicy(agent)
    obs = np.linspace(-1, 1, 16)
    assert pol(obs, None) == agent.act(obs, deterministic=True)


def _report(cells):
    rep = EvalReport("ST", 50, (0.0,))
    rep.cells = {k: CellStats(v, 0.0, v, True, 1.0, 1, 1) for k, v in cells.items()}
    return rep


class TestGapRatio:
    def test_arithmetic(self):
        g = gap_ratio(_report({("p", "a"): 0.25}), _report({("p", "a"): 0.1}))
        assert g.ratios[("p", "a")].value == pytest.approx(2.5)
        assert g.ratios[("p", "a")].reliable and not g.warnings

    def test_identical(self, eval_paths):
        rep = run_grid(small_grid(eval_paths[:2]))
        assert all(r.value == 1.0 for r in gap_ratio(rep, rep).ratios.values())

    def test_missing_and_unreliable(self):
        g = gap_ratio(_report({("p", "a"): 0.2, ("p", "b"): 0.3}), _report({("p", "a"): 0.0005, ("p", "c"): 0.1}))
        assert set(g.ratios) == {("p", "a")}
        assert not g.ratios[("p", "a")].reliable
        assert sum("missing" in w for w in g.warnings) == 2
        assert any("unreliable" in w for w in g.warnings)


class TestRender:
    def test_cell_format(self):
        assert format_cell(0.2149, 0.2101) == "0.21±0.21"
        assert format_cell(math.nan, math.nan) == "-"

    def test_empty_report(self, tmp_path):
        res = render_report(EvalReport("ST", 50, (0.0,)), tmp_path)
        assert res.summary_csv.read_text() == "policy\n"
        assert res.exit_code == EXIT_NONCOMPLETION != EXIT_OK

    def test_files_and_roundtrip(self, tmp_path, eval_paths):
        grid = EvalGrid([("oracle", TangentOracle()), ("zero", ZeroSteer())], eval_paths[2:4], (0.0, 0.5),
                        record_traces=True)
        rep = run_grid(grid)
        res = render_report(rep, tmp_path, gap_ratio(rep, rep))
        rows = list(csv.reader(res.summary_csv.open()))
        assert rows[0] == ["policy", *rep.path_labels]
        assert [r[0] for r in rows[1:]] == ["oracle", "zero"]
        assert len(res.trace_files) == 8
        assert res.exit_code == EXIT_NONCOMPLETION  # zero steering leaves the arcs
        assert load_metrics(res.metrics_json).aggregates_dict() == rep.aggregates_dict()
        assert (tmp_path / "gap_ratios.csv").exists()
        assert "gap_ratios" in json.loads(res.metrics_json.read_text())

    def test_success_exit_code(self, tmp_path):
        rep = run_grid(EvalGrid([("oracle", TangentOracle())], [straight_path()], (0.0,)))
        assert render_report(rep, tmp_path).exit_code == EXIT_OK


@settings(max_examples=50)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=200))
def test_streaming_stats_property(xs):
    mean, std, mx = streaming_stats(xs)
    a = np.array(xs)
    assert abs(mean - a.mean()) <= 1e-12 * max(1.0, a.max())
    assert abs(std - a.std()) <= 1e-9 * max(1.0, a.max())
    assert mx == a.max()
