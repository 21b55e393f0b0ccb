import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topicsurprise.evaluation import (
    ConfusionCounts,
    EvalContext,
    GridPoint,
    Metrics,
    default_grid,
    deciles,
    eval_serendipity,
    eval_surprise_detection,
    metrics_from_counts,
    model_grid,
    random_baseline_expected,
    serendipity_counts,
    serendipity_positives,
    tune_leave_one_out,
)
from topicsurprise.models import ModelConfig, UserRun
from topicsurprise.neighbors import build_index
from topicsurprise.synth import SynthConfig, generate_population

from oracles import trace_serendipity_eval


def user_run(uid, prefs, stars, surprise):
    prefs = np.asarray(prefs, dtype=float).reshape(len(stars), -1)
    n = len(stars)
    return UserRun(uid, [f"{uid}_{i}" for i in range(n)], np.asarray(stars), np.asarray(surprise, float),
                   np.zeros(n), prefs, ModelConfig())


# --- metrics ------------------------------------------------------------------


def test_metrics_example():
    m = metrics_from_counts(ConfusionCounts(tp=3, fp=1, fn=2, tn=10))
    assert (m.precision, m.recall) == (0.75, 0.6)
    assert m.f1 == pytest.approx(2 / 3)
    assert m.as_percent()[0] == 75.0


def test_metrics_zero_division():
    assert metrics_from_counts(ConfusionCounts(0, 0, 0, 5)) == Metrics(0.0, 0.0, 0.0)
    assert metrics_from_counts(ConfusionCounts(0, 3, 0, 0)) == Metrics(0.0, 0.0, 0.0)


def test_counts_tally_and_add():
    c = ConfusionCounts.tally([True, True, False, False], [True, False, True, False])
    assert c == ConfusionCounts(1, 1, 1, 1)
    assert (c + c).total == 8
    with pytest.raises(ValueError):
        ConfusionCounts(-1, 0, 0, 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_f1_bounds(tp, fp, fn):
    m = metrics_from_counts(ConfusionCounts(tp, fp, fn, 0))
    assert 0 <= m.f1 <= 1
    assert min(m.precision, m.recall) - 1e-12 <= m.f1 <= max(m.precision, m.recall) + 1e-12


# --- surprise detection -------------------------------------------------------


def test_surprise_detection_example():
    surprise = [0.0] * 15 + [0.9, 0.1, 0.7, 0.2]
    ann = {16: True, 17: True, 18: False, 19: False}
    m = eval_surprise_detection(surprise, ann, tau_s=0.5, burn_in=15)
    assert (m.precision, m.recall, m.f1) == (0.5, 0.5, 0.5)


def test_surprise_detection_threshold_is_strict():
    m = eval_surprise_detection([0.5, 0.6], {1: True, 2: True}, tau_s=0.5, burn_in=0)
    assert m.recall == 0.5


def test_surprise_detection_ignores_burn_in_labels():
    m = eval_surprise_detection([9.0, 0.0], {1: False, 2: True}, tau_s=0.5, burn_in=1)
    assert (m.precision, m.recall) == (0.0, 0.0)


def test_surprise_detection_rejects_out_of_range():
    with pytest.raises(ValueError, match="beyond"):
        eval_surprise_detection([0.1], {3: True}, 0.0, burn_in=0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=20, max_size=60), st.integers(0, 2**32 - 1))
def test_recall_non_increasing_in_threshold(surprise, seed):
    rng = np.random.default_rng(seed)
    ann = {p: bool(rng.random() < 0.3) for p in range(16, len(surprise) + 1)}
    recalls = [eval_surprise_detection(surprise, ann, t, 15).recall for t in (0.0, 0.5, 1.0, 2.0, 4.0)]
    assert all(a >= b for a, b in zip(recalls, recalls[1:]))


# --- serendipity --------------------------------------------------------------


def two_user_scenario():
    ref = user_run("r", [0, 0, 0, 0], [3, 5, 5, 1], [0, 0, 0, 0])
    other = user_run("v", [0.1, 0.2, 5.0], [3, 4, 2], [0, 0.8, 0.1])
    index = build_index({"r": ref, "v": other}, min_step=1)
    return ref, index, {2: True, 3: False, 4: True}


def test_serendipity_two_users():
    ref, index, ann = two_user_scenario()
    c = serendipity_counts("r", ref, index, tau_s=0.5, tau_d=1.0, n=2, annotations=ann, burn_in=1)
    assert c == ConfusionCounts(1, 2, 0, 0)
    m = eval_serendipity("r", ref, index, 0.5, 1.0, 2, ann, burn_in=1)
    assert m.precision == pytest.approx(1 / 3) and m.recall == 1.0 and m.f1 == pytest.approx(0.5)


def test_serendipity_high_threshold_gives_negatives():
    ref, index, ann = two_user_scenario()
    assert serendipity_counts("r", ref, index, 0.9, 1.0, 2, ann, 1) == ConfusionCounts(0, 0, 1, 2)


def test_serendipity_skips_steps_without_neighbours():
    ref, index, ann = two_user_scenario()
    assert serendipity_counts("r", ref, index, 0.5, 0.05, 2, ann, 1) == ConfusionCounts(0, 0, 0, 0)


def test_serendipity_matches_trace_oracle():
    rng = np.random.default_rng(8)
    for _ in range(10):
        runs, labels = {}, {}
        for u in ("a", "b", "c"):
            n = int(rng.integers(3, 12))
            runs[u] = user_run(u, np.round(rng.normal(size=(n, 2)), 1), rng.integers(1, 6, size=n),
                               np.round(rng.uniform(0, 1, size=n), 1))
        labels = {p: bool(rng.random() < 0.4) for p in range(3, len(runs["a"]) + 1)}
        index = build_index(runs, min_step=2)
        tau_s, tau_d, n = 0.5, float(rng.uniform(0.5, 3)), int(rng.integers(1, 6))
        got = serendipity_counts("a", runs["a"], index, tau_s, tau_d, n, labels, burn_in=2)
        others = {u: (r.preferences, r.surprise, r.ratings) for u, r in runs.items()}
        want = trace_serendipity_eval("a", runs["a"].preferences, runs["a"].ratings, labels, others,
                                tau_s, tau_d, n, burn_in=2)
        assert (got.tp, got.fp, got.fn, got.tn) == want


def test_serendipity_positives():
    ref, _, ann = two_user_scenario()
    assert serendipity_positives(ref, ann, burn_in=1) == (1, 3)


# --- random baseline ----------------------------------------------------------


def test_random_baseline_half():
    m = random_baseline_expected(0.5, 10, 125)
    assert m.as_percent()[0] == pytest.approx(8.0)
    assert m.as_percent()[1] == pytest.approx(50.0)
    assert m.as_percent()[2] == pytest.approx(13.793, abs=1e-3)


def test_random_baseline_at_base_rate():
    m = random_baseline_expected(10 / 125, 10, 125)
    assert m == Metrics(0.08, 0.08, 0.08)


def test_random_baseline_edges():
    assert random_baseline_expected(0.0, 10, 125) == Metrics(0.0, 0.0, 0.0)
    assert random_baseline_expected(0.5, 0, 125).f1 == 0.0
    with pytest.raises(ValueError):
        random_baseline_expected(1.5, 1, 2)
    with pytest.raises(ValueError):
        random_baseline_expected(0.5, 3, 2)


# --- tuning -------------------------------------------------------------------


class StubContext:
    def __init__(self, f1):
        self.f1 = f1

    def score(self, point, user, mode):
        v = self.f1[point.tau_s][user]
        return Metrics(v, v, v)


def test_tune_leave_one_out_example():
    grid = [GridPoint(ModelConfig(), 0.0), GridPoint(ModelConfig(), 1.0)]
    ctx = StubContext({0.0: {"a": 0.5, "b": 0.5, "c": 0.5}, 1.0: {"a": 0.9, "b": 0.1, "c": 0.5}})
    res = tune_leave_one_out(grid, ["a", "b", "c"], "surprise", ctx)
    assert [r.point.tau_s for r in res.rows] == [0.0, 1.0, 0.0]  # c: tie, first wins
    assert [r.metrics.f1 for r in res.rows] == [0.5, 0.1, 0.5]
    assert res.rows[1].train_f1 == pytest.approx(0.7)
    assert res.average_f1 == pytest.approx(1.1 / 3)


def test_tune_errors():
    ctx = StubContext({})
    with pytest.raises(ValueError, match="empty"):
        tune_leave_one_out([], ["a", "b"], "surprise", ctx)
    with pytest.raises(ValueError, match="two"):
        tune_leave_one_out([GridPoint(ModelConfig(), 0.0)], ["a"], "surprise", ctx)


def test_model_grid_sizes():
    assert [len(model_grid(k)) for k in ("BLR", "vbBLR", "AROW", "NLMS", "Basic")] == [16, 64, 16, 12, 1]
    assert model_grid("AROW", {"r1": (1.0,), "r2": (2.0,)}) == [ModelConfig(kind="AROW", r1=1.0, r2=2.0)]


def test_deciles():
    np.testing.assert_allclose(deciles(np.arange(1, 102)), [11, 21, 31, 41, 51, 61, 71, 81, 91])
    assert deciles([]) == [0.0]
    assert deciles([3.0, 3.0, np.inf]) == [3.0]


# --- context fast path --------------------------------------------------------


@pytest.fixture(scope="module")
def small_context():
    pop = generate_population(SynthConfig(seed=2, num_topics=6, users=5, history_length=40,
                                          regimes_per_user=2, regime_topic_count=3))
    return EvalContext(pop.corpus(), burn_in=15)


@pytest.mark.parametrize("sim", [None, ModelConfig(kind="NLMS")])
def test_fast_path_matches_direct_evaluation(small_context, sim):
    ctx = small_context
    model = ModelConfig(kind="AROW", r1=2.0)
    index = ctx.index(model, sim)
    sim_runs = ctx.runs(sim or model)
    for user in ctx.reference_users:
        for tau_s, tau_d, n in [(0.05, math.inf, 10), (0.2, 1.0, 3), (0.0, 0.3, 50)]:
            point = GridPoint(model, tau_s, tau_d, n, sim)
            want = serendipity_counts(user, sim_runs[user], index, tau_s, tau_d, n, ctx.labels[user], 15)
            assert ctx.counts(point, user, "serendipity") == want


def test_context_surprise_mode(small_context):
    ctx = small_context
    model = ModelConfig(kind="BLR")
    user = ctx.reference_users[0]
    want = eval_surprise_detection(ctx.runs(model)[user], ctx.labels[user], 0.1, 15)
    assert ctx.score(GridPoint(model, 0.1), user, "surprise") == want
    with pytest.raises(ValueError):
        ctx.score(GridPoint(model, 0.1), user, "bogus")


def test_default_grid_shapes(small_context):
    hyper = {"r1": (1.0,), "r2": (1.0, 2.0), "top_n": (5, 10)}
    sur = default_grid(small_context, "AROW", "surprise", hyper=hyper)
    assert {p.model.r2 for p in sur} == {1.0, 2.0}
    assert all(p.tau_d == math.inf for p in sur)
    ser = default_grid(small_context, "AROW", "serendipity", sim_model=ModelConfig(kind="NLMS"), hyper=hyper)
    assert {p.top_n for p in ser} == {5, 10}
    assert all(p.sim_model == ModelConfig(kind="NLMS") for p in ser)
    assert all(math.isfinite(p.tau_d) for p in ser)
