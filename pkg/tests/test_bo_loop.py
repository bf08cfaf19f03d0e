import numpy as np
import pytest

from begp.acquisition import ContinuousDesignSpace, FiniteDesignSet
from begp.begp import MultiTaskData, TrainConfig
from begp.bo_loop import (
    ExhaustedCandidates,
    LoopConfig,
    OracleFailure,
    make_model,
    run_bo_continuous,
    run_bo_finite,
    running_best,
)

FAST = LoopConfig(train=TrainConfig(200), warm_start_iterations=50, restarts=3, ei_steps=20, n_samples=100)


def legacy_data(seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=10)
    return MultiTaskData(["a"] * 5 + ["b"] * 5, x.reshape(-1, 1), np.sin(6 * x) + np.repeat([0.0, 0.3], 5))


class Dominated:
    """Stub model: candidate 0 is far better than the rest."""

    def fit(self, data, config):
        return self

    def joint_samples(self, x, task, n, rng):
        means = np.where(np.arange(len(x)) == 0, 0.0, 3.0)
        return means + 0.5 * rng.standard_normal((n, len(x)))


def test_running_best_examples():
    np.testing.assert_array_equal(running_best([3, 1, 2]), [3, 1, 1])
    np.testing.assert_array_equal(running_best([2, 2, 2]), [2, 2, 2])
    np.testing.assert_array_equal(running_best([3, 1, 2], task_best=1), [2, 0, 0])
    with pytest.raises(ValueError):
        running_best([])


def test_budget_zero_gives_empty_run():
    run = run_bo_continuous(legacy_data(), "c", lambda x: 0.0, ContinuousDesignSpace([0.0], [1.0]), 0, FAST)
    assert run.history == [] and run.best_design is None and run.running_best.size == 0


def test_budget_one_evaluates_once():
    calls = []

    def oracle(x):
        calls.append(x)
        return float(np.sin(6 * x[0]))

    run = run_bo_continuous(legacy_data(), "c", oracle, ContinuousDesignSpace([0.0], [1.0]), 1, FAST)
    assert len(calls) == 1
    np.testing.assert_array_equal(run.running_best, [run.history[0][1]])


def test_continuous_run_invariants_and_reproducibility():
    space = ContinuousDesignSpace([0.0], [1.0])
    oracle = lambda x: float(np.sin(6 * x[0]) + 0.1)  # noqa: E731
    a = run_bo_continuous(legacy_data(), "c", oracle, space, 3, FAST, seed=5)
    b = run_bo_continuous(legacy_data(), "c", oracle, space, 3, FAST, seed=5)
    assert [h[0].tolist() for h in a.history] == [h[0].tolist() for h in b.history]
    assert np.all(np.diff(a.running_best) <= 0)
    assert all(0.0 <= h[0][0] <= 1.0 for h in a.history)
    assert [e.iteration for e in a.events] == [0, 1, 2]
    assert a.best_design is not None


def test_oracle_failure_keeps_history():
    count = {"n": 0}

    def flaky(x):
        count["n"] += 1
        if count["n"] == 2:
            raise RuntimeError("instrument offline")
        return 1.0

    with pytest.raises(OracleFailure) as err:
        run_bo_continuous(legacy_data(), "c", flaky, ContinuousDesignSpace([0.0], [1.0]), 3, FAST)
    assert len(err.value.run.history) == 1


def test_non_finite_oracle_value_aborts():
    with pytest.raises(OracleFailure):
        run_bo_continuous(legacy_data(), "c", lambda x: np.nan, ContinuousDesignSpace([0.0], [1.0]), 2, FAST)


def test_finite_single_candidate():
    cands = FiniteDesignSet(np.array([[0.4]]), y=[1.5])
    run = run_bo_finite(legacy_data(), "c", cands, 1, FAST)
    assert run.events[0].index == 0 and run.history[0][1] == 1.5


def test_finite_exhausted():
    with pytest.raises(ExhaustedCandidates):
        run_bo_finite(legacy_data(), "c", FiniteDesignSet(np.zeros((2, 1)), np.zeros(2), [True, True]), 1, FAST)
    with pytest.raises(ExhaustedCandidates):
        run_bo_finite(legacy_data(), "c", FiniteDesignSet(np.zeros((2, 1)), np.zeros(2)), 3, FAST)


def test_finite_never_repeats_and_uses_stored_values():
    x = np.linspace(0, 1, 6).reshape(-1, 1)
    y = np.sin(6 * x[:, 0])
    cands = FiniteDesignSet(x, y, evaluated=[False, True, False, False, False, False])
    run = run_bo_finite(legacy_data(), "c", cands, 5, FAST, seed=1)
    picks = [e.index for e in run.events]
    assert sorted(picks) == [0, 2, 3, 4, 5]
    for e in run.events:
        assert e.y == y[e.index]


def test_dominating_candidate_is_picked_first():
    first = []
    for seed in range(20):
        cands = FiniteDesignSet(np.linspace(0, 1, 4).reshape(-1, 1), np.arange(4.0))
        run = run_bo_finite(legacy_data(), "c", cands, 1, FAST, seed=seed, model=Dominated())
        first.append(run.events[0].index)
    assert np.mean(np.array(first) == 0) >= 0.95


def test_make_model_rejects_unknown_method():
    with pytest.raises(ValueError):
        make_model(LoopConfig(method="hmc"), "t", 0)


def test_embedding_loop_needs_legacy_data():
    with pytest.raises(ValueError):
        run_bo_continuous(MultiTaskData.empty(1), "c", lambda x: 0.0, ContinuousDesignSpace([0.0], [1.0]), 1, FAST)


def test_baseline_loop_runs_without_legacy_data():
    cfg = LoopConfig(method="gp", restarts=3, ei_steps=10)
    run = run_bo_continuous(MultiTaskData.empty(1), "c", lambda x: float(x[0] ** 2), ContinuousDesignSpace([0.0], [1.0]), 3, cfg)
    assert len(run.history) == 3
