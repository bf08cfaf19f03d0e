"""Seeded experiment protocols: regression shot sweeps and BO runs.

Each protocol returns long-form records (one dict per method/seed/level)
plus percentile summaries. Seeds are processed in order and every random
draw derives from the seed, so reruns reproduce the records exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..acquisition import ContinuousDesignSpace, FiniteDesignSet
from ..begp import MultiTaskData, TrainConfig
from ..bo_loop import LoopConfig, make_model, run_bo_continuous, run_bo_finite
from .metrics import metric_mae, metric_mnlp, metric_rmse, quantile_band
from .synthetic import (
    FORRESTER,
    FORRESTER_HIGH,
    TOY,
    SyntheticTask,
    build_legacy_dataset,
    sample_task_family,
    sample_theta,
)

logger = logging.getLogger(__name__)

CURRENT = "current"
METHODS = ("begp", "egp", "gp")


@dataclass
class ExperimentConfig:
    family: str | None = TOY
    dataset: MultiTaskData | None = None
    n_legacy_tasks: int = 5
    points_per_task: int = 5
    current_task_points: int = 15
    seeds: list = field(default_factory=lambda: list(range(10)))
    shot_grid: list = field(default_factory=lambda: list(range(11)))
    bo_budget: int = 5
    methods: tuple = METHODS
    loop: LoopConfig = field(default_factory=LoopConfig)

    def __post_init__(self):
        if (self.family is None) == (self.dataset is None):
            raise ValueError("give exactly one of family or dataset")
        if min(self.n_legacy_tasks, self.points_per_task, self.current_task_points, len(self.seeds)) < 1:
            raise ValueError("counts must be positive")
        if not self.shot_grid:
            raise ValueError("shot_grid must not be empty")
        if self.bo_budget < 0 or any(k < 0 for k in self.shot_grid):
            raise ValueError("budget and shots must be non-negative")


def _loop_for(config: ExperimentConfig, method: str, seed: int) -> LoopConfig:
    lc = config.loop
    tc = lc.train
    return LoopConfig(
        method=method,
        latent_dim=lc.latent_dim,
        latent_samples=lc.latent_samples,
        init_variance=lc.init_variance,
        train=TrainConfig(tc.iterations, tc.step_size, tc.elbo_samples_per_step, seed),
        warm_start_iterations=lc.warm_start_iterations,
        restarts=lc.restarts,
        ei_steps=lc.ei_steps,
        ei_step_scale=lc.ei_step_scale,
        n_samples=lc.n_samples,
        baseline_restarts=lc.baseline_restarts,
    )


def synthetic_split(config: ExperimentConfig, seed: int):
    """Legacy data, the held-out task and its sampled data for one seed."""
    rng = np.random.default_rng(seed)
    tasks = sample_task_family(config.family, config.n_legacy_tasks, rng)
    legacy = build_legacy_dataset(tasks, config.points_per_task, rng)
    if config.family == FORRESTER:
        current = SyntheticTask(FORRESTER, FORRESTER_HIGH)
    else:
        current = SyntheticTask(config.family, sample_theta(config.family, rng))
    x = rng.uniform(0.0, 1.0, size=config.current_task_points)
    return legacy, current, x.reshape(-1, 1), current(x)


def task_list(data: MultiTaskData) -> list:
    seen = []
    for t in data.tasks:
        if t not in seen:
            seen.append(t)
    return seen


def dataset_split(data: MultiTaskData, seed: int):
    """Hold out task ``seed mod n_tasks``; its rows are shuffled by the seed."""
    tasks = task_list(data)
    current = tasks[seed % len(tasks)]
    mask = np.array([t == current for t in data.tasks])
    legacy = data.select(~mask)
    cur = data.select(mask)
    order = np.random.default_rng(seed).permutation(len(cur))
    return legacy, current, cur.x[order], cur.y[order]


def _fit_predict(method, loop, legacy, task, x_train, y_train, x_test, seed):
    data = legacy
    for x, y in zip(x_train, y_train):
        data = data.append(task, x, y)
    model = make_model(loop, task, seed)
    model.fit(data, loop.train)
    return model.predict(x_test, task)


def run_regression_experiment(config: ExperimentConfig, records: list | None = None):
    """Shot sweep on a held-out task; returns ``(records, summary)``.

    Records are appended to ``records`` as they are produced, so a caller
    holding the list keeps partial results if a later cell fails.
    """
    records = [] if records is None else records
    for seed in config.seeds:
        if config.dataset is not None:
            legacy, task, x_cur, y_cur = dataset_split(config.dataset, seed)
            n_train = min(10, len(y_cur) - 1)
            if max(config.shot_grid) > n_train or len(y_cur) < 2:
                raise ValueError(
                    f"task {task} has {len(y_cur)} rows; too few for shots up to {max(config.shot_grid)}"
                )
        else:
            legacy, _, x_cur, y_cur = synthetic_split(config, seed)
            task = (CURRENT,)
            n_train = min(10, config.current_task_points - 1)
            if max(config.shot_grid) > n_train:
                raise ValueError("insufficient current-task data for the requested shots")
        x_test, y_test = x_cur[n_train:], y_cur[n_train:]
        for method in config.methods:
            loop = _loop_for(config, method, seed)
            for k in config.shot_grid:
                pred = _fit_predict(method, loop, legacy, task, x_cur[:k], y_cur[:k], x_test, seed)
                var = np.maximum(pred.marginal_variance, 1e-12)
                rec = {
                    "method": method,
                    "seed": int(seed),
                    "shots": int(k),
                    "rmse": metric_rmse(y_test, pred.mean),
                    "mae": metric_mae(y_test, pred.mean),
                    "mnlp": metric_mnlp(y_test, pred.mean, var),
                }
                logger.info("regression %s seed=%d shots=%d mnlp=%.3f", method, seed, k, rec["mnlp"])
                records.append(rec)
    return records, summarize(records, "shots", ("rmse", "mae", "mnlp"))


def run_bo_experiment(config: ExperimentConfig, records: list | None = None):
    """BO runs per method and seed; returns ``(records, summary)``.

    Synthetic families run continuous BO on [0, 1]; dataset mode runs
    finite-design BO and reports the running best relative to the task's
    best stored output. ``records`` behaves as in the regression sweep.
    """
    records = [] if records is None else records
    for seed in config.seeds:
        for method in config.methods:
            loop = _loop_for(config, method, seed)
            if config.dataset is not None:
                legacy, task, x_cur, y_cur = dataset_split(config.dataset, seed)
                candidates = FiniteDesignSet(x_cur, y_cur)
                run = run_bo_finite(legacy, task, candidates, config.bo_budget, loop, seed)
                offset = float(np.min(y_cur))
            else:
                legacy, current, _, _ = synthetic_split(config, seed)
                space = ContinuousDesignSpace([0.0], [1.0])
                run = run_bo_continuous(
                    legacy, (CURRENT,), lambda x, f=current: f(np.atleast_1d(x))[0],
                    space, config.bo_budget, loop, seed,
                )
                offset = 0.0
            trace = run.running_best - offset if run.history else []
            for ev, best in zip(run.events, trace):
                records.append(
                    {
                        "method": method,
                        "seed": int(seed),
                        "evaluation": ev.iteration + 1,
                        "x": ";".join(repr(float(v)) for v in np.atleast_1d(ev.x)),
                        "y": ev.y,
                        "running_best": float(best),
                        "acquisition": ev.acquisition,
                    }
                )
            logger.info("bo %s seed=%d trace=%s", method, seed, np.round(trace, 4))
    return records, summarize(records, "evaluation", ("running_best",))


def summarize(records, level: str, metrics) -> list[dict]:
    """Median and 10th/90th percentiles per (method, level, metric)."""
    out = []
    methods = list(dict.fromkeys(r["method"] for r in records))
    for method in methods:
        rows = [r for r in records if r["method"] == method]
        for lv in sorted({r[level] for r in rows}):
            sel = [r for r in rows if r[level] == lv]
            for metric in metrics:
                lo, med, hi = quantile_band([r[metric] for r in sel])
                out.append(
                    {
                        "method": method,
                        level: lv,
                        "metric": metric,
                        "n": len(sel),
                        "q10": float(lo),
                        "median": float(med),
                        "q90": float(hi),
                    }
                )
    return out


def traces_by_seed(records, method, key="running_best"):
    """``{seed: array}`` of a BO metric ordered by evaluation."""
    out = {}
    for r in records:
        if r["method"] == method:
            out.setdefault(r["seed"], []).append((r["evaluation"], r[key]))
    return {s: np.array([v for _, v in sorted(vals)]) for s, vals in out.items()}


def toy_candidate_dataset(n_tasks: int = 6, candidates: int = 24, seed: int = 0) -> MultiTaskData:
    """Static multi-task design set drawn from the toy family (a CSV stand-in)."""
    rng = np.random.default_rng(seed)
    tasks = sample_task_family(TOY, n_tasks, rng)
    return build_legacy_dataset(tasks, candidates, rng)
