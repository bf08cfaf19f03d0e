"""Sequential Bayesian optimization for a fixed task of interest.

Both loops train on legacy data alone before the first pick, then alternate
select, evaluate, augment, warm-started refit.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import acquisition as acq
from .begp import BegpModel, MultiTaskData, TrainConfig

logger = logging.getLogger(__name__)


class ExhaustedCandidates(RuntimeError):
    pass


class OracleFailure(RuntimeError):
    def __init__(self, run, cause):
        super().__init__(f"objective evaluation failed after {len(run.history)} steps: {cause}")
        self.run = run


@dataclass
class BOEvent:
    iteration: int
    x: np.ndarray
    y: float
    best: float
    acquisition: float
    wall_time: float
    index: int | None = None


@dataclass
class BORun:
    task: object
    budget: int
    history: list = field(default_factory=list)
    events: list = field(default_factory=list)

    @property
    def ys(self) -> np.ndarray:
        return np.array([h[1] for h in self.history], dtype=np.float64)

    @property
    def running_best(self) -> np.ndarray:
        return running_best(self.ys) if self.history else np.empty(0)

    @property
    def best_design(self):
        """The evaluated design with the lowest output, or None for an empty run."""
        if not self.history:
            return None
        return self.history[int(np.argmin(self.ys))][0]


def running_best(ys, task_best: float | None = None) -> np.ndarray:
    ys = np.asarray(ys, dtype=np.float64)
    if ys.size == 0:
        raise ValueError("running best of an empty history")
    best = np.minimum.accumulate(ys)
    return best - task_best if task_best is not None else best


@dataclass
class LoopConfig:
    """Model and acquisition settings for one BO run."""

    method: str = "begp"  # begp | egp | gp
    latent_dim: int = 2
    latent_samples: int = 64
    init_variance: float = 0.01
    train: TrainConfig = field(default_factory=TrainConfig)
    warm_start_iterations: int = 500
    restarts: int = 10
    ei_steps: int = 100
    ei_step_scale: float = 0.05
    n_samples: int = 500
    baseline_restarts: int = 5


def make_model(config: LoopConfig, task, seed: int):
    if config.method == "gp":
        from .bench.baseline import BaselineGP

        return BaselineGP(task=task, restarts=config.baseline_restarts, seed=seed)
    mode = {"begp": "bayesian", "egp": "deterministic"}.get(config.method)
    if mode is None:
        raise ValueError(f"unknown method {config.method!r}")
    return BegpModel(
        config.latent_dim, mode=mode, seed=seed,
        latent_samples=config.latent_samples, init_variance=config.init_variance,
    )


def _train(model, data, config: LoopConfig, seed, warm):
    tc = config.train
    iters = config.warm_start_iterations if warm else tc.iterations
    cfg = TrainConfig(iters, tc.step_size, tc.elbo_samples_per_step, seed, warm)
    return model.fit(data, cfg)


def _initial_fit(model, legacy: MultiTaskData, task, config, seed):
    if len(legacy) == 0 and isinstance(model, BegpModel):
        raise ValueError("embedding models need legacy data for the zero-shot fit")
    return _train(model, legacy, config, seed, warm=False)


def run_bo_continuous(
    legacy: MultiTaskData,
    task,
    objective: Callable,
    space: acq.ContinuousDesignSpace,
    budget: int,
    config: LoopConfig | None = None,
    seed: int = 0,
    model=None,
) -> BORun:
    config = config or LoopConfig()
    run = BORun(task, budget)
    if budget <= 0:
        return run
    model = model or make_model(config, task, seed)
    data = legacy
    _initial_fit(model, data, task, config, seed)
    for it in range(budget):
        t0 = time.perf_counter()
        x_next, a = acq.maximize_ei(
            model, task, space, config.restarts, seed=(seed * 1000003 + it) % 2**32,
            steps=config.ei_steps, step_scale=config.ei_step_scale,
        )
        try:
            y_next = float(np.asarray(objective(x_next)).reshape(-1)[0])
        except Exception as exc:  # noqa: BLE001 - any oracle failure aborts the run
            raise OracleFailure(run, exc) from exc
        if not np.isfinite(y_next):
            raise OracleFailure(run, ValueError(f"non-finite objective {y_next}"))
        run.history.append((x_next, y_next, it))
        data = data.append(task, x_next, y_next)
        best = float(run.running_best[-1])
        run.events.append(BOEvent(it, x_next, y_next, best, a, time.perf_counter() - t0))
        logger.info("iter %d: x=%s y=%.5g best=%.5g", it, np.round(x_next, 5), y_next, best)
        if it < budget - 1:
            _train(model, data, config, seed, warm=True)
    return run


def run_bo_finite(
    legacy: MultiTaskData,
    task,
    dataset: acq.FiniteDesignSet,
    budget: int,
    config: LoopConfig | None = None,
    seed: int = 0,
    model=None,
) -> BORun:
    config = config or LoopConfig()
    run = BORun(task, budget)
    if dataset.unevaluated().size == 0:
        raise ExhaustedCandidates("all candidates are already evaluated")
    if budget <= 0:
        return run
    if dataset.unevaluated().size < budget:
        raise ExhaustedCandidates(
            f"budget {budget} exceeds {dataset.unevaluated().size} unevaluated candidates"
        )
    model = model or make_model(config, task, seed)
    data = legacy
    # observations already recorded in the design set count as current-task data
    for i in np.flatnonzero(dataset.evaluated):
        data = data.append(task, dataset.x[i], dataset.y[i])
    _initial_fit(model, data, task, config, seed)
    for it in range(budget):
        t0 = time.perf_counter()
        idx = dataset.unevaluated()
        p = acq.prob_best(model, task, dataset, config.n_samples, seed=(seed * 1000003 + it) % 2**32)
        pick = int(idx[int(np.argmax(p))])
        y_next = float(dataset.y[pick])
        dataset.mark(pick)
        x_next = dataset.x[pick].copy()
        run.history.append((x_next, y_next, it))
        data = data.append(task, x_next, y_next)
        best = float(run.running_best[-1])
        run.events.append(BOEvent(it, x_next, y_next, best, -float(np.max(p)), time.perf_counter() - t0, pick))
        logger.info("iter %d: candidate %d y=%.5g best=%.5g", it, pick, y_next, best)
        if it < budget - 1:
            _train(model, data, config, seed, warm=True)
    return run
