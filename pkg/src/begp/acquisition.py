"""Acquisition functions (lower is better) and their optimizers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, qmc

from .optim import Adam

VARIANCE_FLOOR = 1e-12


@dataclass
class ContinuousDesignSpace:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        if self.lower.shape != self.upper.shape or not np.all(self.lower < self.upper):
            raise ValueError("design space needs lower < upper elementwise")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def clip(self, x):
        return np.clip(x, self.lower, self.upper)


@dataclass
class FiniteDesignSet:
    """Candidate designs for one task; ``y`` holds stored outputs (NaN if unknown)."""

    x: np.ndarray
    y: np.ndarray | None = None
    evaluated: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x.reshape(-1, 1)
        n = self.x.shape[0]
        self.y = np.full(n, np.nan) if self.y is None else np.asarray(self.y, dtype=np.float64).copy()
        self.evaluated = (
            np.zeros(n, dtype=bool) if self.evaluated is None else np.asarray(self.evaluated, dtype=bool).copy()
        )
        if self.y.shape != (n,) or self.evaluated.shape != (n,):
            raise ValueError("candidate arrays must align")

    def __len__(self):
        return self.x.shape[0]

    def unevaluated(self) -> np.ndarray:
        return np.flatnonzero(~self.evaluated)

    def mark(self, i: int, y=None):
        if self.evaluated[i]:
            raise ValueError(f"candidate {i} already evaluated")
        self.evaluated[i] = True
        if y is not None:
            self.y[i] = y


def expected_improvement(mean, variance, y_min):
    """``E[(y - y_min) 1{y < y_min}]`` under ``N(mean, variance)``; never positive."""
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=np.float64), VARIANCE_FLOOR))
    u = (y_min - mean) / sigma
    out = (mean - y_min) * norm.cdf(u) - sigma * norm.pdf(u)
    out = np.minimum(out, 0.0)
    return out if out.ndim else float(out)


def expected_improvement_grad(mean, variance, dmean, dvar, y_min):
    """EI and its gradient given the predictive moments and their gradients."""
    var = np.maximum(variance, VARIANCE_FLOOR)
    sigma = np.sqrt(var)
    u = (y_min - mean) / sigma
    cdf, pdf = norm.cdf(u), norm.pdf(u)
    value = np.minimum((mean - y_min) * cdf - sigma * pdf, 0.0)
    dsigma = np.where(variance > VARIANCE_FLOOR, 0.5 / sigma, 0.0)[..., None] * dvar
    grad = cdf[..., None] * dmean - pdf[..., None] * dsigma
    return value, grad


def current_task_minimum(model, task):
    rows = model.data.for_task(task) if len(model.data) else model.data
    return float(np.min(rows.y)) if len(rows) else None


def start_points(space: ContinuousDesignSpace, n: int, seed) -> np.ndarray:
    """Scrambled Halton points; the first ``k`` are the same for any ``n >= k``."""
    ss = np.random.SeedSequence([int(seed), 2])
    sampler = qmc.Halton(d=space.dim, scramble=True, seed=np.random.default_rng(ss))
    return space.lower + space.width * sampler.random(n)


def maximize_ei(
    model,
    task,
    space: ContinuousDesignSpace,
    restarts: int = 10,
    seed=0,
    steps: int = 100,
    step_scale: float = 0.05,
    latent_samples: int | None = None,
    y_min: float | None = None,
):
    """Minimize EI over a box by projected Adam from several start points.

    All restarts share one frozen set of latent draws, so the acquisition is a
    deterministic function of ``x`` during the search. Returns
    ``(x_next, acquisition_value)``.
    """
    lat_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    post = model.condition(task, latent_samples, lat_rng)
    x = start_points(space, restarts, seed)
    if y_min is None:
        y_min = current_task_minimum(model, task)
    if y_min is None:
        mu0, *_ = post.matched_marginals_with_grad(x)
        y_min = float(np.min(mu0))

    best_x = x.copy()
    best_a = np.full(restarts, np.inf)
    opt = Adam(x.size, step_size=step_scale)
    scale = np.broadcast_to(space.width, x.shape).ravel()
    for step in range(steps + 1):
        mu, var, dmu, dvar = post.matched_marginals_with_grad(x)
        a, g = expected_improvement_grad(mu, var, dmu, dvar, y_min)
        improved = a < best_a
        best_a[improved] = a[improved]
        best_x[improved] = x[improved]
        if step == steps:
            break
        x = space.clip(x + opt.step(g.ravel(), scale=scale).reshape(x.shape))
    i = int(np.argmin(best_a))
    return best_x[i].copy(), float(best_a[i])


def prob_best(model, task, candidates: FiniteDesignSet, n_samples: int = 500, seed=0) -> np.ndarray:
    """Frequency with which each unevaluated candidate is the joint-sample minimum."""
    idx = candidates.unevaluated()
    if idx.size == 0:
        raise ValueError("no unevaluated candidates")
    if idx.size == 1:
        return np.ones(1)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 3]))
    draws = model.joint_samples(candidates.x[idx], task, n_samples, rng)
    winners = np.argmin(draws, axis=1)
    return np.bincount(winners, minlength=idx.size) / float(n_samples)
