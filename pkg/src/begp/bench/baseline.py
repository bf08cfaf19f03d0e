"""Vanilla GP baseline that only sees data from the current task.

Hyperparameters are fitted by type-II maximum likelihood with restarts.
It exposes the same prediction surface as :class:`~begp.begp.BegpModel`
so the acquisition code and BO loop can drive either.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

from ..begp import MultiTaskData, PosteriorSamples, TaskPosterior
from ..gp_core import (
    GaussianPredictive,
    GpData,
    GpHyperparams,
    KernelParams,
    SingularKernelError,
    inv_softplus,
    jittered_cholesky,
    nlml_and_gradient,
    pack,
    unpack,
)

# positive-parameter bounds in internal (standardized) units
_BOUNDS = {
    "signal_variance": (1e-3, 1e2),
    "lengthscale": (1e-2, 1e1),
    "noise_variance": (1e-6, 1e1),
    "mean_constant": (-10.0, 10.0),
}


class BaselineGP:
    def __init__(self, task=None, restarts: int = 5, seed: int = 0):
        self.task = task
        self.restarts = restarts
        self.seed = int(seed)
        self.data: MultiTaskData | None = None
        self.gp: GpHyperparams | None = None
        self.center = 0.0
        self.scale = 1.0
        self.generation = 0
        self._real_dim = None

    @property
    def is_fitted(self) -> bool:
        return self.gp is not None

    @property
    def real_dim(self) -> int:
        return self._real_dim

    def _default(self, d):
        return GpHyperparams(KernelParams(1.0, np.full(d, 0.5)), 0.0, 0.01)

    def _bounds(self, d):
        lo_s, hi_s = inv_softplus(np.array(_BOUNDS["signal_variance"]))
        lo_l, hi_l = inv_softplus(np.array(_BOUNDS["lengthscale"]))
        lo_n, hi_n = inv_softplus(np.array(_BOUNDS["noise_variance"]))
        return [(lo_s, hi_s)] + [(lo_l, hi_l)] * d + [_BOUNDS["mean_constant"], (lo_n, hi_n)]

    def fit(self, data: MultiTaskData, config=None) -> "BaselineGP":
        if self.task is not None:
            data = data.for_task(self.task)
        self._real_dim = data.real_dim
        self.data = data
        self.generation += 1
        d = data.real_dim
        n = len(data)
        self.center = float(np.mean(data.y)) if n else 0.0
        sd = float(np.std(data.y)) if n > 1 else 0.0
        self.scale = sd if sd > 0 else 1.0
        self.gp = self._default(d)
        if n == 0:
            return self
        gdata = GpData(data.x, (data.y - self.center) / self.scale)
        bounds = self._bounds(d)
        lo = np.array([b[0] for b in bounds])
        hi = np.array([b[1] for b in bounds])
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, self.generation]))
        starts = [pack(self._default(d))]
        starts += [lo + (hi - lo) * rng.uniform(size=lo.shape) for _ in range(self.restarts - 1)]
        best = None
        for theta0 in starts:
            try:
                res = minimize(
                    lambda t: nlml_and_gradient(gdata, t),
                    np.clip(theta0, lo, hi),
                    jac=True,
                    method="L-BFGS-B",
                    bounds=bounds,
                )
            except (SingularKernelError, np.linalg.LinAlgError):
                continue
            if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
                best = res
        if best is not None:
            self.gp = unpack(best.x)
        return self

    # -- prediction surface shared with BegpModel ---------------------------------

    def eval_rng(self, seed=None):
        if seed is None:
            return np.random.default_rng(np.random.SeedSequence([self.seed, self.generation, 7]))
        return np.random.default_rng(seed)

    def _samples(self, n=1):
        X = np.broadcast_to(self.data.x, (n,) + self.data.x.shape)
        return PosteriorSamples(self.gp, np.ascontiguousarray(X), (self.data.y - self.center) / self.scale)

    def condition(self, task=None, n_samples=None, rng=None) -> TaskPosterior:
        return TaskPosterior(self._samples(), np.zeros((1, 0)), self.center, self.scale, self.real_dim)

    def predict(self, x_r, tasks=None, latent_samples=None, seed=None, rng=None, output=True) -> GaussianPredictive:
        return self.condition().moments(x_r, output=output)

    def joint_samples(self, x_r, task, n_samples, rng, output=True):
        x_r = np.asarray(x_r, dtype=np.float64).reshape(-1, self.real_dim)
        mean, cov = self.condition().per_sample(x_r, output=output)
        L, _ = jittered_cholesky(cov[0])
        return mean[0] + rng.standard_normal((n_samples, mean.shape[1])) @ L.T


def baseline_gp_fit_predict(data: MultiTaskData, x_test, seed: int = 0, restarts: int = 5) -> GaussianPredictive:
    """Fit on current-task rows only and predict at ``x_test`` (output space).

    With no rows the prediction is the prior under default hyperparameters.
    """
    return BaselineGP(restarts=restarts, seed=seed).fit(data).predict(x_test)
