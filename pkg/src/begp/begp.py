"""Bayesian embedding GP: latent task embeddings fused with a GP regressor.

Rows are ``(task tokens, x_r, y)``. Each task token owns a latent vector
``z``; the regression GP sees the concatenation ``[x_r, z]``. Training
maximizes a single-sample ELBO over the GP hyperparameters and the
variational means/variances of the latents. Predictions average the GP
posterior over joint latent draws and moment-match the mixture.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import embedding as emb
from .gp_core import (
    GaussianPredictive,
    GpData,
    GpHyperparams,
    KernelParams,
    constrained_to_unconstrained_grad,
    jittered_cholesky,
    log_marginal_likelihood,
    nlml_terms,
    pack,
    scaled_sqdist,
    unpack,
)
from .optim import Adam

logger = logging.getLogger(__name__)

BAYESIAN = "bayesian"
DETERMINISTIC = "deterministic"
MODES = (BAYESIAN, DETERMINISTIC)

FORMAT_VERSION = 1
DELTA_VARIANCE = 1e-12
VARIANCE_FLOOR = 1e-12
_CHUNK = 128


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration, value):
        super().__init__(f"non-finite ELBO ({value}) at iteration {iteration}")
        self.iteration = iteration


class _ZeroNormal:
    """Stands in for a Generator when every latent draw should sit at its mean."""

    def standard_normal(self, size=None):
        return np.zeros(size)


ZERO_NOISE = _ZeroNormal()


@dataclass
class MultiTaskData:
    tasks: list
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.tasks = [emb.normalize_token(t) for t in self.tasks]
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x.reshape(len(self.tasks), -1)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if not (len(self.tasks) == self.x.shape[0] == self.y.shape[0]):
            raise ValueError("tasks, x and y must have the same number of rows")
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all()):
            raise ValueError("data must be finite")
        if len({len(t) for t in self.tasks}) > 1:
            raise ValueError("inconsistent number of general features")

    def __len__(self):
        return self.y.shape[0]

    @property
    def real_dim(self) -> int:
        return self.x.shape[1]

    @classmethod
    def empty(cls, real_dim: int):
        return cls([], np.empty((0, real_dim)), np.empty(0))

    def append(self, task, x, y) -> "MultiTaskData":
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        if len(self) and x.shape[1] != self.real_dim:
            raise ValueError("real-input dimension mismatch")
        return MultiTaskData(
            self.tasks + [emb.normalize_token(task)],
            np.vstack([self.x.reshape(-1, x.shape[1]), x]),
            np.append(self.y, float(y)),
        )

    def concat(self, other: "MultiTaskData") -> "MultiTaskData":
        if len(self) == 0:
            return other
        if len(other) == 0:
            return self
        return MultiTaskData(
            self.tasks + other.tasks, np.vstack([self.x, other.x]), np.concatenate([self.y, other.y])
        )

    def select(self, mask) -> "MultiTaskData":
        idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return MultiTaskData([self.tasks[i] for i in idx], self.x[idx], self.y[idx])

    def for_task(self, task) -> "MultiTaskData":
        task = emb.normalize_token(task)
        return self.select(np.array([t == task for t in self.tasks], dtype=bool))


@dataclass
class TrainConfig:
    iterations: int = 2000
    step_size: float = 0.01
    elbo_samples_per_step: int = 1
    seed: int = 0
    warm_start: bool = False

    def __post_init__(self):
        if self.iterations < 0 or self.elbo_samples_per_step < 1 or self.step_size <= 0:
            raise ValueError("invalid training configuration")


def assemble_inputs(x_r, task_index, Z_blocks) -> np.ndarray:
    """Concatenate real inputs with each row's per-feature latent rows.

    ``task_index`` is ``n x n_features``; ``Z_blocks[f]`` holds the latents of
    feature ``f`` (optionally with a leading sample axis).
    """
    x_r = np.asarray(x_r, dtype=np.float64)
    task_index = np.asarray(task_index, dtype=np.int64).reshape(x_r.shape[0], -1)
    parts = []
    lead = None
    for f, Z in enumerate(Z_blocks):
        Z = np.asarray(Z, dtype=np.float64)
        if Z.shape[-1] == 0:
            continue
        if np.any(task_index[:, f] >= Z.shape[-2]):
            raise ValueError("task index out of range for latent block")
        parts.append(Z[..., task_index[:, f], :])
        if Z.ndim == 3:
            lead = Z.shape[0]
    if lead is not None:
        x_r = np.broadcast_to(x_r, (lead,) + x_r.shape)
        parts = [np.broadcast_to(p, (lead,) + p.shape[-2:]) for p in parts]
    return np.concatenate([x_r] + parts, axis=-1) if parts else x_r.copy()


class PosteriorSamples:
    """GP posteriors conditioned on a stack of latent-dependent training inputs.

    Works in the model's internal (scaled) output units.
    """

    def __init__(self, gp: GpHyperparams, X: np.ndarray, y: np.ndarray):
        self.gp = gp
        self.X = X  # (S, n, D)
        self.y = y
        S, n, _ = X.shape
        self.n_samples = S
        if n:
            K = gp.kernel.signal_variance * np.exp(-scaled_sqdist(X, X, gp.kernel.lengthscales))
            K = K + gp.noise_variance * np.eye(n)
            L, _ = jittered_cholesky(K)
            self.L = L
            Linv = np.linalg.inv(L)
            self.Kinv = np.swapaxes(Linv, -1, -2) @ Linv
            self.alpha = np.einsum("snm,m->sn", self.Kinv, y - gp.mean_constant)
        else:
            self.L = np.zeros((S, 0, 0))
            self.Kinv = np.zeros((S, 0, 0))
            self.alpha = np.zeros((S, 0))

    def _cross(self, Xq):
        kp = self.gp.kernel
        return kp.signal_variance * np.exp(-scaled_sqdist(Xq, self.X, kp.lengthscales))

    def joint(self, Xq: np.ndarray, output: bool = True):
        """Per-sample mean ``(S, m)`` and covariance ``(S, m, m)`` at ``Xq (S, m, D)``."""
        kp = self.gp.kernel
        Kss = kp.signal_variance * np.exp(-scaled_sqdist(Xq, Xq, kp.lengthscales))
        Kqf = self._cross(Xq)
        mean = self.gp.mean_constant + np.einsum("smn,sn->sm", Kqf, self.alpha)
        # triangular solve keeps the subtracted term a Gram matrix
        KfqT = np.swapaxes(Kqf, -1, -2)
        V = np.linalg.solve(self.L, KfqT) if KfqT.shape[-2] else KfqT
        cov = Kss - np.swapaxes(V, -1, -2) @ V
        cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
        if output:
            cov = cov + self.gp.noise_variance * np.eye(Xq.shape[1])
        return mean, cov

    def marginals_with_grad(self, Xq: np.ndarray, real_dim: int, output: bool = True):
        """Per-sample marginal means/variances and their gradients w.r.t. the
        first ``real_dim`` input columns. ``Xq`` is ``(S, P, D)``."""
        kp = self.gp.kernel
        k = self._cross(Xq)  # (S, P, n)
        mean = self.gp.mean_constant + np.einsum("spn,sn->sp", k, self.alpha)
        beta = np.einsum("snm,spm->spn", self.Kinv, k)
        var = kp.signal_variance - np.einsum("spn,spn->sp", k, beta)
        if output:
            var = var + self.gp.noise_variance
        ls = kp.lengthscales[:real_dim]
        # d k / d x_q = k * (-2 (x_q - x_j) / l^2)
        diff = Xq[:, :, None, :real_dim] - self.X[:, None, :, :real_dim]
        dk = -2.0 * diff / ls**2
        dmean = np.einsum("spn,spnd->spd", k * self.alpha[:, None, :], dk)
        dvar = -2.0 * np.einsum("spn,spnd->spd", k * beta, dk)
        return mean, var, dmean, dvar


@dataclass
class TaskPosterior:
    """Frozen latent draws for one query task; predicts at arbitrary real inputs."""

    samples: PosteriorSamples
    z_task: np.ndarray  # (S, d_latent)
    center: float
    scale: float
    real_dim: int

    def _inputs(self, x_r):
        x_r = np.asarray(x_r, dtype=np.float64).reshape(-1, self.real_dim)
        S = self.z_task.shape[0]
        xs = np.broadcast_to(x_r, (S,) + x_r.shape)
        zs = np.broadcast_to(self.z_task[:, None, :], (S, x_r.shape[0], self.z_task.shape[1]))
        return np.concatenate([xs, zs], axis=-1)

    def per_sample(self, x_r, output=True):
        """Per-sample means and covariances in original units."""
        mean, cov = self.samples.joint(self._inputs(x_r), output=output)
        return self.center + self.scale * mean, self.scale**2 * cov

    def moments(self, x_r, output=True) -> GaussianPredictive:
        means, covs = self.per_sample(x_r, output=output)
        return moment_match(means, covs)

    def matched_marginals_with_grad(self, x_r, output=True):
        """Moment-matched marginal mean/variance per point and gradients w.r.t. x_r."""
        m, v, dm, dv = self.samples.marginals_with_grad(self._inputs(x_r), self.real_dim, output)
        mu = m.mean(axis=0)
        dmu = dm.mean(axis=0)
        second = (v + m**2).mean(axis=0)
        dsecond = (dv + 2.0 * m[..., None] * dm).mean(axis=0)
        var = second - mu**2
        dvar = dsecond - 2.0 * mu[:, None] * dmu
        return (
            self.center + self.scale * mu,
            self.scale**2 * var,
            self.scale * dmu,
            self.scale**2 * dvar,
        )


def moment_match(means: np.ndarray, covs: np.ndarray) -> GaussianPredictive:
    """Single Gaussian with the mean and covariance of an equal-weight mixture."""
    mu = means.mean(axis=0)
    second = (covs + means[:, :, None] * means[:, None, :]).mean(axis=0)
    cov = second - np.outer(mu, mu)
    return GaussianPredictive(mu, 0.5 * (cov + cov.T))


class BegpModel:
    """Bayesian (or deterministic) embedding GP.

    Parameters
    ----------
    latent_dim : int
        Latent dimensions per general feature.
    mode : {"bayesian", "deterministic"}
        ``deterministic`` collapses each latent posterior onto its mean.
    seed : int
        Run seed; training noise and evaluation-time draws derive from it.
    latent_samples : int
        Default number of joint latent draws used by :meth:`predict`.
    init_variance : float
        Starting variational variance for tokens present at the initial fit.
    """

    def __init__(
        self,
        latent_dim: int = 2,
        mode: str = BAYESIAN,
        seed: int = 0,
        latent_samples: int = 64,
        init_variance: float = 0.01,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown embedding mode {mode!r}")
        self.latent_dim = int(latent_dim)
        self.mode = mode
        self.seed = int(seed)
        self.latent_samples = int(latent_samples)
        self.init_variance = float(init_variance)
        self.table: emb.TaskTable | None = None
        self.latents: emb.LatentPosterior | None = None
        self.gp: GpHyperparams | None = None
        self.center = 0.0
        self.scale = 1.0
        self.data: MultiTaskData | None = None
        self.generation = 0
        self.elbo_trace: list[float] = []

    # -- state -----------------------------------------------------------------

    @property
    def is_fitted(self) -> bool:
        return self.gp is not None

    @property
    def real_dim(self) -> int:
        return self.data.real_dim

    @property
    def output_scaling(self):
        return self.center, self.scale

    def _learns_variances(self) -> bool:
        return self.mode == BAYESIAN

    def _initialize(self, data: MultiTaskData, rng):
        self.table = emb.register_tasks(data.tasks, latent_dim=self.latent_dim)
        self.latents = emb.LatentPosterior.initial(self.table, rng, variance=self.init_variance)
        if self.mode == DETERMINISTIC:
            for s in self.latents.variances:
                s[:] = DELTA_VARIANCE
        self.center = float(np.mean(data.y))
        sd = float(np.std(data.y)) if len(data) > 1 else 0.0
        self.scale = sd if sd > 0 else 1.0
        span = np.ptp(data.x, axis=0) if len(data) else np.ones(data.real_dim)
        ls_real = np.where(span > 0, 0.5 * span, 1.0)
        ls = np.concatenate([ls_real, np.ones(self.table.total_latent_dim)])
        self.gp = GpHyperparams(KernelParams(1.0, ls), mean_constant=0.0, noise_variance=0.1)

    def _grow(self, data: MultiTaskData, rng):
        table = self.table.extended(data.tasks)
        if table != self.table:
            # a token first seen now starts from its zero-shot posterior, the prior
            self.latents = self.latents.extended(table, rng, variance=emb.PRIOR_VARIANCE)
            if self.mode == DETERMINISTIC:
                for s in self.latents.variances:
                    s[:] = DELTA_VARIANCE
            self.table = table

    # -- flat parameter vector -------------------------------------------------

    def _get_theta(self) -> np.ndarray:
        parts = [pack(self.gp)] + [m.ravel() for m in self.latents.means]
        if self._learns_variances():
            parts += [np.log(s).ravel() for s in self.latents.variances]
        return np.concatenate(parts)

    def _set_theta(self, theta):
        n_gp = 3 + self.gp.kernel.input_dim
        self.gp = unpack(theta[:n_gp])
        pos = n_gp
        shapes = [m.shape for m in self.latents.means]
        means = []
        for shp in shapes:
            size = int(np.prod(shp))
            means.append(theta[pos : pos + size].reshape(shp).copy())
            pos += size
        if self._learns_variances():
            variances = []
            for shp in shapes:
                size = int(np.prod(shp))
                variances.append(np.exp(theta[pos : pos + size]).reshape(shp))
                pos += size
        else:
            variances = self.latents.variances
        self.latents = emb.LatentPosterior(means, variances)

    # -- objective -------------------------------------------------------------

    def _scaled(self, y):
        return (np.asarray(y) - self.center) / self.scale

    def _elbo_and_grad(self, theta, index, x, y_scaled, noise, want_grad=True):
        self._set_theta(theta)
        Z = [
            emb.sample_latents(m, s, e)
            for m, s, e in zip(self.latents.means, self.latents.variances, noise)
        ]
        X = assemble_inputs(x, index, Z)
        value, grads = nlml_terms(X, y_scaled, self.gp, input_grad=want_grad)
        elbo = -value
        bayes = self._learns_variances()
        if bayes:
            elbo -= emb.kl_to_prior(self.latents)
        if not want_grad:
            return elbo, None
        n_gp = 3 + self.gp.kernel.input_dim
        g = np.empty_like(theta)
        g[:n_gp] = -constrained_to_unconstrained_grad(theta[:n_gp], grads)
        gX = grads["inputs"]
        col = x.shape[1]
        g_means, g_logvars = [], []
        for f, (m, s, e) in enumerate(zip(self.latents.means, self.latents.variances, noise)):
            d = m.shape[1]
            gZ = np.zeros_like(m)
            np.add.at(gZ, index[:, f], gX[:, col : col + d])
            col += d
            g_means.append(-gZ)
            g_logvars.append(-gZ * 0.5 * np.sqrt(s) * e)
        if bayes:
            kl_m, kl_ls = emb.kl_gradient(self.latents)
            g_means = [a - b for a, b in zip(g_means, kl_m)]
            g_logvars = [a - b for a, b in zip(g_logvars, kl_ls)]
        pos = n_gp
        for block in g_means + (g_logvars if bayes else []):
            g[pos : pos + block.size] = block.ravel()
            pos += block.size
        return elbo, g

    def _draw_training_noise(self, rng):
        return [rng.standard_normal(m.shape) for m in self.latents.means]

    def elbo_estimate(self, data: MultiTaskData, noise) -> float:
        """Single-sample ELBO in original output units for fixed latent noise."""
        index = self.table.encode(data.tasks)
        if np.any(index < 0):
            raise ValueError("all training tasks must be registered")
        theta = self._get_theta()
        elbo, _ = self._elbo_and_grad(theta, index, data.x, self._scaled(data.y), noise, False)
        return elbo - len(data) * np.log(self.scale)

    def elbo_gradient(self, data: MultiTaskData, noise):
        """ELBO value (scaled units) and gradient w.r.t. the flat parameter vector."""
        index = self.table.encode(data.tasks)
        theta = self._get_theta()
        out = self._elbo_and_grad(theta, index, data.x, self._scaled(data.y), noise)
        self._set_theta(theta)
        return out

    # -- training --------------------------------------------------------------

    def fit(self, data: MultiTaskData, config: TrainConfig | None = None) -> "BegpModel":
        config = config or TrainConfig(seed=self.seed)
        if len(data) == 0:
            raise ValueError("cannot fit on empty data")
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, self.generation]))
        if config.warm_start and self.is_fitted:
            if data.real_dim != self.real_dim:
                raise ValueError("real-input dimension changed between fits")
            self._grow(data, rng)
        else:
            self._initialize(data, rng)
            self.elbo_trace = []
        self.data = data
        self.generation += 1
        if config.iterations == 0:
            return self

        index = self.table.encode(data.tasks)
        y_scaled = self._scaled(data.y)
        theta = self._get_theta()
        opt = Adam(theta.shape[0], step_size=config.step_size)
        jac = len(data) * np.log(self.scale)
        for it in range(config.iterations):
            total, grad = 0.0, np.zeros_like(theta)
            for _ in range(config.elbo_samples_per_step):
                noise = self._draw_training_noise(rng)
                e, g = self._elbo_and_grad(theta, index, data.x, y_scaled, noise)
                total += e
                grad += g
            total /= config.elbo_samples_per_step
            grad /= config.elbo_samples_per_step
            if not (np.isfinite(total) and np.isfinite(grad).all()):
                self._set_theta(theta)
                raise TrainingDiverged(it, total)
            self.elbo_trace.append(total - jac)
            # ascent on the ELBO
            theta = theta + opt.step(-grad)
        self._set_theta(theta)
        logger.debug("fit done: final ELBO %.4f", self.elbo_trace[-1])
        return self

    # -- prediction ------------------------------------------------------------

    def eval_rng(self, seed=None) -> np.random.Generator:
        if seed is None:
            return np.random.default_rng(np.random.SeedSequence([self.seed, self.generation, 7]))
        return np.random.default_rng(seed)

    def _draw(self, query_tasks, n_samples, rng):
        """Joint latent draws: training inputs ``(S, n, D)`` and query latents ``(S, m, dz)``."""
        query = [emb.normalize_token(t, self.table.n_features) for t in query_tasks]
        if self.mode == DETERMINISTIC:
            n_samples, rng = 1, ZERO_NOISE
        train_index = self.table.encode(self.data.tasks)
        blocks, query_parts = [], []
        for f in range(self.table.n_features):
            m, s = self.latents.means[f], self.latents.variances[f]
            d = m.shape[1]
            unseen = []
            for row in query:
                if self.table.index(f, row[f]) < 0 and row[f] not in unseen:
                    unseen.append(row[f])
            eps = rng.standard_normal((n_samples,) + m.shape)
            eps_new = rng.standard_normal((n_samples, len(unseen), d))
            Zf = np.concatenate([m + np.sqrt(s) * eps, np.sqrt(emb.PRIOR_VARIANCE) * eps_new], axis=1)
            blocks.append(Zf)
            qi = np.array(
                [
                    self.table.index(f, row[f]) if self.table.index(f, row[f]) >= 0
                    else m.shape[0] + unseen.index(row[f])
                    for row in query
                ],
                dtype=np.int64,
            )
            query_parts.append(Zf[:, qi, :])
        X = assemble_inputs(self.data.x, train_index, blocks)
        if X.ndim == 2:
            X = np.broadcast_to(X, (n_samples,) + X.shape)
        dz = self.table.total_latent_dim
        Zq = np.concatenate(query_parts, axis=-1) if query_parts else np.zeros((n_samples, len(query), dz))
        return np.ascontiguousarray(X), Zq

    def condition(self, task, n_samples: int | None = None, rng=None) -> TaskPosterior:
        """Freeze a set of joint latent draws for predictions on one task."""
        n_samples = n_samples or self.latent_samples
        rng = self.eval_rng() if rng is None else rng
        X, Zq = self._draw([task], n_samples, rng)
        samples = PosteriorSamples(self.gp, X, self._scaled(self.data.y))
        return TaskPosterior(samples, Zq[:, 0, :], self.center, self.scale, self.real_dim)

    def predict(self, x_r, tasks, latent_samples: int | None = None, seed=None, rng=None, output=True):
        """Moment-matched Gaussian predictive in original output units.

        ``tasks`` is a single token (str or tuple) shared by all rows, or a
        list with one token per row.
        """
        x_r = np.asarray(x_r, dtype=np.float64).reshape(-1, self.real_dim)
        m = x_r.shape[0]
        if isinstance(tasks, (str, tuple)):
            tasks = [tasks] * m
        if len(tasks) != m:
            raise ValueError("one task per query row required")
        n_samples = latent_samples or self.latent_samples
        rng = rng if rng is not None else self.eval_rng(seed)
        X, Zq = self._draw(tasks, n_samples, rng)
        y = self._scaled(self.data.y)
        means, covs = [], []
        for lo in range(0, X.shape[0], _CHUNK):
            ps = PosteriorSamples(self.gp, X[lo : lo + _CHUNK], y)
            xq = np.concatenate(
                [np.broadcast_to(x_r, (ps.n_samples,) + x_r.shape), Zq[lo : lo + _CHUNK]], axis=-1
            )
            mu, cov = ps.joint(xq, output=output)
            means.append(mu)
            covs.append(cov)
        pred = moment_match(np.concatenate(means), np.concatenate(covs))
        return GaussianPredictive(self.center + self.scale * pred.mean, self.scale**2 * pred.covariance)

    def joint_samples(self, x_r, task, n_samples: int, rng, output=True) -> np.ndarray:
        """``n_samples`` joint draws of the predictive at ``x_r``, one latent draw each."""
        x_r = np.asarray(x_r, dtype=np.float64).reshape(-1, self.real_dim)
        X, Zq = self._draw([task], n_samples, rng)
        if X.shape[0] == 1 and n_samples > 1:
            X = np.broadcast_to(X, (n_samples,) + X.shape[1:])
            Zq = np.broadcast_to(Zq, (n_samples,) + Zq.shape[1:])
        y = self._scaled(self.data.y)
        out = []
        for lo in range(0, n_samples, _CHUNK):
            Xc = X[lo : lo + _CHUNK]
            ps = PosteriorSamples(self.gp, Xc, y)
            z = np.broadcast_to(Zq[lo : lo + _CHUNK, :1, :], (Xc.shape[0], x_r.shape[0], Zq.shape[-1]))
            xq = np.concatenate([np.broadcast_to(x_r, (Xc.shape[0],) + x_r.shape), z], axis=-1)
            out.append(gaussian_draws(*ps.joint(xq, output=output), rng))
        return self.center + self.scale * np.concatenate(out)

    # -- persistence -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "begp",
            "mode": self.mode,
            "latent_dim": self.latent_dim,
            "latent_samples": self.latent_samples,
            "init_variance": self.init_variance,
            "seed": self.seed,
            "generation": self.generation,
            "output_scaling": {"center": self.center, "scale": self.scale},
            "table": {
                "features": list(self.table.features),
                "tokens": [list(t) for t in self.table.tokens],
                "latent_dims": list(self.table.latent_dims),
            },
            "latents": {
                "means": [m.tolist() for m in self.latents.means],
                "variances": [s.tolist() for s in self.latents.variances],
            },
            "gp": {
                "signal_variance": self.gp.kernel.signal_variance,
                "lengthscales": self.gp.kernel.lengthscales.tolist(),
                "mean_constant": self.gp.mean_constant,
                "noise_variance": self.gp.noise_variance,
            },
            "data": {
                "tasks": [list(t) for t in self.data.tasks],
                "x": self.data.x.tolist(),
                "y": self.data.y.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BegpModel":
        if d.get("format_version") != FORMAT_VERSION or d.get("kind") != "begp":
            raise ValueError("unsupported model file")
        model = cls(d["latent_dim"], d["mode"], d["seed"], d["latent_samples"], d["init_variance"])
        model.generation = d["generation"]
        model.center = d["output_scaling"]["center"]
        model.scale = d["output_scaling"]["scale"]
        t = d["table"]
        model.table = emb.TaskTable(
            tuple(t["features"]), tuple(tuple(x) for x in t["tokens"]), tuple(t["latent_dims"])
        )
        dims = model.table.latent_dims
        model.latents = emb.LatentPosterior(
            [np.array(m, dtype=np.float64).reshape(-1, dz) for m, dz in zip(d["latents"]["means"], dims)],
            [np.array(s, dtype=np.float64).reshape(-1, dz) for s, dz in zip(d["latents"]["variances"], dims)],
        )
        g = d["gp"]
        model.gp = GpHyperparams(
            KernelParams(g["signal_variance"], g["lengthscales"]), g["mean_constant"], g["noise_variance"]
        )
        dd = d["data"]
        real_dim = len(dd["x"][0]) if dd["x"] else 0
        model.data = MultiTaskData(
            [tuple(t) for t in dd["tasks"]], np.array(dd["x"], dtype=np.float64).reshape(-1, real_dim), dd["y"]
        )
        return model

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "BegpModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def gaussian_draws(means, covs, rng) -> np.ndarray:
    """One draw from each ``N(means[s], covs[s])``."""
    L, _ = jittered_cholesky(covs)
    eps = rng.standard_normal(means.shape)
    return means + np.einsum("smk,sk->sm", L, eps)


# -- module-level operations ----------------------------------------------------


def elbo_estimate(model: BegpModel, data: MultiTaskData, noise) -> float:
    return model.elbo_estimate(data, noise)


def fit(model: BegpModel, data: MultiTaskData, config: TrainConfig | None = None) -> BegpModel:
    return model.fit(data, config)


def predict(model: BegpModel, x_r, tasks, latent_samples: int | None = None, **kwargs) -> GaussianPredictive:
    return model.predict(x_r, tasks, latent_samples, **kwargs)


def mnlp_ready_marginals(predictive: GaussianPredictive, center: float = 0.0, scale: float = 1.0):
    """Per-point ``(mean, variance)`` pairs, mapped by ``y = center + scale * y_internal``."""
    means = center + scale * predictive.mean
    variances = np.maximum(scale**2 * predictive.marginal_variance, VARIANCE_FLOOR)
    return list(zip(means.tolist(), variances.tolist()))


def plain_gp_log_likelihood(model: BegpModel, data: MultiTaskData, Z_blocks) -> float:
    """GP log marginal likelihood of ``data`` (original units) at fixed latents."""
    X = assemble_inputs(data.x, model.table.encode(data.tasks), Z_blocks)
    return log_marginal_likelihood(GpData(X, model._scaled(data.y)), model.gp) - len(data) * np.log(model.scale)
