"""Exact Gaussian-process regression with an RBF kernel.

Everything here is a pure function of its arguments and works in float64.
Positive hyperparameters are optimized through a softplus bijection; the
packed unconstrained vector is laid out as::

    [signal_variance, lengthscale_1 .. lengthscale_d, mean_constant, noise_variance]

with every entry except ``mean_constant`` passed through :func:`softplus`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

LOG_2PI = float(np.log(2.0 * np.pi))

JITTER_START = 1e-8
JITTER_MAX = 1e-2


class SingularKernelError(np.linalg.LinAlgError):
    """Kernel matrix could not be factorized even at the maximum jitter."""


@dataclass
class KernelParams:
    signal_variance: float
    lengthscales: np.ndarray

    def __post_init__(self):
        self.signal_variance = float(self.signal_variance)
        self.lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=np.float64))
        if not self.signal_variance > 0 or not np.all(self.lengthscales > 0):
            raise ValueError("kernel parameters must be strictly positive")

    @property
    def input_dim(self) -> int:
        return self.lengthscales.shape[0]


@dataclass
class GpHyperparams:
    kernel: KernelParams
    mean_constant: float = 0.0
    noise_variance: float = 0.0

    def __post_init__(self):
        self.mean_constant = float(self.mean_constant)
        self.noise_variance = float(self.noise_variance)
        if self.noise_variance < 0 or not np.isfinite(
            [self.mean_constant, self.noise_variance]
        ).all():
            raise ValueError("noise variance must be finite and non-negative")


@dataclass
class GpData:
    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.outputs = np.asarray(self.outputs, dtype=np.float64).reshape(-1)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs.reshape(-1, 1)
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise ValueError(
                f"{self.inputs.shape[0]} input rows but {self.outputs.shape[0]} outputs"
            )
        if not (np.isfinite(self.inputs).all() and np.isfinite(self.outputs).all()):
            raise ValueError("training data must be finite")

    def __len__(self):
        return self.outputs.shape[0]


@dataclass
class GaussianPredictive:
    mean: np.ndarray
    covariance: np.ndarray
    marginal_variance: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        self.marginal_variance = np.diag(self.covariance).copy()


# ---------------------------------------------------------------------------
# Transforms


def softplus(u):
    u = np.asarray(u, dtype=np.float64)
    return np.logaddexp(0.0, u)


def softplus_grad(u):
    """Derivative of softplus, i.e. the logistic sigmoid."""
    u = np.asarray(u, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -u))


def inv_softplus(v):
    v = np.asarray(v, dtype=np.float64)
    # log(expm1(v)) without overflow for large v
    return v + np.log(-np.expm1(-v))


def pack(params: GpHyperparams) -> np.ndarray:
    k = params.kernel
    # a zero noise variance has no finite preimage; clamp to the smallest one
    noise = max(params.noise_variance, 1e-300)
    return np.concatenate(
        [
            [inv_softplus(k.signal_variance)],
            inv_softplus(k.lengthscales),
            [params.mean_constant],
            [inv_softplus(noise)],
        ]
    )


def unpack(theta) -> GpHyperparams:
    theta = np.asarray(theta, dtype=np.float64)
    d = theta.shape[0] - 3
    if d < 0:
        raise ValueError("unconstrained vector too short")
    return GpHyperparams(
        kernel=KernelParams(
            signal_variance=softplus(theta[0]), lengthscales=softplus(theta[1 : 1 + d])
        ),
        mean_constant=theta[1 + d],
        noise_variance=softplus(theta[2 + d]),
    )


# ---------------------------------------------------------------------------
# Kernels


def kernel_rbf(x, x_prime, params: KernelParams) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=np.float64))
    if x.shape != x_prime.shape or x.shape[0] != params.input_dim:
        raise ValueError(
            f"dimension mismatch: {x.shape}, {x_prime.shape}, "
            f"{params.input_dim} lengthscales"
        )
    r = (x - x_prime) / params.lengthscales
    return float(params.signal_variance * np.exp(-np.dot(r, r)))


def kernel_white(id_a, id_b, variance: float) -> float:
    return float(variance) if id_a == id_b else 0.0


def _as_matrix(X, dim):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, dim) if dim else X.reshape(-1, 0)
    if X.shape[-1] != dim:
        raise ValueError(f"expected {dim} input columns, got {X.shape[-1]}")
    return X


def scaled_sqdist(X, X_prime, lengthscales):
    """Pairwise sum_i ((x_i - x'_i) / l_i)^2; broadcasts over leading axes."""
    A = X / lengthscales
    B = X_prime / lengthscales
    diff = A[..., :, None, :] - B[..., None, :, :]
    return np.einsum("...ijk,...ijk->...ij", diff, diff)


def gram(X, X_prime, params: KernelParams) -> np.ndarray:
    X = _as_matrix(X, params.input_dim)
    X_prime = _as_matrix(X_prime, params.input_dim)
    return params.signal_variance * np.exp(-scaled_sqdist(X, X_prime, params.lengthscales))


# ---------------------------------------------------------------------------
# Factorization


def jittered_cholesky(K: np.ndarray):
    """Lower Cholesky factor of ``K + jitter * I`` under the escalation policy.

    Returns ``(L, jitter)``. Works on a single matrix or a stack; for a stack
    the escalation is applied to each failing member separately.
    """
    if K.shape[-1] == 0:
        return K.copy(), 0.0
    if K.ndim > 2:
        try:
            return _batched_cholesky(K)
        except np.linalg.LinAlgError:
            out = np.empty_like(K)
            for idx in np.ndindex(K.shape[:-2]):
                out[idx], _ = jittered_cholesky(K[idx])
            return out, None
    scale = float(np.mean(np.diag(K)))
    if not np.isfinite(scale) or scale <= 0:
        raise SingularKernelError("kernel diagonal is not positive and finite")
    eye = np.eye(K.shape[0])
    rel = JITTER_START
    while rel <= JITTER_MAX * (1 + 1e-9):
        jitter = rel * scale
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            rel *= 10.0
    raise SingularKernelError(
        f"kernel matrix not positive definite at jitter {JITTER_MAX:g} x mean(diag)"
    )


def _batched_cholesky(K):
    n = K.shape[-1]
    scale = np.mean(np.diagonal(K, axis1=-2, axis2=-1), axis=-1)
    Kj = K + (JITTER_START * scale)[..., None, None] * np.eye(n)
    L = np.linalg.cholesky(Kj)
    if not np.isfinite(L).all():
        raise np.linalg.LinAlgError("non-finite factor")
    return L, None


def _factor(data: GpData, params: GpHyperparams):
    X = _as_matrix(data.inputs, params.kernel.input_dim)
    Kff = gram(X, X, params.kernel)
    Kyy = Kff + params.noise_variance * np.eye(len(data))
    L, jitter = jittered_cholesky(Kyy)
    resid = data.outputs - params.mean_constant
    alpha = cho_solve((L, True), resid)
    return X, Kff, L, resid, alpha


# ---------------------------------------------------------------------------
# Likelihood and posteriors


def log_marginal_likelihood(data: GpData, params: GpHyperparams) -> float:
    n = len(data)
    if n == 0:
        return 0.0
    _, _, L, resid, alpha = _factor(data, params)
    return float(
        -0.5 * resid @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI
    )


def _symmetrize(C):
    return 0.5 * (C + np.swapaxes(C, -1, -2))


def posterior_latent(data: GpData, params: GpHyperparams, X_star) -> GaussianPredictive:
    X_star = _as_matrix(X_star, params.kernel.input_dim)
    Kss = gram(X_star, X_star, params.kernel)
    mu_star = np.full(X_star.shape[0], params.mean_constant)
    if len(data) == 0:
        return GaussianPredictive(mu_star, _symmetrize(Kss))
    X, _, L, _, alpha = _factor(data, params)
    Ksf = gram(X_star, X, params.kernel)
    V = solve_triangular(L, Ksf.T, lower=True)
    return GaussianPredictive(Ksf @ alpha + mu_star, _symmetrize(Kss - V.T @ V))


def posterior_output(data: GpData, params: GpHyperparams, X_star) -> GaussianPredictive:
    latent = posterior_latent(data, params, X_star)
    cov = latent.covariance + params.noise_variance * np.eye(latent.mean.shape[0])
    return GaussianPredictive(latent.mean, cov)


def nlml_terms(X, y, params: GpHyperparams, input_grad: bool = False):
    """Negative log marginal likelihood with gradients in constrained space.

    Returns ``(value, grads)`` where ``grads`` maps ``signal_variance``,
    ``lengthscales``, ``mean_constant``, ``noise_variance`` and optionally
    ``inputs`` (an ``n x d`` array) to partial derivatives. The jitter is
    treated as a constant.
    """
    n = y.shape[0]
    kp = params.kernel
    sqd = scaled_sqdist(X, X, kp.lengthscales)
    Kff = kp.signal_variance * np.exp(-sqd)
    L, _ = jittered_cholesky(Kff + params.noise_variance * np.eye(n))
    resid = y - params.mean_constant
    alpha = cho_solve((L, True), resid)
    value = 0.5 * resid @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * LOG_2PI

    Kinv = cho_solve((L, True), np.eye(n))
    W = Kinv - np.outer(alpha, alpha)
    # d value / dK = W / 2
    G = W * Kff
    grads = {
        "signal_variance": 0.5 * np.sum(G) / kp.signal_variance,
        "noise_variance": 0.5 * np.trace(W),
        "mean_constant": -np.sum(alpha),
    }
    diff = X[:, None, :] - X[None, :, :]
    sq = diff**2
    grads["lengthscales"] = np.einsum("ij,ijk->k", G, sq) / kp.lengthscales**3
    if input_grad:
        grads["inputs"] = (
            -2.0
            * (np.sum(G, axis=1)[:, None] * X - G @ X)
            / kp.lengthscales**2
        )
    return float(value), grads


def constrained_to_unconstrained_grad(theta, grads) -> np.ndarray:
    d = theta.shape[0] - 3
    out = np.empty_like(theta)
    out[0] = grads["signal_variance"] * softplus_grad(theta[0])
    out[1 : 1 + d] = grads["lengthscales"] * softplus_grad(theta[1 : 1 + d])
    out[1 + d] = grads["mean_constant"]
    out[2 + d] = grads["noise_variance"] * softplus_grad(theta[2 + d])
    return out


def nlml_and_gradient(data: GpData, unconstrained_params) -> tuple[float, np.ndarray]:
    theta = np.asarray(unconstrained_params, dtype=np.float64)
    params = unpack(theta)
    X = _as_matrix(data.inputs, params.kernel.input_dim)
    value, grads = nlml_terms(X, data.outputs, params)
    return value, constrained_to_unconstrained_grad(theta, grads)
