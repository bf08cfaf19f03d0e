import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from begp.gp_core import (
    JITTER_START,
    GpData,
    GpHyperparams,
    KernelParams,
    SingularKernelError,
    gram,
    inv_softplus,
    jittered_cholesky,
    kernel_rbf,
    kernel_white,
    log_marginal_likelihood,
    nlml_and_gradient,
    pack,
    posterior_latent,
    posterior_output,
    softplus,
    unpack,
)

from conftest import random_instance


def dense_kyy(data, params):
    """Explicit K_yy (pairwise loop) plus the nominal starting jitter."""
    n = len(data)
    K = np.array(
        [[kernel_rbf(data.inputs[i], data.inputs[j], params.kernel) for j in range(n)] for i in range(n)]
    )
    K = K + params.noise_variance * np.eye(n)
    return K + JITTER_START * np.mean(np.diag(K)) * np.eye(n)


def dense_lml(data, params):
    K = dense_kyy(data, params)
    r = data.outputs - params.mean_constant
    _, logdet = np.linalg.slogdet(K)
    return -0.5 * r @ np.linalg.inv(K) @ r - 0.5 * logdet - 0.5 * len(data) * np.log(2 * np.pi)


def joint_conditioning(data, params, Xs):
    """Condition the assembled (n+m) joint Gaussian on the training outputs."""
    n = len(data)
    Z = np.vstack([data.inputs, Xs])
    J = np.array([[kernel_rbf(a, b, params.kernel) for b in Z] for a in Z])
    Kyy = dense_kyy(data, params)
    A, C = J[n:, :n], J[n:, n:]
    sol = np.linalg.inv(Kyy)
    mean = params.mean_constant + A @ sol @ (data.outputs - params.mean_constant)
    return mean, C - A @ sol @ A.T


# -- kernels -------------------------------------------------------------------------


def test_kernel_rbf_examples():
    kp = KernelParams(1.0, [1.0])
    assert kernel_rbf([0.0], [1.0], kp) == pytest.approx(np.exp(-1.0), abs=1e-12)
    assert kernel_rbf([0.3], [0.3], KernelParams(2.5, [0.1])) == 2.5
    assert kernel_rbf([0.0], [1.0], KernelParams(2.0, [1e6])) == pytest.approx(2.0, abs=1e-6)


def test_kernel_rbf_rejects_bad_input():
    with pytest.raises(ValueError):
        kernel_rbf([0.0, 1.0], [0.0], KernelParams(1.0, [1.0]))
    with pytest.raises(ValueError):
        KernelParams(0.0, [1.0])
    with pytest.raises(ValueError):
        KernelParams(1.0, [-1.0])


def test_kernel_white():
    assert kernel_white("task0", "task0", 1.0) == 1.0
    assert kernel_white("task0", "task1", 1.0) == 0.0
    assert kernel_white("a", "a", 0.25) == 0.25


def test_gram_matches_pairwise_loop(rng):
    kp = KernelParams(1.7, [0.4, 1.3])
    X, Y = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
    G = gram(X, Y, kp)
    loop = np.array([[kernel_rbf(a, b, kp) for b in Y] for a in X])
    np.testing.assert_allclose(G, loop, rtol=1e-14)
    assert gram(X[:1], X[:1], kp)[0, 0] == pytest.approx(1.7)
    dup = gram(np.zeros((2, 2)), np.zeros((2, 2)), kp)
    np.testing.assert_allclose(dup, 1.7)
    assert np.linalg.matrix_rank(dup) == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10), st.integers(1, 3), st.integers(0, 2**31))
def test_gram_symmetric_and_psd(n, d, seed):
    r = np.random.default_rng(seed)
    kp = KernelParams(r.uniform(0.1, 3), r.uniform(0.1, 3, size=d))
    X = r.normal(size=(n, d))
    G = gram(X, X, kp)
    assert np.array_equal(G, G.T)
    jit = JITTER_START * np.mean(np.diag(G))
    assert np.linalg.eigvalsh(G + jit * np.eye(n)).min() >= -1e-12 * np.trace(G)


# -- transforms ----------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 1e3))
def test_softplus_round_trip(v):
    assert softplus(inv_softplus(v)) == pytest.approx(v, rel=1e-9)


def test_pack_unpack_round_trip():
    p = GpHyperparams(KernelParams(1.3, [0.2, 4.0]), mean_constant=-0.7, noise_variance=0.05)
    q = unpack(pack(p))
    assert q.kernel.signal_variance == pytest.approx(1.3)
    np.testing.assert_allclose(q.kernel.lengthscales, [0.2, 4.0])
    assert q.mean_constant == -0.7
    assert q.noise_variance == pytest.approx(0.05)


# -- jitter --------------------------------------------------------------------------


def test_jitter_escalates_on_indefinite_matrix():
    K = np.ones((3, 3))  # rank one, fails at the smallest jitter or two
    L, jitter = jittered_cholesky(K)
    np.testing.assert_allclose(L @ L.T, K + jitter * np.eye(3), atol=1e-12)
    assert jitter >= JITTER_START


def test_jitter_gives_up():
    K = np.array([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(SingularKernelError):
        jittered_cholesky(K)


# -- likelihood and posteriors -------------------------------------------------------


def test_lml_univariate_examples():
    kp = KernelParams(1.0, [1.0])
    data = GpData([[0.0]], [0.0])
    # jitter of 1e-8 moves the value by ~5e-9
    assert log_marginal_likelihood(data, GpHyperparams(kp, 0.0, 0.0)) == pytest.approx(-0.918939, abs=1e-6)
    c = 2.5
    value = log_marginal_likelihood(GpData([[0.3]], [c]), GpHyperparams(KernelParams(0.6, [1.0]), c, 0.4))
    assert value == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-6)


def test_lml_empty_data_is_zero():
    p = GpHyperparams(KernelParams(1.0, [1.0]), 0.0, 0.1)
    assert log_marginal_likelihood(GpData(np.empty((0, 1)), []), p) == 0.0


def test_lml_matches_scipy_density(rng):
    data, params = random_instance(rng, n=5, d=2)
    K = dense_kyy(data, params)
    ref = multivariate_normal(np.full(5, params.mean_constant), K).logpdf(data.outputs)
    assert log_marginal_likelihood(data, params) == pytest.approx(ref, abs=1e-8)


def test_lml_is_output_density_with_empty_conditioning(rng):
    data, params = random_instance(rng, n=6, d=2)
    prior = posterior_output(GpData(np.empty((0, 2)), []), params, data.inputs)
    K = prior.covariance + JITTER_START * np.mean(np.diag(prior.covariance)) * np.eye(6)
    ref = multivariate_normal(prior.mean, K).logpdf(data.outputs)
    assert log_marginal_likelihood(data, params) == pytest.approx(ref, abs=1e-8)


def test_lml_duplicate_point_changes_value(rng):
    data, params = random_instance(rng, n=4, d=1)
    dup = GpData(np.vstack([data.inputs, data.inputs[:1]]), np.append(data.outputs, data.outputs[0]))
    a = log_marginal_likelihood(dup, params)
    assert a == log_marginal_likelihood(dup, params)
    assert a != log_marginal_likelihood(data, params)


def test_posterior_prior_recovery(rng):
    params = GpHyperparams(KernelParams(1.4, [0.7]), 0.3, 0.2)
    Xs = rng.uniform(size=(3, 1))
    empty = GpData(np.empty((0, 1)), [])
    lat = posterior_latent(empty, params, Xs)
    np.testing.assert_allclose(lat.mean, 0.3)
    np.testing.assert_allclose(lat.covariance, gram(Xs, Xs, params.kernel))
    out = posterior_output(empty, params, Xs)
    np.testing.assert_allclose(out.covariance, lat.covariance + 0.2 * np.eye(3))


def test_posterior_noise_free_interpolation(rng):
    X = rng.uniform(size=(5, 1))
    y = np.sin(6 * X[:, 0])
    params = GpHyperparams(KernelParams(1.0, [0.3]), 0.0, 0.0)
    post = posterior_latent(GpData(X, y), params, X)
    np.testing.assert_allclose(post.mean, y, atol=1e-6)
    assert np.all(post.marginal_variance <= 1e-6)


def test_posterior_output_adds_noise(rng):
    data, params = random_instance(rng, n=4, d=2)
    Xs = rng.normal(size=(3, 2))
    lat = posterior_latent(data, params, Xs)
    out = posterior_output(data, params, Xs)
    np.testing.assert_array_equal(out.mean, lat.mean)
    np.testing.assert_array_equal(out.covariance, lat.covariance + params.noise_variance * np.eye(3))
    zero = GpHyperparams(params.kernel, params.mean_constant, 0.0)
    np.testing.assert_array_equal(
        posterior_output(data, zero, Xs).covariance, posterior_latent(data, zero, Xs).covariance
    )


def test_posterior_matches_joint_conditioning(rng):
    data, params = random_instance(rng, n=4, d=2)
    Xs = rng.normal(size=(2, 2))
    post = posterior_latent(data, params, Xs)
    mean, cov = joint_conditioning(data, params, Xs)
    np.testing.assert_allclose(post.mean, mean, atol=1e-8)
    np.testing.assert_allclose(post.covariance, cov, atol=1e-8)
    assert np.array_equal(post.covariance, post.covariance.T)


# -- gradients -----------------------------------------------------------------------


def central_difference(f, theta, h=1e-5):
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def test_nlml_gradient_matches_finite_differences(rng):
    data, _ = random_instance(rng, n=6, d=2)
    theta = rng.normal(scale=0.5, size=5)
    value, grad = nlml_and_gradient(data, theta)
    fd = central_difference(lambda t: nlml_and_gradient(data, t)[0], theta)
    assert value == pytest.approx(-log_marginal_likelihood(data, unpack(theta)))
    assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) < 1e-4


def test_nlml_gradient_vanishes_at_optimum(rng):
    from scipy.optimize import minimize

    X = rng.uniform(size=(12, 1))
    data = GpData(X, np.sin(5 * X[:, 0]) + 0.1 * rng.normal(size=12))
    res = minimize(lambda t: nlml_and_gradient(data, t), np.zeros(4), jac=True, method="L-BFGS-B",
                   options={"gtol": 1e-9, "ftol": 1e-15})
    assert np.linalg.norm(nlml_and_gradient(data, res.x)[1]) < 1e-3
