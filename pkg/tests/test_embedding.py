import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from begp.embedding import (
    LatentPosterior,
    TaskTable,
    kl_gradient,
    kl_to_prior,
    lookup_or_prior,
    posterior_mode,
    register_tasks,
    sample_latents,
)


def test_register_single_feature():
    t = register_tasks(["A", "B", "A"])
    assert t.tokens == (("A", "B"),)
    assert t.index(0, "A") == 0 and t.index(0, "B") == 1
    assert t.index(0, "C") == -1


def test_register_two_features():
    t = register_tasks([("A", "x"), ("A", "y")])
    assert t.tokens == (("A",), ("x", "y"))
    assert t.total_latent_dim == 4


def test_register_idempotent():
    rows = ["b", "a", "b", "c"]
    assert register_tasks(rows) == register_tasks(rows)
    t = register_tasks(rows)
    assert t.extended(rows) == t


def test_register_rejects_empty():
    with pytest.raises(ValueError):
        register_tasks([])
    with pytest.raises(ValueError):
        register_tasks(["a", ""])


def test_table_rejects_duplicates():
    with pytest.raises(ValueError):
        TaskTable(("task",), (("a", "a"),), (2,))


def test_encode_marks_unseen():
    t = register_tasks(["a", "b"])
    np.testing.assert_array_equal(t.encode(["b", "zz", "a"])[:, 0], [1, -1, 0])


def test_lookup_registered_and_unseen():
    t = register_tasks(["a", "b"], latent_dim=2)
    post = LatentPosterior([np.array([[0.0, 0.0], [0.3, -0.2]])], [np.array([[1.0, 1.0], [0.5, 0.1]])])
    m, s = lookup_or_prior(t, post, "b")
    np.testing.assert_array_equal(m, [0.3, -0.2])
    np.testing.assert_array_equal(s, [0.5, 0.1])
    m, s = lookup_or_prior(t, post, "never-seen")
    np.testing.assert_array_equal(m, [0.0, 0.0])
    np.testing.assert_array_equal(s, [1.0, 1.0])


def test_lookup_does_not_mutate():
    t = register_tasks(["a"], latent_dim=2)
    post = LatentPosterior.initial(t, np.random.default_rng(0))
    before = post.copy()
    m, _ = lookup_or_prior(t, post, "a")
    m[:] = 99.0
    np.testing.assert_array_equal(post.means[0], before.means[0])


def test_sample_latents_examples():
    m = np.array([[0.2, -1.0]])
    np.testing.assert_array_equal(sample_latents(m, np.ones_like(m), np.zeros_like(m)), m)
    assert sample_latents([0.0], [1.0], [1.5])[0] == 1.5
    with pytest.raises(ValueError):
        sample_latents([0.0], [-1.0], [0.0])
    with pytest.raises(ValueError):
        sample_latents(np.zeros((2, 2)), np.ones((2, 2)), np.zeros(3))


def test_sample_latents_moments():
    eps = np.random.default_rng(3).standard_normal(10**5)
    z = sample_latents(np.ones(10**5), np.full(10**5, 0.25), eps)
    assert abs(z.mean() - 1.0) < 0.01
    assert abs(z.var() - 0.25) < 0.01


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(1e-4, 10), st.floats(-3, 3), st.floats(1e-6, 1e-2))
def test_sample_latents_shift_is_exact(m, s, e, delta):
    # a perturbation of the mean moves the sample by the same amount
    a = sample_latents([m], [s], [e])[0]
    b = sample_latents([m + delta], [s], [e])[0]
    assert b - a == pytest.approx(delta, rel=1e-6, abs=1e-12)


def test_kl_examples():
    t = register_tasks(["a", "b"], latent_dim=3)
    prior = LatentPosterior.initial(t)
    assert kl_to_prior(prior) == 0.0
    assert kl_to_prior(LatentPosterior([np.array([[1.0]])], [np.array([[1.0]])])) == pytest.approx(0.5)


def test_kl_matches_monte_carlo():
    r = np.random.default_rng(7)
    M = r.normal(size=(3, 2))
    S = r.uniform(0.2, 2.0, size=(3, 2))
    eps = r.standard_normal((10**6, 3, 2))
    z = M + np.sqrt(S) * eps
    log_q = -0.5 * (np.log(2 * np.pi * S) + (z - M) ** 2 / S)
    log_p = -0.5 * (np.log(2 * np.pi) + z**2)
    terms = (log_q - log_p).sum(axis=(1, 2))
    se = terms.std() / np.sqrt(terms.size)
    assert abs(kl_to_prior(LatentPosterior([M], [S])) - terms.mean()) < 3 * se


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=1, max_size=6),
    st.lists(st.floats(0.05, 5), min_size=6, max_size=6),
)
def test_kl_non_negative(means, variances):
    m = np.array(means).reshape(-1, 1)
    s = np.array(variances[: m.shape[0]]).reshape(-1, 1)
    assert kl_to_prior(LatentPosterior([m], [s])) >= 0.0


def test_kl_gradient_finite_differences():
    r = np.random.default_rng(1)
    M = r.normal(size=(2, 2))
    logS = r.normal(scale=0.5, size=(2, 2))
    d_m, d_ls = kl_gradient(LatentPosterior([M], [np.exp(logS)]))
    h = 1e-6
    for i in np.ndindex(M.shape):
        e = np.zeros_like(M)
        e[i] = h
        fd_m = (kl_to_prior(LatentPosterior([M + e], [np.exp(logS)]))
                - kl_to_prior(LatentPosterior([M - e], [np.exp(logS)]))) / (2 * h)
        fd_s = (kl_to_prior(LatentPosterior([M], [np.exp(logS + e)]))
                - kl_to_prior(LatentPosterior([M], [np.exp(logS - e)]))) / (2 * h)
        assert d_m[0][i] == pytest.approx(fd_m, rel=1e-6)
        assert d_ls[0][i] == pytest.approx(fd_s, rel=1e-6, abs=1e-9)


def test_posterior_rejects_non_positive_variance():
    with pytest.raises(ValueError):
        LatentPosterior([np.zeros((1, 1))], [np.zeros((1, 1))])


def test_posterior_mode():
    t = register_tasks(["a", "b"], latent_dim=2)
    np.testing.assert_array_equal(posterior_mode(LatentPosterior.initial(t))[0], 0.0)
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    a = posterior_mode(LatentPosterior([M], [np.ones((2, 2))]))
    b = posterior_mode(LatentPosterior([M], [np.full((2, 2), 0.01)]))
    np.testing.assert_array_equal(a[0], M)
    np.testing.assert_array_equal(a[0], b[0])


def test_initial_is_seeded():
    t = register_tasks(["a", "b", "c"], latent_dim=2)
    a = LatentPosterior.initial(t, np.random.default_rng(5))
    b = LatentPosterior.initial(t, np.random.default_rng(5))
    np.testing.assert_array_equal(a.means[0], b.means[0])
    assert np.all(a.variances[0] == 1.0)
    assert 0 < np.abs(a.means[0]).max() < 1.0
