"""Latent embeddings of general (non-numeric) inputs.

Every general feature gets its own block of ``d_z`` latent coordinates.
A token's latent has a unit Gaussian prior and a mean-field Gaussian
posterior; tokens never seen in training keep the prior.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PRIOR_VARIANCE = 1.0


@dataclass(frozen=True)
class TaskTable:
    features: tuple[str, ...]
    tokens: tuple[tuple[str, ...], ...]
    latent_dims: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.features) == len(self.tokens) == len(self.latent_dims)):
            raise ValueError("features, tokens and latent_dims must align")
        for toks in self.tokens:
            if len(set(toks)) != len(toks):
                raise ValueError("duplicate token within a feature")
        if any(d < 0 for d in self.latent_dims):
            raise ValueError("latent dimension must be non-negative")

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def total_latent_dim(self) -> int:
        return int(sum(self.latent_dims))

    def index(self, feature: int, token: str) -> int:
        """Row of ``token`` in the feature's block, or -1 if unseen."""
        try:
            return self.tokens[feature].index(token)
        except ValueError:
            return -1

    def encode(self, rows) -> np.ndarray:
        """Map token tuples to an ``n x n_features`` index array (-1 = unseen)."""
        rows = [normalize_token(r, self.n_features) for r in rows]
        lookup = [{t: i for i, t in enumerate(toks)} for toks in self.tokens]
        out = np.empty((len(rows), self.n_features), dtype=np.int64)
        for i, row in enumerate(rows):
            for f, tok in enumerate(row):
                out[i, f] = lookup[f].get(tok, -1)
        return out

    def extended(self, rows) -> "TaskTable":
        """A table with any new tokens from ``rows`` appended."""
        tokens = [list(t) for t in self.tokens]
        for row in rows:
            for f, tok in enumerate(normalize_token(row, self.n_features)):
                _check_token(tok)
                if tok not in tokens[f]:
                    tokens[f].append(tok)
        return TaskTable(self.features, tuple(map(tuple, tokens)), self.latent_dims)


def normalize_token(token, n_features=None) -> tuple[str, ...]:
    if isinstance(token, str):
        token = (token,)
    token = tuple(token)
    if n_features is not None and len(token) != n_features:
        raise ValueError(f"expected {n_features} general features, got {len(token)}")
    return token


def _check_token(tok):
    if not isinstance(tok, str) or tok == "":
        raise ValueError(f"invalid task token {tok!r}")


def register_tasks(
    tokens: Sequence, latent_dim: int = 2, features: Sequence[str] | None = None
) -> TaskTable:
    """Build a table with one index per distinct token, in first-seen order."""
    if len(tokens) == 0:
        raise ValueError("cannot register an empty token list")
    rows = [normalize_token(t) for t in tokens]
    n_features = len(rows[0])
    if features is None:
        features = ("task",) if n_features == 1 else tuple(
            f"task{i + 1}" for i in range(n_features)
        )
    table = TaskTable(
        tuple(features), tuple(() for _ in range(n_features)), (latent_dim,) * n_features
    )
    return table.extended(rows)


@dataclass
class LatentPosterior:
    """Per-feature variational means ``M`` and variances ``S``."""

    means: list[np.ndarray]
    variances: list[np.ndarray]

    def __post_init__(self):
        self.means = [np.asarray(m, dtype=np.float64) for m in self.means]
        self.variances = [np.asarray(s, dtype=np.float64) for s in self.variances]
        for m, s in zip(self.means, self.variances):
            if m.shape != s.shape:
                raise ValueError("means and variances must share a shape")
            if np.any(s <= 0):
                raise ValueError("latent variances must be strictly positive")

    @classmethod
    def initial(cls, table: TaskTable, rng=None, scale=0.1, variance=PRIOR_VARIANCE):
        means, variances = [], []
        for toks, d in zip(table.tokens, table.latent_dims):
            shape = (len(toks), d)
            means.append(
                np.zeros(shape) if rng is None else scale * rng.standard_normal(shape)
            )
            variances.append(np.full(shape, variance))
        return cls(means, variances)

    def extended(self, table: TaskTable, rng=None, scale=0.1, variance=PRIOR_VARIANCE):
        """Grow to match a table that gained tokens; new rows get the initial values."""
        fresh = LatentPosterior.initial(table, rng, scale, variance)
        for f, (m, s) in enumerate(zip(self.means, self.variances)):
            fresh.means[f][: m.shape[0]] = m
            fresh.variances[f][: s.shape[0]] = s
        return fresh

    def copy(self):
        return LatentPosterior([m.copy() for m in self.means], [s.copy() for s in self.variances])


def lookup_or_prior(table: TaskTable, posterior: LatentPosterior, token):
    """Concatenated ``(mean, variance)`` for a token across features."""
    token = normalize_token(token, table.n_features)
    means, variances = [], []
    for f, tok in enumerate(token):
        i = table.index(f, tok)
        d = table.latent_dims[f]
        if i < 0:
            means.append(np.zeros(d))
            variances.append(np.full(d, PRIOR_VARIANCE))
        else:
            means.append(posterior.means[f][i].copy())
            variances.append(posterior.variances[f][i].copy())
    return np.concatenate(means), np.concatenate(variances)


def sample_latents(means, variances, noise) -> np.ndarray:
    """Reparameterized draw ``m + sqrt(s) * eps``."""
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if np.any(variances < 0):
        raise ValueError("negative latent variance")
    # leading sample axes on the noise are allowed
    if noise.ndim < means.ndim or noise.shape[noise.ndim - means.ndim :] != means.shape:
        raise ValueError(f"noise shape {noise.shape} does not match {means.shape}")
    return means + np.sqrt(variances) * noise


def kl_to_prior(posterior: LatentPosterior) -> float:
    total = 0.0
    for m, s in zip(posterior.means, posterior.variances):
        if np.any(s <= 0):
            raise ValueError("latent variances must be strictly positive")
        total += 0.5 * np.sum(s + m**2 - np.log(s) - 1.0)
    return float(total)


def kl_gradient(posterior: LatentPosterior):
    """Gradients of the KL w.r.t. each block's means and log-variances."""
    d_means = [m.copy() for m in posterior.means]
    d_log_vars = [0.5 * (s - 1.0) for s in posterior.variances]
    return d_means, d_log_vars


def posterior_mode(posterior: LatentPosterior) -> list[np.ndarray]:
    return [m.copy() for m in posterior.means]
