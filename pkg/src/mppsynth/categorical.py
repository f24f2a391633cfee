"""Conjugate multinomial-Dirichlet model for the categorical mark combinations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .state import register


@register
@dataclass(frozen=True)
class CategoricalPosterior:
    """Dirichlet posterior ``Dir(alpha_prior + counts)`` for the K-vector theta."""

    alpha_prior: np.ndarray
    alpha_post: np.ndarray

    def __post_init__(self):
        a0 = np.asarray(self.alpha_prior, dtype=float)
        a1 = np.asarray(self.alpha_post, dtype=float)
        if a0.shape != a1.shape or a0.ndim != 1:
            raise ValueError("alpha vectors must be 1-D and of equal length")
        if np.any(a0 <= 0) or np.any(a1 <= 0):
            raise ValueError("Dirichlet parameters must be positive")
        object.__setattr__(self, "alpha_prior", a0)
        object.__setattr__(self, "alpha_post", a1)

    @property
    def K(self) -> int:
        return len(self.alpha_post)

    @property
    def counts(self) -> np.ndarray:
        return self.alpha_post - self.alpha_prior

    def mean(self) -> np.ndarray:
        return self.alpha_post / self.alpha_post.sum()

    def var(self) -> np.ndarray:
        a0 = self.alpha_post.sum()
        m = self.mean()
        return m * (1 - m) / (a0 + 1)

    def to_state(self) -> dict:
        return {"alpha_prior": self.alpha_prior, "alpha_post": self.alpha_post}

    @classmethod
    def from_state(cls, d: dict) -> "CategoricalPosterior":
        return cls(d["alpha_prior"], d["alpha_post"])

    def __eq__(self, other):
        if not isinstance(other, CategoricalPosterior):
            return NotImplemented
        return np.array_equal(self.alpha_prior, other.alpha_prior) and np.array_equal(
            self.alpha_post, other.alpha_post
        )


def default_alpha(K: int) -> np.ndarray:
    return np.full(K, 1.0 / K)


def fit_categorical(counts, alpha_prior=None) -> CategoricalPosterior:
    """Conjugate update ``alpha + n``.

    ``counts`` may be a count vector or a :class:`~mppsynth.data.Dataset`.
    The prior defaults to ``alpha_k = 1/K``.
    """
    if hasattr(counts, "counts"):
        counts = counts.counts
    n = np.asarray(counts, dtype=float)
    if n.ndim != 1 or len(n) == 0:
        raise ValueError("counts must be a non-empty vector")
    if np.any(n < 0):
        raise ValueError("counts must be nonnegative")
    alpha = default_alpha(len(n)) if alpha_prior is None else np.asarray(alpha_prior, dtype=float)
    if alpha.shape != n.shape:
        raise ValueError("prior length does not match K")
    if np.any(alpha <= 0):
        raise ValueError("Dirichlet prior weights must be positive")
    return CategoricalPosterior(alpha, alpha + n)


def draw_theta(posterior: CategoricalPosterior, rng, size=None) -> np.ndarray:
    """Posterior draw(s) of theta; rows lie on the simplex."""
    if posterior.K == 1:
        shape = (1,) if size is None else (size, 1)
        return np.ones(shape)
    theta = rng.dirichlet(posterior.alpha_post, size=size)
    # renormalize so the simplex constraint holds to rounding
    return theta / theta.sum(axis=-1, keepdims=True)


def draw_counts(theta, N: int, rng) -> np.ndarray:
    """Multinomial ``Mult(N, theta)`` draw."""
    theta = np.asarray(theta, dtype=float)
    if N < 0:
        raise ValueError("N must be nonnegative")
    if np.any(theta < 0) or abs(theta.sum() - 1.0) > 1e-9:
        raise ValueError("theta must lie on the simplex")
    if N == 0:
        return np.zeros(len(theta), dtype=np.int64)
    return rng.multinomial(int(N), theta / theta.sum()).astype(np.int64)
