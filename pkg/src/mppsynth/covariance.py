"""Correlation kernels, knot matrices and the predictive-process projector.

The cross-surface covariance ``Psi`` (K x K) enters every knot-effect prior
through the separable form ``Cov(vec W) = Psi kron C*``, where column k of the
``n* x K`` matrix ``W`` holds the knot effects of combination k.  Nothing here
ever forms the Kronecker product; conditionals are obtained from the
precision ``Q = Psi^{-1}`` instead.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg, optimize, stats

FAMILIES = ("exponential", "matern-3/2")
DEFAULT_JITTER = 1e-8


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky factorization failed even after jitter."""


@dataclass(frozen=True)
class Kernel:
    """Isotropic correlation function with decay ``phi`` (inverse distance units)."""

    family: str = "exponential"
    decay: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; choose from {FAMILIES}")
        if not (self.decay > 0 and np.isfinite(self.decay)):
            raise ValueError("kernel decay must be positive and finite")
        object.__setattr__(self, "decay", float(self.decay))

    def __call__(self, d):
        return corr(self, d)

    @classmethod
    def for_effective_range(cls, family: str, eff_range: float, level: float = 0.05) -> "Kernel":
        return cls(family, decay_for_effective_range(family, eff_range, level))


def corr(kernel: Kernel, d):
    """Correlation at distance(s) ``d``; scalar in, scalar out."""
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < 0):
        raise ValueError("distance must be nonnegative")
    t = kernel.decay * d_arr
    if kernel.family == "exponential":
        out = np.exp(-t)
    else:
        out = (1.0 + t) * np.exp(-t)
    return float(out) if out.ndim == 0 else out


def decay_for_effective_range(family: str, eff_range: float, level: float = 0.05) -> float:
    """Decay at which the correlation falls to ``level`` at distance ``eff_range``."""
    if eff_range <= 0:
        raise ValueError("effective range must be positive")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if family == "exponential":
        t = -np.log(level)
    elif family == "matern-3/2":
        t = optimize.brentq(lambda u: (1 + u) * np.exp(-u) - level, 1e-9, 100.0, xtol=1e-14)
    else:
        raise ValueError(f"unknown kernel family {family!r}")
    return float(t / eff_range)


def distances(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    dx = a[:, 0][:, None] - b[None, :, 0]
    dy = a[:, 1][:, None] - b[None, :, 1]
    return np.sqrt(dx * dx + dy * dy)


def cross_corr(kernel: Kernel, s, knots) -> np.ndarray:
    """Correlations between location(s) ``s`` and every knot.

    A single location gives an ``(n*,)`` vector; an ``(m, 2)`` array gives
    an ``(m, n*)`` matrix.
    """
    knots = np.asarray(knots, dtype=float).reshape(-1, 2)
    if len(knots) == 0:
        raise ValueError("knot set is empty")
    s_arr = np.asarray(s, dtype=float)
    out = corr(kernel, distances(s_arr, knots))
    return out[0] if s_arr.ndim == 1 else out


class KnotMatrix:
    """Knot correlation matrix ``C*`` with a cached Cholesky factor."""

    def __init__(self, knots, kernel: Kernel, jitter: float = DEFAULT_JITTER):
        self.knots = np.array(knots, dtype=float).reshape(-1, 2)
        if len(self.knots) == 0:
            raise ValueError("knot set is empty")
        self.knots.setflags(write=False)
        self.kernel = kernel
        self.jitter = float(jitter)
        self.corr = corr(kernel, distances(self.knots, self.knots))
        self.corr.setflags(write=False)
        try:
            self.chol = np.linalg.cholesky(self.corr + self.jitter * np.eye(self.size))
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(f"knot correlation matrix not positive definite: {exc}") from None
        self.chol.setflags(write=False)

    @property
    def size(self) -> int:
        return len(self.knots)

    def solve(self, b) -> np.ndarray:
        return linalg.cho_solve((self.chol, True), b)

    @cached_property
    def inverse(self) -> np.ndarray:
        inv = self.solve(np.eye(self.size))
        return 0.5 * (inv + inv.T)

    def quad(self, w) -> float:
        """``w' C*^{-1} w``."""
        z = linalg.solve_triangular(self.chol, w, lower=True)
        return float(z @ z)


def pp_project(c, knotmatrix: KnotMatrix, w_star):
    """Predictive-process value ``c' C*^{-1} w*`` (rows of ``c`` if 2-D)."""
    c = np.asarray(c, dtype=float)
    w_star = np.asarray(w_star, dtype=float)
    if c.shape[-1] != knotmatrix.size or w_star.shape[0] != knotmatrix.size:
        raise ValueError("dimension mismatch between cross-correlations, knots and effects")
    c2 = np.atleast_2d(c)
    out = c2 @ knotmatrix.solve(w_star)
    # rows sitting exactly on a knot reproduce its effect (jitter would blur it)
    rows, cols = _on_knot(c2)
    out[rows] = w_star[cols]
    return float(out[0]) if c.ndim == 1 else out


def _on_knot(c2):
    hit = c2 == 1.0
    rows = np.flatnonzero(hit.any(axis=1))
    return rows, hit[rows].argmax(axis=1)


def pp_residual_var(c, knotmatrix: KnotMatrix, kernel: Kernel | None = None, floor: float = 0.0):
    """Bias-correction variance ``C(s,s) - c' C*^{-1} c``, clamped at ``floor``."""
    c = np.asarray(c, dtype=float)
    if c.shape[-1] != knotmatrix.size:
        raise ValueError("dimension mismatch between cross-correlations and knots")
    c0 = 1.0 if kernel is None else corr(kernel, 0.0)
    z = linalg.solve_triangular(knotmatrix.chol, np.atleast_2d(c).T, lower=True)
    out = np.maximum(c0 - np.sum(z * z, axis=0), floor)
    out[_on_knot(np.atleast_2d(c))[0]] = max(0.0, floor)
    return float(out[0]) if c.ndim == 1 else out


class Projector:
    """Precomputed predictive-process maps for a fixed set of locations.

    ``A`` is the ``(m, n*)`` matrix with rows ``C(s)' C*^{-1}`` and
    ``resid`` the bias-correction variances at the same locations.
    """

    def __init__(self, locations, knotmatrix: KnotMatrix):
        self.locations = np.asarray(locations, dtype=float).reshape(-1, 2)
        c = cross_corr(knotmatrix.kernel, self.locations, knotmatrix.knots)
        self.A = knotmatrix.solve(c.T).T
        self.resid = np.maximum(1.0 - np.sum(self.A * c, axis=1), 0.0)
        rows, cols = _on_knot(c)
        self.A[rows] = 0.0
        self.A[rows, cols] = 1.0
        self.resid[rows] = 0.0

    def __len__(self):
        return len(self.locations)


# --- cross-surface covariance -------------------------------------------------


@dataclass(frozen=True)
class InverseWishart:
    """Inverse-Wishart prior ``IW(scale, df)`` on the K x K matrix ``Psi``."""

    scale: np.ndarray
    df: float

    def __post_init__(self):
        scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
        if scale.shape[0] != scale.shape[1]:
            raise ValueError("inverse-Wishart scale must be square")
        if self.df <= scale.shape[0] - 1:
            raise ValueError("inverse-Wishart df must exceed K - 1")
        np.linalg.cholesky(scale)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "df", float(self.df))

    @property
    def dim(self) -> int:
        return self.scale.shape[0]

    def central(self) -> np.ndarray:
        """Prior mean when it exists, otherwise the mode."""
        K = self.dim
        if self.df > K + 1:
            return self.scale / (self.df - K - 1)
        return self.scale / (self.df + K + 1)

    def posterior(self, W, knotmatrix: KnotMatrix) -> "InverseWishart":
        """Conjugate update given knot effects ``W`` (n* x K) ~ MN(0, C*, Psi)."""
        W = np.asarray(W, dtype=float).reshape(knotmatrix.size, -1)
        S = W.T @ knotmatrix.solve(W)
        return InverseWishart(self.scale + 0.5 * (S + S.T), self.df + knotmatrix.size)

    def sample(self, rng) -> np.ndarray:
        if self.dim == 1:
            # IW_1(s, v) is inverse-gamma(v / 2, s / 2)
            g = rng.gamma(0.5 * self.df, 2.0 / self.scale[0, 0])
            return np.array([[1.0 / g]])
        draw = stats.invwishart.rvs(df=self.df, scale=self.scale, random_state=rng)
        draw = np.atleast_2d(draw)
        return 0.5 * (draw + draw.T)


def conditional_prior(W, Q, k: int):
    """Mean and variance multiplier of column k of W given the other columns.

    For ``vec W ~ N(0, Psi kron C*)`` with ``Q = Psi^{-1}``, column k given the
    rest is ``N(m_k, C* / Q_kk)`` with ``m_k = -W_{-k} Q_{-k,k} / Q_kk``.
    Returns ``(m_k, 1 / Q_kk)``.
    """
    qkk = Q[k, k]
    if W.shape[1] == 1:
        return np.zeros(W.shape[0]), 1.0 / qkk
    others = np.arange(W.shape[1]) != k
    mean = -(W[:, others] @ Q[others, k]) / qkk
    return mean, 1.0 / qkk
