"""Shared Metropolis-within-Gibbs machinery."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NumericalError(RuntimeError):
    """Non-finite log-posterior or a failed conjugate update."""


@dataclass
class ChainSettings:
    burn_in: int = 5000
    thin: int = 10
    n_retained: int = 100
    target_accept: float = 0.35

    def __post_init__(self):
        if self.burn_in < 0 or self.thin < 1 or self.n_retained < 1:
            raise ValueError("burn_in >= 0, thin >= 1 and n_retained >= 1 required")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")

    @property
    def n_iter(self) -> int:
        return self.burn_in + self.thin * self.n_retained

    def retain(self, it: int) -> int | None:
        """Retained-draw slot for iteration ``it`` (0-based), or None."""
        j = it - self.burn_in
        if j >= 0 and (j + 1) % self.thin == 0:
            return (j + 1) // self.thin - 1
        return None

    def to_dict(self) -> dict:
        return {
            "burn_in": self.burn_in,
            "thin": self.thin,
            "n_retained": self.n_retained,
            "target_accept": self.target_accept,
        }


@dataclass
class RandomWalkBlock:
    """Gaussian random-walk proposal with Robbins-Monro scale adaptation.

    The proposal covariance is ``exp(2 * log_scale) * L L'`` where ``L`` is a
    fixed shape factor (typically the Cholesky factor of a Laplace
    approximation).  Adaptation moves ``log_scale`` toward the target
    acceptance rate and stops when :meth:`freeze` is called.
    """

    chol: np.ndarray
    target: float = 0.35
    log_scale: float = 0.0
    frozen: bool = False
    n_prop: int = 0
    n_acc: int = 0
    _t: int = field(default=0, repr=False)

    def __post_init__(self):
        self.chol = np.atleast_2d(np.asarray(self.chol, dtype=float))
        if self.log_scale == 0.0:
            self.log_scale = float(np.log(2.38 / np.sqrt(self.chol.shape[0])))

    @property
    def dim(self) -> int:
        return self.chol.shape[0]

    def propose(self, x, rng) -> np.ndarray:
        z = rng.standard_normal(self.dim)
        return x + np.exp(self.log_scale) * (self.chol @ z)

    def step(self, x, logp_x, logp_fn, rng):
        """One Metropolis step; returns ``(x, logp_x, accepted)``."""
        y = self.propose(x, rng)
        logp_y = logp_fn(y)
        log_u = np.log(rng.random())
        accepted = bool(np.isfinite(logp_y) and log_u < logp_y - logp_x)
        self._record(accepted)
        if accepted:
            return y, logp_y, True
        return x, logp_x, False

    def _record(self, accepted: bool) -> None:
        if self.frozen:
            self.n_prop += 1
            self.n_acc += int(accepted)
            return
        self._t += 1
        gain = min(0.5, 10.0 / (self._t + 10.0) ** 0.6)
        self.log_scale += gain * (float(accepted) - self.target)

    def freeze(self) -> None:
        self.frozen = True

    @property
    def acceptance(self) -> float:
        return self.n_acc / self.n_prop if self.n_prop else float("nan")


def laplace_chol(neg_hessian, ridge: float = 1e-10) -> np.ndarray:
    """Cholesky factor of the inverse of a (regularized) negative Hessian."""
    H = 0.5 * (neg_hessian + neg_hessian.T)
    H = H + ridge * max(1.0, float(np.max(np.abs(np.diag(H))))) * np.eye(len(H))
    try:
        cov = np.linalg.inv(H)
        return np.linalg.cholesky(0.5 * (cov + cov.T))
    except np.linalg.LinAlgError:
        d = np.clip(np.diag(H), 1e-12, None)
        return np.diag(1.0 / np.sqrt(d))


def newton_maximize(fun_grad_hess, x0, max_iter: int = 50, tol: float = 1e-8):
    """Damped Newton ascent for a concave objective.

    ``fun_grad_hess(x)`` returns ``(f, g, H)`` with ``H`` the Hessian (negative
    definite).  Step halving guarantees monotone increase.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g, H = fun_grad_hess(x)
    for _ in range(max_iter):
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            step = g / max(1.0, float(np.max(np.abs(np.diag(H)))))
        t = 1.0
        improved = False
        for _ in range(40):
            x_new = x + t * step
            f_new, g_new, H_new = fun_grad_hess(x_new)
            if np.isfinite(f_new) and f_new >= f - 1e-12:
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        done = abs(f_new - f) < tol * (1.0 + abs(f))
        x, f, g, H = x_new, f_new, g_new, H_new
        if done:
            break
    return x, f, H


def spawn_generators(seed, n: int) -> list:
    """Independent generators derived from one seed (SeedSequence spawning)."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(n)]
