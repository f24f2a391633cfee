"""Non-categorical mark regression with (modified) predictive-process effects.

Two families are supported:

``normal``
    ``Y = x'beta_k + w~_k(s) + eps``, ``eps ~ N(0, sigma2_k)``, with
    ``w~_k(s) ~ N(A(s) w*_k, psi_kk * r(s))`` (the modified predictive
    process; ``r(s)`` is the bias-correction variance).  Fitted by Gibbs
    sampling.
``truncated-poisson``
    ``Y ~ TrunPois(exp(x'beta_k + A(s) w*_k), [lo, hi])``, fitted by
    random-walk Metropolis on the beta and w* blocks.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import gammaln
from scipy.stats import poisson

from . import _kernels
from .covariance import (
    InverseWishart,
    Kernel,
    KnotMatrix,
    Projector,
    conditional_prior,
    cross_corr,
    pp_project,
    pp_residual_var,
)
from .data import SpatialDesign
from .lgcp import _knot_array, resolve_kernel
from .mcmc import ChainSettings, NumericalError, RandomWalkBlock, laplace_chol, newton_maximize
from .state import register

log = logging.getLogger(__name__)

FAMILIES = ("normal", "truncated-poisson")
ETA_CLIP = 50.0


@dataclass
class MarkConfig:
    family: str = "normal"
    trunc_bounds: tuple = (16, 98)
    design: SpatialDesign = field(default_factory=SpatialDesign)
    kernel_family: str = "exponential"
    phi: Optional[float] = None
    range_fraction: float = 0.5
    sigma_beta: Optional[float] = None
    iw_scale: float = 1.0
    iw_df: Optional[float] = None
    spatial: bool = True
    phi_bounds: tuple = (0.0, 0.0)
    chain: ChainSettings = field(default_factory=ChainSettings)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown mark family {self.family!r}; choose from {FAMILIES}")
        lo, hi = self.trunc_bounds
        if self.family == "truncated-poisson":
            if not (int(lo) == lo and lo >= 0 and hi > lo):
                raise ValueError("truncation bounds must satisfy 0 <= lo < hi")
            if np.isfinite(hi) and int(hi) != hi:
                raise ValueError("truncation bounds must be integers")
        self.trunc_bounds = (int(lo), hi if not np.isfinite(hi) else int(hi))

    def iw_prior(self, K: int) -> InverseWishart:
        df = self.iw_df if self.iw_df is not None else K + 2.0
        return InverseWishart(self.iw_scale * np.eye(K), df)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "trunc_bounds": list(self.trunc_bounds),
            "design": list(self.design.terms),
            "kernel_family": self.kernel_family,
            "phi": self.phi,
            "range_fraction": self.range_fraction,
            "sigma_beta": self.sigma_beta,
            "iw_scale": self.iw_scale,
            "iw_df": self.iw_df,
            "spatial": self.spatial,
            "phi_bounds": list(self.phi_bounds),
            "chain": self.chain.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarkConfig":
        d = dict(d)
        if "design" in d:
            d["design"] = SpatialDesign(tuple(d["design"]))
        if "chain" in d:
            d["chain"] = ChainSettings(**d["chain"])
        for key in ("trunc_bounds", "phi_bounds"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class MarkModel:
    """One posterior draw of the mark sub-model."""

    family: str
    beta: np.ndarray
    w_star: np.ndarray
    psi: np.ndarray
    kernel: Kernel
    knotmatrix: KnotMatrix
    sigma2: Optional[np.ndarray] = None
    w_tilde: Optional[np.ndarray] = None
    design: SpatialDesign = SpatialDesign()
    trunc_bounds: tuple = (16, 98)
    sigma_beta: Optional[float] = None
    iw: Optional[InverseWishart] = None
    phi_bounds: tuple = (0.0, 0.0)
    spatial: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown mark family {self.family!r}")
        if self.family == "normal" and (self.sigma2 is None or np.any(np.asarray(self.sigma2) < 0)):
            raise ValueError("normal family needs nonnegative sigma2")
        lo, hi = self.trunc_bounds
        if self.family == "truncated-poisson" and not lo < hi:
            raise ValueError("truncation bounds need lo < hi")

    @property
    def K(self) -> int:
        return self.beta.shape[0]


# --- elementary operations ----------------------------------------------------


def _projection(model: MarkModel, k: int, xy) -> tuple:
    c = cross_corr(model.kernel, xy, model.knotmatrix.knots)
    mean = pp_project(c, model.knotmatrix, model.w_star[k - 1])
    resid = pp_residual_var(c, model.knotmatrix)
    return np.atleast_1d(mean), np.atleast_1d(resid)


def draw_w_tilde(model: MarkModel, s, k: int, rng):
    """Modified predictive-process draw of ``w~_k(s)``."""
    xy = np.asarray(s, dtype=float).reshape(-1, 2)
    mean, resid = _projection(model, k, xy)
    sd = np.sqrt(model.psi[k - 1, k - 1] * resid)
    out = mean + sd * rng.standard_normal(len(xy))
    return float(out[0]) if np.ndim(s) == 1 else out


def mark_mean(model: MarkModel, k: int, s, w_tilde):
    """Linear predictor ``x_Y(s)' beta_k + w~``; the log-rate for truncated marks."""
    xy = np.asarray(s, dtype=float).reshape(-1, 2)
    out = model.design.matrix(xy) @ model.beta[k - 1] + np.asarray(w_tilde, dtype=float)
    return float(out[0]) if np.ndim(s) == 1 else out


def trunc_pois_logpmf(log_rate, y, bounds) -> np.ndarray:
    lo, hi = bounds
    log_rate = np.asarray(log_rate, dtype=float)
    y = np.asarray(y, dtype=float)
    if not np.isfinite(hi):
        if lo != 0:
            raise ValueError("only [0, inf) is supported for unbounded truncation")
        return poisson.logpmf(y, np.exp(log_rate))
    lognorm = _kernels.trunc_pois_lognorm(np.broadcast_to(log_rate, y.shape).ravel(), lo, hi)
    return (y * log_rate - gammaln(y + 1.0)).ravel() - lognorm


def trunc_pois_pmf(rate, y, bounds=(16, 98)):
    """Poisson(rate) probability of ``y`` renormalized over ``[lo, hi]``."""
    lo, hi = bounds
    rate_arr = np.asarray(rate, dtype=float)
    y_arr = np.asarray(y)
    if np.any(rate_arr <= 0):
        raise ValueError("rate must be positive")
    if np.any(y_arr < lo) or np.any(y_arr > hi):
        raise ValueError(f"y outside truncation bounds [{lo}, {hi}]")
    out = np.exp(trunc_pois_logpmf(np.log(rate_arr), y_arr, bounds)).reshape(np.broadcast(rate_arr, y_arr).shape)
    return float(out) if out.ndim == 0 else out


def draw_mark(model: MarkModel, k: int, s, rng, w_tilde=None):
    """Posterior-predictive mark at location(s) ``s`` for combination k.

    Normal marks redraw ``w~`` from the modified predictive process unless
    ``w_tilde`` is supplied; truncated-Poisson marks use the plain
    projection and inverse-CDF sampling over the integer support.
    """
    xy = np.asarray(s, dtype=float).reshape(-1, 2)
    if model.family == "normal":
        if w_tilde is None:
            w_tilde = draw_w_tilde(model, xy, k, rng)
        mu = np.atleast_1d(mark_mean(model, k, xy, w_tilde))
        sd = np.sqrt(model.sigma2[k - 1])
        out = mu + sd * rng.standard_normal(len(xy))
    else:
        if w_tilde is None:
            w_tilde, _ = _projection(model, k, xy)
        eta = np.clip(np.atleast_1d(mark_mean(model, k, xy, w_tilde)), -ETA_CLIP, ETA_CLIP)
        lo, hi = model.trunc_bounds
        out = sample_trunc_pois(eta, lo, hi, rng).astype(float)
    return float(out[0]) if np.ndim(s) == 1 else out


def sample_trunc_pois(eta, lo, hi, rng) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    u = rng.random(eta.shape)
    if not np.isfinite(hi):
        return poisson.ppf(u, np.exp(eta)).astype(np.int64)
    return _kernels.trunc_pois_sample(eta, u, lo, hi)


# --- chains -------------------------------------------------------------------


@register
class MarkChain:
    """Retained posterior draws of the mark sub-model."""

    def __init__(self, family, knots, kernel: Kernel, design: SpatialDesign, trunc_bounds,
                 beta, w_star, psi, sigma2, w_tilde, acceptance, trace, config: dict):
        self.family = family
        self.knots = np.asarray(knots, dtype=float).reshape(-1, 2)
        self.kernel = kernel
        self.design = design
        self.trunc_bounds = tuple(trunc_bounds)
        self.beta = np.asarray(beta, dtype=float)
        self.w_star = np.asarray(w_star, dtype=float)
        self.psi = np.asarray(psi, dtype=float)
        self.sigma2 = np.asarray(sigma2, dtype=float)
        self.w_tilde = np.asarray(w_tilde, dtype=float)
        self.acceptance = np.asarray(acceptance, dtype=float)
        self.trace = np.asarray(trace, dtype=float)
        self.config = dict(config)
        self.knotmatrix = KnotMatrix(self.knots, kernel)

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    @property
    def K(self) -> int:
        return self.beta.shape[1]

    def draw(self, ell: int) -> MarkModel:
        normal = self.family == "normal"
        return MarkModel(
            family=self.family, beta=self.beta[ell], w_star=self.w_star[ell], psi=self.psi[ell],
            kernel=self.kernel, knotmatrix=self.knotmatrix,
            sigma2=self.sigma2[ell] if normal else None,
            w_tilde=self.w_tilde[ell] if self.w_tilde.size else None,
            design=self.design, trunc_bounds=self.trunc_bounds,
            sigma_beta=self.config.get("sigma_beta"),
            phi_bounds=tuple(self.config.get("phi_bounds", (0.0, 0.0))),
            spatial=self.config.get("spatial", True),
        )

    def to_state(self) -> dict:
        return {
            "family": self.family, "knots": self.knots,
            "kernel_family": self.kernel.family, "kernel_decay": self.kernel.decay,
            "design": list(self.design.terms), "trunc_bounds": list(self.trunc_bounds),
            "beta": self.beta, "w_star": self.w_star, "psi": self.psi, "sigma2": self.sigma2,
            "w_tilde": self.w_tilde, "acceptance": self.acceptance, "trace": self.trace,
            "config": self.config,
        }

    @classmethod
    def from_state(cls, d: dict) -> "MarkChain":
        return cls(
            d["family"], d["knots"], Kernel(d["kernel_family"], d["kernel_decay"]),
            SpatialDesign(tuple(d["design"])), d["trunc_bounds"], d["beta"], d["w_star"],
            d["psi"], d["sigma2"], d["w_tilde"], d["acceptance"], d["trace"], d.get("config", {}),
        )

    def __eq__(self, other):
        if not isinstance(other, MarkChain):
            return NotImplemented
        a, b = self.to_state(), other.to_state()
        return all(
            np.array_equal(a[key], b[key], equal_nan=True) if isinstance(a[key], np.ndarray)
            else a[key] == b[key]
            for key in a
        )


def _mvn_from_precision(prec, rhs, rng):
    L = np.linalg.cholesky(prec)
    mean = linalg.cho_solve((L, True), rhs)
    z = rng.standard_normal(len(rhs))
    return mean + linalg.solve_triangular(L.T, z, lower=False)


class _Combo:
    def __init__(self, xy, y, design, km):
        self.n = len(y)
        self.y = np.asarray(y, dtype=float)
        self.X = design.matrix(xy)
        proj = Projector(xy, km)
        self.A = proj.A
        self.r = proj.resid


def _run_normal(combos, km, iw, p, sigma_beta, spatial, st: ChainSettings, rng):
    J, nk = len(combos), km.size
    P = np.zeros((p, p)) if sigma_beta is None else np.eye(p) / sigma_beta**2
    Cinv = km.inverse
    beta = np.zeros((J, p))
    for j, d in enumerate(combos):
        beta[j] = np.linalg.lstsq(d.X, d.y, rcond=None)[0]
    W = np.zeros((nk, J))
    sigma2 = np.array([max(np.var(d.y - d.X @ beta[j]), 1e-6) for j, d in enumerate(combos)])
    psi = iw.central() if spatial else np.zeros((J, J))
    w_tilde = [np.zeros(d.n) for d in combos]

    R = st.n_retained
    out = {
        "beta": np.empty((R, J, p)), "w": np.zeros((R, J, nk)), "psi": np.zeros((R, J, J)),
        "sigma2": np.empty((R, J)), "w_tilde": np.empty((R, sum(d.n for d in combos))),
    }
    trace = np.empty(st.n_iter)
    for it in range(st.n_iter):
        Q = np.linalg.inv(psi) if spatial else None
        total = 0.0
        for j, d in enumerate(combos):
            if spatial:
                v = sigma2[j] + psi[j, j] * d.r
                aw = d.A @ W[:, j]
                beta[j] = _mvn_from_precision(d.X.T @ (d.X / v[:, None]) + P,
                                              d.X.T @ ((d.y - aw) / v), rng)
                m, var_mult = conditional_prior(W, Q, j)
                qkk = 1.0 / var_mult
                xb = d.X @ beta[j]
                prec = d.A.T @ (d.A / v[:, None]) + qkk * Cinv
                W[:, j] = _mvn_from_precision(prec, d.A.T @ ((d.y - xb) / v) + qkk * (Cinv @ m), rng)
                aw = d.A @ W[:, j]
                pv = psi[j, j] * d.r
                wt = aw.copy()
                pos = pv > 0
                post_var = 1.0 / (1.0 / sigma2[j] + 1.0 / pv[pos])
                post_mean = post_var * ((d.y - xb)[pos] / sigma2[j] + aw[pos] / pv[pos])
                wt[pos] = post_mean + np.sqrt(post_var) * rng.standard_normal(pos.sum())
                w_tilde[j] = wt
            else:
                beta[j] = _mvn_from_precision(d.X.T @ d.X / sigma2[j] + P,
                                              d.X.T @ d.y / sigma2[j], rng)
                xb = d.X @ beta[j]
            resid = d.y - xb - w_tilde[j]
            sse = float(resid @ resid)
            # uniform prior on sigma_k  =>  sigma2 | rest ~ IG((n - 1) / 2, SSE / 2)
            g = rng.gamma(0.5 * (d.n - 1), 2.0 / sse) if sse > 0 else np.inf
            if not np.isfinite(g) or g <= 0:
                raise NumericalError(f"sigma2 update underflow in combination {j + 1}")
            sigma2[j] = 1.0 / g
            total += -0.5 * d.n * np.log(sigma2[j]) - 0.5 * sse / sigma2[j]
        if spatial:
            try:
                psi = iw.posterior(W, km).sample(rng)
                np.linalg.cholesky(psi)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"Psi_Y update failed: {exc}") from None
        if not np.isfinite(total):
            raise NumericalError("non-finite log-likelihood in mark model")
        trace[it] = total
        slot = st.retain(it)
        if slot is not None:
            out["beta"][slot] = beta
            out["w"][slot] = W.T
            out["psi"][slot] = psi
            out["sigma2"][slot] = sigma2
            out["w_tilde"][slot] = np.concatenate(w_tilde)
    acc = np.ones((J, 2))
    return out, trace, acc


def _run_trunc(combos, km, iw, p, sigma_beta, spatial, bounds, st: ChainSettings, rng):
    lo, hi = bounds
    J, nk = len(combos), km.size
    P = np.zeros((p, p)) if sigma_beta is None else np.eye(p) / sigma_beta**2
    Cinv = km.inverse
    psi = iw.central() if spatial else np.zeros((J, J))
    Q0 = np.linalg.inv(psi) if spatial else None

    def loglik(d, eta):
        eta = np.clip(eta, -ETA_CLIP, ETA_CLIP)
        return float(d.y @ eta - _kernels.trunc_pois_lognorm(eta, lo, hi).sum())

    beta = np.zeros((J, p))
    W = np.zeros((nk, J))
    bblocks, wblocks = [], []
    for j, d in enumerate(combos):
        nt = p + (nk if spatial else 0)
        X = np.hstack([d.X, d.A]) if spatial else d.X
        Pj = np.zeros((nt, nt))
        Pj[:p, :p] = P
        if spatial:
            Pj[p:, p:] = Q0[j, j] * Cinv

        def fgh(theta, X=X, Pj=Pj, d=d):
            eta = np.clip(X @ theta, -ETA_CLIP, ETA_CLIP)
            mean, var = _kernels.trunc_pois_moments(eta, lo, hi)
            f = float(d.y @ eta - _kernels.trunc_pois_lognorm(eta, lo, hi).sum()) - 0.5 * theta @ Pj @ theta
            g = X.T @ (d.y - mean) - Pj @ theta
            H = -(X.T * var) @ X - Pj
            return f, g, H

        theta0 = np.zeros(nt)
        theta0[0] = np.log(max(d.y.mean(), 1e-3))
        theta, _, H = newton_maximize(fgh, theta0)
        beta[j] = theta[:p]
        if spatial:
            W[:, j] = theta[p:]
        negH = -H
        bblocks.append(RandomWalkBlock(laplace_chol(negH[:p, :p]), target=st.target_accept))
        if spatial:
            wblocks.append(RandomWalkBlock(laplace_chol(negH[p:, p:]), target=st.target_accept))

    R = st.n_retained
    out = {
        "beta": np.empty((R, J, p)), "w": np.zeros((R, J, nk)), "psi": np.zeros((R, J, J)),
        "sigma2": np.full((R, J), np.nan), "w_tilde": np.empty((R, 0)),
    }
    trace = np.empty(st.n_iter)
    aw = [d.A @ W[:, j] for j, d in enumerate(combos)]
    for it in range(st.n_iter):
        if it == st.burn_in:
            for b in bblocks + wblocks:
                b.freeze()
        Q = np.linalg.inv(psi) if spatial else None
        total = 0.0
        for j, d in enumerate(combos):
            def logp_beta(b, d=d, j=j):
                return loglik(d, d.X @ b + aw[j]) - 0.5 * b @ P @ b

            lp = logp_beta(beta[j])
            beta[j], lp, _ = bblocks[j].step(beta[j], lp, logp_beta, rng)
            if spatial:
                xb = d.X @ beta[j]
                m, var_mult = conditional_prior(W, Q, j)
                qkk = 1.0 / var_mult

                def logp_w(w, d=d, xb=xb, m=m, qkk=qkk):
                    r = w - m
                    return loglik(d, xb + d.A @ w) - 0.5 * qkk * r @ Cinv @ r

                lp = logp_w(W[:, j])
                w_new, lp, acc = wblocks[j].step(W[:, j], lp, logp_w, rng)
                if acc:
                    W[:, j] = w_new
                    aw[j] = d.A @ w_new
            if not np.isfinite(lp):
                raise NumericalError(f"non-finite log-posterior in mark block {j + 1}")
            total += lp
        if spatial:
            try:
                psi = iw.posterior(W, km).sample(rng)
                np.linalg.cholesky(psi)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"Psi_Y update failed: {exc}") from None
        trace[it] = total
        slot = st.retain(it)
        if slot is not None:
            out["beta"][slot] = beta
            out["w"][slot] = W.T
            out["psi"][slot] = psi
    acc = np.array([
        [bblocks[j].acceptance, wblocks[j].acceptance if spatial else np.nan] for j in range(J)
    ])
    return out, trace, acc


def fit_marks(dataset, knots, config: Optional[MarkConfig] = None, rng=None,
              kernel: Optional[Kernel] = None) -> MarkChain:
    """Fit the mark sub-model for all K combinations jointly (shared Psi_Y)."""
    config = config or MarkConfig()
    rng = np.random.default_rng(rng)
    K = dataset.K
    counts = dataset.counts
    min_n = 2 if config.family == "normal" else 1
    if np.any(counts < min_n):
        bad = (np.flatnonzero(counts < min_n) + 1).tolist()
        raise ValueError(f"combination(s) {bad} have fewer than {min_n} records; cannot fit marks")
    if config.family == "truncated-poisson":
        lo, hi = config.trunc_bounds
        if np.any(dataset.mark < lo) or np.any(dataset.mark > hi) or np.any(dataset.mark != np.round(dataset.mark)):
            raise ValueError(f"marks must be integers in [{lo}, {hi}] for the truncated-Poisson family")
    kernel = kernel or resolve_kernel(config.kernel_family, config.phi, dataset.xy, config.range_fraction)
    kn = _knot_array(knots)
    km = KnotMatrix(kn, kernel)
    combos = [_Combo(dataset.xy[dataset.combo == k], dataset.mark[dataset.combo == k], config.design, km)
              for k in range(1, K + 1)]
    p = config.design.dim
    iw = config.iw_prior(K)
    st = config.chain
    if config.family == "normal":
        out, trace, acc = _run_normal(combos, km, iw, p, config.sigma_beta, config.spatial, st, rng)
        # w~ draws are stored in dataset record order
        order = np.concatenate([np.flatnonzero(dataset.combo == k) for k in range(1, K + 1)])
        wt = np.empty_like(out["w_tilde"])
        wt[:, order] = out["w_tilde"]
        out["w_tilde"] = wt
    else:
        out, trace, acc = _run_trunc(combos, km, iw, p, config.sigma_beta, config.spatial,
                                     config.trunc_bounds, st, rng)
    log.info("mark fit (%s): acceptance %s", config.family, np.round(acc, 2).tolist())
    return MarkChain(config.family, kn, kernel, config.design, config.trunc_bounds, out["beta"], out["w"],
                     out["psi"], out["sigma2"], out["w_tilde"], acc, trace, config.to_dict())
