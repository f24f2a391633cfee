"""Log-Gaussian Cox process per mark combination with predictive-process effects.

For combination k the log-intensity is ``x(s)' beta_k + A(s) w*_k`` where
``A(s) = C(s)' C*^{-1}``; the likelihood replaces the intensity integral by a
Riemann sum over a regular integration grid with cell weight ``|D| / n_ni``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .covariance import (
    InverseWishart,
    Kernel,
    KnotMatrix,
    Projector,
    conditional_prior,
    cross_corr,
    pp_project,
)
from .data import UNIT_SQUARE, SpatialDesign, SpatialDomain, max_interpoint_distance
from .mcmc import ChainSettings, NumericalError, RandomWalkBlock, laplace_chol, newton_maximize
from .state import register

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IntegrationGrid:
    points: np.ndarray
    weight: float

    @classmethod
    def regular(cls, domain: SpatialDomain = UNIT_SQUARE, n_side: int = 50) -> "IntegrationGrid":
        pts = domain.grid(n_side)
        return cls(pts, domain.area / len(pts))

    @property
    def size(self) -> int:
        return len(self.points)


@dataclass
class IntensityConfig:
    design: SpatialDesign = field(default_factory=SpatialDesign)
    kernel_family: str = "exponential"
    phi: Optional[float] = None
    range_fraction: float = 0.5
    grid_side: int = 50
    sigma_beta: Optional[float] = 100.0
    iw_scale: float = 1.0
    iw_df: Optional[float] = None
    psi_structure: str = "full"
    log_cap: float = 30.0
    phi_bounds: tuple = (0.0, 0.0)
    chain: ChainSettings = field(default_factory=ChainSettings)
    workers: int = 1

    def __post_init__(self):
        if self.psi_structure not in ("full", "diagonal"):
            raise ValueError("psi_structure must be 'full' or 'diagonal'")
        if self.grid_side < 1:
            raise ValueError("grid_side must be positive")
        if self.phi is not None and self.phi <= 0:
            raise ValueError("phi must be positive")
        if not 0 < self.range_fraction:
            raise ValueError("range_fraction must be positive")

    def iw_prior(self, K: int) -> InverseWishart:
        df = self.iw_df if self.iw_df is not None else K + 2.0
        return InverseWishart(self.iw_scale * np.eye(K), df)

    def to_dict(self) -> dict:
        return {
            "design": list(self.design.terms),
            "kernel_family": self.kernel_family,
            "phi": self.phi,
            "range_fraction": self.range_fraction,
            "grid_side": self.grid_side,
            "sigma_beta": self.sigma_beta,
            "iw_scale": self.iw_scale,
            "iw_df": self.iw_df,
            "psi_structure": self.psi_structure,
            "log_cap": self.log_cap,
            "phi_bounds": list(self.phi_bounds),
            "chain": self.chain.to_dict(),
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IntensityConfig":
        d = dict(d)
        if "design" in d:
            d["design"] = SpatialDesign(tuple(d["design"]))
        if "chain" in d:
            d["chain"] = ChainSettings(**d["chain"])
        if "phi_bounds" in d:
            d["phi_bounds"] = tuple(d["phi_bounds"])
        return cls(**d)


def resolve_kernel(family: str, phi: Optional[float], xy, range_fraction: float = 0.5) -> Kernel:
    """Fixed decay, or the one whose effective range is a fraction of the data extent."""
    if phi is not None:
        return Kernel(family, phi)
    eff = range_fraction * max_interpoint_distance(xy)
    return Kernel.for_effective_range(family, eff)


@dataclass(frozen=True)
class IntensityModel:
    """One posterior draw of the intensity sub-model (all K combinations)."""

    beta: np.ndarray
    w_star: np.ndarray
    psi: np.ndarray
    kernel: Kernel
    knotmatrix: KnotMatrix
    grid: IntegrationGrid
    design: SpatialDesign = SpatialDesign()
    sigma_beta: Optional[float] = 100.0
    iw: Optional[InverseWishart] = None
    phi_bounds: tuple = (0.0, 0.0)
    log_cap: float = 30.0

    @property
    def K(self) -> int:
        return self.beta.shape[0]


def _log_lambda(model: IntensityModel, k: int, locations) -> np.ndarray:
    xy = np.asarray(locations, dtype=float).reshape(-1, 2)
    c = cross_corr(model.kernel, xy, model.knotmatrix.knots)
    eta = model.design.matrix(xy) @ model.beta[k - 1]
    eta = eta + pp_project(c, model.knotmatrix, model.w_star[k - 1])
    return np.minimum(eta, model.log_cap)


def log_intensity(model: IntensityModel, k: int, s):
    """``log lambda_k(s)`` for one location (scalar) or many (array)."""
    out = _log_lambda(model, k, s)
    return float(out[0]) if np.ndim(s) == 1 else out


def intensity_surface(model: IntensityModel, k: int, locations) -> np.ndarray:
    return np.exp(_log_lambda(model, k, locations))


def lgcp_loglik(model: IntensityModel, k: int, points) -> float:
    """Grid-approximated LGCP log-likelihood of the points of combination k."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("point set is empty")
    lam_grid = intensity_surface(model, k, model.grid.points)
    return float(-model.grid.weight * lam_grid.sum() + _log_lambda(model, k, pts).sum())


# --- sampler ------------------------------------------------------------------


class _ComboData:
    def __init__(self, xy, design, grid_X, grid_proj: Projector, km: KnotMatrix, weight):
        self.n = len(xy)
        self.Xd = design.matrix(xy)
        self.Ad = Projector(xy, km).A
        self.Xg = grid_X
        self.Ag = grid_proj.A
        self.weight = weight


class _LgcpSampler:
    """Metropolis-within-Gibbs over a subset of combinations sharing one Psi."""

    def __init__(self, combos: list, km: KnotMatrix, iw: InverseWishart, p: int,
                 sigma_beta, log_cap: float, settings: ChainSettings):
        self.combos = combos
        self.km = km
        self.iw = iw
        self.p = p
        self.J = len(combos)
        self.nk = km.size
        self.Cinv = km.inverse
        self.prec_beta = np.zeros((p, p)) if sigma_beta is None else np.eye(p) / sigma_beta**2
        self.cap = log_cap
        self.settings = settings

    def _loglik(self, d: _ComboData, eta_g, eta_d) -> float:
        eg = np.minimum(eta_g, self.cap)
        return float(-d.weight * np.exp(eg).sum() + np.minimum(eta_d, self.cap).sum())

    def _init(self, psi0):
        beta = np.zeros((self.J, self.p))
        W = np.zeros((self.nk, self.J))
        Q = np.linalg.inv(psi0)
        beta_chol, w_chol = [], []
        for j, d in enumerate(self.combos):
            qkk = Q[j, j]
            prec_w = qkk * self.Cinv
            X = np.hstack([d.Xg, d.Ag])
            sd = np.concatenate([d.Xd.sum(axis=0), d.Ad.sum(axis=0)])
            P = np.zeros((self.p + self.nk, self.p + self.nk))
            P[: self.p, : self.p] = self.prec_beta
            P[self.p:, self.p:] = prec_w

            def fgh(theta):
                eta = np.minimum(X @ theta, self.cap)
                lam = d.weight * np.exp(eta)
                f = -lam.sum() + sd @ theta - 0.5 * theta @ P @ theta
                g = sd - X.T @ lam - P @ theta
                H = -(X.T * lam) @ X - P
                return f, g, H

            theta0 = np.zeros(self.p + self.nk)
            theta0[0] = np.log(max(d.n, 0.5) / (d.weight * len(d.Xg)))
            theta, _, H = newton_maximize(fgh, theta0)
            beta[j] = theta[: self.p]
            W[:, j] = theta[self.p:]
            negH = -H
            beta_chol.append(laplace_chol(negH[: self.p, : self.p]))
            w_chol.append(laplace_chol(negH[self.p:, self.p:]))
        return beta, W, beta_chol, w_chol

    def run(self, rng, psi0=None):
        st = self.settings
        psi = self.iw.central() if psi0 is None else psi0
        beta, W, beta_chol, w_chol = self._init(psi)
        tgt = st.target_accept
        bblocks = [RandomWalkBlock(c, target=tgt) for c in beta_chol]
        wblocks = [RandomWalkBlock(c, target=tgt) for c in w_chol]

        off_g = [d.Ag @ W[:, j] for j, d in enumerate(self.combos)]
        off_d = [d.Ad @ W[:, j] for j, d in enumerate(self.combos)]
        lin_g = [d.Xg @ beta[j] for j, d in enumerate(self.combos)]
        lin_d = [d.Xd @ beta[j] for j, d in enumerate(self.combos)]

        R = st.n_retained
        out_beta = np.empty((R, self.J, self.p))
        out_w = np.empty((R, self.J, self.nk))
        out_psi = np.empty((R, self.J, self.J))
        trace = np.empty(st.n_iter)

        for it in range(st.n_iter):
            if it == st.burn_in:
                for b in bblocks + wblocks:
                    b.freeze()
            Q = np.linalg.inv(psi)
            total = 0.0
            for j, d in enumerate(self.combos):
                # beta_k | w*_k
                def logp_beta(b, d=d, j=j):
                    return self._loglik(d, d.Xg @ b + off_g[j], d.Xd @ b + off_d[j]) - 0.5 * b @ self.prec_beta @ b

                lp = logp_beta(beta[j])
                beta[j], lp, acc = bblocks[j].step(beta[j], lp, logp_beta, rng)
                if acc:
                    lin_g[j] = d.Xg @ beta[j]
                    lin_d[j] = d.Xd @ beta[j]

                # w*_k | beta_k, w*_{-k}, Psi
                m, v = conditional_prior(W, Q, j)
                qkk = 1.0 / v

                def logp_w(w, d=d, j=j, m=m, qkk=qkk):
                    r = w - m
                    return self._loglik(d, lin_g[j] + d.Ag @ w, lin_d[j] + d.Ad @ w) - 0.5 * qkk * r @ self.Cinv @ r

                lp = logp_w(W[:, j])
                w_new, lp, acc = wblocks[j].step(W[:, j], lp, logp_w, rng)
                if acc:
                    W[:, j] = w_new
                    off_g[j] = d.Ag @ w_new
                    off_d[j] = d.Ad @ w_new
                if not np.isfinite(lp):
                    raise NumericalError(f"non-finite log-posterior in intensity block {j}")
                total += lp
            try:
                psi = self.iw.posterior(W, self.km).sample(rng)
                np.linalg.cholesky(psi)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"Psi update failed: {exc}") from None
            trace[it] = total
            slot = st.retain(it)
            if slot is not None:
                out_beta[slot] = beta
                out_w[slot] = W.T
                out_psi[slot] = psi
        acc = np.array([[b.acceptance, w.acceptance] for b, w in zip(bblocks, wblocks)])
        return out_beta, out_w, out_psi, trace, acc


def _run_diagonal_combo(args):
    sampler, rng = args
    return sampler.run(rng)


@register
class IntensityChain:
    """Retained posterior draws of the intensity sub-model."""

    def __init__(self, knots, kernel: Kernel, grid_side: int, design: SpatialDesign,
                 beta, w_star, psi, acceptance, trace, config: dict, log_cap: float = 30.0):
        self.knots = np.asarray(knots, dtype=float).reshape(-1, 2)
        self.kernel = kernel
        self.grid_side = int(grid_side)
        self.design = design
        self.beta = np.asarray(beta, dtype=float)
        self.w_star = np.asarray(w_star, dtype=float)
        self.psi = np.asarray(psi, dtype=float)
        self.acceptance = np.asarray(acceptance, dtype=float)
        self.trace = np.asarray(trace, dtype=float)
        self.config = dict(config)
        self.log_cap = float(log_cap)
        self.knotmatrix = KnotMatrix(self.knots, kernel)
        self.grid = IntegrationGrid.regular(UNIT_SQUARE, self.grid_side)

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    @property
    def K(self) -> int:
        return self.beta.shape[1]

    def draw(self, ell: int) -> IntensityModel:
        cfg = self.config
        return IntensityModel(
            beta=self.beta[ell], w_star=self.w_star[ell], psi=self.psi[ell],
            kernel=self.kernel, knotmatrix=self.knotmatrix, grid=self.grid,
            design=self.design, sigma_beta=cfg.get("sigma_beta"),
            phi_bounds=tuple(cfg.get("phi_bounds", (0.0, 0.0))), log_cap=self.log_cap,
        )

    def projector(self, locations) -> Projector:
        return Projector(locations, self.knotmatrix)

    def log_surfaces(self, locations, proj: Optional[Projector] = None, draws=None) -> np.ndarray:
        """``(n_draws, K, m)`` log-intensities at ``locations``."""
        proj = proj or self.projector(locations)
        X = self.design.matrix(locations)
        idx = np.arange(self.n_draws) if draws is None else np.asarray(draws)
        eta = np.einsum("mp,dkp->dkm", X, self.beta[idx]) + np.einsum(
            "mn,dkn->dkm", proj.A, self.w_star[idx]
        )
        return np.minimum(eta, self.log_cap)

    def posterior_mean_intensity(self, locations, k: Optional[int] = None) -> np.ndarray:
        lam = np.exp(self.log_surfaces(locations)).mean(axis=0)
        return lam if k is None else lam[k - 1]

    def integrated_intensity(self) -> np.ndarray:
        """``(n_draws, K)`` grid approximations of the integrated intensity."""
        lam = np.exp(self.log_surfaces(self.grid.points))
        return self.grid.weight * lam.sum(axis=2)

    def to_state(self) -> dict:
        return {
            "knots": self.knots, "kernel_family": self.kernel.family, "kernel_decay": self.kernel.decay,
            "grid_side": self.grid_side, "design": list(self.design.terms),
            "beta": self.beta, "w_star": self.w_star, "psi": self.psi,
            "acceptance": self.acceptance, "trace": self.trace,
            "config": self.config, "log_cap": self.log_cap,
        }

    @classmethod
    def from_state(cls, d: dict) -> "IntensityChain":
        return cls(
            d["knots"], Kernel(d["kernel_family"], d["kernel_decay"]), d["grid_side"],
            SpatialDesign(tuple(d["design"])), d["beta"], d["w_star"], d["psi"],
            d["acceptance"], d["trace"], d.get("config", {}), d["log_cap"],
        )

    def __eq__(self, other):
        if not isinstance(other, IntensityChain):
            return NotImplemented
        a, b = self.to_state(), other.to_state()
        return all(
            np.array_equal(a[key], b[key]) if isinstance(a[key], np.ndarray) else a[key] == b[key]
            for key in a
        )


def _knot_array(knots) -> np.ndarray:
    if not isinstance(knots, (np.ndarray, list, tuple)):
        knots = knots.all
    return np.asarray(knots, dtype=float).reshape(-1, 2)


def fit_intensity(dataset, knots, config: Optional[IntensityConfig] = None, rng=None,
                  kernel: Optional[Kernel] = None) -> IntensityChain:
    """Fit the per-combination LGCP by MCMC and return retained draws.

    Every combination must have at least one point.  With
    ``psi_structure="diagonal"`` each combination runs as an independent
    chain on its own RNG stream (optionally in parallel processes); the
    draws do not depend on ``workers``.
    """
    config = config or IntensityConfig()
    rng = np.random.default_rng(rng)
    K = dataset.K
    counts = dataset.counts
    if np.any(counts == 0):
        empty = (np.flatnonzero(counts == 0) + 1).tolist()
        raise ValueError(f"combination(s) {empty} have no points; cannot fit intensity")
    kernel = kernel or resolve_kernel(config.kernel_family, config.phi, dataset.xy, config.range_fraction)
    kn = _knot_array(knots)
    km = KnotMatrix(kn, kernel)
    grid = IntegrationGrid.regular(UNIT_SQUARE, config.grid_side)
    gproj = Projector(grid.points, km)
    gX = config.design.matrix(grid.points)
    combos = [
        _ComboData(dataset.xy[dataset.combo == k], config.design, gX, gproj, km, grid.weight)
        for k in range(1, K + 1)
    ]
    p = config.design.dim
    st = config.chain
    iw = config.iw_prior(K)

    if config.psi_structure == "full" or K == 1:
        sampler = _LgcpSampler(combos, km, iw, p, config.sigma_beta, config.log_cap, st)
        beta, w, psi, trace, acc = sampler.run(rng)
    else:
        marg = [InverseWishart(iw.scale[k:k + 1, k:k + 1], iw.df - K + 1) for k in range(K)]
        jobs = [
            (_LgcpSampler([combos[k]], km, marg[k], p, config.sigma_beta, config.log_cap, st), g)
            for k, g in enumerate(rng.spawn(K))
        ]
        if config.workers > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                results = list(pool.map(_run_diagonal_combo, jobs))
        else:
            results = [_run_diagonal_combo(j) for j in jobs]
        beta = np.concatenate([r[0] for r in results], axis=1)
        w = np.concatenate([r[1] for r in results], axis=1)
        psi = np.zeros((st.n_retained, K, K))
        for k, r in enumerate(results):
            psi[:, k, k] = r[2][:, 0, 0]
        trace = np.sum([r[3] for r in results], axis=0)
        acc = np.concatenate([r[4] for r in results], axis=0)

    log.info("intensity fit: acceptance beta %s, w* %s", np.round(acc[:, 0], 2), np.round(acc[:, 1], 2))
    return IntensityChain(kn, kernel, config.grid_side, config.design, beta, w, psi, acc, trace,
                          config.to_dict(), config.log_cap)
