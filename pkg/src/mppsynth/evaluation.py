"""Utility and disclosure-risk evaluation of synthetic replicates.

Utility: Ripley's K and the centred L function (no edge correction), and
combining-rule inference across replicates.  Risk: Type S (attribute
disclosure given a location) and Type A (location disclosure given the
attributes) for each confidential record.
"""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import _kernels
from .data import Dataset

log = logging.getLogger(__name__)

# pairs at distance exactly h (up to rounding, e.g. on a lattice pool) count as within h
_H_RTOL = 1e-9

EDGE_NOTE = ("K-hat carries no edge correction, so it is biased downward at radii "
             "comparable to the domain size")


def _xy(data) -> np.ndarray:
    return np.asarray(data.xy if isinstance(data, Dataset) else data, dtype=float).reshape(-1, 2)


# --- K and L functions --------------------------------------------------------


def k_hat(data, h, area: float = 1.0):
    """Uncorrected Ripley K: ``|D_s| * #{ordered pairs i != j, d_ij <= h} / N^2``."""
    xy = _xy(data)
    N = len(xy)
    if N < 2:
        raise ValueError("K-hat needs at least two points")
    h_arr = np.atleast_1d(np.asarray(h, dtype=float))
    if np.any(h_arr < 0):
        raise ValueError("radius must be nonnegative")
    order = np.argsort(h_arr, kind="stable")
    counts = np.empty(len(h_arr), dtype=np.int64)
    counts[order] = _kernels.pair_counts(xy, h_arr[order] * (1.0 + _H_RTOL))
    out = area * 2.0 * counts / float(N) ** 2
    return float(out[0]) if np.ndim(h) == 0 else out


def l_hat(data, h, area: float = 1.0):
    """``sqrt(K-hat / pi) - h``."""
    out = np.sqrt(np.asarray(k_hat(data, h, area)) / np.pi) - np.asarray(h, dtype=float)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class LFunctionCurve:
    h_grid: np.ndarray
    l_values: np.ndarray
    band: np.ndarray  # (2, m): lower and upper pointwise quantiles
    curves: np.ndarray = field(repr=False, default=None)  # (L, m)
    level: float = 0.95

    def contains(self, l_other) -> np.ndarray:
        l_other = np.asarray(l_other, dtype=float)
        return (l_other >= self.band[0]) & (l_other <= self.band[1])


def l_band(replicates, h_grid, level: float = 0.95, area: float = 1.0) -> LFunctionCurve:
    """Mean L-hat curve across replicates with its pointwise empirical band."""
    reps = list(replicates)
    if not reps:
        raise ValueError("replicate list is empty")
    h = np.asarray(h_grid, dtype=float)
    if h.ndim != 1 or np.any(h < 0) or np.any(np.diff(h) <= 0):
        raise ValueError("h grid must be strictly increasing and nonnegative")
    if len(reps) < 20:
        log.warning("only %d replicates; the pointwise band will be unstable", len(reps))
    curves = np.array([l_hat(r, h, area) for r in reps])
    a = 0.5 * (1.0 - level)
    band = np.quantile(curves, [a, 1.0 - a], axis=0)
    return LFunctionCurve(h, curves.mean(axis=0), band, curves, level)


# --- combining rules ----------------------------------------------------------


@dataclass(frozen=True)
class CombinedInference:
    point: float
    within: float
    between: float
    total_var: float
    df: float
    interval: tuple
    L: int
    level: float = 0.95

    def overlaps(self, lo: float, hi: float) -> bool:
        return self.interval[0] <= hi and lo <= self.interval[1]


def combine(q, u, level: float = 0.95) -> CombinedInference:
    """Combine per-replicate estimates ``q`` and variances ``u``.

    ``T = u_bar + b / L`` with ``df = (L - 1)(1 + L u_bar / b)^2``; a zero
    between-replicate variance falls back to a normal interval.
    """
    q = np.asarray(q, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    L = len(q)
    if L < 2:
        raise ValueError("combining rules need at least two replicates")
    if len(u) != L:
        raise ValueError("q and u must have the same length")
    if np.any(u < 0):
        raise ValueError("variance estimates must be nonnegative")
    qbar = float(q.mean())
    ubar = float(u.mean())
    b = float(q.var(ddof=1))
    T = ubar + b / L
    if b > 0:
        df = float((L - 1) * (1.0 + ubar * L / b) ** 2)
        crit = float(stats.t.ppf(0.5 + 0.5 * level, df))
    else:
        df = float("inf")
        crit = float(stats.norm.ppf(0.5 + 0.5 * level))
    half = crit * np.sqrt(T)
    return CombinedInference(qbar, ubar, b, T, df, (qbar - half, qbar + half), L, level)


# --- disclosure risk ----------------------------------------------------------


@dataclass(frozen=True)
class RiskThresholds:
    eps_s: float = 0.02
    eps_a: float = 5.0

    def __post_init__(self):
        if not (self.eps_s > 0 and self.eps_a > 0):
            raise ValueError("risk thresholds must be positive")


@dataclass(frozen=True, eq=False)
class RiskResult:
    """Per-replicate risks (NaN where the denominator is zero) and summaries."""

    values: np.ndarray
    quantile_levels: tuple = (0.5,)
    quantiles: np.ndarray = None

    @property
    def n_used(self) -> int:
        return int(np.isfinite(self.values).sum())

    @property
    def undefined(self) -> bool:
        return self.n_used == 0

    @property
    def median(self) -> float:
        return _nanquantile(self.values, 0.5)


def _nanquantile(v, q):
    v = np.asarray(v, dtype=float)
    v = v[np.isfinite(v)]
    return float(np.quantile(v, q)) if len(v) else float("nan")


def _record_arrays(record):
    if isinstance(record, Dataset):
        return record.xy, record.combo, record.mark
    s0, k, y = record
    return np.asarray(s0, float).reshape(1, 2), np.array([int(k)]), np.array([float(y)])


def risk_matrix(replicates, confidential, thresholds: RiskThresholds) -> tuple:
    """Type S and Type A risks for every confidential record and replicate.

    ``confidential`` is a Dataset or a single ``(s0, k, y)`` record.
    Returns two ``(n_conf, L)`` arrays with NaN wherever the denominator
    (spatially close, resp. attribute-similar synthetic records) is zero.
    """
    reps = list(replicates)
    if not reps:
        raise ValueError("replicate list is empty")
    cxy, ck, cy = _record_arrays(confidential)
    S = np.full((len(cxy), len(reps)), np.nan)
    A = np.full_like(S, np.nan)
    for j, r in enumerate(reps):
        close, both, similar = _kernels.risk_counts(cxy, ck, cy, r.xy, r.combo, r.mark,
                                                    thresholds.eps_s, thresholds.eps_a)
        with np.errstate(invalid="ignore", divide="ignore"):
            S[:, j] = np.where(close > 0, both / np.maximum(close, 1), np.nan)
            A[:, j] = np.where(similar > 0, both / np.maximum(similar, 1), np.nan)
    return S, A


def _summarize(values, quantiles) -> RiskResult:
    q = np.array([_nanquantile(values, p) for p in quantiles])
    return RiskResult(values, tuple(quantiles), q)


def type_s_risk(replicates, record, thresholds: RiskThresholds, quantiles=(0.5,)) -> RiskResult:
    """Share of spatially close synthetic records that are also attribute-similar."""
    S, _ = risk_matrix(replicates, record, thresholds)
    return _summarize(S[0], quantiles)


def type_a_risk(replicates, record, thresholds: RiskThresholds, quantiles=(0.5,)) -> RiskResult:
    """Share of attribute-similar synthetic records that are also spatially close."""
    _, A = risk_matrix(replicates, record, thresholds)
    return _summarize(A[0], quantiles)


@dataclass(frozen=True, eq=False)
class RiskTable:
    S: np.ndarray
    A: np.ndarray
    quantile_levels: tuple = (0.5,)

    def summary(self, which: str) -> np.ndarray:
        """``(n_conf, n_quantiles)`` per-record quantiles over usable replicates."""
        M = self.S if which == "S" else self.A
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanquantile(M, self.quantile_levels, axis=1).T.reshape(len(M), -1)

    def n_used(self, which: str) -> np.ndarray:
        return np.isfinite(self.S if which == "S" else self.A).sum(axis=1)

    def undefined(self, which: str) -> np.ndarray:
        return self.n_used(which) == 0


def risk_table(replicates, confidential: Dataset, thresholds: RiskThresholds, quantiles=(0.5,)) -> RiskTable:
    S, A = risk_matrix(replicates, confidential, thresholds)
    return RiskTable(S, A, tuple(quantiles))


# --- regression analyses ------------------------------------------------------


@dataclass(frozen=True)
class AnalysisSpec:
    """An indicator-coded GLM fitted to each replicate and to the confidential data.

    ``family`` is ``poisson`` (response: the mark) or ``binomial`` (response:
    membership of ``combo`` in ``event_combos``).  ``groups`` maps each
    combination (in order) to a 1-based regressor group; one indicator per
    group, no intercept.  ``None`` means one group per combination.
    """

    name: str
    family: str = "poisson"
    groups: Optional[tuple] = None
    event_combos: tuple = ()

    def __post_init__(self):
        if self.family not in ("poisson", "binomial"):
            raise ValueError(f"unsupported analysis family {self.family!r}")
        if self.family == "binomial" and not self.event_combos:
            raise ValueError("binomial analyses need event_combos")

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisSpec":
        d = dict(d)
        for key in ("groups", "event_combos"):
            if d.get(key) is not None:
                d[key] = tuple(int(v) for v in d[key])
        return cls(**d)

    def group_of(self, K: int) -> np.ndarray:
        g = np.arange(1, K + 1) if self.groups is None else np.asarray(self.groups, dtype=int)
        if len(g) != K or g.min() < 1:
            raise ValueError(f"analysis {self.name!r}: groups must list one positive group per combination")
        return g

    def design(self, ds: Dataset) -> tuple:
        g = self.group_of(ds.K)
        G = int(g.max())
        X = np.zeros((ds.N, G))
        X[np.arange(ds.N), g[ds.combo - 1] - 1] = 1.0
        if self.family == "poisson":
            y = ds.mark
        else:
            y = np.isin(ds.combo, self.event_combos).astype(float)
        return X, y


def fit_glm(spec: AnalysisSpec, ds: Dataset) -> tuple:
    """Coefficient estimates and variances; NaN for groups absent from ``ds``."""
    import statsmodels.api as sm

    X, y = spec.design(ds)
    G = X.shape[1]
    est = np.full(G, np.nan)
    var = np.full(G, np.nan)
    present = X.sum(axis=0) > 0
    if not present.any():
        return est, var
    fam = sm.families.Poisson() if spec.family == "poisson" else sm.families.Binomial()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = sm.GLM(y, X[:, present], family=fam).fit()
    est[present] = res.params
    var[present] = np.diag(res.cov_params())
    # perfect separation gives unbounded logits; treat as unestimable
    bad = ~np.isfinite(est) | ~np.isfinite(var) | (np.abs(est) > 25)
    est[bad] = np.nan
    var[bad] = np.nan
    return est, var


@dataclass(frozen=True)
class CoefficientComparison:
    analysis: str
    index: int
    confidential: tuple  # (estimate, lo, hi)
    synthetic: Optional[CombinedInference]

    @property
    def overlap(self) -> Optional[bool]:
        if self.synthetic is None or not np.isfinite(self.confidential[0]):
            return None
        return self.synthetic.overlaps(self.confidential[1], self.confidential[2])


def compare_analysis(spec: AnalysisSpec, replicates, confidential: Dataset, level: float = 0.95) -> list:
    est_c, var_c = fit_glm(spec, confidential)
    z = stats.norm.ppf(0.5 + 0.5 * level)
    fits = [fit_glm(spec, r) for r in replicates]
    Q = np.array([f[0] for f in fits])
    U = np.array([f[1] for f in fits])
    out = []
    for j in range(len(est_c)):
        ok = np.isfinite(Q[:, j]) & np.isfinite(U[:, j])
        syn = combine(Q[ok, j], U[ok, j], level) if ok.sum() >= 2 else None
        half = z * np.sqrt(var_c[j])
        out.append(CoefficientComparison(spec.name, j + 1, (est_c[j], est_c[j] - half, est_c[j] + half), syn))
    return out


# --- reports ------------------------------------------------------------------


def default_h_grid(max_h: float = 0.25, step: float = 0.01) -> np.ndarray:
    return np.round(np.arange(step, max_h + 0.5 * step, step), 10)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return "" if not np.isfinite(v) else repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v


@dataclass
class EvaluationReport:
    curves: dict  # label -> (confidential L-hat, LFunctionCurve)
    comparisons: list
    risks: Optional[RiskTable]
    thresholds: RiskThresholds
    confidential: Dataset

    def summary(self) -> dict:
        out: dict = {"n_replicates": None, "notes": [EDGE_NOTE]}
        if self.curves:
            label, (conf, curve) = next(iter(self.curves.items()))
            out["n_replicates"] = int(curve.curves.shape[0])
            out["l_function"] = {
                lab: {"h_inside_band": c.h_grid[c.contains(l0)].tolist(),
                      "fraction_inside": float(np.mean(c.contains(l0)))}
                for lab, (l0, c) in self.curves.items()
            }
        if self.comparisons:
            flags = [c.overlap for c in self.comparisons if c.overlap is not None]
            out["regression"] = {
                "n_coefficients": len(self.comparisons),
                "n_comparable": len(flags),
                "overlap_fraction": float(np.mean(flags)) if flags else None,
            }
        if self.risks is not None:
            mS = self.risks.summary("S")[:, 0]
            mA = self.risks.summary("A")[:, 0]
            out["risk"] = {
                "eps_s": self.thresholds.eps_s,
                "eps_a": self.thresholds.eps_a,
                "quantile_levels": list(self.risks.quantile_levels),
                "type_s": _risk_stats(mS, self.risks.undefined("S")),
                "type_a": _risk_stats(mA, self.risks.undefined("A")),
            }
        return out

    def write(self, outdir, plot_data: bool = False) -> Path:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        for label, (l0, c) in self.curves.items():
            _write_csv(outdir / f"lfunction_{label}.csv",
                       ["h", "l_confidential", "l_synthetic_mean", "band_lo", "band_hi", "inside"],
                       zip(c.h_grid, l0, c.l_values, c.band[0], c.band[1], c.contains(l0)))
        if self.comparisons:
            _write_csv(outdir / "regression.csv",
                       ["analysis", "coefficient", "conf_est", "conf_lo", "conf_hi",
                        "syn_est", "syn_lo", "syn_hi", "syn_total_var", "syn_df", "overlap"],
                       ([c.analysis, c.index, *c.confidential,
                         *((c.synthetic.point, *c.synthetic.interval, c.synthetic.total_var, c.synthetic.df)
                           if c.synthetic else (np.nan,) * 5),
                         "" if c.overlap is None else c.overlap]
                        for c in self.comparisons))
        if self.risks is not None:
            qs = self.risks.quantile_levels
            hdr = ["record", "combo", "mark"]
            hdr += [f"type_s_q{q:g}" for q in qs] + [f"type_a_q{q:g}" for q in qs]
            hdr += ["type_s_n_used", "type_a_n_used", "type_s_undefined", "type_a_undefined"]
            cs, ca = self.risks.summary("S"), self.risks.summary("A")
            ds = self.confidential
            _write_csv(outdir / "risk.csv", hdr, (
                [i + 1, int(ds.combo[i]), float(ds.mark[i]), *cs[i], *ca[i],
                 int(self.risks.n_used("S")[i]), int(self.risks.n_used("A")[i]),
                 bool(self.risks.undefined("S")[i]), bool(self.risks.undefined("A")[i])]
                for i in range(ds.N)))
        if plot_data:
            self._write_plot_data(outdir)
        path = outdir / "summary.json"
        path.write_text(json.dumps(self.summary(), indent=1) + "\n")
        return path

    def _write_plot_data(self, outdir: Path) -> None:
        rows = []
        for label, (l0, c) in self.curves.items():
            rows += [[label, h, a, m, lo, hi] for h, a, m, lo, hi in
                     zip(c.h_grid, l0, c.l_values, c.band[0], c.band[1])]
        _write_csv(outdir / "plot_lfunction.csv",
                   ["panel", "h", "confidential", "synthetic_mean", "lo", "hi"], rows)
        _write_csv(outdir / "plot_ci_pairs.csv",
                   ["analysis", "coefficient", "source", "estimate", "lo", "hi"],
                   [row for c in self.comparisons for row in (
                       [c.analysis, c.index, "confidential", *c.confidential],
                       [c.analysis, c.index, "synthetic",
                        *((c.synthetic.point, *c.synthetic.interval) if c.synthetic else (np.nan,) * 3)])])
        if self.risks is not None:
            xy = self.confidential.original_xy()
            _write_csv(outdir / "plot_risk_scatter.csv",
                       ["record", "x", "y", "type_s_median", "type_a_median"],
                       ([i + 1, xy[i, 0], xy[i, 1], s, a] for i, (s, a) in enumerate(
                           zip(self.risks.summary("S")[:, 0], self.risks.summary("A")[:, 0]))))


def _risk_stats(med, undefined) -> dict:
    ok = np.isfinite(med)
    return {
        "n_records": int(len(med)),
        "n_undefined": int(np.sum(undefined)),
        "max_median": float(med[ok].max()) if ok.any() else None,
        "mean_median": float(med[ok].mean()) if ok.any() else None,
        "fraction_median_below_0.2": float(np.mean(med[ok] < 0.2)) if ok.any() else None,
    }


def evaluate(replicates: Sequence[Dataset], confidential: Dataset, thresholds: RiskThresholds = RiskThresholds(),
             analyses: Sequence[AnalysisSpec] = (), h_grid=None, per_combination: bool = True,
             quantiles=(0.5,), level: float = 0.95, risk: bool = True) -> EvaluationReport:
    reps = list(replicates)
    if not reps:
        raise ValueError("replicate list is empty")
    for r in reps:
        if r.K != confidential.K:
            raise ValueError(f"schema mismatch: replicate has K={r.K}, confidential data K={confidential.K}")
    h = default_h_grid() if h_grid is None else np.asarray(h_grid, dtype=float)
    curves = {"all": (l_hat(confidential, h), l_band(reps, h, level))}
    if per_combination:
        for k in range(1, confidential.K + 1):
            conf_k = confidential.subset(confidential.combo == k)
            subs = [r.subset(r.combo == k) for r in reps]
            if conf_k.N >= 2 and all(s.N >= 2 for s in subs):
                curves[f"combo{k}"] = (l_hat(conf_k, h), l_band(subs, h, level))
    comparisons = [c for a in analyses for c in compare_analysis(a, reps, confidential, level)]
    risks = risk_table(reps, confidential, thresholds, quantiles) if risk else None
    return EvaluationReport(curves, comparisons, risks, thresholds, confidential)
