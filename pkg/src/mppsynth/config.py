"""Declarative run configuration (YAML)."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .categorical import default_alpha
from .covariance import FAMILIES as KERNEL_FAMILIES
from .data import Schema, SpatialDesign
from .evaluation import AnalysisSpec, RiskThresholds
from .lgcp import IntensityConfig
from .marks import MarkConfig
from .mcmc import ChainSettings

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def _section(d: dict, name: str) -> dict:
    value = d.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return dict(value)


def _pop_unknown(section: dict, name: str, allowed) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {unknown}")


@dataclass
class RunConfig:
    data_path: Optional[Path] = None
    schema: Schema = field(default_factory=Schema)
    seed: int = 0
    workers: int = 1
    n_grid_knots: int = 36
    n_pp_knots: int = 36
    candidate_side: int = 50
    prefit_chain: ChainSettings = field(default_factory=lambda: ChainSettings(2000, 5, 100))
    kernel_family: str = "exponential"
    phi: Optional[float] = None
    range_fraction: float = 0.5
    chain: ChainSettings = field(default_factory=ChainSettings)
    intensity: dict = field(default_factory=dict)
    marks: dict = field(default_factory=dict)
    alpha: Optional[list] = None
    L: int = 100
    pool: str = "grid:50"
    min_pool: int = 2500
    thresholds: RiskThresholds = field(default_factory=RiskThresholds)
    quantiles: tuple = (0.5,)
    h_max: float = 0.25
    h_step: float = 0.01
    analyses: tuple = ()
    outputs: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        if self.L < 1:
            raise ConfigError("L must be at least 1")
        if self.chain.n_retained < self.L:
            raise ConfigError(
                f"retained draws ({self.chain.n_retained}) must be at least L ({self.L})"
            )
        if self.n_grid_knots < 1 or self.n_pp_knots < 0:
            raise ConfigError("need at least one grid knot and a nonnegative intensity-knot count")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        if self.kernel_family not in KERNEL_FAMILIES:
            raise ConfigError(f"unknown kernel family {self.kernel_family!r}; choose from {KERNEL_FAMILIES}")
        try:
            self.intensity_config()
            self.mark_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @property
    def n_star(self) -> int:
        return self.n_grid_knots + self.n_pp_knots

    def intensity_config(self, chain: Optional[ChainSettings] = None) -> IntensityConfig:
        d = dict(self.intensity)
        if "design" in d:
            d["design"] = SpatialDesign(tuple(d["design"]))
        return IntensityConfig(kernel_family=self.kernel_family, phi=self.phi,
                               range_fraction=self.range_fraction, chain=chain or self.chain,
                               workers=self.workers, **d)

    def prefit_config(self) -> IntensityConfig:
        base = self.intensity_config(self.prefit_chain)
        return IntensityConfig(kernel_family=base.kernel_family, phi=base.phi,
                               range_fraction=base.range_fraction, grid_side=base.grid_side,
                               sigma_beta=base.sigma_beta, log_cap=base.log_cap, chain=self.prefit_chain)

    def mark_config(self) -> MarkConfig:
        d = dict(self.marks)
        if "design" in d:
            d["design"] = SpatialDesign(tuple(d["design"]))
        if "trunc_bounds" in d:
            d["trunc_bounds"] = tuple(d["trunc_bounds"])
        return MarkConfig(kernel_family=self.kernel_family, phi=self.phi,
                          range_fraction=self.range_fraction, chain=self.chain, **d)

    def alpha_prior(self, K: int):
        if self.alpha is None:
            return default_alpha(K)
        if len(self.alpha) != K:
            raise ConfigError(f"alpha has {len(self.alpha)} entries but K={K}")
        return list(self.alpha)

    def check_counts(self, counts) -> list:
        """Warnings for knot counts that are large relative to the data."""
        msgs = []
        n_min = int(min(counts)) if len(counts) else 0
        if self.n_star >= n_min:
            msgs.append(f"n* = {self.n_star} knots is not below the smallest combination size {n_min}")
        if self.n_star > 100:
            msgs.append(f"n* = {self.n_star} knots exceeds the recommended 100")
        for m in msgs:
            log.warning(m)
        return msgs

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    @classmethod
    def from_dict(cls, d: dict, base_dir=Path(".")) -> "RunConfig":
        d = dict(d or {})
        known = {"data", "seed", "workers", "knots", "kernel", "mcmc", "intensity", "marks",
                 "categorical", "synthesis", "evaluation", "outputs"}
        _pop_unknown(d, "top level", known)
        data = _section(d, "data")
        knots = _section(d, "knots")
        kernel = _section(d, "kernel")
        mcmc = _section(d, "mcmc")
        syn = _section(d, "synthesis")
        ev = _section(d, "evaluation")
        _pop_unknown(knots, "knots", {"n_grid", "n_pp", "candidate_side", "prefit"})
        _pop_unknown(kernel, "kernel", {"family", "phi", "range_fraction"})
        _pop_unknown(syn, "synthesis", {"L", "pool", "min_pool"})
        _pop_unknown(ev, "evaluation", {"eps_s", "eps_a", "quantiles", "h_max", "h_step", "analyses"})
        try:
            chain = _chain(mcmc)
            prefit = _chain(knots.get("prefit") or {"burn_in": 2000, "thin": 5, "retained": 100})
            return cls(
                data_path=Path(data["path"]) if data.get("path") else None,
                schema=Schema.from_dict(data.get("schema")),
                seed=int(d.get("seed", 0)),
                workers=int(d.get("workers", 1)),
                n_grid_knots=int(knots.get("n_grid", 36)),
                n_pp_knots=int(knots.get("n_pp", 36)),
                candidate_side=int(knots.get("candidate_side", 50)),
                prefit_chain=prefit,
                kernel_family=kernel.get("family", "exponential"),
                phi=kernel.get("phi"),
                range_fraction=float(kernel.get("range_fraction", 0.5)),
                chain=chain,
                intensity=_section(d, "intensity"),
                marks=_section(d, "marks"),
                alpha=_section(d, "categorical").get("alpha"),
                L=int(syn.get("L", chain.n_retained)),
                pool=str(syn.get("pool", "grid:50")),
                min_pool=int(syn.get("min_pool", 2500)),
                thresholds=RiskThresholds(float(ev.get("eps_s", 0.02)), float(ev.get("eps_a", 5.0))),
                quantiles=tuple(float(q) for q in ev.get("quantiles", (0.5,))),
                h_max=float(ev.get("h_max", 0.25)),
                h_step=float(ev.get("h_step", 0.01)),
                analyses=tuple(AnalysisSpec.from_dict(a) for a in ev.get("analyses", ())),
                outputs=_section(d, "outputs"),
                base_dir=Path(base_dir),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"no such config file: {path}")
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from None
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(raw or {}, path.parent)

    def to_dict(self) -> dict:
        """Echo of the effective configuration (stored with the fitted state)."""
        return {
            "seed": self.seed,
            "schema": self.schema.to_dict(),
            "knots": {"n_grid": self.n_grid_knots, "n_pp": self.n_pp_knots,
                      "candidate_side": self.candidate_side, "prefit": self.prefit_chain.to_dict()},
            "kernel": {"family": self.kernel_family, "phi": self.phi, "range_fraction": self.range_fraction},
            "mcmc": self.chain.to_dict(),
            "intensity": self.intensity_config().to_dict(),
            "marks": self.mark_config().to_dict(),
            "alpha": None if self.alpha is None else [float(a) for a in self.alpha],
        }


def _chain(d: dict) -> ChainSettings:
    d = dict(d)
    _pop_unknown(d, "mcmc", {"burn_in", "thin", "retained", "target_accept"})
    return ChainSettings(burn_in=int(d.get("burn_in", 5000)), thin=int(d.get("thin", 10)),
                         n_retained=int(d.get("retained", 100)),
                         target_accept=float(d.get("target_accept", 0.35)))
