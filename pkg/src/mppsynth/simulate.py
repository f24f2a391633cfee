"""Ground-truth marked point patterns for recovery tests.

Each combination's intensity is a constant base rate plus isotropic
Gaussian bumps, ``lambda_k(s) = base_k + sum_b h_b exp(-|s - c_b|^2 / (2 sd_b^2))``.
Points are drawn exactly by thinning a dominating homogeneous process, and
integrals over rectangles are available in closed form.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .data import UNIT_SQUARE, AffineMap, Dataset, SpatialDomain
from .marks import sample_trunc_pois


class SimulationSpecError(ValueError):
    """Malformed or unbounded generator specification."""


@dataclass(frozen=True)
class Bump:
    center: tuple
    sd: float
    height: float

    def __post_init__(self):
        if not (np.isfinite(self.height) and self.height >= 0):
            raise SimulationSpecError("bump height must be finite and nonnegative")
        if not (np.isfinite(self.sd) and self.sd > 0):
            raise SimulationSpecError("bump sd must be finite and positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def __call__(self, xy) -> np.ndarray:
        d2 = np.sum((np.asarray(xy, dtype=float).reshape(-1, 2) - self.center) ** 2, axis=1)
        return self.height * np.exp(-0.5 * d2 / self.sd**2)

    def integral(self, bounds) -> float:
        x0, x1, y0, y1 = bounds
        cx, cy = self.center
        fx = ndtr((x1 - cx) / self.sd) - ndtr((x0 - cx) / self.sd)
        fy = ndtr((y1 - cy) / self.sd) - ndtr((y0 - cy) / self.sd)
        return float(self.height * 2.0 * np.pi * self.sd**2 * fx * fy)


@dataclass(frozen=True)
class Surface:
    base: float = 0.0
    bumps: tuple = ()

    def __post_init__(self):
        if not (np.isfinite(self.base) and self.base >= 0):
            raise SimulationSpecError("base rate must be finite and nonnegative")

    def __call__(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        out = np.full(len(xy), float(self.base))
        for b in self.bumps:
            out += b(xy)
        return out

    @property
    def bound(self) -> float:
        return float(self.base + sum(b.height for b in self.bumps))

    def integral(self, bounds) -> float:
        x0, x1, y0, y1 = bounds
        return float(self.base * (x1 - x0) * (y1 - y0) + sum(b.integral(bounds) for b in self.bumps))


@dataclass(frozen=True)
class MarkSpec:
    """Mark law per combination.

    ``normal``: ``Y ~ N(mean_k + g'(s - c), sd^2)``.
    ``truncated-poisson``: ``Y ~ TrunPois(rate_k * exp(g'(s - c)), bounds)``,
    with ``g`` the gradient and ``s - c`` measured in unit-square coordinates
    from the centre.
    """

    family: str = "normal"
    level: tuple = (0.0,)
    gradient: tuple = (0.0, 0.0)
    sd: float = 1.0
    bounds: tuple = (16, 98)

    def __post_init__(self):
        if self.family not in ("normal", "truncated-poisson"):
            raise SimulationSpecError(f"unknown mark family {self.family!r}")
        if self.family == "truncated-poisson" and any(v <= 0 for v in self.level):
            raise SimulationSpecError("truncated-Poisson rates must be positive")
        if self.sd < 0:
            raise SimulationSpecError("mark sd must be nonnegative")


@dataclass(frozen=True)
class GeneratorSpec:
    surfaces: tuple
    marks: MarkSpec = field(default_factory=MarkSpec)
    domain: SpatialDomain = UNIT_SQUARE

    def __post_init__(self):
        if not self.surfaces:
            raise SimulationSpecError("at least one intensity surface is required")
        if len(self.marks.level) not in (1, self.K):
            raise SimulationSpecError("mark level must be a scalar or one value per combination")

    @property
    def K(self) -> int:
        return len(self.surfaces)

    def expected_counts(self, bounds=None) -> np.ndarray:
        bounds = self.domain.bounds if bounds is None else bounds
        return np.array([s.integral(bounds) for s in self.surfaces])

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        try:
            surfaces = tuple(
                Surface(float(s.get("base", 0.0)),
                        tuple(Bump(tuple(b["center"]), float(b["sd"]), float(b["height"]))
                              for b in s.get("bumps", ())))
                for s in d["surfaces"]
            )
            m = dict(d.get("marks", {}))
            level = m.pop("level", (0.0,))
            level = tuple(float(v) for v in np.atleast_1d(level))
            marks = MarkSpec(level=level, **{k: tuple(v) if isinstance(v, list) else v for k, v in m.items()})
            domain = SpatialDomain(tuple(d.get("domain", UNIT_SQUARE.bounds)))
        except (KeyError, TypeError) as exc:
            raise SimulationSpecError(f"malformed generator spec: {exc}") from None
        return cls(surfaces, marks, domain)

    def to_dict(self) -> dict:
        return {
            "domain": list(self.domain.bounds),
            "surfaces": [
                {"base": s.base,
                 "bumps": [{"center": list(b.center), "sd": b.sd, "height": b.height} for b in s.bumps]}
                for s in self.surfaces
            ],
            "marks": {"family": self.marks.family, "level": list(self.marks.level),
                      "gradient": list(self.marks.gradient), "sd": self.marks.sd,
                      "bounds": list(self.marks.bounds)},
        }


def simulate_points(surface: Surface, rng, domain: SpatialDomain = UNIT_SQUARE) -> np.ndarray:
    """Exact Poisson-process draw by thinning a homogeneous process at ``surface.bound``."""
    lam_max = surface.bound
    if not np.isfinite(lam_max):
        raise SimulationSpecError("intensity is unbounded")
    if lam_max == 0:
        return np.empty((0, 2))
    n = rng.poisson(lam_max * domain.area)
    x0, x1, y0, y1 = domain.bounds
    pts = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
    keep = rng.random(n) * lam_max < surface(pts)
    return pts[keep]


def simulate_marks(spec: MarkSpec, k: int, xy, rng) -> np.ndarray:
    level = spec.level[0] if len(spec.level) == 1 else spec.level[k - 1]
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    shift = (xy - 0.5) @ np.asarray(spec.gradient, dtype=float)
    if spec.family == "normal":
        return level + shift + spec.sd * rng.standard_normal(len(xy))
    lo, hi = spec.bounds
    return sample_trunc_pois(np.log(level) + shift, lo, hi, rng).astype(float)


def simulate(spec: GeneratorSpec, rng=None) -> Dataset:
    rng = np.random.default_rng(rng)
    transform = AffineMap.from_bounds(spec.domain.bounds)
    xs, ks, ys = [], [], []
    for k, surface in enumerate(spec.surfaces, start=1):
        pts = transform.to_unit(simulate_points(surface, rng, spec.domain))
        xs.append(pts)
        ks.append(np.full(len(pts), k))
        ys.append(simulate_marks(spec.marks, k, pts, rng))
    return Dataset(np.vstack(xs), np.concatenate(ks), np.concatenate(ys), K=spec.K,
                   transform=transform, integer_marks=spec.marks.family == "truncated-poisson")


def write_truth(path, spec: GeneratorSpec, dataset: Dataset, seed) -> None:
    truth = {
        "seed": seed,
        "spec": spec.to_dict(),
        "expected_counts": spec.expected_counts().tolist(),
        "observed_counts": dataset.counts.tolist(),
        "N": dataset.N,
    }
    Path(path).write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n")
