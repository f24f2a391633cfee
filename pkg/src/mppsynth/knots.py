"""Hybrid knot placement: a regular lattice plus intensity-sampled knots."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .covariance import distances
from .data import UNIT_SQUARE, Dataset, SpatialDomain
from .lgcp import IntensityConfig, fit_intensity
from .state import register

log = logging.getLogger(__name__)

DEFAULT_CANDIDATE_SIDE = 50


class KnotPlacementError(ValueError):
    """Too few admissible candidates to place the requested knots."""


def _factor(n: int) -> tuple:
    """``(nx, ny)`` with ``nx * ny == n`` and the two sides as close as possible."""
    ny = int(np.floor(np.sqrt(n)))
    while n % ny:
        ny -= 1
    return n // ny, ny


def place_grid_knots(domain: SpatialDomain = UNIT_SQUARE, n_g: int = 36) -> np.ndarray:
    """Regular ``nx x ny`` lattice of cell centres (half-cell boundary margin).

    Non-square counts use the most nearly square factorization, with the
    longer side along x.
    """
    if n_g < 1 or int(n_g) != n_g:
        raise ValueError("number of grid knots must be a positive integer")
    nx, ny = _factor(int(n_g))
    return domain.grid(nx, ny)


@register
@dataclass(frozen=True, eq=False)
class KnotSet:
    grid_knots: np.ndarray
    pp_knots: np.ndarray
    delta_min: float = 0.0

    def __post_init__(self):
        for name in ("grid_knots", "pp_knots"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1, 2)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        allk = self.all
        if len(allk) == 0:
            raise ValueError("knot set is empty")
        if len(allk) > 1:
            d = distances(allk, allk)
            np.fill_diagonal(d, np.inf)
            if d.min() <= 0 or d.min() < self.delta_min:
                raise ValueError(f"knots closer than the minimum separation {self.delta_min}")

    @property
    def all(self) -> np.ndarray:
        return np.vstack([self.grid_knots, self.pp_knots])

    @property
    def n_star(self) -> int:
        return len(self.grid_knots) + len(self.pp_knots)

    def __len__(self):
        return self.n_star

    def __eq__(self, other):
        return (isinstance(other, KnotSet)
                and np.array_equal(self.grid_knots, other.grid_knots)
                and np.array_equal(self.pp_knots, other.pp_knots))

    def to_state(self) -> dict:
        return {"grid_knots": np.asarray(self.grid_knots), "pp_knots": np.asarray(self.pp_knots),
                "delta_min": self.delta_min}

    @classmethod
    def from_state(cls, d: dict) -> "KnotSet":
        return cls(d["grid_knots"], d["pp_knots"], d.get("delta_min", 0.0))


def place_intensity_knots(dataset: Dataset, n_pp: int, config: Optional[IntensityConfig] = None,
                          rng=None, grid_knots=None, candidate_side: int = DEFAULT_CANDIDATE_SIDE,
                          domain: SpatialDomain = UNIT_SQUARE):
    """Sample ``n_pp`` knots from a candidate lattice in proportion to a fitted intensity.

    An intercept-only LGCP is fitted to all locations with combinations
    merged (K = 1), using ``grid_knots`` as its knot set.  Candidates are
    then drawn one at a time without replacement with probability
    proportional to the posterior-mean intensity; any candidate within
    half the lattice spacing of an accepted knot is removed first.

    Returns ``(knots, delta_min)``.
    """
    if n_pp < 0:
        raise ValueError("n_pp must be nonnegative")
    rng = np.random.default_rng(rng)
    w, h = domain.widths
    delta_min = 0.5 * min(w, h) / candidate_side
    if n_pp == 0:
        return np.empty((0, 2)), delta_min
    if dataset.N == 0:
        raise ValueError("dataset is empty")
    grid_knots = place_grid_knots(domain, 36) if grid_knots is None else np.asarray(grid_knots, float).reshape(-1, 2)
    merged = Dataset(dataset.xy, np.ones(dataset.N, dtype=int), np.zeros(dataset.N), K=1)
    chain = fit_intensity(merged, grid_knots, config, rng=rng)
    cand = domain.grid(candidate_side)
    weight = chain.posterior_mean_intensity(cand, k=1).astype(float)
    weight /= weight.max()
    if len(grid_knots):
        weight[distances(cand, grid_knots).min(axis=1) < delta_min] = 0.0
    chosen = []
    for i in range(n_pp):
        total = weight.sum()
        if not total > 0:
            raise KnotPlacementError(
                f"only {i} of {n_pp} intensity knots could be placed; candidate pool exhausted"
            )
        j = rng.choice(len(cand), p=weight / total)
        chosen.append(j)
        weight[distances(cand, cand[j]).ravel() < delta_min] = 0.0
        weight[j] = 0.0
    return cand[np.array(chosen)], delta_min


def build_knot_set(dataset: Dataset, n_g: int, n_pp: int, config: Optional[IntensityConfig] = None,
                   rng=None, domain: SpatialDomain = UNIT_SQUARE,
                   candidate_side: int = DEFAULT_CANDIDATE_SIDE) -> KnotSet:
    grid = place_grid_knots(domain, n_g)
    pp, delta_min = place_intensity_knots(dataset, n_pp, config, rng, grid_knots=grid,
                                          candidate_side=candidate_side, domain=domain)
    log.info("placed %d grid and %d intensity knots", len(grid), len(pp))
    return KnotSet(grid, pp, delta_min if n_pp else 0.0)
