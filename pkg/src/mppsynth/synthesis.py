"""Posterior-predictive generation of fully synthetic replicates.

For replicate ``l`` using retained draw ``d = draw_indices[l]``:

1. ``theta ~ Dirichlet(alpha_post)`` and ``n_dagger ~ Mult(N, theta)``;
2. for each combination k, ``n_dagger_k`` pool locations drawn with
   replacement with probability proportional to ``lambda_k^(d)``;
3. a mark for every synthetic location from the mark model at draw ``d``.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .categorical import CategoricalPosterior, draw_counts, draw_theta
from .data import UNIT_SQUARE, AffineMap, DataError, Schema, SyntheticReplicate, read_locations, save_dataset
from .lgcp import IntensityChain, IntensityModel, log_intensity
from .marks import MarkChain, draw_mark

log = logging.getLogger(__name__)

MIN_POOL = 2500


class SynthesisError(ValueError):
    """Misaligned chains or an inadequate candidate pool."""


@dataclass(frozen=True, eq=False)
class CandidatePool:
    locations: np.ndarray
    source: str = "grid"

    def __post_init__(self):
        loc = np.array(self.locations, dtype=float).reshape(-1, 2)
        if len(loc) == 0:
            raise SynthesisError("candidate pool is empty")
        if not np.all(UNIT_SQUARE.contains(loc)):
            raise SynthesisError("candidate pool has locations outside the domain")
        loc.setflags(write=False)
        object.__setattr__(self, "locations", loc)

    def __len__(self):
        return len(self.locations)

    @classmethod
    def grid(cls, side: int = 50) -> "CandidatePool":
        return cls(UNIT_SQUARE.grid(side), f"grid:{side}")

    @classmethod
    def uniform(cls, n: int, rng) -> "CandidatePool":
        rng = np.random.default_rng(rng)
        return cls(rng.random((int(n), 2)), f"uniform:{n}")

    @classmethod
    def from_file(cls, path, schema: Schema = Schema(), transform: AffineMap = AffineMap()) -> "CandidatePool":
        return cls(read_locations(path, schema, transform), f"file:{path}")

    @classmethod
    def parse(cls, spec: str, rng=None, transform: AffineMap = AffineMap(), schema: Schema = Schema()):
        """Build a pool from ``grid:R``, ``uniform:N_s`` or ``file:path``."""
        kind, _, arg = str(spec).partition(":")
        try:
            if kind == "grid":
                return cls.grid(int(arg or 50))
            if kind == "uniform":
                return cls.uniform(int(arg), rng)
        except ValueError:
            raise SynthesisError(f"bad pool size in {spec!r}") from None
        if kind == "file" and arg:
            try:
                return cls.from_file(arg, schema, transform)
            except DataError as exc:
                raise SynthesisError(str(exc)) from None
        raise SynthesisError(f"unrecognized pool spec {spec!r}; use grid:R, uniform:N_s or file:path")


@dataclass(frozen=True, eq=False)
class SynthesisPlan:
    L: int
    seed: int
    pool: CandidatePool
    draw_indices: Optional[Sequence[int]] = None
    min_pool: int = MIN_POOL

    def __post_init__(self):
        if self.L < 1:
            raise SynthesisError("L must be at least 1")
        idx = np.arange(self.L) if self.draw_indices is None else np.asarray(self.draw_indices, dtype=int)
        if len(idx) != self.L:
            raise SynthesisError("draw_indices must have one entry per replicate")
        object.__setattr__(self, "draw_indices", tuple(int(i) for i in idx))
        if len(self.pool) < self.min_pool:
            raise SynthesisError(
                f"candidate pool has {len(self.pool)} locations; at least {self.min_pool} required"
            )

    def generators(self) -> list:
        ss = np.random.SeedSequence(self.seed)
        return [np.random.default_rng(s) for s in ss.spawn(self.L)]


def pool_probabilities(log_weights) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=float)
    p = np.exp(lw - lw.max())
    return p / p.sum()


def draw_pool_indices(log_weights, n: int, rng) -> np.ndarray:
    """``n`` i.i.d. pool indices with probability proportional to ``exp(log_weights)``."""
    if n < 0:
        raise ValueError("number of locations must be nonnegative")
    if n == 0:
        return np.empty(0, dtype=np.int64)
    p = pool_probabilities(log_weights)
    # inverse-CDF on the cumulative weights; exact and fast for large pools
    cdf = np.cumsum(p)
    idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    return np.minimum(idx, len(p) - 1).astype(np.int64)


def draw_locations(model: IntensityModel, k: int, n: int, pool: CandidatePool, rng) -> np.ndarray:
    """Sample ``n`` locations for combination k from the pool under one intensity draw."""
    idx = draw_pool_indices(log_intensity(model, k, pool.locations), n, rng)
    return pool.locations[idx]


def _check_alignment(plan: SynthesisPlan, categorical, intensity: IntensityChain, marks: MarkChain):
    if not (categorical.K == intensity.K == marks.K):
        raise SynthesisError(
            f"chains disagree on K (categorical {categorical.K}, intensity {intensity.K}, marks {marks.K})"
        )
    n_avail = min(intensity.n_draws, marks.n_draws)
    if plan.L > n_avail:
        raise SynthesisError(f"L={plan.L} exceeds the {n_avail} retained draws available")
    if max(plan.draw_indices) >= n_avail or min(plan.draw_indices) < 0:
        raise SynthesisError("draw index out of range")


def _one_replicate(args):
    ell, d, rng, N, categorical, theta, intensity, marks, pool, transform, log_surf = args
    if theta is None:
        theta = draw_theta(categorical, rng)
    counts = draw_counts(theta, N, rng)
    mark_model = marks.draw(d)
    xy, combo, mark, pidx = [], [], [], []
    for k in range(1, categorical.K + 1):
        n_k = int(counts[k - 1])
        idx = draw_pool_indices(log_surf[k - 1], n_k, rng)
        locs = pool.locations[idx]
        xy.append(locs)
        combo.append(np.full(n_k, k))
        mark.append(draw_mark(mark_model, k, locs, rng) if n_k else np.empty(0))
        pidx.append(idx)
    return SyntheticReplicate(
        np.vstack(xy), np.concatenate(combo), np.concatenate(mark), categorical.K,
        replicate_id=ell + 1, pool_index=np.concatenate(pidx), transform=transform,
        integer_marks=marks.family == "truncated-poisson",
    )


def synthesize(plan: SynthesisPlan, categorical: CategoricalPosterior, intensity: IntensityChain,
               marks: MarkChain, N: int, transform: AffineMap = AffineMap(), workers: int = 1,
               theta_draws=None) -> list:
    """Generate ``plan.L`` synthetic replicates of size ``N``.

    ``theta_draws`` (draws x K) pins replicate l to stored category
    probabilities ``theta_draws[draw_indices[l]]``; without it theta is
    drawn afresh from the Dirichlet posterior.  Each replicate uses its own
    spawned generator, so the output does not depend on ``workers``.
    """
    _check_alignment(plan, categorical, intensity, marks)
    if theta_draws is not None:
        theta_draws = np.asarray(theta_draws, dtype=float)
        if theta_draws.shape[1] != categorical.K or max(plan.draw_indices) >= len(theta_draws):
            raise SynthesisError("stored theta draws do not cover the requested draw indices")
    if N < 0:
        raise SynthesisError("N must be nonnegative")
    proj = intensity.projector(plan.pool.locations)
    rngs = plan.generators()

    def jobs():
        for ell, (d, rng) in enumerate(zip(plan.draw_indices, rngs)):
            # one draw's surfaces over the pool at a time keeps memory at K * N_s
            log_surf = intensity.log_surfaces(plan.pool.locations, proj, draws=[d])[0]
            theta = None if theta_draws is None else theta_draws[d]
            yield (ell, d, rng, int(N), categorical, theta, intensity, marks, plan.pool, transform, log_surf)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_one_replicate, jobs()))
    return [_one_replicate(job) for job in jobs()]


def replicate_filename(ell: int, L: int) -> str:
    return f"replicate_{ell:0{max(3, len(str(L)))}d}.csv"


def write_replicates(replicates, outdir, plan: SynthesisPlan, schema: Schema = Schema()) -> Path:
    """One CSV per replicate plus ``manifest.json``; returns the manifest path."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    files = []
    for rep in replicates:
        name = replicate_filename(rep.replicate_id, plan.L)
        save_dataset(rep, outdir / name, schema)
        files.append(name)
    manifest = {
        "L": plan.L,
        "seed": plan.seed,
        "pool": {"source": plan.pool.source, "size": len(plan.pool)},
        "replicates": [
            {"id": rep.replicate_id, "file": f, "draw_index": d, "N": rep.N,
             "counts": rep.counts.tolist(), "seed_spawn_key": [ell]}
            for ell, (rep, f, d) in enumerate(zip(replicates, files, plan.draw_indices))
        ],
    }
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path
