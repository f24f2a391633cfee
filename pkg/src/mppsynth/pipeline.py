"""End-to-end orchestration: fit the three sub-models, synthesize, evaluate."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .categorical import CategoricalPosterior, draw_theta, fit_categorical
from .config import RunConfig
from .data import AffineMap, Dataset, Schema
from .knots import KnotSet, build_knot_set
from .lgcp import IntensityChain, fit_intensity, resolve_kernel
from .marks import MarkChain, fit_marks
from .mcmc import NumericalError
from .state import load_state, register, save_state
from .synthesis import CandidatePool, SynthesisPlan, synthesize

log = logging.getLogger(__name__)


class FitError(RuntimeError):
    """A sub-model failed; ``module`` names which one."""

    def __init__(self, module: str, cause: BaseException):
        super().__init__(f"{module}: {cause}")
        self.module = module
        self.cause = cause

    @property
    def numerical(self) -> bool:
        return isinstance(self.cause, (NumericalError, np.linalg.LinAlgError, FloatingPointError))


@register
@dataclass(eq=False)
class ModelState:
    """Everything needed to synthesize: fitted chains, knots and data metadata."""

    K: int
    N: int
    counts: np.ndarray
    transform: AffineMap
    schema: Schema
    knots: KnotSet
    categorical: CategoricalPosterior
    theta: np.ndarray
    intensity: IntensityChain
    marks: MarkChain
    seed: int
    config: dict

    def to_state(self) -> dict:
        return {
            "K": self.K, "N": self.N, "counts": np.asarray(self.counts, dtype=np.int64),
            "transform": {"offset": list(self.transform.offset), "scale": list(self.transform.scale)},
            "schema": self.schema.to_dict(),
            "knots": self.knots.to_state(),
            "categorical": self.categorical.to_state(),
            "theta": np.asarray(self.theta, dtype=float),
            "intensity": self.intensity.to_state(),
            "marks": self.marks.to_state(),
            "seed": self.seed,
            "config": self.config,
        }

    @classmethod
    def from_state(cls, d: dict) -> "ModelState":
        return cls(
            K=int(d["K"]), N=int(d["N"]), counts=np.asarray(d["counts"]),
            transform=AffineMap(tuple(d["transform"]["offset"]), tuple(d["transform"]["scale"])),
            schema=Schema.from_dict(d["schema"]),
            knots=KnotSet.from_state(d["knots"]),
            categorical=CategoricalPosterior.from_state(d["categorical"]),
            theta=np.asarray(d["theta"]),
            intensity=IntensityChain.from_state(d["intensity"]),
            marks=MarkChain.from_state(d["marks"]),
            seed=int(d["seed"]), config=d.get("config", {}),
        )

    def __eq__(self, other):
        if not isinstance(other, ModelState):
            return NotImplemented
        return (self.K == other.K and self.N == other.N and np.array_equal(self.counts, other.counts)
                and self.transform == other.transform and self.schema == other.schema
                and self.knots == other.knots and self.categorical == other.categorical
                and np.array_equal(self.theta, other.theta)
                and self.intensity == other.intensity and self.marks == other.marks
                and self.seed == other.seed and self.config == other.config)

    def save(self, path) -> None:
        save_state(self, path)

    @classmethod
    def load(cls, path) -> "ModelState":
        return load_state(path, expected=cls)


def _guard(module: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except FitError:
        raise
    except (ValueError, NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise FitError(module, exc) from exc


def _fit_intensity_job(args):
    return _guard("lgcp-model", fit_intensity, *args)


def _fit_marks_job(args):
    return _guard("mark-model", fit_marks, *args)


def fit_model(dataset: Dataset, config: RunConfig, workers: Optional[int] = None) -> ModelState:
    """Fit the categorical, intensity and mark sub-models.

    Knots are placed first (the only step that couples the sub-models);
    the intensity and mark chains then run on independent RNG streams, in
    separate processes when ``workers > 1``.  Results do not depend on
    ``workers``.
    """
    workers = config.workers if workers is None else workers
    config.check_counts(dataset.counts)
    ss_knots, ss_int, ss_marks, ss_cat = np.random.SeedSequence(config.seed).spawn(4)

    categorical = _guard("categorical-model", fit_categorical, dataset.counts, config.alpha_prior(dataset.K))
    # one theta per retained index so replicate l uses draw l of every sub-model
    theta = draw_theta(categorical, np.random.default_rng(ss_cat), size=config.chain.n_retained)
    kernel = _guard("covariance", resolve_kernel, config.kernel_family, config.phi, dataset.xy,
                    config.range_fraction)
    knots = _guard("knots", build_knot_set, dataset, config.n_grid_knots, config.n_pp_knots,
                   config.prefit_config(), np.random.default_rng(ss_knots),
                   candidate_side=config.candidate_side)

    icfg = config.intensity_config()
    mcfg = config.mark_config()
    int_args = (dataset, knots, replace(icfg, workers=1) if workers > 1 else icfg,
                np.random.default_rng(ss_int), kernel)
    mark_args = (dataset, knots, mcfg, np.random.default_rng(ss_marks), kernel)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, 2)) as ex:
            f_int = ex.submit(_fit_intensity_job, int_args)
            f_mark = ex.submit(_fit_marks_job, mark_args)
            intensity, marks = f_int.result(), f_mark.result()
    else:
        intensity = _fit_intensity_job(int_args)
        marks = _fit_marks_job(mark_args)

    return ModelState(
        K=dataset.K, N=dataset.N, counts=dataset.counts, transform=dataset.transform,
        schema=config.schema, knots=knots, categorical=categorical, theta=theta, intensity=intensity,
        marks=marks, seed=config.seed, config=config.to_dict(),
    )


def synthesize_from_state(state: ModelState, L: int, pool: CandidatePool, seed: int,
                          workers: int = 1, min_pool: int = 2500) -> tuple:
    """Returns ``(plan, replicates)``."""
    plan = SynthesisPlan(L=L, seed=seed, pool=pool, min_pool=min_pool)
    reps = synthesize(plan, state.categorical, state.intensity, state.marks, state.N,
                      transform=state.transform, workers=workers, theta_draws=state.theta)
    return plan, reps
