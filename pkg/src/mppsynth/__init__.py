"""Fully synthetic marked point-pattern data from a Bayesian marked LGCP.

The model factorizes into a Dirichlet-multinomial law for the categorical
mark combination, a log-Gaussian Cox process per combination (low-rank
predictive process on fixed knots), and a regression for the remaining
mark.  Synthetic replicates are posterior-predictive draws; utility and
disclosure risk are assessed in :mod:`mppsynth.evaluation`.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND  # noqa: E402
from .categorical import CategoricalPosterior, fit_categorical  # noqa: E402
from .data import Dataset, Schema, SpatialDomain, SyntheticReplicate, load_dataset, save_dataset  # noqa: E402
from .evaluation import combine, k_hat, l_band, l_hat, type_a_risk, type_s_risk  # noqa: E402
from .knots import KnotSet, place_grid_knots, place_intensity_knots  # noqa: E402
from .lgcp import IntensityConfig, fit_intensity  # noqa: E402
from .marks import MarkConfig, fit_marks  # noqa: E402
from .synthesis import CandidatePool, SynthesisPlan, synthesize  # noqa: E402

__all__ = [
    "BACKEND", "CandidatePool", "CategoricalPosterior", "Dataset", "IntensityConfig", "KnotSet",
    "MarkConfig", "Schema", "SpatialDomain", "SynthesisPlan", "SyntheticReplicate", "combine",
    "fit_categorical", "fit_intensity", "fit_marks", "k_hat", "l_band", "l_hat", "load_dataset",
    "place_grid_knots", "place_intensity_knots", "save_dataset", "synthesize", "type_a_risk",
    "type_s_risk",
]
