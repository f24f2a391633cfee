"""Domain types, CSV ingestion and spatial design matrices."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or out-of-range input data."""


@dataclass(frozen=True)
class SpatialDomain:
    """Axis-aligned rectangle ``(xmin, xmax, ymin, ymax)``."""

    bounds: tuple = (0.0, 1.0, 0.0, 1.0)

    def __post_init__(self):
        xmin, xmax, ymin, ymax = (float(b) for b in self.bounds)
        if not (xmax > xmin and ymax > ymin):
            raise DataError(f"degenerate domain bounds {self.bounds}")
        object.__setattr__(self, "bounds", (xmin, xmax, ymin, ymax))

    @property
    def area(self) -> float:
        xmin, xmax, ymin, ymax = self.bounds
        return (xmax - xmin) * (ymax - ymin)

    @property
    def widths(self) -> tuple:
        xmin, xmax, ymin, ymax = self.bounds
        return xmax - xmin, ymax - ymin

    def contains(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        xmin, xmax, ymin, ymax = self.bounds
        return (
            (xy[:, 0] >= xmin) & (xy[:, 0] <= xmax) & (xy[:, 1] >= ymin) & (xy[:, 1] <= ymax)
        )

    def grid(self, nx: int, ny: Optional[int] = None) -> np.ndarray:
        """Cell centres of a regular ``nx`` by ``ny`` lattice, x varying fastest."""
        ny = nx if ny is None else ny
        if nx < 1 or ny < 1:
            raise ValueError("grid dimensions must be positive")
        xmin, xmax, ymin, ymax = self.bounds
        gx = xmin + (np.arange(nx) + 0.5) * (xmax - xmin) / nx
        gy = ymin + (np.arange(ny) + 0.5) * (ymax - ymin) / ny
        X, Y = np.meshgrid(gx, gy)
        return np.column_stack([X.ravel(), Y.ravel()])


UNIT_SQUARE = SpatialDomain()


@dataclass(frozen=True)
class AffineMap:
    """Per-axis affine map from source coordinates onto the unit square."""

    offset: tuple = (0.0, 0.0)
    scale: tuple = (1.0, 1.0)

    @classmethod
    def from_bounds(cls, bounds) -> "AffineMap":
        dom = SpatialDomain(tuple(bounds))
        xmin, _, ymin, _ = dom.bounds
        return cls((xmin, ymin), dom.widths)

    @property
    def is_identity(self) -> bool:
        return self.offset == (0.0, 0.0) and self.scale == (1.0, 1.0)

    @property
    def source_bounds(self) -> tuple:
        (x0, y0), (sx, sy) = self.offset, self.scale
        return (x0, x0 + sx, y0, y0 + sy)

    def to_unit(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        if self.is_identity:
            return xy.copy()
        return (xy - np.asarray(self.offset)) / np.asarray(self.scale)

    def from_unit(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        if self.is_identity:
            return xy.copy()
        return xy * np.asarray(self.scale) + np.asarray(self.offset)


# Spatial covariate terms, evaluated on unit-square coordinates.
_TERMS = {
    "intercept": lambda xy: np.ones(len(xy)),
    "x": lambda xy: xy[:, 0] - 0.5,
    "y": lambda xy: xy[:, 1] - 0.5,
    "xy": lambda xy: (xy[:, 0] - 0.5) * (xy[:, 1] - 0.5),
    "x2": lambda xy: (xy[:, 0] - 0.5) ** 2,
    "y2": lambda xy: (xy[:, 1] - 0.5) ** 2,
}


@dataclass(frozen=True)
class SpatialDesign:
    """Named spatial covariates x(s); the first term is always the intercept."""

    terms: tuple = ("intercept",)

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms or terms[0] != "intercept":
            raise DataError("covariate design must start with 'intercept'")
        unknown = [t for t in terms if t not in _TERMS]
        if unknown:
            raise DataError(f"unknown covariate terms {unknown}; known: {sorted(_TERMS)}")
        if len(set(terms)) != len(terms):
            raise DataError("duplicate covariate terms")
        object.__setattr__(self, "terms", terms)

    @property
    def dim(self) -> int:
        return len(self.terms)

    def matrix(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        return np.column_stack([_TERMS[t](xy) for t in self.terms])


@dataclass(frozen=True)
class Record:
    location: tuple
    combo: int
    mark: float
    covariates_lambda: tuple = (1.0,)
    covariates_mark: tuple = (1.0,)


class Dataset:
    """N point-referenced records on the unit square.

    Locations are stored in unit-square coordinates; ``transform`` maps the
    original coordinates onto them.  ``combo`` is 1-based.
    """

    def __init__(self, xy, combo, mark, K: int, transform: AffineMap = AffineMap(),
                 integer_marks: bool = False):
        xy = np.array(xy, dtype=float).reshape(-1, 2)
        combo = np.array(combo, dtype=np.int64).ravel()
        mark = np.array(mark, dtype=float).ravel()
        K = int(K)
        if not (len(xy) == len(combo) == len(mark)):
            raise DataError("xy, combo and mark must have the same length")
        if K < 1:
            raise DataError("K must be positive")
        if len(combo) and (combo.min() < 1 or combo.max() > K):
            bad = combo[(combo < 1) | (combo > K)][0]
            raise DataError(f"combination index {bad} outside [1, {K}]")
        if not np.all(np.isfinite(xy)):
            raise DataError("non-finite location")
        if not np.all(UNIT_SQUARE.contains(xy)):
            raise DataError("location outside the domain")
        if not np.all(np.isfinite(mark)):
            raise DataError("non-finite mark")
        if integer_marks and np.any(mark != np.round(mark)):
            raise DataError("integer marks required")
        for a in (xy, combo, mark):
            a.setflags(write=False)
        self.xy = xy
        self.combo = combo
        self.mark = mark
        self.K = K
        self.transform = transform
        self.integer_marks = bool(integer_marks)
        self.domain = UNIT_SQUARE

    @property
    def N(self) -> int:
        return len(self.combo)

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.combo - 1, minlength=self.K).astype(np.int64)

    def __len__(self):
        return self.N

    def combo_mask(self, k: int) -> np.ndarray:
        return self.combo == k

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(self.xy[mask], self.combo[mask], self.mark[mask], self.K,
                       self.transform, self.integer_marks)

    def records(self, lambda_design: SpatialDesign = SpatialDesign(),
                mark_design: SpatialDesign = SpatialDesign()) -> Iterator[Record]:
        XL = lambda_design.matrix(self.xy)
        XM = mark_design.matrix(self.xy)
        for i in range(self.N):
            mark = int(self.mark[i]) if self.integer_marks else float(self.mark[i])
            yield Record(tuple(self.xy[i]), int(self.combo[i]), mark,
                         tuple(XL[i]), tuple(XM[i]))

    def original_xy(self) -> np.ndarray:
        return self.transform.from_unit(self.xy)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.K == other.K
            and self.transform == other.transform
            and self.integer_marks == other.integer_marks
            and np.array_equal(self.xy, other.xy)
            and np.array_equal(self.combo, other.combo)
            and np.array_equal(self.mark, other.mark)
        )

    def __repr__(self):
        return f"Dataset(N={self.N}, K={self.K}, counts={self.counts.tolist()})"


class SyntheticReplicate(Dataset):
    """One fully synthetic dataset; ``pool_index`` records the candidate used per row."""

    def __init__(self, xy, combo, mark, K, replicate_id: int, pool_index=None,
                 transform: AffineMap = AffineMap(), integer_marks: bool = False):
        super().__init__(xy, combo, mark, K, transform, integer_marks)
        self.replicate_id = int(replicate_id)
        self.pool_index = None if pool_index is None else np.asarray(pool_index, dtype=np.int64)

    def __repr__(self):
        return f"SyntheticReplicate(id={self.replicate_id}, N={self.N}, K={self.K})"


@dataclass(frozen=True)
class Schema:
    """Column mapping and coordinate handling for CSV ingestion.

    ``bounds`` fixes the source rectangle mapped onto the unit square; when
    ``None`` and ``rescale`` is true the data extent is used.
    """

    x: str = "x"
    y: str = "y"
    combo: str = "combo"
    mark: str = "mark"
    K: Optional[int] = None
    rescale: bool = False
    bounds: Optional[tuple] = None
    integer_marks: bool = False

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "Schema":
        d = dict(d or {})
        if d.get("bounds") is not None:
            d["bounds"] = tuple(float(b) for b in d["bounds"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "x": self.x, "y": self.y, "combo": self.combo, "mark": self.mark,
            "K": self.K, "rescale": self.rescale,
            "bounds": None if self.bounds is None else list(self.bounds),
            "integer_marks": self.integer_marks,
        }


def _parse_float(value: str, column: str, row: int) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise DataError(f"row {row}: non-numeric value {value!r} in column {column!r}") from None
    if not math.isfinite(v):
        raise DataError(f"row {row}: non-finite value in column {column!r}")
    return v


def read_columns(path, columns: Sequence[str]) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
        out = {c: [] for c in columns}
        for row in reader:
            for c in columns:
                out[c].append(row[c])
    return out


def load_dataset(path, schema: Schema = Schema(), bounds=None) -> Dataset:
    """Read and validate a CSV of point-referenced records.

    ``bounds`` overrides ``schema.bounds`` (used to put synthetic replicates
    on the same affine map as the confidential file they came from).
    """
    cols = read_columns(path, [schema.x, schema.y, schema.combo, schema.mark])
    n = len(cols[schema.x])
    xy = np.empty((n, 2))
    combo = np.empty(n, dtype=np.int64)
    mark = np.empty(n)
    for i in range(n):
        row = i + 2
        xy[i, 0] = _parse_float(cols[schema.x][i], schema.x, row)
        xy[i, 1] = _parse_float(cols[schema.y][i], schema.y, row)
        c = _parse_float(cols[schema.combo][i], schema.combo, row)
        if c != int(c):
            raise DataError(f"row {row}: combination index must be an integer")
        combo[i] = int(c)
        mark[i] = _parse_float(cols[schema.mark][i], schema.mark, row)
    K = schema.K if schema.K is not None else (int(combo.max()) if n else 1)
    if n and (combo.min() < 1 or combo.max() > K):
        bad = combo[(combo < 1) | (combo > K)][0]
        raise DataError(f"combination index {bad} outside [1, {K}]")

    bounds = bounds if bounds is not None else schema.bounds
    if bounds is not None:
        transform = AffineMap.from_bounds(bounds)
    elif schema.rescale:
        if n < 2:
            raise DataError("cannot infer bounds from fewer than two records")
        transform = AffineMap.from_bounds(
            (xy[:, 0].min(), xy[:, 0].max(), xy[:, 1].min(), xy[:, 1].max())
        )
    else:
        transform = AffineMap()
    src = SpatialDomain(transform.source_bounds)
    inside = src.contains(xy)
    if not inside.all():
        raise DataError(f"row {int(np.argmin(inside)) + 2}: location outside bounds {src.bounds}")
    unit = np.clip(transform.to_unit(xy), 0.0, 1.0)
    return Dataset(unit, combo, mark, K, transform, schema.integer_marks)


def _fmt(v: float) -> str:
    return repr(float(v))


def save_dataset(ds: Dataset, path, schema: Schema = Schema()) -> None:
    """Write ``ds`` as CSV in its original coordinates."""
    xy = ds.original_xy()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([schema.x, schema.y, schema.combo, schema.mark])
        for i in range(ds.N):
            m = str(int(ds.mark[i])) if ds.integer_marks else _fmt(ds.mark[i])
            w.writerow([_fmt(xy[i, 0]), _fmt(xy[i, 1]), int(ds.combo[i]), m])


def read_locations(path, schema: Schema = Schema(), transform: AffineMap = AffineMap()) -> np.ndarray:
    """Read an x/y CSV (e.g. an enumerated address list) into unit coordinates."""
    cols = read_columns(path, [schema.x, schema.y])
    xy = np.array(
        [[_parse_float(a, schema.x, i + 2), _parse_float(b, schema.y, i + 2)]
         for i, (a, b) in enumerate(zip(cols[schema.x], cols[schema.y]))],
        dtype=float,
    ).reshape(-1, 2)
    unit = transform.to_unit(xy)
    if not np.all(UNIT_SQUARE.contains(unit)):
        raise DataError(f"{path}: location outside the domain")
    return unit


def max_interpoint_distance(xy) -> float:
    """Largest distance between any two points (via the convex hull)."""
    from scipy.spatial import ConvexHull, QhullError
    from scipy.spatial.distance import pdist

    xy = np.unique(np.asarray(xy, dtype=float).reshape(-1, 2), axis=0)
    if len(xy) < 2:
        raise DataError("need at least two distinct points")
    if len(xy) > 3:
        try:
            xy = xy[ConvexHull(xy).vertices]
        except QhullError:  # collinear points: fall back to all pairs
            pass
    return float(pdist(xy).max())
