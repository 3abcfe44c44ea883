"""Discrete measures, snapshot ingestion and ground costs."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import (
    DegenerateEpsilonError,
    DimensionMismatchError,
    EmptyInputError,
    InputError,
    ParameterError,
    ParseError,
    ZeroMassError,
)

WEIGHT_COLUMNS = ("w", "weight")
_XYZ = ("x", "y", "z")
_UNIT_MASS_SLACK = 1e-13


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud ``sum_i weights[i] * delta(points[i])``.

    ``index_map`` records, for each atom, its position in the measure it was
    derived from (see :func:`mask_zero_atoms`).
    """

    points: np.ndarray
    weights: np.ndarray
    index_map: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if pts.ndim != 2 or pts.shape[1] < 1:
            raise DimensionMismatchError(f"points must be an (m, d) array, got shape {pts.shape}")
        if pts.shape[0] != w.shape[0]:
            raise DimensionMismatchError(
                f"{pts.shape[0]} points but {w.shape[0]} weights")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InputError("weights must be finite and nonnegative")
        if not np.all(np.isfinite(pts)):
            raise InputError("points must be finite")
        idx = np.arange(w.shape[0]) if self.index_map is None else np.asarray(self.index_map, dtype=np.intp)
        if idx.shape != w.shape:
            raise DimensionMismatchError("index_map length differs from number of atoms")
        pts.setflags(write=False)
        w.setflags(write=False)
        idx.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "index_map", idx)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def __len__(self):
        return self.size

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        pts = np.asarray(points, dtype=np.float64)
        m = pts.shape[0]
        if m == 0:
            raise EmptyInputError("cannot build a measure without atoms")
        return cls(pts, np.full(m, 1.0 / m))

    def with_weights(self, weights) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, weights, self.index_map)


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """Ground cost ``entries[i, j] = |x_i - y_j|^exponent``."""

    entries: np.ndarray
    exponent: float = 2.0

    def __post_init__(self):
        c = np.asarray(self.entries, dtype=np.float64)
        if c.ndim != 2:
            raise DimensionMismatchError("cost matrix must be two-dimensional")
        c.setflags(write=False)
        object.__setattr__(self, "entries", c)

    @property
    def shape(self):
        return self.entries.shape

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def as_cost_array(c) -> np.ndarray:
    if isinstance(c, CostMatrix):
        return c.entries
    return np.asarray(c, dtype=np.float64)


def _parse_header(header, line=1):
    names = [h.strip() for h in header]
    has_weight = bool(names) and names[-1].lower() in WEIGHT_COLUMNS
    coords = names[:-1] if has_weight else names
    if not coords:
        raise ParseError("header has no coordinate columns", line)
    indexed = [f"x{k}" for k in range(len(coords))]
    if coords != indexed and coords != list(_XYZ[: len(coords)]):
        raise ParseError(
            f"unrecognised header {names!r}; expected x0..x{{d-1}} or x,y[,z] "
            "with an optional trailing w/weight column", line)
    return len(coords), has_weight


def load_snapshot(path, format: str = "csv") -> DiscreteMeasure:
    """Read a point-cloud snapshot.

    Rows without a weight column get uniform weights ``1/m``; an explicit
    weight column is returned as is (unnormalised).
    """
    if format != "csv":
        raise ParameterError(f"unsupported snapshot format {format!r}")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [(k, r) for k, r in enumerate(csv.reader(fh), start=1)
                if r and any(s.strip() for s in r)]
    if not rows:
        raise EmptyInputError(f"{path}: file is empty")
    d, has_weight = _parse_header(rows[0][1], rows[0][0])
    ncol = d + int(has_weight)
    data = []
    for line, row in rows[1:]:
        if len(row) != ncol:
            raise DimensionMismatchError(
                f"{path}: line {line}: expected {ncol} fields, found {len(row)}")
        try:
            vals = [float(s) for s in row]
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}", line) from None
        if has_weight and not vals[-1] >= 0:
            raise ParseError(f"{path}: negative or NaN weight {vals[-1]}", line)
        data.append(vals)
    if not data:
        raise EmptyInputError(f"{path}: no data rows")
    arr = np.array(data, dtype=np.float64)
    if has_weight:
        return DiscreteMeasure(arr[:, :d], arr[:, d])
    return DiscreteMeasure(arr, np.full(arr.shape[0], 1.0 / arr.shape[0]))


def save_snapshot(path, measure: DiscreteMeasure, weights: bool = True) -> None:
    path = Path(path)
    header = [f"x{k}" for k in range(measure.dim)] + (["w"] if weights else [])
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for p, w in zip(measure.points, measure.weights):
            row = [repr(float(v)) for v in p]
            if weights:
                row.append(repr(float(w)))
            wr.writerow(row)


def normalize(m: DiscreteMeasure) -> DiscreteMeasure:
    total = m.weights.sum()
    if not total > 0:
        raise ZeroMassError("cannot normalize a measure of zero mass")
    # already unit mass up to summation rounding: leave untouched so that
    # normalize is idempotent bit for bit
    if abs(total - 1.0) <= _UNIT_MASS_SLACK:
        return m
    return m.with_weights(m.weights / total)


def mask_zero_atoms(m: DiscreteMeasure) -> DiscreteMeasure:
    keep = np.flatnonzero(m.weights > 0)
    if keep.size == 0:
        raise ZeroMassError("all weights are zero")
    return DiscreteMeasure(m.points[keep], m.weights[keep], m.index_map[keep])


def cost_matrix(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 2.0) -> CostMatrix:
    """Pairwise Euclidean distances raised to the power ``p``."""
    if mu.dim != nu.dim:
        raise DimensionMismatchError(f"measures live in R^{mu.dim} and R^{nu.dim}")
    if not p >= 1:
        raise ParameterError(f"cost exponent must be >= 1, got {p}")
    if p == 2:
        c = cdist(mu.points, nu.points, "sqeuclidean")
    else:
        c = cdist(mu.points, nu.points) ** p
    return CostMatrix(c, float(p))


def mean_pairwise_distance(m: DiscreteMeasure) -> float:
    if m.size < 2:
        raise ParameterError("mean pairwise distance needs at least two atoms")
    return float(pdist(m.points).mean())


def epsilon_heuristic(m: DiscreteMeasure) -> float:
    """Regularisation giving the Gibbs kernel a std of a third of the mean distance.

    ``exp(-|x-y|^2 / eps)`` is a Gaussian with standard deviation
    ``sqrt(eps / 2)``, so ``eps = 2 * (dbar / 3)**2``.
    """
    dbar = mean_pairwise_distance(m)
    eps = 2.0 * (dbar / 3.0) ** 2
    if not eps > 0:
        raise DegenerateEpsilonError("all atoms coincide; heuristic epsilon is zero")
    return eps
