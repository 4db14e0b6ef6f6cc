"""Discrete probability measures on R^d, file I/O and synthetic datasets.

Dataset constants (the reference values are not pinned down by the source
experiments, so they are fixed here and exposed as keyword arguments):

* Swiss roll: ``t = 1.5*pi*(1 + 2*U(0, 1))``, point ``(t cos t, t sin t)``
  (the height coordinate of the 3-D roll is dropped), optional isotropic
  Gaussian noise of std ``noise`` added before the drop, then everything is
  multiplied by ``scale = 1/7.5``.
* 25 Gaussians: centres ``grid_scale * {-2,-1,0,1,2}^2``, sample ``i`` is
  assigned to centre ``i mod 25`` (round robin), Gaussian noise of std
  ``std`` (default 0.05), rows shuffled, whole cloud multiplied by ``scale``
  (default 1). The benchmark target uses the common toy-GAN constants in
  ``GAUSSIANS_25_BENCH``: grid spacing 2, std 0.05, scale 1/2.828.
* High-dimensional Gaussian: mean ``ones(d) * U(0, 2)`` elementwise,
  covariance ``scale * I`` (default ``scale = 1``).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._rng import SeedLike, stream


class MeasureError(ValueError):
    """Invalid measure data (shape, sign or finiteness)."""


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud ``sum_i w_i delta(x - points_i)``.

    Build instances through :func:`validate_and_normalize` (or
    :meth:`from_points`); the arrays are made read-only.
    """

    points: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_points(cls, points, weights=None) -> "DiscreteMeasure":
        return validate_and_normalize(points, weights)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def with_points(self, points: np.ndarray) -> "DiscreteMeasure":
        """Same weights, new support (used by particle flows)."""
        return validate_and_normalize(points, self.weights)

    def allclose(self, other: "DiscreteMeasure", rtol: float = 1e-15, atol: float = 0.0) -> bool:
        return (
            self.points.shape == other.points.shape
            and np.allclose(self.points, other.points, rtol=rtol, atol=atol)
            and np.allclose(self.weights, other.weights, rtol=rtol, atol=atol)
        )

    def __repr__(self) -> str:
        return f"DiscreteMeasure(n={self.n}, dim={self.dim})"


def validate_and_normalize(points, weights=None) -> DiscreteMeasure:
    """Check a point cloud and weights and return a normalised measure.

    ``points`` may be an ``(n, d)`` array or a 1-D array (read as ``d = 1``).
    Missing weights become uniform; otherwise they are divided by their sum.
    """
    pts = np.array(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise MeasureError(f"points must be a 2-D array, got shape {pts.shape}")
    n, d = pts.shape
    if n == 0 or d == 0:
        raise MeasureError("a measure needs at least one point of dimension >= 1")
    if not np.all(np.isfinite(pts)):
        raise MeasureError("points contain NaN or Inf")

    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.array(weights, dtype=float).reshape(-1)
        if w.shape[0] != n:
            raise MeasureError(f"got {w.shape[0]} weights for {n} points")
        if not np.all(np.isfinite(w)):
            raise MeasureError("weights contain NaN or Inf")
        if np.any(w < 0):
            raise MeasureError("weights must be non-negative")
        total = w.sum()
        if total <= 0:
            raise MeasureError("weights sum to zero")
        w = w / total

    pts.setflags(write=False)
    w.setflags(write=False)
    return DiscreteMeasure(pts, w)


# ---------------------------------------------------------------------------
# synthetic datasets
# ---------------------------------------------------------------------------

SWISS_ROLL_SCALE = 1.0 / 7.5
GAUSSIANS_25_BENCH = dict(std=0.05, grid_scale=2.0, scale=1.0 / 2.828)


def gen_swiss_roll(n: int, noise: float = 0.0, seed: SeedLike = 0, scale: float = SWISS_ROLL_SCALE) -> DiscreteMeasure:
    """2-D swiss roll: first and third coordinate of the classic 3-D roll."""
    if n < 1:
        raise MeasureError("n must be >= 1")
    if noise < 0:
        raise MeasureError("noise must be >= 0")
    rng = stream(seed)
    t = 1.5 * np.pi * (1.0 + 2.0 * rng.random(n))
    height = 21.0 * rng.random(n)
    roll = np.column_stack([t * np.cos(t), height, t * np.sin(t)])
    roll += noise * rng.standard_normal(roll.shape)
    return validate_and_normalize(scale * roll[:, [0, 2]])


def gaussians_25_centers(grid_scale: float = 1.0) -> np.ndarray:
    ticks = np.arange(-2, 3, dtype=float)
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    return grid_scale * np.column_stack([gx.ravel(), gy.ravel()])


def gen_gaussians_25(
    n: int,
    std: float = 0.05,
    seed: SeedLike = 0,
    grid_scale: float = 1.0,
    scale: float = 1.0,
) -> DiscreteMeasure:
    """Mixture of 25 Gaussians on a 5x5 grid, clusters filled round robin."""
    if n < 1:
        raise MeasureError("n must be >= 1")
    if std < 0:
        raise MeasureError("std must be >= 0")
    rng = stream(seed)
    centers = gaussians_25_centers(grid_scale)
    pts = centers[np.arange(n) % 25] + std * rng.standard_normal((n, 2))
    pts = pts[rng.permutation(n)]
    return validate_and_normalize(scale * pts)


def gen_gaussian_hd(d: int, n: int, scale: float = 1.0, seed: SeedLike = 0) -> DiscreteMeasure:
    """Gaussian in R^d with a randomly rescaled all-ones mean and ``scale * I`` covariance."""
    if d < 1 or n < 1:
        raise MeasureError("d and n must be >= 1")
    if scale < 0:
        raise MeasureError("covariance scale must be >= 0")
    rng = stream(seed)
    mean = np.ones(d) * rng.uniform(0.0, 2.0, size=d)
    pts = mean + np.sqrt(scale) * rng.standard_normal((n, d))
    return validate_and_normalize(pts)


def gen_standard_normal(n: int, d: int, seed: SeedLike = 0) -> DiscreteMeasure:
    """``n`` i.i.d. N(0, I_d) samples with uniform weights (flow initialisation)."""
    return validate_and_normalize(stream(seed).standard_normal((n, d)))


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

FORMATS = ("csv", "json")


def _infer_format(path, fmt: Optional[str]) -> str:
    if fmt is None:
        ext = os.path.splitext(str(path))[1].lower().lstrip(".")
        fmt = ext if ext in FORMATS else "csv"
    if fmt not in FORMATS:
        raise MeasureError(f"unknown measure format {fmt!r}; expected one of {FORMATS}")
    return fmt


def read_measure(path, fmt: Optional[str] = None) -> DiscreteMeasure:
    """Read a measure from CSV (header row, optional final ``weight`` column) or JSON."""
    fmt = _infer_format(path, fmt)
    if fmt == "json":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise MeasureError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict) or "points" not in data:
            raise MeasureError(f"{path}: expected an object with a 'points' array")
        points = data["points"]
        if not points or any(len(row) != len(points[0]) for row in points):
            raise MeasureError(f"{path}: points must be a non-empty rectangular array")
        return validate_and_normalize(points, data.get("weights"))

    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if len(rows) < 2:
        raise MeasureError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    has_weight = header[-1].lower() == "weight"
    width = len(header)
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise MeasureError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
        try:
            values.append([float(v) for v in row])
        except ValueError as exc:
            raise MeasureError(f"{path}:{lineno}: {exc}") from exc
    arr = np.array(values, dtype=float)
    if has_weight:
        if width < 2:
            raise MeasureError(f"{path}: a weight column needs at least one coordinate column")
        return validate_and_normalize(arr[:, :-1], arr[:, -1])
    return validate_and_normalize(arr)


def write_measure(measure: DiscreteMeasure, path, fmt: Optional[str] = None) -> None:
    fmt = _infer_format(path, fmt)
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump({"points": measure.points.tolist(), "weights": measure.weights.tolist()}, fh)
            fh.write("\n")
        return
    header = [f"x{j}" for j in range(measure.dim)] + ["weight"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for x, w in zip(measure.points, measure.weights):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(w))])
