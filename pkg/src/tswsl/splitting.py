"""Splitting maps: how the mass at a point is shared between the k lines."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ._rng import SPLITTING, SeedLike, stream

SIMPLEX_TOL = 1e-12


class SplittingError(ValueError):
    pass


class SplittingMap:
    """Base class. Subclasses implement :meth:`evaluate_many`.

    ``is_constant`` marks maps that do not depend on the point; only those
    are supported when differentiating with respect to support points.
    """

    k: int
    is_constant: bool = True

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return self.evaluate_many(x)[0]

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """``(n, d)`` points to an ``(n, k)`` array of simplex vectors."""
        raise NotImplementedError

    def _check_points(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim != 2:
            raise SplittingError("points must be an (n, d) array")
        if not np.all(np.isfinite(points)):
            raise SplittingError("cannot split mass at a non-finite point")
        return points


class _ConstantSplitting(SplittingMap):
    vector: np.ndarray

    def evaluate_many(self, points) -> np.ndarray:
        points = self._check_points(points)
        return np.broadcast_to(self.vector, (points.shape[0], self.k))

    def __repr__(self) -> str:
        return f"{type(self).__name__}({np.array2string(self.vector, precision=4)})"


class Uniform(_ConstantSplitting):
    def __init__(self, k: int):
        if k < 1:
            raise SplittingError("k must be >= 1")
        self.k = k
        self.vector = np.full(k, 1.0 / k)
        self.vector.setflags(write=False)


class FixedVector(_ConstantSplitting):
    """A constant point of the simplex; its entries may be tuned by an outer loop."""

    def __init__(self, v: Sequence[float]):
        v = np.array(v, dtype=float).reshape(-1)
        if v.size < 1 or not np.all(np.isfinite(v)) or np.any(v < 0):
            raise SplittingError("splitting vector must be finite and non-negative")
        total = v.sum()
        if total <= 0:
            raise SplittingError("splitting vector sums to zero")
        self.k = v.size
        self.vector = v / total
        self.vector.setflags(write=False)


class RandomVector(_ConstantSplitting):
    """One Dirichlet(1, ..., 1) draw, fixed for the lifetime of the object."""

    def __init__(self, k: int, seed: SeedLike = 0):
        if k < 1:
            raise SplittingError("k must be >= 1")
        self.k = k
        self.seed = seed
        self.vector = stream(seed, SPLITTING).dirichlet(np.ones(k)) if k > 1 else np.ones(1)
        self.vector.setflags(write=False)


class Pointwise(SplittingMap):
    """Point-dependent splitting ``fn: (n, d) -> (n, k)``; rows are renormalised."""

    is_constant = False

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], k: int):
        self.fn = fn
        self.k = k

    def evaluate_many(self, points) -> np.ndarray:
        points = self._check_points(points)
        if self.k == 1:
            return np.ones((points.shape[0], 1))
        out = np.asarray(self.fn(points), dtype=float)
        if out.shape != (points.shape[0], self.k) or np.any(out < 0) or not np.all(np.isfinite(out)):
            raise SplittingError("pointwise splitting function must return non-negative (n, k) values")
        return out / out.sum(axis=1, keepdims=True)


def parse_splitting(spec: str, k: int, seed: SeedLike = 0) -> SplittingMap:
    """Parse ``uniform``, ``fixed:v1,v2,...`` or ``random``."""
    spec = spec.strip()
    if spec == "uniform":
        return Uniform(k)
    if spec == "random":
        return RandomVector(k, seed)
    if spec.startswith("fixed:"):
        try:
            values = [float(v) for v in spec[len("fixed:"):].split(",")]
        except ValueError as exc:
            raise SplittingError(f"bad splitting vector in {spec!r}") from exc
        alpha = FixedVector(values)
        if alpha.k != k:
            raise SplittingError(f"splitting vector has {alpha.k} entries but there are {k} lines")
        return alpha
    raise SplittingError(f"unknown splitting map {spec!r}; use uniform, random or fixed:v1,...")
