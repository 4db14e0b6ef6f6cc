"""Push a discrete measure onto a tree system (Radon transform on systems of lines)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import DiscreteMeasure
from .splitting import SplittingMap
from .tree_system import TreeSystem

MIN_MASS = 1e-300


@dataclass(frozen=True, eq=False)
class ProjectedMeasure:
    """Per-line atoms sorted by ``(coord, origin)``.

    ``origins[l][j]`` is the index of the input atom that produced atom ``j``
    on line ``l``.
    """

    coords: tuple[np.ndarray, ...]
    masses: tuple[np.ndarray, ...]
    origins: tuple[np.ndarray, ...]

    @property
    def k(self) -> int:
        return len(self.coords)

    def total_mass(self) -> float:
        return float(sum(m.sum() for m in self.masses))

    def line_masses(self) -> np.ndarray:
        return np.array([m.sum() for m in self.masses])


def line_coordinates(points: np.ndarray, ts: TreeSystem) -> np.ndarray:
    """``(k, n)`` array of ``<a_i - x_l, theta_l>``."""
    offsets = np.einsum("kd,kd->k", ts.sources, ts.directions)
    return ts.directions @ points.T - offsets[:, None]


def project(measure: DiscreteMeasure, ts: TreeSystem, alpha: SplittingMap) -> ProjectedMeasure:
    """Project every atom orthogonally onto every line, with mass ``alpha(a_i)_l * u_i``."""
    if measure.dim != ts.dim:
        raise ValueError(f"measure lives in R^{measure.dim} but the tree system in R^{ts.dim}")
    if alpha.k != ts.k:
        raise ValueError(f"splitting map has k={alpha.k} but the tree system has {ts.k} lines")
    coords = line_coordinates(measure.points, ts)
    masses = (alpha.evaluate_many(measure.points) * measure.weights[:, None]).T
    out_c, out_m, out_o = [], [], []
    for line in range(ts.k):
        keep = np.flatnonzero(masses[line] >= MIN_MASS)
        # lexsort: last key is primary -> sort by coord, ties by origin index
        order = keep[np.lexsort((keep, coords[line, keep]))]
        out_c.append(coords[line, order])
        out_m.append(masses[line, order])
        out_o.append(order)
    return ProjectedMeasure(tuple(out_c), tuple(out_m), tuple(out_o))
