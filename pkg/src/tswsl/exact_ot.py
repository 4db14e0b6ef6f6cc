"""Exact optimal transport: 1-D closed form and a transportation network simplex."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .measures import DiscreteMeasure
from .radon import ProjectedMeasure
from .tree_system import GroundPoint, TreeSystem, tree_distance

WEIGHT_TOL = 1e-9
MAX_CELLS = 10**7


class OTError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CostMatrix:
    values: np.ndarray
    metric: str = "euclidean-1"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or not np.all(np.isfinite(v)) or np.any(v < 0):
            raise OTError("cost matrix must be a finite non-negative 2-D array")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def scaled(self, c: float) -> "CostMatrix":
        return CostMatrix(c * self.values, self.metric)

    @property
    def T(self) -> "CostMatrix":
        return CostMatrix(self.values.T, self.metric)


def _check_weights(w, name: str) -> np.ndarray:
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise OTError(f"{name} must be a non-empty non-negative vector")
    if abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise OTError(f"{name} sums to {w.sum()!r}, expected 1")
    return w


# ---------------------------------------------------------------------------
# one dimension
# ---------------------------------------------------------------------------


class Coupling1D(NamedTuple):
    """Quantile coupling of sorted atoms, one row per batch entry.

    Segment ``r`` moves mass ``mass[b, r]`` from atom ``src[b, r]`` to atom
    ``dst[b, r]`` (indices into the unsorted inputs).
    """

    src: np.ndarray
    dst: np.ndarray
    mass: np.ndarray


def quantile_coupling(x: np.ndarray, wx: np.ndarray, y: np.ndarray, wy: np.ndarray) -> Coupling1D:
    """Monotone coupling of rows of ``x`` (B, n) and ``y`` (B, m).

    The merged cumulative-weight breakpoints split [0, 1] into segments on
    which both quantile functions are constant.
    """
    B, n = x.shape
    m = y.shape[1]
    ox = np.argsort(x, axis=1, kind="stable")
    oy = np.argsort(y, axis=1, kind="stable")
    cx = np.cumsum(np.broadcast_to(wx, (B, n))[np.arange(B)[:, None], ox], axis=1)
    cy = np.cumsum(np.broadcast_to(wy, (B, m))[np.arange(B)[:, None], oy], axis=1)
    cx[:, -1] = 1.0
    cy[:, -1] = 1.0

    merged = np.concatenate([cx, cy], axis=1)
    order = np.argsort(merged, axis=1, kind="stable")
    qs = np.take_along_axis(merged, order, axis=1)
    from_x = order < n
    # quantile index on segment r = number of breakpoints of that measure before r
    ix = np.minimum(np.cumsum(from_x, axis=1) - from_x, n - 1)
    iy = np.minimum(np.cumsum(~from_x, axis=1) - ~from_x, m - 1)
    mass = np.diff(qs, axis=1, prepend=0.0)
    rows = np.arange(B)[:, None]
    return Coupling1D(ox[rows, ix], oy[rows, iy], mass)


def _wpp_1d(x, wx, y, wy, p: float) -> np.ndarray:
    cp = quantile_coupling(x, wx, y, wy)
    rows = np.arange(x.shape[0])[:, None]
    gap = np.abs(x[rows, cp.src] - y[rows, cp.dst])
    return np.sum(cp.mass * gap**p, axis=1)


def wasserstein_1d(xs, ws, ys, vs, p: float = 1.0) -> float:
    """Exact ``W_p`` between two weighted point sets on the real line."""
    if p < 1:
        raise OTError("p must be >= 1")
    xs = np.asarray(xs, dtype=float).reshape(1, -1)
    ys = np.asarray(ys, dtype=float).reshape(1, -1)
    ws = _check_weights(ws if ws is not None else np.full(xs.shape[1], 1.0 / xs.shape[1]), "ws")
    vs = _check_weights(vs if vs is not None else np.full(ys.shape[1], 1.0 / ys.shape[1]), "vs")
    if ws.size != xs.shape[1] or vs.size != ys.shape[1]:
        raise OTError("values and weights differ in length")
    return float(_wpp_1d(xs, ws, ys, vs, p)[0] ** (1.0 / p))


# ---------------------------------------------------------------------------
# network simplex for the transportation problem
# ---------------------------------------------------------------------------


class OTResult(NamedTuple):
    cost: float
    plan: np.ndarray
    iterations: int


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    n, m = a.size, b.size
    ra, rb = a.copy(), b.copy()
    cells_i, cells_j, flows = [], [], []
    i = j = 0
    while True:
        f = min(ra[i], rb[j])
        cells_i.append(i)
        cells_j.append(j)
        flows.append(f)
        ra[i] -= f
        rb[j] -= f
        if i == n - 1 and j == m - 1:
            break
        if i == n - 1:
            j += 1
        elif j == m - 1 or ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    return np.array(cells_i), np.array(cells_j), np.array(flows)


def network_simplex(a, b, C: np.ndarray, max_iter: Optional[int] = None) -> OTResult:
    """Solve ``min <P, C>`` over couplings of ``a`` and ``b``.

    Primal transportation simplex: the basis is a spanning tree on the
    ``n + m`` row/column nodes, potentials come from one tree traversal per
    pivot, and the entering cell is the most negative reduced cost (Dantzig).
    Optimality is declared when every reduced cost is above
    ``-1e-12 * max(1, max C)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    n, m = a.size, b.size
    b = b * (a.sum() / b.sum())
    bi, bj, flow = _northwest_corner(a, b)
    tol = 1e-12 * max(1.0, float(np.max(C, initial=0.0)))
    nodes = n + m
    if max_iter is None:
        max_iter = 50 * nodes * nodes + 1000

    it = 0
    for it in range(max_iter):
        # adjacency of the basis tree: row node i, column node n + j
        adj: list[list[int]] = [[] for _ in range(nodes)]
        for e in range(bi.size):
            adj[bi[e]].append(e)
            adj[n + bj[e]].append(e)
        pot = np.zeros(nodes)
        up_edge = np.full(nodes, -1)
        up_node = np.full(nodes, -1)
        depth = np.zeros(nodes, dtype=np.intp)
        seen = np.zeros(nodes, dtype=bool)
        seen[0] = True
        queue = [0]
        for v in queue:
            for e in adj[v]:
                w = n + bj[e] if v < n else bi[e]
                if seen[w]:
                    continue
                seen[w] = True
                # u_i + v_j = C_ij on basic cells
                pot[w] = C[bi[e], bj[e]] - pot[v]
                up_edge[w], up_node[w] = e, v
                depth[w] = depth[v] + 1
                queue.append(w)

        reduced = C - pot[:n, None] - pot[None, n:]
        flat = int(np.argmin(reduced))
        if reduced.flat[flat] >= -tol:
            break
        ei, ej = divmod(flat, m)

        # cycle: entering cell, then the tree path from column ej back to row ei
        left, right = ei, n + ej
        path_l, path_r = [], []
        while left != right:
            if depth[left] >= depth[right]:
                path_l.append(up_edge[left])
                left = up_node[left]
            else:
                path_r.append(up_edge[right])
                right = up_node[right]
        cycle = path_r + path_l[::-1]
        minus = cycle[0::2]
        plus = cycle[1::2]
        k_out = int(np.argmin(flow[minus]))
        theta = flow[minus[k_out]]
        flow[minus] -= theta
        flow[plus] += theta
        leave = minus[k_out]
        bi[leave], bj[leave], flow[leave] = ei, ej, theta
    else:
        raise RuntimeError(f"network simplex did not converge in {max_iter} pivots")

    plan = np.zeros((n, m))
    np.add.at(plan, (bi, bj), flow)
    return OTResult(float(np.sum(plan * C)), plan, it)


def exact_ot(mu_w, nu_w, cost: CostMatrix) -> float:
    """Optimal transport cost ``min_P <P, C>`` between two weight vectors."""
    a = _check_weights(mu_w, "mu_w")
    b = _check_weights(nu_w, "nu_w")
    C = cost.values if isinstance(cost, CostMatrix) else CostMatrix(cost).values
    if C.shape != (a.size, b.size):
        raise OTError(f"cost matrix has shape {C.shape}, expected {(a.size, b.size)}")
    if a.size * b.size > MAX_CELLS:
        raise OTError(f"problem has {a.size * b.size} cells, above the {MAX_CELLS} limit")
    # zero-mass rows/columns never carry flow; drop them to shrink the basis
    ra, cb = np.flatnonzero(a > 0), np.flatnonzero(b > 0)
    return network_simplex(a[ra], b[cb], C[np.ix_(ra, cb)]).cost


def euclidean_cost(x: np.ndarray, y: np.ndarray, p: float = 2.0) -> CostMatrix:
    """``|x_i - y_j|^p``; the squared case is computed without a square root."""
    diff = x[:, None, :] - y[None, :, :]
    sq = np.einsum("ijd,ijd->ij", diff, diff)
    values = sq if p == 2 else np.sqrt(sq) ** p
    return CostMatrix(values, f"euclidean-{p:g}")


def wasserstein(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 2.0) -> float:
    """Exact ``W_p`` between two measures in R^d with Euclidean ground cost."""
    if mu.dim != nu.dim:
        raise OTError("measures live in different dimensions")
    cost = exact_ot(mu.weights, nu.weights, euclidean_cost(mu.points, nu.points, p))
    return max(cost, 0.0) ** (1.0 / p)


# ---------------------------------------------------------------------------
# tree ground cost
# ---------------------------------------------------------------------------


def flat_atoms(pm: ProjectedMeasure) -> tuple[list[GroundPoint], np.ndarray]:
    """Atoms of a projected measure line by line, as ground points plus masses."""
    points = [GroundPoint(l, float(t)) for l in range(pm.k) for t in pm.coords[l]]
    return points, np.concatenate(pm.masses)


def tree_cost_matrix(ts: TreeSystem, pm_mu: ProjectedMeasure, pm_nu: ProjectedMeasure) -> CostMatrix:
    """Tree-metric distances between every atom of ``pm_mu`` and of ``pm_nu``."""
    pa, _ = flat_atoms(pm_mu)
    pb, _ = flat_atoms(pm_nu)
    values = np.array([[tree_distance(ts, a, b) for b in pb] for a in pa]).reshape(len(pa), len(pb))
    return CostMatrix(values, "tree")
