"""Closed-form tree-Wasserstein distance between measures projected on a tree system.

Two implementations live here:

* :func:`build_node_tree` / :func:`tw_closed_form` / :func:`tw_subgradient`
  materialise the finite rooted tree whose nodes are the projected atoms, the
  line sources and the attachment points, and evaluate
  ``sum_e w_e |mu(subtree_e) - nu(subtree_e)|`` by one bottom-up pass.
* :func:`tw_batch` evaluates the same quantity for a whole batch of tree
  systems sharing one parent structure using sorting and prefix sums per line;
  it is what the Monte-Carlo estimators call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .radon import ProjectedMeasure
from .tree_system import TreeSystem

KIND_ROOT, KIND_SOURCE, KIND_ATOM = 0, 1, 2
KIND_NAMES = {KIND_ROOT: "root", KIND_SOURCE: "source", KIND_ATOM: "atom"}
MU, NU, NONE = 0, 1, -1
TIE_TOL = 1e-13


@dataclass(frozen=True, eq=False)
class NodeTree:
    """Rooted tree induced by two projected measures on a tree system.

    Node arrays (length ``N``): ``line``/``coord`` give the line owning the
    node and its parameter there (attachment points are owned by the parent
    line), ``mass_mu``/``mass_nu`` the atom masses, ``kind`` one of the
    ``KIND_*`` codes, ``owner`` which measure an atom belongs to and
    ``origin`` its index in the input measure.

    Edge arrays are indexed by the child node: ``parent[v]`` is the neighbour
    of ``v`` towards the root, ``weight[v]`` the edge length, ``edge_line[v]``
    the line carrying the edge and ``child_t``/``parent_t`` the endpoint
    coordinates on that line. The root has ``parent = -1``.
    """

    line: np.ndarray
    coord: np.ndarray
    mass_mu: np.ndarray
    mass_nu: np.ndarray
    kind: np.ndarray
    owner: np.ndarray
    origin: np.ndarray
    parent: np.ndarray
    weight: np.ndarray
    edge_line: np.ndarray
    child_t: np.ndarray
    parent_t: np.ndarray
    root: int

    @property
    def num_nodes(self) -> int:
        return self.line.shape[0]

    @property
    def edges(self) -> np.ndarray:
        """``(N - 1, 3)`` rows ``(child, parent, weight)``."""
        child = np.flatnonzero(self.parent >= 0)
        return np.column_stack([child, self.parent[child], self.weight[child]])

    def preorder(self) -> np.ndarray:
        """Nodes ordered so that every parent precedes its children."""
        kids = [[] for _ in range(self.num_nodes)]
        for v, p in enumerate(self.parent):
            if p >= 0:
                kids[p].append(v)
        order = [self.root]
        for v in order:
            order.extend(kids[v])
        if len(order) != self.num_nodes:
            raise ValueError("node tree is not connected")
        return np.array(order, dtype=np.intp)

    def subtree_masses(self) -> tuple[np.ndarray, np.ndarray]:
        s_mu = self.mass_mu.astype(float).copy()
        s_nu = self.mass_nu.astype(float).copy()
        for v in self.preorder()[::-1]:
            p = self.parent[v]
            if p >= 0:
                s_mu[p] += s_mu[v]
                s_nu[p] += s_nu[v]
        return s_mu, s_nu

    def validate(self, tol: float = 1e-12) -> None:
        if self.parent[self.root] != -1 or np.sum(self.parent < 0) != 1:
            raise ValueError("exactly one root expected")
        self.preorder()
        if np.any(self.weight < 0):
            raise ValueError("negative edge weight")
        if not np.allclose(self.weight, np.abs(self.child_t - self.parent_t), rtol=0, atol=tol):
            raise ValueError("edge weights must equal coordinate differences")
        if abs(self.mass_mu.sum() - 1) > tol or abs(self.mass_nu.sum() - 1) > tol:
            raise ValueError("both measures must carry unit mass")

    def rerooted(self, new_root: int) -> "NodeTree":
        """Same tree, edges re-oriented towards ``new_root``."""
        parent = self.parent.copy()
        weight = self.weight.copy()
        eline = self.edge_line.copy()
        ct, pt = self.child_t.copy(), self.parent_t.copy()
        path = [new_root]
        while parent[path[-1]] >= 0:
            path.append(int(parent[path[-1]]))
        for below, above in zip(path[:-1], path[1:]):
            parent[above] = below
            weight[above] = self.weight[below]
            eline[above] = self.edge_line[below]
            ct[above], pt[above] = self.parent_t[below], self.child_t[below]
        parent[new_root] = -1
        weight[new_root] = 0.0
        eline[new_root] = -1
        ct[new_root] = pt[new_root] = 0.0
        return NodeTree(
            self.line, self.coord, self.mass_mu, self.mass_nu, self.kind, self.owner, self.origin,
            parent, weight, eline, ct, pt, int(new_root),
        )


def build_node_tree(ts: TreeSystem, pm_mu: ProjectedMeasure, pm_nu: ProjectedMeasure) -> NodeTree:
    """Assemble the node tree of two measures projected on ``ts``.

    Each line contributes its source, the attachment points of its children
    and the atoms of both measures; consecutive nodes along a line are joined,
    and each edge points towards the line's source (and from there, through
    the attachment point, towards the root line).
    """
    if pm_mu.k != ts.k or pm_nu.k != ts.k:
        raise ValueError("projected measures do not match the tree system")
    line, coord, m_mu, m_nu, kind, owner, origin = [], [], [], [], [], [], []

    def add(l, t, a, b, kd, ow, og):
        line.append(l)
        coord.append(t)
        m_mu.append(a)
        m_nu.append(b)
        kind.append(kd)
        owner.append(ow)
        origin.append(og)
        return len(line) - 1

    source_node = np.empty(ts.k, dtype=np.intp)
    source_node[0] = add(0, 0.0, 0.0, 0.0, KIND_ROOT, NONE, -1)
    for l in ts.order[1:]:
        source_node[l] = add(int(ts.parent[l]), float(ts.attach_coord[l]), 0.0, 0.0, KIND_SOURCE, NONE, -1)

    # members[l]: (coord on l, tie rank, node id); sources before attachments before atoms
    members: list[list[tuple[float, int, int]]] = [[(0.0, 0, int(source_node[l]))] for l in range(ts.k)]
    for l in range(1, ts.k):
        members[int(ts.parent[l])].append((float(ts.attach_coord[l]), 1, int(source_node[l])))
    for l in range(ts.k):
        atoms = [(float(t), float(w), int(o), tag)
                 for tag, pm in ((MU, pm_mu), (NU, pm_nu))
                 for t, w, o in zip(pm.coords[l], pm.masses[l], pm.origins[l])]
        # node ids follow a key that ignores which measure is called mu, so
        # swapping the measures relabels nothing and the value is bitwise symmetric
        for t, w, o, tag in sorted(atoms):
            a, b = (w, 0.0) if tag == MU else (0.0, w)
            members[l].append((t, 2, add(l, t, a, b, KIND_ATOM, tag, o)))

    n_nodes = len(line)
    parent = np.full(n_nodes, -1, dtype=np.intp)
    weight = np.zeros(n_nodes)
    eline = np.full(n_nodes, -1, dtype=np.intp)
    child_t = np.zeros(n_nodes)
    parent_t = np.zeros(n_nodes)
    for l in range(ts.k):
        seq = sorted(members[l], key=lambda item: (item[0], item[1], item[2]))
        src = next(j for j, item in enumerate(seq) if item[2] == source_node[l] and item[1] == 0)
        for j, (t, _, v) in enumerate(seq):
            if j == src:
                continue
            nb = j + 1 if j < src else j - 1
            tp, _, p = seq[nb]
            parent[v] = p
            weight[v] = abs(t - tp)
            eline[v] = l
            child_t[v], parent_t[v] = t, tp

    return NodeTree(
        np.array(line, dtype=np.intp), np.array(coord), np.array(m_mu), np.array(m_nu),
        np.array(kind, dtype=np.int8), np.array(owner, dtype=np.int8), np.array(origin, dtype=np.intp),
        parent, weight, eline, child_t, parent_t, int(source_node[0]),
    )


def tw_closed_form(nt: NodeTree) -> float:
    """``sum_e w_e |S_mu(v_e) - S_nu(v_e)|`` with subtree masses from one bottom-up pass."""
    s_mu, s_nu = nt.subtree_masses()
    edge = nt.parent >= 0
    return float(np.sum(nt.weight[edge] * np.abs(s_mu[edge] - s_nu[edge])))


class TWSubgradient(NamedTuple):
    coord: np.ndarray  # d TW / d (node coordinate on its owning line)
    mass: np.ndarray  # d TW / d (atom mass), zero for non-atom nodes


def tw_subgradient(nt: NodeTree) -> TWSubgradient:
    """Subgradient of :func:`tw_closed_form` in node coordinates and atom masses.

    An edge of length ``t_hi - t_lo`` carrying residual ``c_e`` adds ``|c_e|``
    to the derivative in ``t_hi`` and ``-|c_e|`` in ``t_lo``; only the node's
    coordinate on its owning line is a free variable (a line's own source
    sits at 0 by definition). The mass derivative of a mu-atom sums
    ``w_e sign(c_e)`` over the edges of its root path, with the opposite sign
    for nu-atoms. At ties the minimum-norm choice is made: zero-length edges
    contribute nothing to coordinate derivatives and ``sign(0) = 0``.
    """
    s_mu, s_nu = nt.subtree_masses()
    resid = s_mu - s_nu
    # residuals at rounding level are ties (c_e = 0), e.g. a whole child line
    # when both measures put the same mass on it
    resid[np.abs(resid) <= TIE_TOL * (s_mu + s_nu)] = 0.0
    coord_grad = np.zeros(nt.num_nodes)
    for v in np.flatnonzero((nt.parent >= 0) & (nt.weight > 0)):
        p = nt.parent[v]
        flow = abs(resid[v])
        hi, lo = (v, p) if nt.child_t[v] >= nt.parent_t[v] else (p, v)
        if nt.line[hi] == nt.edge_line[v]:
            coord_grad[hi] += flow
        if nt.line[lo] == nt.edge_line[v]:
            coord_grad[lo] -= flow

    path = np.zeros(nt.num_nodes)
    for v in nt.preorder()[1:]:
        path[v] = path[nt.parent[v]] + nt.weight[v] * np.sign(resid[v])
    mass_grad = np.where(nt.owner == MU, path, np.where(nt.owner == NU, -path, 0.0))
    return TWSubgradient(coord_grad, mass_grad)


# ---------------------------------------------------------------------------
# batched kernel
# ---------------------------------------------------------------------------


class TWBatchResult(NamedTuple):
    values: np.ndarray  # (B,)
    grad_mu: Optional[np.ndarray] = None  # (B, k, n) d TW / d coord of each mu atom
    grad_nu: Optional[np.ndarray] = None  # (B, k, m)
    grad_attach: Optional[np.ndarray] = None  # (B, k) d TW / d attach_coord


def _children_matrix(parent: np.ndarray) -> np.ndarray:
    k = parent.shape[0]
    kids = [[] for _ in range(k)]
    for c in range(1, k):
        kids[parent[c]].append(c)
    width = max((len(c) for c in kids), default=0)
    out = np.full((k, width), -1, dtype=np.intp)
    for l, c in enumerate(kids):
        out[l, : len(c)] = c
    return out


def _bfs_order(parent: np.ndarray) -> np.ndarray:
    kids = [[] for _ in range(parent.shape[0])]
    for c in range(1, parent.shape[0]):
        kids[parent[c]].append(c)
    order = [0]
    for v in order:
        order.extend(kids[v])
    return np.array(order, dtype=np.intp)


def tw_batch(
    coords_mu: np.ndarray,
    mass_mu: np.ndarray,
    coords_nu: np.ndarray,
    mass_nu: np.ndarray,
    parent: np.ndarray,
    attach: np.ndarray,
    grad: bool = False,
) -> TWBatchResult:
    """Tree-Wasserstein for ``B`` tree systems with a common parent array.

    Parameters
    ----------
    coords_mu, coords_nu : (B, k, n) and (B, k, m) line coordinates of the atoms.
    mass_mu, mass_nu : masses broadcastable to the coordinate arrays.
    parent : (k,) parent line of every line, ``parent[0] = -1``.
    attach : (B, k) coordinate of each line's source on its parent line.
    grad : also return derivatives in atom and attachment coordinates.
    """
    B, k, n = coords_mu.shape
    m = coords_nu.shape[2]
    parent = np.asarray(parent, dtype=np.intp)
    mass_mu = np.broadcast_to(mass_mu, (B, k, n))
    mass_nu = np.broadcast_to(mass_nu, (B, k, m))

    # mass of each measure hanging below each line, children first
    below_mu = mass_mu.sum(-1)
    below_nu = mass_nu.sum(-1)
    for l in _bfs_order(parent)[:0:-1]:
        below_mu[:, parent[l]] += below_mu[:, l]
        below_nu[:, parent[l]] += below_nu[:, l]

    kids = _children_matrix(parent)
    c = kids.shape[1]
    valid = kids >= 0
    safe = np.where(valid, kids, 0)
    kid_coord = np.where(valid, attach[:, safe], 0.0)

    zeros = np.zeros((B, k, 1))
    zn, zm = np.zeros((B, k, n)), np.zeros((B, k, m))
    coords = np.concatenate([coords_mu, coords_nu, kid_coord, zeros], axis=-1)
    # mu and nu masses are accumulated separately and subtracted at the end,
    # which makes the value exactly symmetric in the two measures
    pos = np.concatenate([mass_mu, zm, np.where(valid, below_mu[:, safe], 0.0), zeros], axis=-1)
    neg = np.concatenate([zn, mass_nu, np.where(valid, below_nu[:, safe], 0.0), zeros], axis=-1)
    N = coords.shape[-1]

    order = np.argsort(coords, axis=-1, kind="stable")
    sc = np.take_along_axis(coords, order, axis=-1)
    sp = np.take_along_axis(pos, order, axis=-1)
    sn = np.take_along_axis(neg, order, axis=-1)
    src = np.argmax(order == N - 1, axis=-1)[..., None]

    # edge j joins sorted nodes j and j+1; its far side from the source is
    # [0..j] left of the source and [j+1..N-1] right of it
    prefix = (np.cumsum(sp, axis=-1) - np.cumsum(sn, axis=-1))[..., :-1]
    suffix = (np.cumsum(sp[..., ::-1], axis=-1) - np.cumsum(sn[..., ::-1], axis=-1))[..., ::-1][..., 1:]
    j = np.arange(N - 1)
    flow = np.abs(np.where(j < src, prefix, suffix))
    lengths = np.diff(sc, axis=-1)
    values = np.einsum("bkj,bkj->b", lengths, flow)
    if not grad:
        return TWBatchResult(values)

    # zero-length edges are ties; they add nothing (minimum-norm subgradient)
    flow = np.where(lengths > 0, flow, 0.0)
    g_sorted = np.zeros((B, k, N))
    g_sorted[..., 1:] += flow
    g_sorted[..., :-1] -= flow
    g = np.empty_like(g_sorted)
    np.put_along_axis(g, order, g_sorted, axis=-1)

    grad_attach = np.zeros((B, k))
    if c:
        kid_grad = g[..., n + m : n + m + c]
        for l in range(k):
            for slot in range(c):
                child = kids[l, slot]
                if child >= 0:
                    grad_attach[:, child] = kid_grad[:, l, slot]
    return TWBatchResult(values, g[..., :n], g[..., n : n + m], grad_attach)
