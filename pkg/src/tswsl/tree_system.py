"""Lines, canonical tree systems, their samplers and the tree metric on them.

A tree system is stored in canonical form: line ``i`` has source
``sources[i]`` and unit direction ``directions[i]``; for every non-root line
the source sits on the parent line at parameter ``attach_coord[i]``, i.e.
``sources[i] = sources[parent[i]] + attach_coord[i] * directions[parent[i]]``.
A point of the ground set is addressed by ``(line_index, coord)`` with
``x = sources[line] + coord * directions[line]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from ._rng import DIRECTIONS, POSITIONS, SeedLike, stream, uniform_directions

CANONICAL_TOL = 1e-9
UNIT_TOL = 1e-12


class TreeSystemError(ValueError):
    pass


@dataclass(frozen=True)
class Line:
    source: np.ndarray
    direction: np.ndarray

    def point(self, t: float) -> np.ndarray:
        return self.source + t * self.direction


@dataclass(frozen=True)
class GroundPoint:
    line_index: int
    coord: float


@dataclass(frozen=True, eq=False)
class TreeSystem:
    sources: np.ndarray  # (k, d)
    directions: np.ndarray  # (k, d)
    parent: np.ndarray  # (k,), parent[0] == -1
    attach_coord: np.ndarray  # (k,), attach_coord[0] == 0

    def __post_init__(self):
        for name in ("sources", "directions", "parent", "attach_coord"):
            arr = getattr(self, name)
            if arr.flags.writeable:
                arr = arr.copy()
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def k(self) -> int:
        return self.sources.shape[0]

    @property
    def dim(self) -> int:
        return self.sources.shape[1]

    @property
    def lines(self) -> list[Line]:
        return [Line(s, t) for s, t in zip(self.sources, self.directions)]

    @cached_property
    def children(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in range(self.k)]
        for i in range(1, self.k):
            kids[int(self.parent[i])].append(i)
        return kids

    @cached_property
    def order(self) -> np.ndarray:
        """Line indices in breadth-first order from the root (parents before children)."""
        seen = [0]
        for line in seen:
            seen.extend(self.children[line])
        return np.array(seen, dtype=np.intp)

    @cached_property
    def depth(self) -> np.ndarray:
        depth = np.zeros(self.k, dtype=np.intp)
        for line in self.order[1:]:
            depth[line] = depth[self.parent[line]] + 1
        return depth

    def point(self, p: GroundPoint) -> np.ndarray:
        """Embed a ground point into R^d."""
        self._check_point(p)
        return self.sources[p.line_index] + p.coord * self.directions[p.line_index]

    def _check_point(self, p: GroundPoint) -> None:
        if not 0 <= p.line_index < self.k:
            raise TreeSystemError(f"line index {p.line_index} out of range for k={self.k}")

    # -- validation ---------------------------------------------------------

    def validate(self, check_distinct: bool = True) -> None:
        """Raise :class:`TreeSystemError` unless every tree-system invariant holds.

        Geometric distinctness of lines is meaningless in d = 1 (every line is R),
        so it is only checked for d >= 2.
        """
        k, d = self.k, self.dim
        if k < 1 or self.directions.shape != (k, d) or self.parent.shape != (k,) or self.attach_coord.shape != (k,):
            raise TreeSystemError("inconsistent array shapes")
        if not (np.all(np.isfinite(self.sources)) and np.all(np.isfinite(self.directions)) and np.all(np.isfinite(self.attach_coord))):
            raise TreeSystemError("non-finite entries")
        norms = np.linalg.norm(self.directions, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise TreeSystemError("directions must be unit vectors")
        if self.parent[0] != -1 or self.attach_coord[0] != 0:
            raise TreeSystemError("line 0 is the root: parent[0] = -1 and attach_coord[0] = 0")
        if np.any(self.parent[1:] < 0) or np.any(self.parent >= k):
            raise TreeSystemError("parent index out of range")
        if len(self.order) != k or len(set(self.order.tolist())) != k:
            raise TreeSystemError("parent pointers do not form a tree rooted at line 0")
        for i in range(1, k):
            p = self.parent[i]
            expected = self.sources[p] + self.attach_coord[i] * self.directions[p]
            if np.linalg.norm(self.sources[i] - expected) > CANONICAL_TOL:
                raise TreeSystemError(f"line {i} is not canonical: its source is off its parent line")
        if check_distinct and d >= 2 and not lines_distinct(self):
            raise TreeSystemError("two lines have the same image")

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "sources": self.sources.tolist(),
            "directions": self.directions.tolist(),
            "parent": [None if p < 0 else int(p) for p in self.parent],
            "attach_coord": self.attach_coord.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TreeSystem":
        try:
            parent = np.array([-1 if p is None else int(p) for p in data["parent"]], dtype=np.intp)
            ts = cls(
                np.array(data["sources"], dtype=float),
                np.array(data["directions"], dtype=float),
                parent,
                np.array(data["attach_coord"], dtype=float),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TreeSystemError(f"malformed tree system: {exc}") from exc
        if ts.sources.ndim != 2:
            raise TreeSystemError("sources must be a k x d array")
        ts.validate(check_distinct=False)
        return ts

    @classmethod
    def from_params(cls, root_source, directions, parent, attach_coord) -> "TreeSystem":
        """Build a canonical system from root source, directions and attach coordinates.

        Non-root sources follow ``x_c = x_parent + t_c * theta_parent``.
        """
        directions = np.asarray(directions, dtype=float)
        parent = np.asarray(parent, dtype=np.intp)
        attach = np.asarray(attach_coord, dtype=float).copy()
        attach[0] = 0.0
        k = directions.shape[0]
        sources = np.empty_like(directions)
        sources[0] = root_source
        placed = np.zeros(k, dtype=bool)
        placed[0] = True
        # parents may be listed after children in hand-built inputs
        for _ in range(k):
            for i in range(1, k):
                p = parent[i]
                if not placed[i] and placed[p]:
                    sources[i] = sources[p] + attach[i] * directions[p]
                    placed[i] = True
        if not placed.all():
            raise TreeSystemError("parent pointers do not form a tree rooted at line 0")
        return cls(sources, directions, parent, attach)


def lines_distinct(ts: TreeSystem, tol: float = 1e-12) -> bool:
    """True when no two lines of ``ts`` have the same image in R^d."""
    for i in range(ts.k):
        for j in range(i + 1, ts.k):
            if abs(abs(ts.directions[i] @ ts.directions[j]) - 1.0) > tol:
                continue
            gap = ts.sources[j] - ts.sources[i]
            off = gap - (gap @ ts.directions[i]) * ts.directions[i]
            if np.linalg.norm(off) <= tol * max(1.0, np.linalg.norm(gap)):
                return False
    return True


# ---------------------------------------------------------------------------
# tree representations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TreeRepresentation:
    """Level-by-level child counts ``x_0 = [1], x_1, ..., x_T``.

    ``x_i[j]`` is the number of lines attached to the ``j``-th line of depth
    ``i - 1``; ``len(x_i)`` must equal ``sum(x_{i-1})``.
    """

    levels: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        levels = tuple(tuple(int(v) for v in lvl) for lvl in self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels or levels[0] != (1,):
            raise TreeSystemError("a tree representation starts with x_0 = [1]")
        for i in range(1, len(levels)):
            if any(v < 0 for v in levels[i]):
                raise TreeSystemError("child counts must be non-negative")
            if len(levels[i]) != sum(levels[i - 1]):
                raise TreeSystemError(
                    f"level {i} has {len(levels[i])} entries but level {i - 1} holds {sum(levels[i - 1])} lines"
                )

    @property
    def num_lines(self) -> int:
        return sum(sum(lvl) for lvl in self.levels)

    @classmethod
    def chain(cls, k: int) -> "TreeRepresentation":
        return cls(tuple((1,) for _ in range(k)))

    @classmethod
    def concurrent(cls, k: int) -> "TreeRepresentation":
        return cls(((1,), (k - 1,))) if k > 1 else cls(((1,),))

    @classmethod
    def parse(cls, text: str) -> "TreeRepresentation":
        """Parse ``"1;3;2,1,1"`` (levels separated by ';', entries by ',')."""
        try:
            levels = [tuple(int(v) for v in part.split(",")) for part in text.split(";")]
        except ValueError as exc:
            raise TreeSystemError(f"bad tree representation {text!r}") from exc
        return cls(tuple(levels))

    def parent_array(self) -> np.ndarray:
        """Parent of every line when lines are numbered in sampling order."""
        parent = [-1]
        prev = [0]
        for lvl in self.levels[1:]:
            cur = []
            for owner, count in zip(prev, lvl):
                for _ in range(count):
                    cur.append(len(parent))
                    parent.append(owner)
            prev = cur
        return np.array(parent, dtype=np.intp)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def _root_source(rng, d, center, halfwidth) -> np.ndarray:
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    if center.shape != (d,):
        raise TreeSystemError(f"root_center has shape {center.shape}, expected ({d},)")
    return center + rng.uniform(-halfwidth, halfwidth, size=d)


def sample_chain(
    k: int,
    d: int,
    seed: SeedLike = 0,
    root_box_halfwidth: float = 1.0,
    step_halfwidth: float = 1.0,
    root_center: Optional[Sequence[float]] = None,
) -> TreeSystem:
    """Chain-like tree system: line ``i`` starts on line ``i - 1``.

    ``x_1 ~ U(root_center + [-h, h]^d)``, ``theta_i ~ U(S^{d-1})`` and for
    ``i >= 2``: ``x_i = x_{i-1} + t_i theta_{i-1}`` with ``t_i ~ U([-s, s])``.
    Directions and positions come from separate sub-streams of ``seed`` so the
    first direction equals the one a sliced estimator draws with the same key.
    """
    if k < 1:
        raise TreeSystemError("k must be >= 1")
    if d < 1:
        raise TreeSystemError("d must be >= 1")
    if root_box_halfwidth <= 0 or step_halfwidth <= 0:
        raise TreeSystemError("halfwidths must be > 0")
    return sample_from_representation(
        TreeRepresentation.chain(k), d, seed, root_box_halfwidth, step_halfwidth, root_center
    )


def sample_from_representation(
    rep: TreeRepresentation,
    d: int,
    seed: SeedLike = 0,
    root_box_halfwidth: float = 1.0,
    step_halfwidth: float = 1.0,
    root_center: Optional[Sequence[float]] = None,
) -> TreeSystem:
    """Tree system of type ``rep``; lines are numbered in the order they are sampled.

    A zero ``root_box_halfwidth`` pins the root source to ``root_center``; a
    zero ``step_halfwidth`` puts every child source on its parent's source
    (concurrent lines).
    """
    if root_box_halfwidth < 0 or step_halfwidth < 0:
        raise TreeSystemError("halfwidths must be >= 0")
    k = rep.num_lines
    parent = rep.parent_array()
    directions = uniform_directions(stream(seed, DIRECTIONS), k, d)
    pos = stream(seed, POSITIONS)
    root = _root_source(pos, d, root_center, root_box_halfwidth)
    attach = np.zeros(k)
    attach[1:] = pos.uniform(-step_halfwidth, step_halfwidth, size=k - 1)
    return TreeSystem.from_params(root, directions, parent, attach)


# ---------------------------------------------------------------------------
# tree metric
# ---------------------------------------------------------------------------


def tree_distance(ts: TreeSystem, a: GroundPoint, b: GroundPoint) -> float:
    """Length of the unique path between two ground points.

    Moving from line ``i`` to its parent costs the distance to ``i``'s source
    (coordinate 0 on line ``i``) and lands at ``attach_coord[i]`` on the parent.
    """
    ts._check_point(a)
    ts._check_point(b)
    la, ta = a.line_index, float(a.coord)
    lb, tb = b.line_index, float(b.coord)
    depth = ts.depth
    # one running sum per endpoint keeps the result bitwise symmetric
    up_a = up_b = 0.0
    while la != lb:
        if depth[la] >= depth[lb]:
            up_a += abs(ta)
            la, ta = int(ts.parent[la]), float(ts.attach_coord[la])
        else:
            up_b += abs(tb)
            lb, tb = int(ts.parent[lb]), float(ts.attach_coord[lb])
    return (up_a + up_b) + abs(ta - tb)
