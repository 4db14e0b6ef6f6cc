"""Sliced estimators: TSW-SL, SW, Max-SW and MaxTSW-SL, with support-point gradients."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from ._rng import DIRECTIONS, POSITIONS, SeedLike, as_key, stream, uniform_directions
from .exact_ot import quantile_coupling
from .measures import DiscreteMeasure
from .splitting import SplittingMap, parse_splitting
from .tree_system import TreeRepresentation, TreeSystem
from .tree_wasserstein import tw_batch

RootCenter = Union[str, Sequence[float], None]

# scratch memory per chunk of tree systems, in float64 entries
CHUNK_ENTRIES = 4_000_000


class DistanceError(ValueError):
    pass


def resolve_threads(threads: Optional[int] = None) -> int:
    """``threads`` if given, else ``$TSW_THREADS``, else the CPU count."""
    if threads is None:
        env = os.environ.get("TSW_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError as exc:
                raise DistanceError(f"TSW_THREADS must be an integer, got {env!r}") from exc
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise DistanceError("thread count must be >= 1")
    return threads


@dataclass(frozen=True)
class TswConfig:
    """Settings of the Monte-Carlo TSW-SL estimator.

    ``sampler`` is ``"chain"`` or a tree representation such as ``"1;3;2,1,1"``
    (level sizes separated by ``;``, children per node by ``,``).
    ``root_center`` is ``"data-mean"`` (midpoint of the two means, so the
    estimate stays symmetric), ``"origin"`` or an explicit vector.
    """

    L: int = 25
    k: int = 4
    seed: int = 0
    splitting: Union[str, SplittingMap] = "uniform"
    sampler: Union[str, TreeRepresentation] = "chain"
    root_center: RootCenter = "data-mean"
    root_halfwidth: float = 1.0
    step_halfwidth: float = 1.0
    threads: Optional[int] = None

    def __post_init__(self):
        if self.L < 1 or self.k < 1:
            raise DistanceError("L and k must be >= 1")
        if self.root_halfwidth < 0 or self.step_halfwidth < 0:
            raise DistanceError("halfwidths must be >= 0")
        rep = self.representation()
        if rep.num_lines != self.k:
            raise DistanceError(f"representation has {rep.num_lines} lines but k={self.k}")

    def representation(self) -> TreeRepresentation:
        if isinstance(self.sampler, TreeRepresentation):
            return self.sampler
        if self.sampler == "chain":
            return TreeRepresentation.chain(self.k)
        return TreeRepresentation.parse(self.sampler)

    def splitting_map(self) -> SplittingMap:
        if isinstance(self.splitting, SplittingMap):
            if self.splitting.k != self.k:
                raise DistanceError("splitting map and k disagree")
            return self.splitting
        return parse_splitting(self.splitting, self.k, self.seed)


@dataclass(frozen=True)
class MaxConfig:
    """Settings of the projected-ascent estimators Max-SW and MaxTSW-SL."""

    k: int = 4
    T: int = 100
    lr: float = 1e-4
    seed: int = 0
    splitting: Union[str, SplittingMap] = "uniform"
    root_center: RootCenter = "data-mean"
    root_halfwidth: float = 1.0
    step_halfwidth: float = 1.0

    def __post_init__(self):
        if self.k < 1 or self.T < 1:
            raise DistanceError("k and T must be >= 1")
        if not self.lr > 0:
            raise DistanceError("learning rate must be > 0")

    def tsw_config(self) -> TswConfig:
        """The L = 1 estimator whose single tree is the ascent's starting point."""
        return TswConfig(
            L=1, k=self.k, seed=self.seed, splitting=self.splitting, root_center=self.root_center,
            root_halfwidth=self.root_halfwidth, step_halfwidth=self.step_halfwidth,
        )


def _check_pair(mu: DiscreteMeasure, nu: DiscreteMeasure) -> None:
    if mu.dim != nu.dim:
        raise DistanceError(f"measures live in R^{mu.dim} and R^{nu.dim}")


def resolve_root_center(root_center: RootCenter, mu: DiscreteMeasure, nu: DiscreteMeasure) -> np.ndarray:
    d = mu.dim
    if root_center is None or (isinstance(root_center, str) and root_center == "origin"):
        return np.zeros(d)
    if isinstance(root_center, str):
        if root_center != "data-mean":
            raise DistanceError(f"unknown root center {root_center!r}")
        return 0.5 * (mu.mean() + nu.mean())
    c = np.asarray(root_center, dtype=float)
    if c.shape != (d,):
        raise DistanceError(f"root center has shape {c.shape}, expected ({d},)")
    return c


# ---------------------------------------------------------------------------
# batched tree sampling
# ---------------------------------------------------------------------------


class TreeBatch(NamedTuple):
    sources: np.ndarray  # (B, k, d)
    directions: np.ndarray  # (B, k, d)
    attach: np.ndarray  # (B, k)
    parent: np.ndarray  # (k,)

    def system(self, b: int) -> TreeSystem:
        return TreeSystem(self.sources[b], self.directions[b], self.parent, self.attach[b])


def sample_tree_batch(
    keys: Sequence[SeedLike],
    rep: TreeRepresentation,
    d: int,
    root_center: np.ndarray,
    root_halfwidth: float,
    step_halfwidth: float,
) -> TreeBatch:
    """One tree system per key, drawn exactly as ``sample_from_representation`` does."""
    k = rep.num_lines
    parent = rep.parent_array()
    B = len(keys)
    directions = np.empty((B, k, d))
    root = np.empty((B, d))
    attach = np.zeros((B, k))
    for b, key in enumerate(keys):
        directions[b] = uniform_directions(stream(key, DIRECTIONS), k, d)
        pos = stream(key, POSITIONS)
        root[b] = root_center + pos.uniform(-root_halfwidth, root_halfwidth, size=d)
        attach[b, 1:] = pos.uniform(-step_halfwidth, step_halfwidth, size=k - 1)
    sources = np.empty((B, k, d))
    sources[:, 0] = root
    for c in range(1, k):
        p = parent[c]
        sources[:, c] = sources[:, p] + attach[:, c, None] * directions[:, p]
    return TreeBatch(sources, directions, attach, parent)


def _coords(points: np.ndarray, sources: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """(B, k, n) coordinates ``<a - x_l, theta_l>``."""
    offsets = np.einsum("bkd,bkd->bk", sources, directions)
    return np.einsum("bkd,nd->bkn", directions, points) - offsets[..., None]


def _chunks(L: int, per_tree: int) -> list[range]:
    size = max(1, CHUNK_ENTRIES // max(per_tree, 1))
    return [range(s, min(s + size, L)) for s in range(0, L, size)]


def _run_chunks(fn, chunks, threads: int) -> list:
    if threads <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=min(threads, len(chunks))) as pool:
        return list(pool.map(fn, chunks))


# ---------------------------------------------------------------------------
# TSW-SL
# ---------------------------------------------------------------------------


def _tsw_core(mu: DiscreteMeasure, nu: DiscreteMeasure, cfg: TswConfig, grad: bool):
    _check_pair(mu, nu)
    alpha = cfg.splitting_map()
    if grad and not alpha.is_constant:
        raise DistanceError("gradients are only available for splitting maps that do not depend on the point")
    rep = cfg.representation()
    center = resolve_root_center(cfg.root_center, mu, nu)
    key = as_key(cfg.seed)
    # (k, n) masses; the same for every tree system
    mass_mu = (alpha.evaluate_many(mu.points) * mu.weights[:, None]).T
    mass_nu = (alpha.evaluate_many(nu.points) * nu.weights[:, None]).T

    values = np.empty(cfg.L)
    gmu = np.zeros((cfg.L, mu.n, mu.dim)) if grad else None

    def work(idx: range):
        batch = sample_tree_batch(
            [(*key, l) for l in idx], rep, mu.dim, center, cfg.root_halfwidth, cfg.step_halfwidth
        )
        res = tw_batch(
            _coords(mu.points, batch.sources, batch.directions), mass_mu,
            _coords(nu.points, batch.sources, batch.directions), mass_nu,
            batch.parent, batch.attach, grad=grad,
        )
        values[idx.start : idx.stop] = res.values
        if grad:
            # d coord / d a_i = theta_line
            gmu[idx.start : idx.stop] = np.einsum("bkn,bkd->bnd", res.grad_mu, batch.directions)

    per_tree = 12 * cfg.k * (mu.n + nu.n + cfg.k + mu.dim)
    _run_chunks(work, _chunks(cfg.L, per_tree), resolve_threads(cfg.threads))
    return values, gmu


def tsw_sl_values(mu: DiscreteMeasure, nu: DiscreteMeasure, cfg: TswConfig) -> np.ndarray:
    """Tree-Wasserstein value of each of the ``L`` sampled tree systems, in index order."""
    return _tsw_core(mu, nu, cfg, grad=False)[0]


def tsw_sl(mu: DiscreteMeasure, nu: DiscreteMeasure, cfg: TswConfig = TswConfig()) -> float:
    """Monte-Carlo TSW-SL: mean tree-Wasserstein over ``L`` random tree systems."""
    return float(np.mean(tsw_sl_values(mu, nu, cfg)))


def tsw_sl_grad(mu: DiscreteMeasure, nu: DiscreteMeasure, cfg: TswConfig = TswConfig()) -> tuple[float, np.ndarray]:
    """TSW-SL and its (sub)gradient with respect to the support points of ``mu``."""
    values, gmu = _tsw_core(mu, nu, cfg, grad=True)
    return float(np.mean(values)), gmu.sum(axis=0) / cfg.L


# ---------------------------------------------------------------------------
# sliced Wasserstein
# ---------------------------------------------------------------------------


def sw_directions(L: int, d: int, seed: SeedLike = 0) -> np.ndarray:
    """Direction ``l`` is the first direction of tree system ``l`` with the same seed."""
    key = as_key(seed)
    return np.stack([uniform_directions(stream((*key, l), DIRECTIONS), 1, d)[0] for l in range(L)])


def _sw_from_directions(mu, nu, theta: np.ndarray, p: float, grad: bool):
    """Per-direction ``W_p^p`` and optionally its gradients in the points and in theta."""
    x = mu.points @ theta.T  # (n, L)
    y = nu.points @ theta.T
    cp = quantile_coupling(x.T, mu.weights, y.T, nu.weights)
    rows = np.arange(theta.shape[0])[:, None]
    gap = x.T[rows, cp.src] - y.T[rows, cp.dst]
    wpp = np.sum(cp.mass * np.abs(gap) ** p, axis=1)
    if not grad:
        return wpp, None, None
    # d/d gap of mass * |gap|^p
    dg = cp.mass * p * np.abs(gap) ** (p - 1) * np.sign(gap)
    g_proj = np.zeros((theta.shape[0], mu.n))
    np.add.at(g_proj, (np.broadcast_to(rows, cp.src.shape), cp.src), dg)
    g_theta = np.einsum("lr,lrd->ld", dg, mu.points[cp.src] - nu.points[cp.dst])
    return wpp, g_proj, g_theta


def _check_p(p: float) -> None:
    if not p >= 1:
        raise DistanceError("p must be >= 1")


def sw(mu: DiscreteMeasure, nu: DiscreteMeasure, L: int = 100, p: float = 2.0, seed: SeedLike = 0) -> float:
    """Monte-Carlo sliced Wasserstein ``(mean_l W_p^p(theta_l# mu, theta_l# nu))^(1/p)``."""
    _check_pair(mu, nu)
    _check_p(p)
    wpp, _, _ = _sw_from_directions(mu, nu, sw_directions(L, mu.dim, seed), p, grad=False)
    return float(np.mean(wpp)) ** (1.0 / p)


def sw_grad(
    mu: DiscreteMeasure, nu: DiscreteMeasure, L: int = 100, p: float = 2.0, seed: SeedLike = 0
) -> tuple[float, np.ndarray]:
    """SW_p and its gradient with respect to the support points of ``mu``."""
    _check_pair(mu, nu)
    _check_p(p)
    theta = sw_directions(L, mu.dim, seed)
    wpp, g_proj, _ = _sw_from_directions(mu, nu, theta, p, grad=True)
    mean = float(np.mean(wpp))
    value = mean ** (1.0 / p)
    if mean <= 0:
        return value, np.zeros_like(mu.points)
    g_mean = g_proj.T @ theta / L
    return value, g_mean * (value / (p * mean))


def _tangent(g: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return g - np.sum(g * theta, axis=-1, keepdims=True) * theta


def _normalize(theta: np.ndarray) -> np.ndarray:
    return theta / np.linalg.norm(theta, axis=-1, keepdims=True)


def max_sw_direction(mu: DiscreteMeasure, nu: DiscreteMeasure, cfg: MaxConfig, p: float = 2.0) -> np.ndarray:
    """Projected gradient ascent of ``W_p`` along a direction on the unit sphere.

    Ascending ``W_p`` rather than ``W_p^p`` keeps the step size linear in the
    scale of the data.
    """
    _check_pair(mu, nu)
    _check_p(p)
    theta = sw_directions(1, mu.dim, cfg.seed)
    for _ in range(cfg.T):
        wpp, _, g = _sw_from_directions(mu, nu, theta, p, grad=True)
        if wpp[0] <= 0:
            break
        g = g * (wpp[0] ** (1.0 / p - 1.0) / p)
        step = theta + cfg.lr * _tangent(g, theta)
        if np.linalg.norm(step) == 0:
            break
        theta = _normalize(step)
    return theta[0]


def max_sw(mu: DiscreteMeasure, nu: DiscreteMeasure, cfg: MaxConfig = MaxConfig(), p: float = 2.0) -> float:
    """Max-SW: ``W_p`` along the direction reached after ``T`` ascent steps."""
    theta = max_sw_direction(mu, nu, cfg, p)
    wpp, _, _ = _sw_from_directions(mu, nu, theta[None], p, grad=False)
    return float(wpp[0]) ** (1.0 / p)


def max_sw_grad(
    mu: DiscreteMeasure, nu: DiscreteMeasure, cfg: MaxConfig = MaxConfig(), p: float = 2.0
) -> tuple[float, np.ndarray]:
    """Max-SW and its gradient in the points of ``mu`` with the direction held fixed."""
    theta = max_sw_direction(mu, nu, cfg, p)[None]
    wpp, g_proj, _ = _sw_from_directions(mu, nu, theta, p, grad=True)
    value = float(wpp[0]) ** (1.0 / p)
    if wpp[0] <= 0:
        return value, np.zeros_like(mu.points)
    return value, np.outer(g_proj[0], theta[0]) * (value / (p * wpp[0]))


# ---------------------------------------------------------------------------
# MaxTSW-SL
# ---------------------------------------------------------------------------


class _TreeEval(NamedTuple):
    value: float
    g_root: np.ndarray
    g_attach: np.ndarray
    g_theta: np.ndarray
    g_mu: np.ndarray  # gradient in the support points of mu


def _tree_eval(mu, nu, mass_mu, mass_nu, ts: TreeSystem) -> _TreeEval:
    """Tree-Wasserstein on one tree system and its gradient in the tree parameters."""
    S, D = ts.sources[None], ts.directions[None]
    res = tw_batch(
        _coords(mu.points, S, D), mass_mu, _coords(nu.points, S, D), mass_nu,
        ts.parent, ts.attach_coord[None], grad=True,
    )
    gm, gn = res.grad_mu[0], res.grad_nu[0]
    k = ts.k
    # coord = <a - x_l, theta_l>: d/dx_l = -theta_l, d/dtheta_l = a - x_l
    g_x = -(gm.sum(1) + gn.sum(1))[:, None] * ts.directions
    g_theta = gm @ mu.points + gn @ nu.points - (gm.sum(1) + gn.sum(1))[:, None] * ts.sources
    # x_c = x_parent + t_c theta_parent: push source gradients up the tree
    g_sub = g_x.copy()
    for c in ts.order[::-1]:
        if ts.parent[c] >= 0:
            g_sub[ts.parent[c]] += g_sub[c]
    g_attach = res.grad_attach[0].copy()
    for c in range(k):
        p = ts.parent[c]
        if p >= 0:
            g_attach[c] += ts.directions[p] @ g_sub[c]
            g_theta[p] += ts.attach_coord[c] * g_sub[c]
    g_attach[0] = 0.0
    return _TreeEval(float(res.values[0]), g_sub[0], g_attach, g_theta, np.einsum("kn,kd->nd", gm, ts.directions))


def _max_tsw_ascent(mu, nu, cfg: MaxConfig) -> tuple[TreeSystem, _TreeEval]:
    _check_pair(mu, nu)
    tcfg = cfg.tsw_config()
    alpha = tcfg.splitting_map()
    center = resolve_root_center(cfg.root_center, mu, nu)
    rep = TreeRepresentation.chain(cfg.k)
    ts = sample_tree_batch(
        [(*as_key(cfg.seed), 0)], rep, mu.dim, center, cfg.root_halfwidth, cfg.step_halfwidth
    ).system(0)
    mass_mu = (alpha.evaluate_many(mu.points) * mu.weights[:, None]).T
    mass_nu = (alpha.evaluate_many(nu.points) * nu.weights[:, None]).T

    cur = _tree_eval(mu, nu, mass_mu, mass_nu, ts)
    for _ in range(cfg.T):
        g_theta = _tangent(cur.g_theta, ts.directions)
        lr = cfg.lr
        # backtracking keeps every accepted step non-decreasing
        for _ in range(20):
            theta = ts.directions + lr * g_theta
            norms = np.linalg.norm(theta, axis=1)
            if np.all(norms > 0):
                cand = TreeSystem.from_params(
                    ts.sources[0] + lr * cur.g_root, theta / norms[:, None], ts.parent,
                    ts.attach_coord + lr * cur.g_attach,
                )
                new = _tree_eval(mu, nu, mass_mu, mass_nu, cand)
                if new.value >= cur.value:
                    ts, cur = cand, new
                    break
            lr *= 0.5
        else:
            break
    return ts, cur


def max_tsw_sl(mu: DiscreteMeasure, nu: DiscreteMeasure, cfg: MaxConfig = MaxConfig()) -> tuple[float, TreeSystem]:
    """MaxTSW-SL by projected ascent over chain tree systems.

    Starts from the tree system that ``tsw_sl`` with ``cfg.tsw_config()`` samples,
    so the result is never below that single-tree estimate.
    """
    ts, ev = _max_tsw_ascent(mu, nu, cfg)
    return ev.value, ts


def max_tsw_sl_grad(
    mu: DiscreteMeasure, nu: DiscreteMeasure, cfg: MaxConfig = MaxConfig()
) -> tuple[float, np.ndarray]:
    """MaxTSW-SL and its gradient in the support points of ``mu`` at the optimised tree."""
    alpha = cfg.tsw_config().splitting_map()
    if not alpha.is_constant:
        raise DistanceError("gradients are only available for splitting maps that do not depend on the point")
    _, ev = _max_tsw_ascent(mu, nu, cfg)
    return ev.value, ev.g_mu
