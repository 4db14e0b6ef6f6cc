"""Particle gradient flows driven by a sliced distance, with exact-W_p checkpoints."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ._rng import derive_seed
from .distances import MaxConfig, TswConfig, max_sw_grad, max_tsw_sl_grad, sw_grad, tsw_sl_grad
from .exact_ot import wasserstein
from .measures import DiscreteMeasure, gen_standard_normal, validate_and_normalize
from .splitting import SplittingMap

METHODS = ("tsw-sl", "sw", "max-sw", "max-tsw-sl")
UNSUPPORTED = ("swgg", "lcvsw")
DEFAULT_CHECKPOINTS = (500, 1000, 1500, 2000, 2500)


class FlowError(ValueError):
    pass


def check_method(method: str) -> str:
    if method in UNSUPPORTED:
        raise FlowError(f"method {method!r} is not implemented; choose one of {', '.join(METHODS)}")
    if method not in METHODS:
        raise FlowError(f"unknown method {method!r}; choose one of {', '.join(METHODS)}")
    return method


def default_learning_rate(method: str, dataset: str = "swissroll") -> float:
    """Step sizes used for the benchmark flows."""
    check_method(method)
    if method.startswith("max-"):
        return 5e-3
    if dataset == "gaussian-hd" and method == "tsw-sl":
        return 5e-2
    return 5e-3


@dataclass(frozen=True)
class FlowConfig:
    """Gradient-flow settings.

    ``L`` counts tree systems for ``tsw-sl`` and directions for ``sw``.
    ``max_T`` / ``max_lr`` are the inner ascent settings of the max variants.
    """

    method: str = "tsw-sl"
    iterations: int = 2500
    lr: float = 5e-3
    checkpoints: Optional[tuple[int, ...]] = None
    L: int = 25
    k: int = 4
    sw_p: float = 2.0
    eval_p: float = 2.0
    seed: int = 0
    splitting: Union[str, SplittingMap] = "uniform"
    sampler: str = "chain"
    root_halfwidth: float = 1.0
    step_halfwidth: float = 1.0
    fixed_trees: bool = False
    max_T: int = 100
    max_lr: float = 1e-4
    threads: Optional[int] = None

    def __post_init__(self):
        check_method(self.method)
        if self.iterations < 1:
            raise FlowError("iterations must be >= 1")
        if not self.lr > 0:
            raise FlowError("learning rate must be > 0")
        if self.L < 1 or self.k < 1:
            raise FlowError("L and k must be >= 1")
        cps = self.resolved_checkpoints()
        if any(c < 1 or c > self.iterations for c in cps) or list(cps) != sorted(set(cps)):
            raise FlowError(f"checkpoints must be strictly increasing within [1, {self.iterations}]")

    def resolved_checkpoints(self) -> tuple[int, ...]:
        if self.checkpoints is not None:
            return tuple(int(c) for c in self.checkpoints)
        cps = tuple(c for c in DEFAULT_CHECKPOINTS if c <= self.iterations)
        return cps if cps and cps[-1] == self.iterations else cps + (self.iterations,)


@dataclass
class FlowTrace:
    iterations: list[int] = field(default_factory=list)
    w_distance: list[float] = field(default_factory=list)
    seconds_per_iter: list[float] = field(default_factory=list)
    losses: Optional[np.ndarray] = None
    final: Optional[DiscreteMeasure] = None

    def rows(self):
        return zip(self.iterations, self.w_distance, self.seconds_per_iter)


def _gradient(source: DiscreteMeasure, target: DiscreteMeasure, cfg: FlowConfig, key, center):
    if cfg.method == "tsw-sl":
        tcfg = TswConfig(
            L=cfg.L, k=cfg.k, seed=key, splitting=cfg.splitting, sampler=cfg.sampler, root_center=center,
            root_halfwidth=cfg.root_halfwidth, step_halfwidth=cfg.step_halfwidth, threads=cfg.threads,
        )
        return tsw_sl_grad(source, target, tcfg)
    if cfg.method == "sw":
        return sw_grad(source, target, cfg.L, cfg.sw_p, key)
    mcfg = MaxConfig(
        k=cfg.k, T=cfg.max_T, lr=cfg.max_lr, seed=key, splitting=cfg.splitting, root_center=center,
        root_halfwidth=cfg.root_halfwidth, step_halfwidth=cfg.step_halfwidth,
    )
    if cfg.method == "max-sw":
        return max_sw_grad(source, target, mcfg, cfg.sw_p)
    return max_tsw_sl_grad(source, target, mcfg)


def initial_source(target: DiscreteMeasure, seed: int) -> DiscreteMeasure:
    """Standard Gaussian particles, as many as the target has, with uniform weights."""
    return gen_standard_normal(target.n, target.dim, seed=derive_seed(seed, "flow-init"))


def run_flow(
    target: DiscreteMeasure, cfg: FlowConfig, source: Optional[DiscreteMeasure] = None
) -> FlowTrace:
    """Explicit Euler on the particles of ``source``, descending the chosen distance.

    Each particle moves with the Wasserstein-gradient velocity
    ``-grad_i / u_i``, i.e. the gradient with respect to its position divided
    by its own mass. Tree systems (or directions) are redrawn every iteration
    from the stream ``(tree_seed, iteration)`` unless ``fixed_trees`` is set.
    """
    if source is None:
        source = initial_source(target, cfg.seed)
    if source.dim != target.dim:
        raise FlowError("source and target live in different dimensions")
    tree_seed = derive_seed(cfg.seed, "trees")
    # trees are rooted near the target's mean
    center = target.mean()
    checkpoints = set(cfg.resolved_checkpoints())
    points = np.array(source.points, dtype=float)
    inv_w = 1.0 / source.weights[:, None]
    trace = FlowTrace(losses=np.empty(cfg.iterations))
    elapsed = 0.0
    last_cp = 0
    for it in range(1, cfg.iterations + 1):
        t0 = time.perf_counter()
        key = (tree_seed, 0 if cfg.fixed_trees else it)
        current = validate_and_normalize(points, source.weights)
        loss, grad = _gradient(current, target, cfg, key, center)
        points = points - cfg.lr * grad * inv_w
        elapsed += time.perf_counter() - t0
        trace.losses[it - 1] = loss
        if not np.all(np.isfinite(points)):
            raise FlowError(f"flow diverged at iteration {it}; lower the learning rate")
        if it in checkpoints:
            trace.iterations.append(it)
            trace.w_distance.append(wasserstein(source.with_points(points), target, cfg.eval_p))
            trace.seconds_per_iter.append(elapsed / (it - last_cp))
            elapsed, last_cp = 0.0, it
    trace.final = source.with_points(points)
    return trace


def write_trace_csv(trace: FlowTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "w_distance", "seconds_per_iter"])
        for it, wd, sec in trace.rows():
            w.writerow([it, f"{wd:.12g}", f"{sec:.6g}"])
