"""Reach-avoid value iteration on the grid, in belief space or belief-less.

The backup at a joint state ``z`` is::

    min{ g(z), max{ l(z), gamma * max_ue min_(uo, w, v) Vn(F(z, ue, uo, w, v)) } }

where ``Vn`` is the interpolated table. With ``margin_clip`` (default) the
successor value is read as ``min(g', max(l', Vn))``: a fixed point satisfies
``min(g, l) <= V <= g`` everywhere, so this is exact on nodes and removes
interpolation error at the failure and target boundaries off-grid.

Two backends compute the same sweep. ``"fast"`` runs numba kernels
specialized to the crossing game; ``"reference"`` is a vectorized numpy
implementation over any object following the :class:`Game` protocol, used for
toy problems and as a cross-check.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Protocol, Sequence

import numba
import numpy as np

from . import _kernels as K
from .grid import Grid, ValueTable, discretize_controls, interp_array, interpolate, state_coords
from .learning import above_threshold, bayes_update_b0, type_mean
from .state_space import JointState, PhysicalState, ScenarioConfig, ValidationError

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Hard solver failure, e.g. NaN in a sweep."""


class NotConvergedError(RuntimeError):
    """A table that did not reach tolerance was used where convergence is required."""


@dataclass(frozen=True)
class SolveMode:
    """Which opponent control set the backup minimizes over.

    ``belief``: union of the boxes of every type with belief >= eps, per node.
    ``per_type``: one fixed type. ``robust``: all types. ``subset``: a fixed
    non-empty set of types.
    """

    kind: str
    eps: float | None = None
    types: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("belief", "per_type", "robust", "subset"):
            raise ValidationError(f"unknown solve mode {self.kind!r}")
        object.__setattr__(self, "types", tuple(sorted(set(int(t) for t in self.types))))
        if self.kind == "belief" and (self.eps is None or not 0.0 <= self.eps <= 1.0):
            raise ValidationError("belief mode needs 0 <= eps <= 1")
        if self.kind == "per_type" and len(self.types) != 1:
            raise ValidationError("per_type mode needs exactly one type")
        if self.kind == "subset" and not self.types:
            raise ValidationError("subset mode needs a non-empty type set")

    @classmethod
    def belief(cls, eps: float) -> "SolveMode":
        return cls("belief", eps=float(eps))

    @classmethod
    def per_type(cls, k: int) -> "SolveMode":
        return cls("per_type", types=(k,))

    @classmethod
    def robust(cls) -> "SolveMode":
        return cls("robust")

    @classmethod
    def subset(cls, types: Iterable[int]) -> "SolveMode":
        return cls("subset", types=tuple(types))

    @classmethod
    def parse(cls, text: str, eps: float) -> "SolveMode":
        """Parse ``belief``, ``per-type:<id>``, ``robust`` or ``subset:<ids>``."""
        head, _, tail = text.partition(":")
        try:
            if head == "belief":
                return cls.belief(eps)
            if head == "robust":
                return cls.robust()
            if head == "per-type":
                return cls.per_type(int(tail))
            if head == "subset":
                return cls.subset(int(t) for t in tail.split(",") if t.strip())
        except ValueError as exc:
            raise ValidationError(f"bad mode {text!r}: {exc}") from exc
        raise ValidationError(f"bad mode {text!r}")

    @property
    def uses_belief(self) -> bool:
        return self.kind == "belief"

    def opp_types(self, n_types: int) -> tuple[int, ...]:
        if self.kind in ("belief", "robust"):
            return tuple(range(n_types))
        if any(t >= n_types for t in self.types):
            raise ValidationError(f"mode references type ids beyond K={n_types}")
        return self.types

    def name(self) -> str:
        if self.kind == "belief":
            return "belief"
        if self.kind == "robust":
            return "robust"
        if self.kind == "per_type":
            return f"per_type_{self.types[0]}"
        return "subset_" + "_".join(str(t) for t in self.types)


@dataclass(frozen=True)
class SolverParams:
    tol: float = 1e-4
    max_iters: int = 500
    discount: float = 1.0
    ego_mesh: tuple[int, int] = (5, 5)
    opp_mesh: int = 5
    margin_clip: bool = True
    backend: str = "fast"
    threads: int | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValidationError("tol must be > 0")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if not 0.0 < self.discount <= 1.0:
            raise ValidationError("discount must lie in (0, 1]")
        if self.backend not in ("fast", "reference"):
            raise ValidationError(f"unknown backend {self.backend!r}")
        object.__setattr__(self, "ego_mesh", tuple(int(n) for n in np.broadcast_to(self.ego_mesh, (2,))))


def set_threads(threads: int | None) -> int:
    """Bound numba worker threads; falls back to ``DGAME_THREADS``."""
    if threads is None:
        env = os.environ.get("DGAME_THREADS")
        threads = int(env) if env else None
    limit = numba.config.NUMBA_NUM_THREADS
    n = limit if threads is None else max(1, min(int(threads), limit))
    numba.set_num_threads(n)
    return n


# ---------------------------------------------------------------------------
# Crossing-game setup shared by the solver, the backup and the policies
# ---------------------------------------------------------------------------

class CrossingGame:
    """Control meshes and scalars of the crossing game for one solve mode.

    Also implements the :class:`Game` protocol for the reference backend.
    """

    def __init__(self, cfg: ScenarioConfig, grid: Grid, mode: SolveMode, params: SolverParams):
        if mode.uses_belief != grid.has_belief:
            raise ValidationError("a belief axis is required iff the mode is belief-space")
        if mode.uses_belief and cfg.n_types != 2:
            raise ValidationError("the belief grid has one axis, so belief mode needs exactly 2 types")
        self.cfg, self.grid, self.mode, self.params = cfg, grid, mode, params
        ego = discretize_controls(cfg.ego_control_box, params.ego_mesh)
        self.a_vals = np.unique(ego[:, 0])
        self.l_vals = np.unique(ego[:, 1])
        self.ego_mesh = ego
        us, tags = [], []
        for t in mode.opp_types(cfg.n_types):
            m = discretize_controls(cfg.hypotheses[t].control_box, params.opp_mesh)[:, 0]
            us.append(m)
            tags.append(np.full(m.size, t))
        self.opp_u = np.concatenate(us)
        self.opp_tag = np.concatenate(tags).astype(np.int64)
        self.w_vals = np.array([w[0] for w in cfg.process_noise]) if cfg.process_noise else np.zeros(1)
        self.obs_vals = np.array([v[0] for v in cfg.obs_noise]) if cfg.obs_noise else np.zeros(1)
        self.means = np.array([type_mean(h)[0] for h in cfg.hypotheses])
        self.gamma = params.discount
        self.clip = params.margin_clip

    # -- scalar helpers --------------------------------------------------

    def type_probs(self, b_ped):
        """Per-type probabilities from the belief-axis coordinate, ``(..., 2)``."""
        b_ped = np.asarray(b_ped, dtype=float)
        return np.stack([b_ped, 1.0 - b_ped], axis=-1)

    def margins(self, coords):
        c = self.cfg
        coords = np.asarray(coords, dtype=float)
        px, py, po = coords[..., 0], coords[..., 1], coords[..., 3]
        coll = np.sqrt((px - c.cross_line_x) ** 2 + (py - po) ** 2) - c.solve_radius
        road = c.solve_halfwidth - np.abs(py - c.road_center_y)
        return np.minimum(coll, road), px - c.target_x

    def next_belief(self, b_ped, k, j):
        y = self.opp_u[k] + self.obs_vals[j]
        return bayes_update_b0(b_ped, y, self.means[0], self.means[1], self.cfg.likelihood_sigma)

    # -- Game protocol (reference backend) --------------------------------

    @property
    def n_ego(self) -> int:
        return len(self.ego_mesh)

    @property
    def n_opp(self) -> int:
        return len(self.opp_u)

    @property
    def n_noise(self) -> int:
        return len(self.w_vals) * len(self.obs_vals)

    def opp_mask(self, coords):
        coords = np.asarray(coords, dtype=float)
        if not self.mode.uses_belief:
            return np.ones(coords.shape[:-1] + (self.n_opp,), dtype=bool)
        probs = self.type_probs(coords[..., 4])
        return above_threshold(probs[..., self.opp_tag], self.mode.eps)

    def successor(self, coords, ie, io, inoise):
        c = self.cfg
        iw, j = divmod(inoise, len(self.obs_vals))
        a, ul = self.ego_mesh[ie]
        out = np.array(coords, dtype=float, copy=True)
        px, py, v, po = coords[..., 0], coords[..., 1], coords[..., 2], coords[..., 3]
        out[..., 0] = px + v * c.dt
        out[..., 1] = py + ul * c.dt
        out[..., 2] = np.clip(v + a * c.dt + self.w_vals[iw], c.v_min, c.v_max)
        out[..., 3] = po + self.opp_u[io] * c.dt
        if self.mode.uses_belief:
            out[..., 4] = self.next_belief(coords[..., 4], io, j)
        return out

    # -- fast runtime queries ----------------------------------------------

    def point_coords(self, z) -> np.ndarray:
        """``(p_x, p_y, v, p_y_opp, b_ped)``; b is ignored by belief-less tables."""
        if isinstance(z, JointState):
            p = z.phys
            return np.array([p.p_x, p.p_y, p.v, p.p_y_opp, z.belief[0]])
        return np.asarray(z, dtype=float)

    def q_matrix(self, table: ValueTable, z, opp_idx=None) -> np.ndarray:
        """Successor values ``Q[ego, opp]`` (noise already minimized) for the
        opponent mesh entries ``opp_idx`` (default: all)."""
        c = self.cfg
        x = self.point_coords(z)
        idx = np.arange(self.n_opp) if opp_idx is None else np.asarray(opp_idx, dtype=np.int64)
        u = self.opp_u[idx]
        if self.mode.uses_belief:
            bn = np.array([[self.next_belief(x[4], k, j) for j in range(len(self.obs_vals))] for k in idx])
        else:
            bn = np.zeros((len(idx), 1))
        bn = bn.reshape(len(idx), -1)
        V5, mins, steps = as_5d(table)
        return K.q_matrix(V5, mins, steps, x, self.a_vals, self.l_vals, u, bn, self.w_vals,
                          c.dt, c.v_min, c.v_max, c.cross_line_x, c.road_center_y, c.solve_halfwidth,
                          c.solve_radius, c.target_x, self.clip)

    def successor_value(self, table: ValueTable, z_next: JointState) -> float:
        """Value read at a successor, with the same margin clipping as the backup."""
        x = self.point_coords(z_next)
        V5, mins, steps = as_5d(table)
        val = K.interp_point(V5, mins, steps, x)
        if self.clip:
            g, l = self.margins(x)
            val = min(float(g), max(float(l), val))
        return val


def as_5d(table: ValueTable):
    arr = table.array
    mins, steps = table.grid.mins(), table.grid.steps()
    if arr.ndim == 4:
        arr = arr[..., None]
        mins = np.append(mins, 0.0)
        steps = np.append(steps, 1.0)
    return arr, mins, steps


# ---------------------------------------------------------------------------
# Generic (reference) backend
# ---------------------------------------------------------------------------

class Game(Protocol):
    """Minimal interface for the reference solver.

    ``successor`` maps node coordinates ``(M, d)`` to successor coordinates for
    ego control ``ie``, opponent control ``io`` and noise index ``inoise``.
    ``opp_mask`` returns which opponent controls are admissible at each point.
    """

    grid: Grid
    n_ego: int
    n_opp: int
    n_noise: int
    gamma: float
    clip: bool

    def margins(self, coords) -> tuple[np.ndarray, np.ndarray]: ...

    def successor(self, coords, ie: int, io: int, inoise: int) -> np.ndarray: ...

    def opp_mask(self, coords) -> np.ndarray: ...


def reference_q(V: np.ndarray, game: Game, coords: np.ndarray) -> np.ndarray:
    """Successor values ``(M, n_ego, n_opp)``, minimized over noise; masked
    opponent entries are ``+inf``."""
    grid = game.grid
    mins, steps = grid.mins(), grid.steps()
    M = coords.shape[0]
    mask = game.opp_mask(coords)
    Q = np.full((M, game.n_ego, game.n_opp), np.inf)
    for ie in range(game.n_ego):
        for io in range(game.n_opp):
            worst = np.full(M, np.inf)
            for inoise in range(game.n_noise):
                nxt = game.successor(coords, ie, io, inoise)
                val = interp_array(V, mins, steps, nxt)
                if game.clip:
                    g2, l2 = game.margins(nxt)
                    val = np.minimum(g2, np.maximum(l2, val))
                worst = np.minimum(worst, val)
            Q[:, ie, io] = np.where(mask[:, io], worst, np.inf)
    return Q


def reference_backup(V: np.ndarray, game: Game, coords: np.ndarray) -> np.ndarray:
    g, l = game.margins(coords)
    best = reference_q(V, game, coords).min(axis=2).max(axis=1)
    return np.minimum(g, np.maximum(l, game.gamma * best))


def reference_value_iteration(game: Game, params: SolverParams, callback: Callable | None = None):
    """Jacobi value iteration over ``game.grid`` using numpy only.

    Returns ``(values, residual_history, converged)`` with values shaped like the grid.
    """
    grid = game.grid
    coords = grid.coords().reshape(-1, len(grid.axes))
    g, l = game.margins(coords)
    V = np.minimum(g, l).reshape(grid.shape)
    history = []
    t0 = time.perf_counter()
    converged = False
    for it in range(1, params.max_iters + 1):
        new = reference_backup(V, game, coords).reshape(grid.shape)
        if np.isnan(new).any():
            raise SolverError(f"NaN in sweep {it}")
        resid = float(np.max(np.abs(new - V)))
        V = new
        history.append((it, resid, time.perf_counter() - t0))
        if callback:
            callback(it, resid)
        if resid < params.tol:
            converged = True
            break
    return V, history, converged


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

@dataclass
class SolveResult:
    table: ValueTable
    history: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.table.converged

    def residual_csv(self) -> str:
        lines = ["sweep,residual,wall_seconds"]
        lines += [f"{s},{r:.17g},{w:.6f}" for s, r, w in self.history]
        return "\n".join(lines) + "\n"


def value_iteration(grid: Grid, mode: SolveMode, cfg: ScenarioConfig, params: SolverParams | None = None,
                    callback: Callable[[int, float], None] | None = None) -> SolveResult:
    """Solve the reach-avoid game to a fixed point by Jacobi sweeps.

    Starts from ``V0 = min(g, l)`` and stops when the sup-norm change drops
    below ``params.tol`` or after ``params.max_iters`` sweeps; a table that
    did not converge is returned with ``meta["converged"] = False``.
    """
    params = params or SolverParams()
    game = CrossingGame(cfg, grid, mode, params)
    if params.backend == "reference":
        V, history, converged = reference_value_iteration(game, params, callback)
    else:
        set_threads(params.threads)
        V, history, converged = _fast_iteration(game, callback)
    meta = {
        "mode": mode.name(),
        "mode_kind": mode.kind,
        "types": list(mode.opp_types(cfg.n_types)),
        "eps": mode.eps,
        "dt": cfg.dt,
        "discount": params.discount,
        "tol": params.tol,
        "max_iters": params.max_iters,
        "ego_mesh": list(params.ego_mesh),
        "opp_mesh": params.opp_mesh,
        "margin_clip": params.margin_clip,
        "scenario_hash": cfg.scenario_hash(),
        "residual": history[-1][1] if history else None,
        "iterations": len(history),
        "converged": converged,
    }
    if not converged:
        log.warning("%s solve did not converge in %d sweeps (residual %.3g)", mode.name(), len(history),
                    history[-1][1] if history else float("nan"))
    return SolveResult(ValueTable(grid, V.reshape(-1), meta), history)


def _fast_iteration(game: CrossingGame, callback=None, init: np.ndarray | None = None):
    cfg, grid, mode = game.cfg, game.grid, game.mode
    params = game.params
    ax = {a.name: a for a in grid.axes}
    px, py, vv, po = (ax[n].nodes for n in ("p_x", "p_y", "v", "p_y_opp"))
    n0, n1, n2, n3 = len(px), len(py), len(vv), len(po)
    bnodes = ax["b"].nodes if mode.uses_belief else np.zeros(1)
    n4 = len(bnodes)
    nj = len(game.obs_vals)
    # a control shared by several type meshes has one successor; keep it once,
    # admissible wherever any of its types is
    uniq, first = np.unique(game.opp_u, return_index=True)
    nk = len(uniq)
    C = nk * nj

    po_next = np.empty((C, n3))
    b_next = np.zeros((C, n4))
    allowed = np.ones((C, n4), dtype=np.bool_)
    for k in range(nk):
        same = np.flatnonzero(game.opp_u == uniq[k])
        for j in range(nj):
            c = k * nj + j
            po_next[c] = po + uniq[k] * cfg.dt
            if mode.uses_belief:
                b_next[c] = game.next_belief(bnodes, first[k], j)
                probs = game.type_probs(bnodes)[:, game.opp_tag[same]]
                allowed[c] = above_threshold(probs, mode.eps).any(axis=1)
    po_lo, po_t = K.locate_many(po_next, ax["p_y_opp"].min, ax["p_y_opp"].step, n3)
    if mode.uses_belief:
        b_lo, b_t = K.locate_many(b_next, 0.0, ax["b"].step, n4)
    else:
        b_lo, b_t = np.zeros((C, 1), np.int64), np.zeros((C, 1))

    px_next = px[:, None] + vv[None, :] * cfg.dt
    px_lo, px_t = K.locate_many(px_next, ax["p_x"].min, ax["p_x"].step, n0)
    py_next = py[:, None] + game.l_vals[None, :] * cfg.dt
    py_lo, py_t = K.locate_many(py_next, ax["p_y"].min, ax["p_y"].step, n1)
    v_next = np.clip(vv[:, None, None] + game.a_vals[None, :, None] * cfg.dt + game.w_vals[None, None, :],
                     cfg.v_min, cfg.v_max)
    v_lo, v_t = K.locate_many(v_next, ax["v"].min, ax["v"].step, n2)

    PX, PY, PO = np.meshgrid(px, py, po, indexing="ij")
    g0 = np.minimum(np.sqrt((PX - cfg.cross_line_x) ** 2 + (PY - PO) ** 2) - cfg.solve_radius,
                    cfg.solve_halfwidth - np.abs(PY - cfg.road_center_y))
    l0 = px - cfg.target_x

    if init is None:
        V = np.minimum(g0[:, :, None, :, None], l0[:, None, None, None, None]) * np.ones((1, 1, n2, 1, n4))
    else:
        V = np.asarray(init, dtype=float).reshape(n0, n1, n2, n3, n4).copy()
    V = np.ascontiguousarray(V)
    out = np.empty_like(V)
    A = np.empty(V.shape[:4] + (C, n4))
    v_span = np.stack([v_lo.min(axis=(1, 2)), v_lo.max(axis=(1, 2)) + 1], axis=1)
    history = []
    t0 = time.perf_counter()
    converged = False
    po_at = np.ascontiguousarray(po_next)
    for it in range(1, params.max_iters + 1):
        K.opp_stage(V, po_lo, po_t, b_lo, b_t, A)
        resid = K.ego_stage(A, V, out, g0, l0, allowed,
                            px_lo, px_t, px_next, py_lo, py_t, py_next, v_lo, v_t, v_span,
                            po_at, cfg.cross_line_x, cfg.road_center_y, cfg.solve_halfwidth,
                            cfg.solve_radius, cfg.target_x, game.gamma, game.clip)
        if np.isnan(out).any():
            raise SolverError(f"NaN in sweep {it}")
        V, out = out, V
        history.append((it, float(resid), time.perf_counter() - t0))
        if callback:
            callback(it, float(resid))
        if resid < params.tol:
            converged = True
            break
    shape = grid.shape
    return V.reshape(shape), history, converged


def extend_table(table: ValueTable, cfg: ScenarioConfig, sweeps: int) -> SolveResult:
    """Run ``sweeps`` more Jacobi sweeps from a solved table.

    Iterates started at ``min(g, l)`` increase monotonically, so this yields
    the iterate a longer solve would have stopped at; it is how tables that
    stopped at different sweep counts are compared like for like.
    """
    from .policies import mode_from_meta, params_from_meta

    mode = mode_from_meta(table.meta)
    params = replace(params_from_meta(table.meta), tol=1e-300, max_iters=max(1, int(sweeps)))
    game = CrossingGame(cfg, table.grid, mode, params)
    V, history, _ = _fast_iteration(game, init=table.array)
    meta = dict(table.meta)
    meta["iterations"] = table.meta.get("iterations", 0) + len(history)
    meta["residual"] = history[-1][1]
    meta["converged"] = history[-1][1] < table.meta["tol"]
    return SolveResult(ValueTable(table.grid, V.reshape(-1), meta), history)


def backup(table: ValueTable, z: JointState, mode: SolveMode, cfg: ScenarioConfig,
           params: SolverParams | None = None) -> float:
    """One backup of ``table`` at an arbitrary joint state."""
    params = params or SolverParams()
    game = CrossingGame(cfg, table.grid, mode, params)
    x = game.point_coords(z)
    Q = game.q_matrix(table, x)
    mask = game.opp_mask(x[None, :])[0] if mode.uses_belief else np.ones(game.n_opp, bool)
    best = np.where(mask[None, :], Q, np.inf).min(axis=1).max()
    g, l = game.margins(x)
    return float(min(g, max(l, params.discount * best)))


def value_at(table: ValueTable, z, cfg: ScenarioConfig | None = None) -> float:
    """Interpolated value; with ``cfg`` it is clipped to ``[min(g, l), g]``."""
    val = interpolate(table, z)
    if cfg is not None and isinstance(z, (JointState, PhysicalState)):
        from .state_space import margin_target, solver_margin

        phys = z.phys if isinstance(z, JointState) else z
        val = min(solver_margin(phys, cfg), max(margin_target(phys, cfg), val))
    return val


def is_safe(table: ValueTable, z, cfg: ScenarioConfig | None = None) -> bool:
    """Membership in the zero superlevel set (inclusive)."""
    return value_at(table, z, cfg) >= 0.0


def export_slice(table: ValueTable, fixed: dict[str, float], free: Sequence[str]) -> np.ndarray:
    """Interpolated values over the node grid of two free axes, all other
    axes pinned to ``fixed``. Rows follow ``free[0]``, columns ``free[1]``."""
    names = table.grid.names
    free = tuple(free)
    if len(free) != 2 or free[0] == free[1]:
        raise ValidationError("exactly two distinct free axes are required")
    if set(fixed) & set(free):
        raise ValidationError("an axis cannot be both fixed and free")
    if set(fixed) | set(free) != set(names) or len(fixed) + 2 != len(names):
        raise ValidationError(f"fixed and free axes must cover {names} exactly once")
    i, j = table.grid.index(free[0]), table.grid.index(free[1])
    ni, nj = table.grid.axes[i].nodes, table.grid.axes[j].nodes
    pts = np.empty((len(ni), len(nj), len(names)))
    for d, name in enumerate(names):
        if name in fixed:
            pts[..., d] = float(fixed[name])
    pts[..., i] = ni[:, None]
    pts[..., j] = nj[None, :]
    return interp_array(table.array, table.grid.mins(), table.grid.steps(), pts)
