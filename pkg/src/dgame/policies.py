"""Runtime policies read off solved value tables.

Ego policies pick ``argmax_ue min_uo`` of the successor value and opponent
policies pick ``argmin_uo`` given the ego's committed control. Ties go to the
first element of the deterministic control mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import EgoControl, OppControl
from .grid import ValueTable, load_table
from .learning import EmptyInferredBound, active_types
from .solver import CrossingGame, NotConvergedError, SolveMode, SolverParams
from .state_space import JointState, ScenarioConfig, ValidationError, map_type

EGO_KINDS = ("DeceptionGame", "MAP", "Contingency", "Robust")
OPP_KINDS = ("ModeledAdversarial", "UnmodeledAdversarial", "Scripted")

CLI_EGO = {"deception": "DeceptionGame", "map": "MAP", "contingency": "Contingency", "robust": "Robust"}
CLI_OPP = {"modeled": "ModeledAdversarial", "unmodeled": "UnmodeledAdversarial", "scripted": "Scripted"}


def mode_from_meta(meta: dict) -> SolveMode:
    kind = meta["mode_kind"]
    if kind == "belief":
        return SolveMode.belief(meta["eps"])
    if kind == "robust":
        return SolveMode.robust()
    if kind == "per_type":
        return SolveMode.per_type(meta["types"][0])
    return SolveMode.subset(meta["types"])


def params_from_meta(meta: dict) -> SolverParams:
    return SolverParams(discount=meta["discount"], ego_mesh=tuple(meta["ego_mesh"]), opp_mesh=meta["opp_mesh"],
                        margin_clip=meta["margin_clip"])


class TableSet:
    """Solved tables for one scenario, keyed by mode name, with their game setups."""

    def __init__(self, cfg: ScenarioConfig, tables: dict[str, ValueTable], force: bool = False):
        self.cfg = cfg
        self.tables = dict(tables)
        self._games: dict[str, CrossingGame] = {}
        h = cfg.scenario_hash()
        for name, t in self.tables.items():
            if t.meta.get("scenario_hash") != h:
                raise ValidationError(f"table {name!r} was solved for scenario {t.meta.get('scenario_hash')}, not {h}")
            if t.meta.get("dt") != cfg.dt:
                raise ValidationError(f"table {name!r} has dt={t.meta.get('dt')}, scenario has {cfg.dt}")
            if not t.converged and not force:
                raise NotConvergedError(f"table {name!r} did not converge; pass force to use it anyway")

    @classmethod
    def load_dir(cls, cfg: ScenarioConfig, directory: str | Path, force: bool = False) -> "TableSet":
        """Load every ``*.bsra`` under ``directory/<scenario-hash>/``."""
        d = Path(directory) / cfg.scenario_hash()
        if not d.is_dir():
            raise ValidationError(f"no tables for scenario {cfg.scenario_hash()} under {directory}")
        tables = {p.stem: load_table(p) for p in sorted(d.glob("*.bsra"))}
        return cls(cfg, tables, force)

    def get(self, name: str) -> ValueTable:
        try:
            return self.tables[name]
        except KeyError:
            raise ValidationError(f"missing value table {name!r}") from None

    def subset_name(self, types) -> str:
        """Table name for a fixed opponent type set; singleton and full sets may
        be served by the equivalent per-type and robust tables."""
        types = tuple(sorted(types))
        candidates = ["subset_" + "_".join(map(str, types))]
        if len(types) == 1:
            candidates.append(f"per_type_{types[0]}")
        if types == tuple(range(self.cfg.n_types)):
            candidates.append("robust")
        for c in candidates:
            if c in self.tables:
                return c
        raise ValidationError(f"missing value table for opponent set {list(types)} (tried {candidates})")

    def game(self, name: str) -> CrossingGame:
        if name not in self._games:
            t = self.get(name)
            self._games[name] = CrossingGame(self.cfg, t.grid, mode_from_meta(t.meta), params_from_meta(t.meta))
        return self._games[name]


@dataclass
class PolicyBundle:
    """An ego policy kind plus the tables it reads.

    Required tables: ``belief`` (DeceptionGame), ``per_type_<k>`` for every
    type (MAP), one table per non-empty type subset (Contingency), ``robust``
    (Robust).
    """

    kind: str
    tables: TableSet
    eps: float = 0.2
    monotone_discard: bool = False

    def __post_init__(self):
        if self.kind not in EGO_KINDS:
            raise ValidationError(f"unknown ego policy {self.kind!r}")
        for name in self.required_tables():
            self.tables.get(name)
        if self.kind == "DeceptionGame":
            eps_t = self.tables.get("belief").meta.get("eps")
            if eps_t != self.eps:
                raise ValidationError(f"belief table solved with eps={eps_t}, policy uses eps={self.eps}")

    def required_tables(self) -> list[str]:
        k = self.tables.cfg.n_types
        if self.kind == "DeceptionGame":
            return ["belief"]
        if self.kind == "Robust":
            return ["robust"]
        if self.kind == "MAP":
            return [self.tables.subset_name((t,)) for t in range(k)]
        subsets = [tuple(t for t in range(k) if m >> t & 1) for m in range(1, 2**k)]
        return [self.tables.subset_name(s) for s in subsets]

    def new_memory(self) -> dict:
        return {"active": tuple(range(self.tables.cfg.n_types))}

    def table_for(self, z: JointState, memory: dict | None = None) -> tuple[str, np.ndarray | None]:
        """Table name this policy consults at ``z`` and, for the belief table,
        the admissible opponent mesh indices."""
        if self.kind == "DeceptionGame":
            game = self.tables.game("belief")
            return "belief", _inferred_indices(game, z, self.eps)
        if self.kind == "Robust":
            return "robust", None
        if self.kind == "MAP":
            return self.tables.subset_name((map_type(z.belief),)), None
        active = contingency_set(z, self.eps, self.tables.cfg.n_types,
                                 memory.get("active") if (memory is not None and self.monotone_discard) else None)
        if memory is not None and self.monotone_discard:
            memory["active"] = active
        return self.tables.subset_name(active), None

    def value(self, z: JointState, memory: dict | None = None) -> float:
        name, _ = self.table_for(z, dict(memory) if memory is not None else None)
        return self.tables.game(name).successor_value(self.tables.get(name), z)


def contingency_set(z: JointState, eps: float, n_types: int, previous=None) -> tuple[int, ...]:
    """Types with belief >= eps, optionally intersected with a previous set;
    falls back to every type when nothing qualifies."""
    act = set(active_types(z.belief, eps))
    if previous is not None:
        act &= set(previous)
    return tuple(sorted(act)) if act else tuple(range(n_types))


def _inferred_indices(game: CrossingGame, z: JointState, eps: float) -> np.ndarray:
    act = active_types(z.belief, eps)
    if not act:
        raise EmptyInferredBound(f"no hypothesis has belief >= {eps}")
    return np.flatnonzero(np.isin(game.opp_tag, act))


def ego_action(bundle: PolicyBundle, z: JointState, cfg: ScenarioConfig | None = None,
               memory: dict | None = None) -> EgoControl:
    """Maximin ego control over the consulted table's meshes."""
    name, idx = bundle.table_for(z, memory)
    game = bundle.tables.game(name)
    Q = game.q_matrix(bundle.tables.get(name), z, idx)
    ie = int(np.argmax(Q.min(axis=1)))
    a, ul = game.ego_mesh[ie]
    return EgoControl(float(a), float(ul))


@dataclass
class OpponentPolicy:
    kind: str
    eps: float | None = None
    table: ValueTable | None = None
    game: CrossingGame | None = None
    true_type: int | None = None
    noise_std: float = 0.5
    gain: float = 1.0

    def __post_init__(self):
        if self.kind not in OPP_KINDS:
            raise ValidationError(f"unknown opponent policy {self.kind!r}")
        if self.kind != "Scripted":
            if self.table is None or self.eps is None:
                raise ValidationError("adversarial opponents need the belief table and a threshold")
            if self.game is None:
                meta = self.table.meta
                raise ValidationError(f"adversarial opponent needs the game setup for table {meta.get('mode')!r}")

    @classmethod
    def adversarial(cls, tables: TableSet, eps: float, modeled: bool = True) -> "OpponentPolicy":
        kind = "ModeledAdversarial" if modeled else "UnmodeledAdversarial"
        return cls(kind, eps=eps, table=tables.get("belief"), game=tables.game("belief"))

    @classmethod
    def scripted(cls, true_type: int | None = None, noise_std: float = 0.5) -> "OpponentPolicy":
        return cls("Scripted", true_type=true_type, noise_std=noise_std)

    def candidate_mesh(self, z: JointState) -> np.ndarray:
        """Opponent controls this policy may pick at ``z``."""
        if self.kind == "Scripted":
            raise ValidationError("scripted opponents have no candidate mesh")
        return self.game.opp_u[_inferred_indices(self.game, z, self.eps)]


def opponent_action(pol: OpponentPolicy, z: JointState, u_e: EgoControl, cfg: ScenarioConfig,
                    rng: np.random.Generator | None = None, true_type: int | None = None) -> OppControl:
    """Opponent control given the ego's committed control.

    Adversarial kinds minimize the successor value over the thresholded mesh
    (deterministic). The scripted kind heads for the far side of the road with
    clipped Gaussian noise inside its true type's box.
    """
    if pol.kind == "Scripted":
        return _scripted(pol, z, cfg, rng, pol.true_type if pol.true_type is not None else true_type)
    game = pol.game
    idx = _inferred_indices(game, z, pol.eps)
    Q = _opp_row(game, pol.table, z, u_e, idx)
    return OppControl(float(game.opp_u[idx[int(np.argmin(Q))]]))


def _opp_row(game: CrossingGame, table: ValueTable, z, u_e: EgoControl, idx) -> np.ndarray:
    from . import _kernels as K
    from .solver import as_5d

    c = game.cfg
    x = game.point_coords(z)
    bn = np.array([[game.next_belief(x[4], k, j) for j in range(len(game.obs_vals))] for k in idx])
    V5, mins, steps = as_5d(table)
    Q = K.q_matrix(V5, mins, steps, x, np.array([u_e.a]), np.array([u_e.u_lat]), game.opp_u[idx],
                   bn.reshape(len(idx), -1), game.w_vals, c.dt, c.v_min, c.v_max, c.cross_line_x,
                   c.road_center_y, c.solve_halfwidth, c.solve_radius, c.target_x, game.clip)
    return Q[0]


def _scripted(pol: OpponentPolicy, z: JointState, cfg: ScenarioConfig, rng, true_type) -> OppControl:
    if true_type is None:
        raise ValidationError("scripted opponent needs a true type")
    if rng is None:
        raise ValidationError("scripted opponent needs an RNG stream")
    box = cfg.hypotheses[true_type].control_box
    y = z.phys.p_y_opp
    side = 1.0 if y <= cfg.road_center_y else -1.0
    goal = cfg.road_center_y + side * (cfg.road_halfwidth + 3.0)
    u = pol.gain * (goal - y) + rng.normal(0.0, pol.noise_std)
    return OppControl(float(box.clip([u])[0]))
