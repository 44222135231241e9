"""Core domain types: hypotheses, control boxes, physical/joint states, beliefs
and the scenario configuration, plus the target/failure margin functions.

Sign conventions: the target set is ``{x : margin_target(x) >= 0}`` and the
failure set is ``{x : margin_failure(x) < 0}``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when an input violates a documented invariant."""


@dataclass(frozen=True)
class ControlBox:
    """Axis-aligned interval set ``[lower, upper]`` per control axis."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(x) for x in np.atleast_1d(self.lower))
        hi = tuple(float(x) for x in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or not lo:
            raise ValidationError(f"control box bounds have mismatched lengths: {lo} vs {hi}")
        if any(not (math.isfinite(a) and math.isfinite(b)) for a, b in zip(lo, hi)):
            raise ValidationError("control box bounds must be finite")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValidationError(f"empty control box: lower {lo} > upper {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def contains(self, u, tol: float = 1e-12) -> bool:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if u.shape != (self.dim,):
            return False
        return bool(np.all(u >= np.asarray(self.lower) - tol) and np.all(u <= np.asarray(self.upper) + tol))

    def clip(self, u) -> np.ndarray:
        return np.clip(np.atleast_1d(np.asarray(u, dtype=float)), self.lower, self.upper)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class Hypothesis:
    id: int
    label: str
    control_box: ControlBox

    def __post_init__(self):
        if int(self.id) != self.id or self.id < 0:
            raise ValidationError(f"hypothesis id must be a non-negative integer, got {self.id!r}")

    def to_dict(self) -> dict:
        return {"id": self.id, "label": self.label, "control_box": self.control_box.to_dict()}


@dataclass(frozen=True)
class PhysicalState:
    """Ego ``(p_x, p_y, v)`` plus the opponent's position on its crossing line."""

    p_x: float
    p_y: float
    v: float
    p_y_opp: float

    def __post_init__(self):
        for name in ("p_x", "p_y", "v", "p_y_opp"):
            val = float(getattr(self, name))
            if not math.isfinite(val):
                raise ValidationError(f"{name} must be finite, got {val}")
            object.__setattr__(self, name, val)

    @property
    def ego(self) -> tuple[float, float, float]:
        return (self.p_x, self.p_y, self.v)

    def as_array(self) -> np.ndarray:
        return np.array([self.p_x, self.p_y, self.v, self.p_y_opp])


@dataclass(frozen=True)
class Belief:
    """Categorical belief over hypothesis ids ``0..K-1``."""

    probs: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(x) for x in self.probs)
        if not p:
            raise ValidationError("belief must be non-empty")
        if any((not math.isfinite(x)) or x < 0.0 for x in p):
            raise ValidationError(f"belief entries must be finite and non-negative: {p}")
        if abs(math.fsum(p) - 1.0) > 1e-9:
            raise ValidationError(f"belief must sum to 1, got {math.fsum(p)}")
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return len(self.probs)

    def __getitem__(self, i):
        return self.probs[i]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs)


@dataclass(frozen=True)
class JointState:
    phys: PhysicalState
    belief: Belief


def make_belief(probs: Sequence[float]) -> Belief:
    """Normalize a non-negative weight vector into a :class:`Belief`.

    Raises ValidationError on empty, negative, non-finite or zero-mass input.
    Normalizing an already-normalized vector returns it unchanged, so the
    operation is idempotent.
    """
    p = np.asarray(probs, dtype=float).ravel()
    if p.size == 0:
        raise ValidationError("belief must be non-empty")
    if not np.all(np.isfinite(p)):
        raise ValidationError("belief entries must be finite")
    if np.any(p < 0):
        raise ValidationError(f"negative belief entry in {p.tolist()}")
    total = math.fsum(p)
    if total <= 0.0:
        raise ValidationError("belief has zero mass")
    if total == 1.0:
        return Belief(tuple(p.tolist()))
    return Belief(tuple((p / total).tolist()))


def map_type(b: Belief) -> int:
    """Most probable hypothesis id, ties broken toward the lowest id."""
    return int(np.argmax(b.as_array()))


# ---------------------------------------------------------------------------
# Scenario configuration
# ---------------------------------------------------------------------------

AXIS_NAMES = ("p_x", "p_y", "v", "p_y_opp", "b")

DEFAULT_GRID_NODES = {"p_x": 51, "p_y": 25, "v": 15, "p_y_opp": 41, "b": 21}

DEFAULT_INIT_RANGES = {
    "p_x": [0.0, 40.0],
    "p_y": None,  # road interior with 1 m margin
    "v": [15.0, 25.0],
    "p_y_opp": None,  # road center +/- 12 m
    "b_ped": [0.1, 0.9],
}

# fields that only affect closed-loop evaluation, not the solved game
SIM_ONLY_FIELDS = ("completion_x", "horizon_timeout", "init_ranges")


def _default_hypotheses() -> tuple[Hypothesis, ...]:
    return (
        Hypothesis(0, "ped", ControlBox((-2.0,), (2.0,))),
        Hypothesis(1, "seg", ControlBox((-8.0,), (0.0,))),
    )


@dataclass(frozen=True)
class ScenarioConfig:
    """Game definition for the road-crossing interaction.

    Positions are in m, velocities in m/s, accelerations in m/s^2, times in s.
    The ego control box is ``(a, u_lat)``; opponent boxes are 1D velocities
    along the crossing line located at ``p_x = cross_line_x``.
    """

    hypotheses: tuple[Hypothesis, ...] = field(default_factory=_default_hypotheses)
    ego_control_box: ControlBox = field(default_factory=lambda: ControlBox((-4.0, -1.5), (3.0, 1.5)))
    process_noise: tuple[tuple[float, ...], ...] = ()
    obs_noise: tuple[tuple[float, ...], ...] = ()
    dt: float = 0.1
    epsilon: float = 0.2
    target_x: float = 85.0
    completion_x: float = 100.0
    road_center_y: float = 90.0
    road_halfwidth: float = 4.0
    collision_radius: float = 2.0
    cross_line_x: float = 60.0
    likelihood_sigma: float = 1.5
    horizon_timeout: float = 10.0
    v_min: float = 0.0
    v_max: float = 30.0
    p_x_range: tuple[float, float] = (0.0, 100.0)
    opp_halfspan: float = 12.0
    # subtracted from the failure margin inside the solved game only
    safety_buffer: float = 0.0
    grid_nodes: dict = field(default_factory=lambda: dict(DEFAULT_GRID_NODES))
    init_ranges: dict = field(default_factory=lambda: dict(DEFAULT_INIT_RANGES))

    def __post_init__(self):
        hyps = tuple(self.hypotheses)
        object.__setattr__(self, "hypotheses", hyps)
        if not hyps:
            raise ValidationError("at least one hypothesis is required")
        if [h.id for h in hyps] != list(range(len(hyps))):
            raise ValidationError("hypothesis ids must be 0..K-1 in order with no gaps")
        opp_dim = hyps[0].control_box.dim
        if any(h.control_box.dim != opp_dim for h in hyps):
            raise ValidationError("all hypothesis control boxes must share one dimension")
        if opp_dim != 1:
            raise ValidationError("the crossing-line opponent has a 1D velocity control")
        if self.ego_control_box.dim != 2:
            raise ValidationError("ego control box must be 2D (a, u_lat)")
        object.__setattr__(self, "process_noise", _noise_tuple(self.process_noise, 1, "process_noise"))
        object.__setattr__(self, "obs_noise", _noise_tuple(self.obs_noise, opp_dim, "obs_noise"))
        for name in ("dt", "collision_radius", "road_halfwidth", "likelihood_sigma", "horizon_timeout", "opp_halfspan"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        if not 0.0 <= self.safety_buffer < self.road_halfwidth:
            raise ValidationError("safety_buffer must lie in [0, road_halfwidth)")
        k = len(hyps)
        if not 0.0 <= self.epsilon <= 1.0 / k + 1e-12:
            raise ValidationError(f"epsilon must lie in [0, 1/K] = [0, {1.0 / k:g}], got {self.epsilon}")
        if not self.v_min < self.v_max:
            raise ValidationError("v_min must be < v_max")
        pr = tuple(float(x) for x in self.p_x_range)
        if len(pr) != 2 or not pr[0] < pr[1]:
            raise ValidationError("p_x_range must be (min, max) with min < max")
        object.__setattr__(self, "p_x_range", pr)
        nodes = dict(DEFAULT_GRID_NODES)
        unknown = set(self.grid_nodes) - set(nodes)
        if unknown:
            raise ValidationError(f"unknown grid axes {sorted(unknown)}")
        nodes.update({k_: int(v) for k_, v in self.grid_nodes.items()})
        if any(n < 2 for n in nodes.values()):
            raise ValidationError("every grid axis needs at least 2 nodes")
        object.__setattr__(self, "grid_nodes", nodes)
        ranges = dict(DEFAULT_INIT_RANGES)
        unknown = set(self.init_ranges) - set(ranges)
        if unknown:
            raise ValidationError(f"unknown init range keys {sorted(unknown)}")
        ranges.update(self.init_ranges)
        object.__setattr__(self, "init_ranges", ranges)

    @property
    def solve_radius(self) -> float:
        return self.collision_radius + self.safety_buffer

    @property
    def solve_halfwidth(self) -> float:
        return self.road_halfwidth - self.safety_buffer

    @property
    def n_types(self) -> int:
        return len(self.hypotheses)

    @property
    def ego_lower(self) -> np.ndarray:
        return np.asarray(self.ego_control_box.lower)

    @property
    def ego_upper(self) -> np.ndarray:
        return np.asarray(self.ego_control_box.upper)

    def check_state(self, x: PhysicalState) -> None:
        if not self.v_min - 1e-9 <= x.v <= self.v_max + 1e-9:
            raise ValidationError(f"v={x.v} outside [{self.v_min}, {self.v_max}]")

    def resolved_init_ranges(self) -> dict[str, tuple[float, float]]:
        r = dict(self.init_ranges)
        if r["p_y"] is None:
            r["p_y"] = (self.road_center_y - self.road_halfwidth + 1.0, self.road_center_y + self.road_halfwidth - 1.0)
        if r["p_y_opp"] is None:
            r["p_y_opp"] = (self.road_center_y - self.opp_halfspan, self.road_center_y + self.opp_halfspan)
        return {k: (float(v[0]), float(v[1])) for k, v in r.items()}

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if f.name == "hypotheses":
                val = [h.to_dict() for h in val]
            elif f.name == "ego_control_box":
                val = val.to_dict()
            elif isinstance(val, tuple):
                val = [list(v) if isinstance(v, tuple) else v for v in val]
            out[f.name] = val
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ValidationError("scenario config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown scenario fields: {sorted(unknown)}")
        kw: dict[str, Any] = dict(d)
        try:
            if "hypotheses" in kw:
                hyps = []
                for h in kw["hypotheses"]:
                    extra = set(h) - {"id", "label", "control_box"}
                    if extra:
                        raise ValidationError(f"unknown hypothesis fields: {sorted(extra)}")
                    hyps.append(Hypothesis(int(h["id"]), str(h["label"]), _box_from(h["control_box"])))
                kw["hypotheses"] = tuple(hyps)
            if "ego_control_box" in kw:
                kw["ego_control_box"] = _box_from(kw["ego_control_box"])
            for name in ("process_noise", "obs_noise"):
                if name in kw:
                    kw[name] = tuple(tuple(float(x) for x in np.atleast_1d(v)) for v in kw[name])
            if "p_x_range" in kw:
                kw["p_x_range"] = tuple(kw["p_x_range"])
            return cls(**kw)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed scenario config: {exc}") from exc

    def scenario_hash(self) -> str:
        """Short digest of every field that changes the solved game."""
        d = self.to_dict()
        for name in SIM_ONLY_FIELDS:
            d.pop(name, None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _box_from(d) -> ControlBox:
    if not isinstance(d, dict) or set(d) != {"lower", "upper"}:
        raise ValidationError(f"control box must have exactly 'lower' and 'upper': {d!r}")
    return ControlBox(tuple(np.atleast_1d(d["lower"]).tolist()), tuple(np.atleast_1d(d["upper"]).tolist()))


def _noise_tuple(vals, dim, name):
    out = tuple(tuple(float(x) for x in np.atleast_1d(v)) for v in vals)
    if any(len(v) != dim for v in out):
        raise ValidationError(f"{name} vectors must have dimension {dim}")
    return out


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return ScenarioConfig.from_dict(data)


def save_config(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# Margins
# ---------------------------------------------------------------------------

def margin_target(x: PhysicalState, cfg: ScenarioConfig) -> float:
    return x.p_x - cfg.target_x


def collision_term(x: PhysicalState, cfg: ScenarioConfig) -> float:
    return math.hypot(x.p_x - cfg.cross_line_x, x.p_y - x.p_y_opp) - cfg.collision_radius


def road_term(x: PhysicalState, cfg: ScenarioConfig) -> float:
    return cfg.road_halfwidth - abs(x.p_y - cfg.road_center_y)


def margin_failure(x: PhysicalState, cfg: ScenarioConfig) -> float:
    """Signed failure margin: negative on collision or when off the road."""
    return min(collision_term(x, cfg), road_term(x, cfg))


def solver_margin(x: PhysicalState, cfg: ScenarioConfig) -> float:
    """Failure margin of the solved game, shrunk by ``cfg.safety_buffer``."""
    return margin_failure(x, cfg) - cfg.safety_buffer
