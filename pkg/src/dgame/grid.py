"""Rectangular grids over the joint state, multilinear interpolation, control
meshes and the ``BSRA`` value-table file format.

BSRA v1 layout::

    b"BSRA" | version (u8) | header length (u32 LE) | UTF-8 JSON header | float64 LE values

The header holds ``axes`` (name/min/max/n in storage order) and ``meta``.
Values are row-major in axis order.
"""

from __future__ import annotations

import itertools
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .state_space import (
    AXIS_NAMES,
    Belief,
    ControlBox,
    JointState,
    PhysicalState,
    ScenarioConfig,
    ValidationError,
)

MAGIC = b"BSRA"
VERSION = 1


@dataclass(frozen=True)
class Axis:
    name: str
    min: float
    max: float
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValidationError(f"axis {self.name!r} needs n >= 2 nodes, got {self.n}")
        if not (math.isfinite(self.min) and math.isfinite(self.max)) or not self.min < self.max:
            raise ValidationError(f"axis {self.name!r} needs finite min < max")
        object.__setattr__(self, "min", float(self.min))
        object.__setattr__(self, "max", float(self.max))
        object.__setattr__(self, "n", int(self.n))

    @property
    def step(self) -> float:
        return (self.max - self.min) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        # min + i*step keeps node coordinates reproducible across callers
        return self.min + np.arange(self.n) * self.step

    def to_dict(self) -> dict:
        return {"name": self.name, "min": self.min, "max": self.max, "n": self.n}


@dataclass(frozen=True)
class Grid:
    axes: tuple[Axis, ...]

    def __post_init__(self):
        axes = tuple(self.axes)
        object.__setattr__(self, "axes", axes)
        names = [a.name for a in axes]
        if len(set(names)) != len(names):
            raise ValidationError(f"axis names must be unique: {names}")
        if "b" in names:
            b = axes[names.index("b")]
            if b.min != 0.0 or b.max != 1.0:
                raise ValidationError("the belief axis must span exactly [0, 1]")

    @classmethod
    def for_scenario(cls, cfg: ScenarioConfig, belief: bool = True, nodes: dict | None = None) -> "Grid":
        n = dict(cfg.grid_nodes)
        if nodes:
            n.update(nodes)
        yc, hw, span = cfg.road_center_y, cfg.road_halfwidth, cfg.opp_halfspan
        axes = [
            Axis("p_x", cfg.p_x_range[0], cfg.p_x_range[1], n["p_x"]),
            Axis("p_y", yc - hw, yc + hw, n["p_y"]),
            Axis("v", cfg.v_min, cfg.v_max, n["v"]),
            Axis("p_y_opp", yc - span, yc + span, n["p_y_opp"]),
        ]
        if belief:
            axes.append(Axis("b", 0.0, 1.0, n["b"]))
        return cls(tuple(axes))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.n for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def has_belief(self) -> bool:
        return "b" in self.names

    def mins(self) -> np.ndarray:
        return np.array([a.min for a in self.axes])

    def steps(self) -> np.ndarray:
        return np.array([a.step for a in self.axes])

    def coords(self) -> np.ndarray:
        """All node coordinates, shape ``grid.shape + (ndim,)``."""
        mesh = np.meshgrid(*[a.nodes for a in self.axes], indexing="ij")
        return np.stack(mesh, axis=-1)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"grid has no axis {name!r}; axes are {self.names}") from None

    def to_dict(self) -> list[dict]:
        return [a.to_dict() for a in self.axes]


@dataclass(frozen=True)
class ValueTable:
    grid: Grid
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64)).reshape(-1)
        if vals.size != self.grid.size:
            raise ValidationError(f"value array has {vals.size} entries, grid needs {self.grid.size}")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("value table contains non-finite entries")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    @property
    def converged(self) -> bool:
        return bool(self.meta.get("converged", False))


# ---------------------------------------------------------------------------
# Node access and interpolation
# ---------------------------------------------------------------------------

def node_state(grid: Grid, idx: Sequence[int]) -> JointState:
    """Grid node as a :class:`JointState`; belief-less grids get a uniform belief."""
    idx = tuple(int(i) for i in idx)
    if len(idx) != len(grid.axes) or any(not 0 <= i < a.n for i, a in zip(idx, grid.axes)):
        raise IndexError(f"node index {idx} out of bounds for grid shape {grid.shape}")
    c = {a.name: a.min + i * a.step for a, i in zip(grid.axes, idx)}
    phys = PhysicalState(c["p_x"], c["p_y"], c["v"], c["p_y_opp"])
    b_ped = c.get("b", 0.5)
    return JointState(phys, Belief((b_ped, 1.0 - b_ped)))


def state_coords(grid: Grid, z: JointState | PhysicalState) -> np.ndarray:
    """Coordinate vector of a state in the grid's axis order."""
    phys = z.phys if isinstance(z, JointState) else z
    c = [phys.p_x, phys.p_y, phys.v, phys.p_y_opp]
    if grid.has_belief:
        if not isinstance(z, JointState):
            raise ValidationError("belief grid needs a JointState")
        c.append(z.belief[0])
    return np.asarray(c[: len(grid.axes)], dtype=float)


def interp_array(values: np.ndarray, mins, steps, points) -> np.ndarray:
    """Multilinear interpolation on a uniform grid with boundary clamping.

    ``values`` has one dimension per axis (size-1 axes are allowed and act as
    constants); ``points`` has shape ``(..., ndim)``.
    """
    values = np.asarray(values, dtype=float)
    pts = np.asarray(points, dtype=float)
    batch = pts.shape[:-1]
    pts = pts.reshape(-1, values.ndim)
    shape = values.shape
    lo_idx, frac = [], []
    for d in range(values.ndim):
        n = shape[d]
        if n == 1:
            lo_idx.append(np.zeros(len(pts), dtype=np.intp))
            frac.append(np.zeros(len(pts)))
            continue
        s = (pts[:, d] - mins[d]) / steps[d]
        s = np.clip(s, 0.0, n - 1)
        i = np.minimum(np.floor(s).astype(np.intp), n - 2)
        lo_idx.append(i)
        frac.append(s - i)
    corners = np.empty((2,) * values.ndim + (len(pts),))
    for corner in itertools.product((0, 1), repeat=values.ndim):
        ids = tuple(lo_idx[d] + (c if shape[d] > 1 else 0) for d, c in enumerate(corner))
        corners[corner] = values[ids]
    # reduce one axis at a time in lerp form, which is exact on constant
    # edges; t == 1 picks the upper node so node values are reproduced exactly
    for d in range(values.ndim):
        a, b = corners[0], corners[1]
        t = frac[d]
        corners = np.where(t == 1.0, b, a + t * (b - a))
    out = corners
    return out.reshape(batch)


def interpolate(table: ValueTable, z) -> float:
    """Value at ``z`` (a state or a coordinate vector), clamped to the grid."""
    if isinstance(z, (JointState, PhysicalState)):
        pt = state_coords(table.grid, z)
    else:
        pt = np.asarray(z, dtype=float)
    return float(interp_array(table.array, table.grid.mins(), table.grid.steps(), pt[None, :])[0])


def discretize_controls(box: ControlBox, n_per_axis) -> np.ndarray:
    """Uniform mesh with both endpoints per axis, Cartesian product in
    lexicographic axis order. Degenerate axes collapse to one value.
    Returns shape ``(n_points, dim)``."""
    counts = np.broadcast_to(np.atleast_1d(n_per_axis), (box.dim,))
    per_axis = []
    for lo, hi, n in zip(box.lower, box.upper, counts):
        if lo == hi:
            per_axis.append(np.array([lo]))
            continue
        if n < 2:
            raise ValidationError("non-degenerate control axes need at least 2 mesh points")
        pts = np.linspace(lo, hi, int(n))
        pts[-1] = hi
        per_axis.append(pts)
    return np.array(list(itertools.product(*per_axis)), dtype=float).reshape(-1, box.dim)


# ---------------------------------------------------------------------------
# BSRA v1 files
# ---------------------------------------------------------------------------

def save_table(table: ValueTable, path: str | Path) -> None:
    header = json.dumps({"axes": table.grid.to_dict(), "meta": table.meta}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BI", VERSION, len(header)))
        fh.write(header)
        fh.write(table.values.astype("<f8").tobytes())


def load_table(path: str | Path) -> ValueTable:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValidationError(f"{path}: not a BSRA file")
    if len(raw) < 9:
        raise ValidationError(f"{path}: truncated header")
    version, hlen = struct.unpack("<BI", raw[4:9])
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported BSRA version {version}")
    header = json.loads(raw[9:9 + hlen].decode("utf-8"))
    grid = Grid(tuple(Axis(a["name"], a["min"], a["max"], a["n"]) for a in header["axes"]))
    body = raw[9 + hlen:]
    if len(body) != 8 * grid.size:
        raise ValidationError(f"{path}: expected {grid.size} values, found {len(body) // 8}")
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return ValueTable(grid, values, header["meta"])
