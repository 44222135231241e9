"""Seeded closed-loop trials, initial-state sampling and Table-1 style metrics.

TrialLog JSON schema (``TrialLog.to_dict``)::

    {
      "trial": int, "master_seed": int, "seed": int,
      "ego_policy": str, "opp_policy": str, "hidden_type": int,
      "outcome": {"kind": "Completed" | "Failed" | "TimedOut", "time_s": float | null},
      "min_g": float,
      "steps": [
        {"t": float, "state": [p_x, p_y, v, p_y_opp], "belief": [b_0, ...],
         "g": float, "value": float | null, "active": [type ids],
         "u_e": [a, u_lat] | null, "u_o": [u_y] | null}
      ]
    }

One entry is logged per visited state, so ``steps[0]`` is the initial state
and the last entry is the state at which the outcome was decided. Controls
are ``null`` on that last entry.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import EgoControl, Learner, OppControl, joint_step
from .learning import active_types
from .policies import OpponentPolicy, PolicyBundle, ego_action, opponent_action
from .state_space import (
    JointState,
    PhysicalState,
    ScenarioConfig,
    ValidationError,
    make_belief,
    margin_failure,
)

OUTCOMES = ("Completed", "Failed", "TimedOut")
CSV_COLUMNS = ("trial", "seed", "hidden_type", "outcome", "time_s", "min_g", "steps")


class TrialError(RuntimeError):
    """A single trial failed hard; carries the trial index."""

    def __init__(self, trial: int, cause: BaseException):
        super().__init__(f"trial {trial} failed: {cause}")
        self.trial = trial
        self.cause = cause


def trial_seed(master_seed: int, trial_index: int) -> int:
    """Counter-based 64-bit seed for one trial."""
    data = struct.pack("<QQ", int(master_seed) & (2**64 - 1), int(trial_index))
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


@dataclass
class TrialConfig:
    """Everything needed to run one trial.

    ``start_filter`` picks the table used for safe-start rejection sampling:
    ``"own"`` uses the ego policy's table at the sampled state, ``"none"``
    disables filtering, and any other string names a table of the bundle's
    :class:`~dgame.policies.TableSet` (e.g. ``"robust"``) so that several ego
    policies can share identical initial states.
    """

    master_seed: int
    trial_index: int
    ego: PolicyBundle
    opp: OpponentPolicy
    scenario: ScenarioConfig
    init_ranges: dict | None = None
    start_filter: str = "own"
    max_resample: int = 100

    def __post_init__(self):
        ranges = self.ranges()
        c = self.scenario
        grid_box = {
            "p_x": c.p_x_range,
            "p_y": (c.road_center_y - c.road_halfwidth, c.road_center_y + c.road_halfwidth),
            "v": (c.v_min, c.v_max),
            "p_y_opp": (c.road_center_y - c.opp_halfspan, c.road_center_y + c.opp_halfspan),
            "b_ped": (0.0, 1.0),
        }
        for k, (lo, hi) in ranges.items():
            if lo > hi:
                raise ValidationError(f"init range {k} has min > max")
            glo, ghi = grid_box[k]
            if lo < glo or hi > ghi:
                raise ValidationError(f"init range {k}=[{lo}, {hi}] leaves the grid domain [{glo}, {ghi}]")

    def ranges(self) -> dict[str, tuple[float, float]]:
        r = self.scenario.resolved_init_ranges()
        if self.init_ranges:
            r.update({k: (float(v[0]), float(v[1])) for k, v in self.init_ranges.items()})
        return r

    @property
    def seed(self) -> int:
        return trial_seed(self.master_seed, self.trial_index)


@dataclass
class TrialLog:
    trial: int
    master_seed: int
    seed: int
    ego_policy: str
    opp_policy: str
    hidden_type: int
    outcome: str
    time_s: float | None
    steps: list[dict] = field(default_factory=list)

    @property
    def min_g(self) -> float:
        return min(s["g"] for s in self.steps)

    def to_dict(self) -> dict:
        return {
            "trial": self.trial,
            "master_seed": self.master_seed,
            "seed": self.seed,
            "ego_policy": self.ego_policy,
            "opp_policy": self.opp_policy,
            "hidden_type": self.hidden_type,
            "outcome": {"kind": self.outcome, "time_s": self.time_s},
            "min_g": self.min_g,
            "steps": self.steps,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialLog":
        return cls(d["trial"], d["master_seed"], d["seed"], d["ego_policy"], d["opp_policy"], d["hidden_type"],
                   d["outcome"]["kind"], d["outcome"]["time_s"], list(d["steps"]))


@dataclass(frozen=True)
class Metrics:
    n_trials: int
    n_fail: int
    n_timeout: int
    n_completed: int
    failure_rate: float
    completion_time_mean: float | None
    completion_time_std: float | None

    def to_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "n_fail": self.n_fail,
            "n_timeout": self.n_timeout,
            "n_completed": self.n_completed,
            "failure_rate": self.failure_rate,
            "completion_time_mean": self.completion_time_mean,
            "completion_time_std": self.completion_time_std,
            "counts": {"Completed": self.n_completed, "Failed": self.n_fail, "TimedOut": self.n_timeout},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _draw(ranges: dict, rng: np.random.Generator) -> tuple[JointState, int]:
    u = {k: float(rng.uniform(*ranges[k])) for k in ("p_x", "p_y", "v", "p_y_opp", "b_ped")}
    b = make_belief([u["b_ped"], 1.0 - u["b_ped"]])
    hidden = 0 if rng.random() < b[0] else 1
    return JointState(PhysicalState(u["p_x"], u["p_y"], u["v"], u["p_y_opp"]), b), hidden


def _start_value(cfg: TrialConfig, z: JointState) -> float:
    if cfg.start_filter == "own":
        return cfg.ego.value(z, cfg.ego.new_memory())
    tables = cfg.ego.tables
    return tables.game(cfg.start_filter).successor_value(tables.get(cfg.start_filter), z)


def sample_initial(cfg: TrialConfig, rng: np.random.Generator | None = None) -> tuple[JointState, int]:
    """Initial joint state and hidden type for one trial.

    States are drawn uniformly from the init ranges, the hidden type from the
    drawn prior, and draws are rejected until the start filter certifies the
    state as safe.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    ranges = cfg.ranges()
    for _ in range(cfg.max_resample):
        z, hidden = _draw(ranges, rng)
        if cfg.start_filter == "none" or _start_value(cfg, z) >= 0.0:
            return z, hidden
    raise ValidationError(f"no safe initial state after {cfg.max_resample} draws (trial {cfg.trial_index})")


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------

def _noise(points, rng) -> np.ndarray | None:
    if not points:
        return None
    return np.asarray(points[int(rng.integers(len(points)))], dtype=float)


def _entry(t, z: JointState, g, value, active) -> dict:
    p = z.phys
    return {"t": t, "state": [p.p_x, p.p_y, p.v, p.p_y_opp], "belief": list(z.belief.probs), "g": g,
            "value": value, "active": active, "u_e": None, "u_o": None}


def run_trial(cfg: TrialConfig) -> TrialLog:
    sc = cfg.scenario
    rng = np.random.default_rng(cfg.seed)
    z, hidden = sample_initial(cfg, rng)
    learner = Learner.from_config(sc)
    memory = cfg.ego.new_memory()
    n_max = int(math.ceil(sc.horizon_timeout / sc.dt - 1e-9))
    log = TrialLog(cfg.trial_index, cfg.master_seed, cfg.seed, cfg.ego.kind, cfg.opp.kind, hidden, "TimedOut", None)
    step = 0
    while True:
        t = step * sc.dt
        g = margin_failure(z.phys, sc)
        entry = _entry(t, z, g, cfg.ego.value(z, memory), active_types(z.belief, cfg.ego.eps))
        log.steps.append(entry)
        if g < 0.0:
            log.outcome, log.time_s = "Failed", t
            break
        if z.phys.p_x >= sc.completion_x:
            log.outcome, log.time_s = "Completed", t
            break
        if step >= n_max:
            break
        u_e = ego_action(cfg.ego, z, sc, memory)
        u_o = opponent_action(cfg.opp, z, u_e, sc, rng, hidden)
        entry["u_e"] = [u_e.a, u_e.u_lat]
        entry["u_o"] = [u_o.u_y]
        z = joint_step(z, u_e, u_o, _noise(sc.process_noise, rng), _noise(sc.obs_noise, rng), sc, learner)
        step += 1
    return log


def replay_trial(log: TrialLog | dict, template: TrialConfig) -> TrialLog:
    """Re-run the trial a log came from; the result should match it exactly."""
    if isinstance(log, dict):
        log = TrialLog.from_dict(log)
    return run_trial(replace(template, master_seed=log.master_seed, trial_index=log.trial))


def evaluate(logs) -> Metrics:
    logs = list(logs)
    if not logs:
        raise ValidationError("cannot evaluate an empty list of trials")
    n = len(logs)
    n_fail = sum(l.outcome == "Failed" for l in logs)
    n_to = sum(l.outcome == "TimedOut" for l in logs)
    times = np.array([l.time_s for l in logs if l.outcome == "Completed"], dtype=float)
    mean = float(times.mean()) if times.size else None
    std = float(times.std()) if times.size else None
    return Metrics(n, n_fail, n_to, int(times.size), 100.0 * n_fail / n, mean, std)


def run_batch(template: TrialConfig, n_trials: int, parallelism: int = 1) -> tuple[Metrics, list[TrialLog]]:
    """Trials ``0..n_trials-1`` from ``template``; results are ordered by
    trial index and do not depend on ``parallelism``."""
    if n_trials < 1:
        raise ValidationError("n_trials must be at least 1")

    def one(i):
        try:
            return run_trial(replace(template, trial_index=i))
        except Exception as e:  # noqa: BLE001 - re-raised with the index
            raise TrialError(i, e) from e

    if parallelism <= 1:
        logs = [one(i) for i in range(n_trials)]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as ex:
            logs = list(ex.map(one, range(n_trials)))
    return evaluate(logs), logs


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def trials_csv(logs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for l in logs:
        w.writerow([l.trial, l.seed, l.hidden_type, l.outcome, "" if l.time_s is None else repr(l.time_s),
                    repr(l.min_g), len(l.steps) - 1])
    return buf.getvalue()


def format_table(results: dict[str, Metrics]) -> str:
    """Aligned text table: rows are failure rate and completion time, one
    column per policy."""
    names = list(results)

    def time_cell(m: Metrics) -> str:
        if m.completion_time_mean is None:
            return "n/a"
        return f"{m.completion_time_mean:.2f} +/- {m.completion_time_std:.2f}"

    rows = [
        ("Failure rate", [f"{results[n].failure_rate:.1f} %" for n in names]),
        ("Completion time [s]", [time_cell(results[n]) for n in names]),
    ]
    w0 = max(len(r[0]) for r in rows)
    widths = [max(len(n), *(len(r[1][j]) for r in rows)) for j, n in enumerate(names)]
    lines = ["  ".join([" " * w0] + [n.rjust(w) for n, w in zip(names, widths)])]
    for label, cells in rows:
        lines.append("  ".join([label.ljust(w0)] + [c.rjust(w) for c, w in zip(cells, widths)]))
    return "\n".join(lines) + "\n"
