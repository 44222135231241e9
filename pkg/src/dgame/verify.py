"""Self-check suites run by ``dgame verify``.

Each check returns a :class:`Check` with a ``module.invariant`` id. The
invariant suite uses a small scenario that solves in seconds; the oracle
suite compares against :mod:`dgame.oracles`; the acceptance suite lives in
:mod:`dgame.acceptance`.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .dynamics import EgoControl
from .grid import Grid, interp_array
from .learning import LikelihoodParams, bayes_update
from .oracles import ToyGame, direct_posterior, game_tree_values, toy_value_iteration
from .policies import OpponentPolicy, PolicyBundle, TableSet, opponent_action
from .sim import TrialConfig, TrialLog, replay_trial, run_trial
from .solver import CrossingGame, SolveMode, SolverParams, reference_backup, value_iteration
from .state_space import (
    JointState,
    PhysicalState,
    ScenarioConfig,
    make_belief,
    margin_failure,
    margin_target,
)

SUITES = ("invariants", "oracle", "acceptance")

# b has 6 nodes so that the thresholds 0.2 and 0.8 sit on nodes
SMALL_NODES = {"p_x": 11, "p_y": 5, "v": 4, "p_y_opp": 9, "b": 6}
SMALL_PARAMS = SolverParams(discount=0.99, max_iters=2000)


@dataclass
class Check:
    id: str
    passed: bool
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)

    @property
    def module(self) -> str:
        return self.id.split(".")[0]


def small_scenario() -> ScenarioConfig:
    return ScenarioConfig(grid_nodes=SMALL_NODES, safety_buffer=1.0)


def small_tables(cfg: ScenarioConfig | None = None, params: SolverParams = SMALL_PARAMS) -> TableSet:
    """Belief, robust and per-type tables on the small grid."""
    cfg = cfg or small_scenario()
    tables = {}
    for mode in (SolveMode.belief(cfg.epsilon), SolveMode.robust(), SolveMode.per_type(0), SolveMode.per_type(1)):
        grid = Grid.for_scenario(cfg, belief=mode.uses_belief)
        tables[mode.name()] = value_iteration(grid, mode, cfg, params).table
    return TableSet(cfg, tables)


# ---------------------------------------------------------------------------
# Invariants
# ---------------------------------------------------------------------------

def check_belief_simplex(rng, n=2000) -> Check:
    worst = 0.0
    for _ in range(n):
        k = int(rng.integers(2, 5))
        prior = make_belief(rng.dirichlet(np.ones(k)))
        params = LikelihoodParams(float(rng.uniform(0.3, 3.0)), rng.uniform(-8, 8, size=(k, 1)))
        post = bayes_update(prior, rng.uniform(-20, 20, size=1), params).as_array()
        if np.any(post < 0):
            return Check("learning.belief_simplex", False, "negative posterior entry")
        worst = max(worst, abs(post.sum() - 1.0))
    return Check("learning.belief_simplex", worst <= 1e-12, f"max |sum - 1| = {worst:.2e} over {n} updates")


def check_margin_lipschitz(rng, cfg: ScenarioConfig, n=5000) -> Check:
    worst = 0.0
    for _ in range(n):
        a = rng.uniform([0, 80, 0, 75], [100, 100, 30, 105])
        b = a + rng.normal(0, 1.0, size=4)
        xa, xb = PhysicalState(*a), PhysicalState(*b)
        d = np.linalg.norm((a - b)[[0, 1, 3]])
        if d == 0:
            continue
        # the collision term depends on p_y - p_y_opp, hence the sqrt(2)
        worst = max(worst, abs(margin_failure(xa, cfg) - margin_failure(xb, cfg)) / (math.sqrt(2) * d))
        worst = max(worst, abs(margin_target(xa, cfg) - margin_target(xb, cfg)) / d)
    return Check("state_space.margin_lipschitz", worst <= 1.0 + 1e-12, f"max ratio to bound = {worst:.6f}")


def check_interp(rng) -> list[Check]:
    shape = (4, 3, 5)
    V = rng.normal(size=shape)
    mins, steps = np.array([0.0, -1.0, 2.0]), np.array([1.0, 0.5, 2.0])
    idx = np.stack(np.meshgrid(*[np.arange(n) for n in shape], indexing="ij"), -1).reshape(-1, 3)
    exact = np.abs(interp_array(V, mins, steps, mins + idx * steps) - V.reshape(-1)).max()
    # a field increasing along every axis must interpolate to an increasing field
    M = np.cumsum(np.cumsum(np.cumsum(rng.uniform(0, 1, shape), 0), 1), 2)
    pts = rng.uniform(mins, mins + (np.array(shape) - 1) * steps, size=(2000, 3))
    ax = rng.integers(0, 3, size=len(pts))
    bumped = pts.copy()
    bumped[np.arange(len(pts)), ax] += rng.uniform(0, 1, size=len(pts))
    mono = np.all(interp_array(M, mins, steps, bumped) >= interp_array(M, mins, steps, pts) - 1e-12)
    # affine fields are reproduced exactly
    coef = rng.normal(size=3)
    A = (mins + idx * steps) @ coef
    aff = np.abs(interp_array(A.reshape(shape), mins, steps, pts) - pts @ coef).max()
    return [
        Check("grid.interp_exact_at_nodes", exact == 0.0, f"max error {exact:.1e}"),
        Check("grid.interp_monotone", bool(mono), "2000 random axis bumps"),
        Check("grid.interp_affine", aff < 1e-12, f"max error {aff:.1e}"),
    ]


def check_fixed_point(tables: TableSet) -> list[Check]:
    out = []
    for name in ("belief", "robust"):
        t = tables.get(name)
        game = CrossingGame(tables.cfg, t.grid, tables.game(name).mode, tables.game(name).params)
        coords = t.grid.coords().reshape(-1, len(t.grid.axes))
        new = reference_backup(t.array, game, coords)
        r = float(np.abs(new - t.values).max())
        tol = t.meta["tol"]
        out.append(Check(f"solver.fixed_point_{name}", r < tol, f"residual {r:.2e} vs tol {tol:g}"))
    return out


def check_containment(rng, tables: TableSet, n=300) -> Check:
    cfg = tables.cfg
    bad = 0
    for i in range(n):
        b = float(rng.uniform(0, 1))
        z = JointState(PhysicalState(rng.uniform(0, 100), rng.uniform(86, 94), rng.uniform(0, 30),
                                     rng.uniform(78, 102)), make_belief([b, 1 - b]))
        kind = i % 3
        if kind == 2:
            t = int(rng.integers(2))
            u = opponent_action(OpponentPolicy.scripted(t), z, None, cfg, rng).u_y
            ok = cfg.hypotheses[t].control_box.contains([u])
        else:
            pol = OpponentPolicy.adversarial(tables, 0.2 if kind == 0 else 0.05, modeled=kind == 0)
            ue = EgoControl(float(rng.uniform(-4, 3)), float(rng.uniform(-1.5, 1.5)))
            u = opponent_action(pol, z, ue, cfg, rng).u_y
            ok = u in set(pol.candidate_mesh(z).tolist())
        bad += not ok
    return Check("policies.bound_containment", bad == 0, f"{bad} of {n} actions outside their mesh or box")


def check_replay(tables: TableSet, seed: int) -> Check:
    cfg = tables.cfg
    ego = PolicyBundle("DeceptionGame", tables, eps=cfg.epsilon)
    opp = OpponentPolicy.adversarial(tables, cfg.epsilon)
    tmpl = TrialConfig(seed, 0, ego, opp, cfg)
    ok = True
    for i in range(3):
        log = run_trial(replace(tmpl, trial_index=i))
        again = replay_trial(TrialLog.from_dict(json.loads(log.to_json())), tmpl)
        ok &= again.to_json() == log.to_json()
    return Check("sim.log_replayable", ok, "3 trials re-simulated from their logs")


def check_assumption(tables: TableSet, seed: int) -> Check:
    cfg = tables.cfg
    ego = PolicyBundle("Robust", tables)
    opp = OpponentPolicy.adversarial(tables, cfg.epsilon)
    bad = 0
    for i in range(5):
        log = run_trial(TrialConfig(seed, i, ego, opp, cfg))
        game = tables.game("belief")
        for s in log.steps:
            if s["u_o"] is None:
                continue
            b = s["belief"]
            act = {t for t in range(cfg.n_types) if b[t] >= cfg.epsilon - 1e-12}
            k = [int(game.opp_tag[j]) for j in range(game.n_opp) if game.opp_u[j] == s["u_o"][0]]
            bad += not (set(k) & act)
    return Check("sim.modeled_opponent_in_bound", bad == 0, f"{bad} logged actions outside the inferred bound")


def run_invariants(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    cfg = small_scenario()
    checks = [check_belief_simplex(rng), check_margin_lipschitz(rng, cfg)]
    checks += check_interp(rng)
    tables = small_tables(cfg)
    checks += check_fixed_point(tables)
    checks.append(check_containment(rng, tables))
    checks.append(check_replay(tables, seed))
    checks.append(check_assumption(tables, seed))
    return checks


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def check_toy_oracle() -> list[Check]:
    out = []
    for opp in ((0.0,), (-1.0, 0.0)):
        t0 = time.perf_counter()
        game = ToyGame(opp=opp)
        V, _, conv = toy_value_iteration(game)
        B = game_tree_values(game)
        err = float(np.abs(V - B).max())
        dt = time.perf_counter() - t0
        out.append(Check(f"solver.toy_oracle_opp{len(opp)}", conv and err <= 1e-12 and dt < 1.0,
                         f"max |VI - tree| = {err:.1e}, {dt:.3f} s"))
    return out


def check_bayes_oracle(rng, n=10000) -> list[Check]:
    worst = 0.0
    for _ in range(n):
        k = int(rng.integers(2, 4))
        prior = rng.dirichlet(np.ones(k))
        sigma = float(rng.uniform(0.5, 3.0))
        means = rng.uniform(-8, 8, size=(k, 1))
        y = rng.uniform(-10, 10, size=1)
        got = bayes_update(make_belief(prior), y, LikelihoodParams(sigma, means)).as_array()
        ref = direct_posterior(prior, y, means, sigma)
        mask = ref > 1e-300
        worst = max(worst, float(np.max(np.abs(got[mask] - ref[mask]) / ref[mask])))
    closed = bayes_update(make_belief([0.5, 0.5]), [-4.0], LikelihoodParams(2.0, [[0.0], [-4.0]]))[1]
    exp = 1.0 / (1.0 + math.exp(-2.0))
    return [
        Check("learning.bayes_oracle", worst <= 1e-12, f"max rel error {worst:.2e} over {n} updates"),
        Check("learning.bayes_closed_form", abs(closed - exp) <= 1e-12 * exp, f"b(seg) = {closed!r}"),
    ]


def run_oracle(seed: int = 0) -> list[Check]:
    return check_toy_oracle() + check_bayes_oracle(np.random.default_rng(seed))


def run_suite(suite: str, seed: int = 0, **kw) -> list[Check]:
    if suite == "invariants":
        return run_invariants(seed)
    if suite == "oracle":
        return run_oracle(seed)
    if suite == "acceptance":
        from .acceptance import run_acceptance

        return run_acceptance(seed=seed, **kw)
    raise ValueError(f"unknown suite {suite!r}")


def report(suite: str, seed: int, checks: list[Check]) -> dict:
    return {
        "suite": suite,
        "seed": seed,
        "passed": all(c.passed for c in checks),
        "checks": [dict(asdict(c), module=c.module) for c in checks],
        "failures": [c.id for c in checks if not c.passed],
    }
