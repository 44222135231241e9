"""Acceptance suite: seeded batches and solver comparisons on the coarse grid.

Value tables are solved once and cached under ``DGAME_CACHE`` (default
``~/.cache/dgame/acceptance``) in the usual ``<scenario-hash>/<mode>.bsra``
layout, so later runs only pay for the trial batches. The eps = 0 belief
table lives in an ``eps0/`` subdirectory because it shares the mode name
``belief`` with the eps = 0.2 table.
"""

from __future__ import annotations

import contextlib
import io
import logging
import os
import time
from pathlib import Path

import numpy as np

from .grid import Grid, ValueTable, load_table, save_table
from .policies import OpponentPolicy, PolicyBundle, TableSet
from .sim import Metrics, TrialConfig, TrialLog, run_batch
from .solver import SolveMode, SolverParams, extend_table, value_iteration
from .state_space import ScenarioConfig, save_config
from .verify import Check, check_bayes_oracle, check_toy_oracle, run_invariants

log = logging.getLogger(__name__)

# b has 11 nodes so that 0.2 and 0.8 sit on nodes
ACCEPTANCE_NODES = {"p_x": 21, "p_y": 11, "v": 7, "p_y_opp": 21, "b": 11}
ACCEPTANCE_BUFFER = 1.0
ACCEPTANCE_PARAMS = SolverParams(discount=0.99, max_iters=1000)
ACCEPTANCE_SEED = 7
ACCEPTANCE_TRIALS = 500
UNMODELED_EPS = 0.05
DETERMINISM_TRIALS = 100
SOLVE_BUDGET_S = 300.0

EGOS = ("MAP", "DeceptionGame", "Robust")
OPPONENTS = ("ModeledAdversarial", "UnmodeledAdversarial")


def acceptance_scenario() -> ScenarioConfig:
    return ScenarioConfig(grid_nodes=ACCEPTANCE_NODES, safety_buffer=ACCEPTANCE_BUFFER)


def default_cache() -> Path:
    env = os.environ.get("DGAME_CACHE")
    return Path(env) if env else Path.home() / ".cache" / "dgame" / "acceptance"


def solve_seconds(table_path: Path) -> float:
    """Wall time of a cached solve, read from its residual CSV."""
    lines = table_path.with_suffix(".residuals.csv").read_text().strip().splitlines()
    return float(lines[-1].split(",")[2]) if len(lines) > 1 else 0.0


def same_sweep_values(a: ValueTable, b: ValueTable, cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Values of two solved tables brought to the same sweep count by
    extending whichever solve stopped earlier."""
    ka, kb = a.meta["iterations"], b.meta["iterations"]
    if ka < kb:
        a = extend_table(a, cfg, kb - ka).table
    elif kb < ka:
        b = extend_table(b, cfg, ka - kb).table
    return a.values, b.values


class Acceptance:
    """Lazily solved tables and memoized trial batches for one seed."""

    def __init__(self, cache: str | Path | None = None, seed: int = ACCEPTANCE_SEED,
                 trials: int = ACCEPTANCE_TRIALS, params: SolverParams = ACCEPTANCE_PARAMS):
        self.cfg = acceptance_scenario()
        self.cache = Path(cache) if cache else default_cache()
        self.seed, self.trials, self.params = seed, trials, params
        self.root = self.cache / self.cfg.scenario_hash()
        self._tables: TableSet | None = None
        self._batches: dict[tuple[str, str], tuple[Metrics, list[TrialLog]]] = {}

    def path(self, mode: SolveMode, subdir: str = "") -> Path:
        return self.root / subdir / f"{mode.name()}.bsra"

    def _usable(self, t: ValueTable, mode: SolveMode) -> bool:
        m = t.meta
        return (m.get("scenario_hash") == self.cfg.scenario_hash() and m.get("converged")
                and m.get("eps") == mode.eps and m.get("tol") == self.params.tol
                and m.get("discount") == self.params.discount)

    def table(self, mode: SolveMode, subdir: str = "") -> ValueTable:
        """Cached table for ``mode``, solved (and saved) on first use."""
        path = self.path(mode, subdir)
        if path.exists():
            t = load_table(path)
            if self._usable(t, mode):
                return t
        log.info("solving %s%s on the acceptance grid", subdir and subdir + "/", mode.name())
        grid = Grid.for_scenario(self.cfg, belief=mode.uses_belief)
        res = value_iteration(grid, mode, self.cfg, self.params)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_table(res.table, path)
        path.with_suffix(".residuals.csv").write_text(res.residual_csv())
        return res.table

    def tables(self) -> TableSet:
        if self._tables is None:
            modes = (SolveMode.belief(self.cfg.epsilon), SolveMode.robust(), SolveMode.per_type(0), SolveMode.per_type(1))
            self._tables = TableSet(self.cfg, {m.name(): self.table(m) for m in modes})
        return self._tables

    def batch(self, ego: str, opp: str) -> tuple[Metrics, list[TrialLog]]:
        key = (ego, opp)
        if key not in self._batches:
            ts = self.tables()
            eps = self.cfg.epsilon
            bundle = PolicyBundle(ego, ts, eps=eps)
            modeled = opp == "ModeledAdversarial"
            pol = OpponentPolicy.adversarial(ts, eps if modeled else UNMODELED_EPS, modeled=modeled)
            t0 = time.perf_counter()
            self._batches[key] = run_batch(TrialConfig(self.seed, 0, bundle, pol, self.cfg), self.trials)
            log.info("%s vs %s: %.1f s", ego, opp, time.perf_counter() - t0)
        return self._batches[key]

    def metrics(self, ego: str, opp: str) -> Metrics:
        return self.batch(ego, opp)[0]

    # -- criteria ----------------------------------------------------------

    def c1_deception_modeled(self) -> Check:
        m = self.metrics("DeceptionGame", "ModeledAdversarial")
        return Check("acceptance.c1_deception_modeled_zero_failures", m.n_fail == 0,
                     f"{m.n_fail} failures in {m.n_trials} trials")

    def c2_robust(self) -> Check:
        ms = {o: self.metrics("Robust", o) for o in OPPONENTS}
        ok = all(m.n_fail == 0 for m in ms.values())
        return Check("acceptance.c2_robust_zero_failures", ok,
                     ", ".join(f"vs {o}: {m.n_fail}/{m.n_trials}" for o, m in ms.items()))

    def c3_map_penalty(self) -> Check:
        ms = {o: self.metrics("MAP", o) for o in OPPONENTS}
        ok = all(m.failure_rate > 0 for m in ms.values())
        return Check("acceptance.c3_map_fails", ok,
                     ", ".join(f"vs {o}: {m.failure_rate:.1f} %" for o, m in ms.items()))

    def c4_unmodeled_degradation(self) -> Check:
        dg = self.metrics("DeceptionGame", "UnmodeledAdversarial").failure_rate
        dg_mod = self.metrics("DeceptionGame", "ModeledAdversarial").failure_rate
        mp = self.metrics("MAP", "UnmodeledAdversarial").failure_rate
        return Check("acceptance.c4_unmodeled_degradation", dg_mod < dg < mp,
                     f"DG modeled {dg_mod:.1f} % < DG unmodeled {dg:.1f} % < MAP unmodeled {mp:.1f} %")

    def completion_means(self, opp: str = "ModeledAdversarial") -> tuple[dict[str, float], int]:
        """Mean completion time per ego over the trials every ego completed, and
        the number of such trials."""
        logs = {e: self.batch(e, opp)[1] for e in EGOS}
        shared = set.intersection(*({l.trial for l in ls if l.outcome == "Completed"} for ls in logs.values()))
        return {e: float(np.mean([l.time_s for l in ls if l.trial in shared])) if shared else float("nan")
                for e, ls in logs.items()}, len(shared)

    def c5_efficiency(self) -> Check:
        means, n = self.completion_means()
        mp, dg, rb = means["MAP"], means["DeceptionGame"], means["Robust"]
        ok = mp <= dg <= rb and dg <= 1.15 * mp and rb >= 1.20 * dg
        return Check("acceptance.c5_efficiency_ordering", ok,
                     f"over {n} shared completions: MAP {mp:.3f} s, DG {dg:.3f} s, Robust {rb:.3f} s "
                     f"(DG/MAP {dg / mp:.3f}, Robust/DG {rb / dg:.3f})")

    def c6_robust_recovery(self) -> Check:
        b0 = self.table(SolveMode.belief(0.0), "eps0")
        rb = self.tables().get("robust")
        B = b0.array
        R = rb.array[..., None]  # the robust grid has no belief axis
        var = float((B.max(axis=-1) - B.min(axis=-1)).max())
        dev = float(np.abs(B - R).max())
        secs = solve_seconds(self.path(SolveMode.belief(0.0), "eps0")) + solve_seconds(self.path(SolveMode.robust()))
        lim = 10 * self.params.tol
        return Check("acceptance.c6_robust_recovery", var < lim and dev < lim and secs < SOLVE_BUDGET_S,
                     f"belief-axis variation {var:.2e}, deviation {dev:.2e} (limit {lim:g}); "
                     f"solves took {secs:.0f} s (budget {SOLVE_BUDGET_S:.0f} s)")

    def c7_eps_monotone(self) -> Check:
        t2 = self.tables().get("belief")
        t0 = self.table(SolveMode.belief(0.0), "eps0")
        raw = int(np.count_nonzero(t2.values < t0.values))
        v2, v0 = same_sweep_values(t2, t0, self.cfg)
        bad = int(np.count_nonzero(v2 < v0))
        worst = float(max(0.0, (v0 - v2).max()))
        return Check("acceptance.c7_eps_monotone", bad == 0,
                     f"{bad} of {v0.size} nodes with V_0.2 < V_0 at equal sweep counts (largest gap {worst:.2e}); "
                     f"{raw} before equalizing the sweep counts "
                     f"({t2.meta['iterations']} vs {t0.meta['iterations']} sweeps)")

    def c10_determinism(self, scratch: Path) -> Check:
        from .cli import main

        scen = scratch / "scenario.json"
        save_config(self.cfg, scen)
        self.tables()
        docs = []
        for threads in (1, 8):
            out = scratch / f"eval-t{threads}"
            argv = ["eval", "--scenario", str(scen), "--ego", "deception", "--opponent", "modeled",
                    "--tables", str(self.cache), "--seed", str(self.seed),
                    "--trials", str(min(self.trials, DETERMINISM_TRIALS)), "--out", str(out), "--threads", str(threads)]
            with contextlib.redirect_stdout(io.StringIO()):
                code = main(argv)
            docs.append((code, (out / "metrics.json").read_bytes() if code == 0 else b""))
        ok = all(c == 0 for c, _ in docs) and docs[0][1] == docs[1][1]
        return Check("acceptance.c10_determinism", ok,
                     f"exit codes {[c for c, _ in docs]}, metrics.json identical: {docs[0][1] == docs[1][1]}")

    def c8_toy_oracle(self) -> Check:
        toy = check_toy_oracle()
        return Check("acceptance.c8_toy_oracle", all(c.passed for c in toy), "; ".join(c.detail for c in toy))

    def c9_bayes_oracle(self) -> Check:
        bayes = check_bayes_oracle(np.random.default_rng(self.seed))
        return Check("acceptance.c9_bayes_oracle", all(c.passed for c in bayes), "; ".join(c.detail for c in bayes))

    def c11_invariants(self) -> Check:
        inv = run_invariants(self.seed)
        failed = [c.id for c in inv if not c.passed]
        return Check("acceptance.c11_invariants", not failed,
                     f"{len(inv) - len(failed)} of {len(inv)} invariant checks pass"
                     + (f"; failing: {failed}" if failed else ""))

    def run(self) -> list[Check]:
        import tempfile

        checks = [self.c1_deception_modeled(), self.c2_robust(), self.c3_map_penalty(),
                  self.c4_unmodeled_degradation(), self.c5_efficiency(), self.c6_robust_recovery(),
                  self.c7_eps_monotone(), self.c8_toy_oracle(), self.c9_bayes_oracle()]
        with tempfile.TemporaryDirectory() as d:
            checks.append(self.c10_determinism(Path(d)))
        checks.append(self.c11_invariants())
        return checks


def run_acceptance(seed: int | None = None, cache=None, trials: int | None = None) -> list[Check]:
    acc = Acceptance(cache, seed=ACCEPTANCE_SEED if seed is None else seed,
                     trials=ACCEPTANCE_TRIALS if trials is None else trials)
    return acc.run()
