"""``dgame`` command line: solve, eval, sim, slice and verify.

Exit codes: 0 success, 2 validation error, 3 non-convergence, 4 runtime
error (a trial failed hard, or a verify check failed).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .grid import Grid, load_table, save_table
from .learning import EmptyInferredBound
from .policies import CLI_EGO, CLI_OPP, OpponentPolicy, PolicyBundle, TableSet
from .sim import TrialConfig, TrialError, format_table, run_batch, run_trial, trials_csv
from .solver import NotConvergedError, SolveMode, SolverParams, export_slice, set_threads, value_iteration
from .state_space import ValidationError, load_config

EXIT_OK, EXIT_VALIDATION, EXIT_NOT_CONVERGED, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("dgame")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _threads(n: int | None) -> int:
    if n is None:
        env = os.environ.get("DGAME_THREADS")
        n = int(env) if env else 1
    if n < 1:
        raise ValidationError("--threads must be >= 1")
    return n


def table_path(out: Path, cfg, mode: SolveMode) -> Path:
    """``out`` itself when it names a ``.bsra`` file, else the tables layout
    ``out/<scenario-hash>/<mode>.bsra``."""
    if out.suffix == ".bsra":
        return out
    return out / cfg.scenario_hash() / f"{mode.name()}.bsra"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    eps = cfg.epsilon if args.eps is None else args.eps
    mode = SolveMode.parse(args.mode, eps)
    if mode.uses_belief and eps > 1.0 / cfg.n_types + 1e-12:
        raise ValidationError(f"eps={eps} exceeds 1/K")
    params = SolverParams(tol=args.tol, max_iters=args.max_iters, discount=args.discount,
                          backend=args.backend, threads=_threads(args.threads))
    grid = Grid.for_scenario(cfg, belief=mode.uses_belief)
    res = value_iteration(grid, mode, cfg, params)
    path = table_path(Path(args.out), cfg, mode)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_table(res.table, path)
    path.with_suffix(".residuals.csv").write_text(res.residual_csv())
    print(f"{path}: {len(res.history)} sweeps, residual {res.history[-1][1]:.3g}, "
          f"{'converged' if res.converged else 'NOT converged'}")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _policies(args, cfg):
    tables = TableSet.load_dir(cfg, args.tables, force=args.force)
    eps = cfg.epsilon if args.eps is None else args.eps
    ego = PolicyBundle(CLI_EGO[args.ego], tables, eps=eps, monotone_discard=args.monotone_discard)
    kind = CLI_OPP[args.opponent]
    if kind == "Scripted":
        opp = OpponentPolicy.scripted()
    else:
        if args.eps_tilde > eps:
            raise ValidationError(f"eps-tilde={args.eps_tilde} must not exceed eps={eps}")
        opp = OpponentPolicy.adversarial(tables, eps if kind == "ModeledAdversarial" else args.eps_tilde,
                                         modeled=kind == "ModeledAdversarial")
    return ego, opp


def _template(args, cfg, seed, index=0):
    ego, opp = _policies(args, cfg)
    return TrialConfig(seed, index, ego, opp, cfg, start_filter=args.start_filter)


def cmd_eval(args) -> int:
    cfg = load_config(args.scenario)
    n = _threads(args.threads)
    set_threads(n)
    tmpl = _template(args, cfg, args.seed)
    metrics, logs = run_batch(tmpl, args.trials, parallelism=n)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "ego": tmpl.ego.kind,
        "opponent": tmpl.opp.kind,
        "eps": tmpl.ego.eps,
        "opponent_eps": tmpl.opp.eps,
        "seed": args.seed,
        "trials": args.trials,
        "start_filter": args.start_filter,
        "scenario_hash": cfg.scenario_hash(),
        "metrics": metrics.to_dict(),
    }
    (out / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (out / "metrics.txt").write_text(format_table({tmpl.ego.kind: metrics}))
    (out / "trials.csv").write_text(trials_csv(logs))
    sys.stdout.write(format_table({tmpl.ego.kind: metrics}))
    return EXIT_OK


def cmd_sim(args) -> int:
    cfg = load_config(args.scenario)
    set_threads(_threads(args.threads))
    tmpl = _template(args, cfg, args.seed, args.trial_index)
    try:
        trial = run_trial(tmpl)
    except (ValidationError, EmptyInferredBound):
        raise
    except Exception as e:  # noqa: BLE001
        raise TrialError(args.trial_index, e) from e
    Path(args.traj).parent.mkdir(parents=True, exist_ok=True)
    Path(args.traj).write_text(trial.to_json() + "\n")
    print(f"{trial.outcome} at t={trial.time_s}")
    return EXIT_OK


def _parse_fix(text: str) -> dict[str, float]:
    fixed = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        name, sep, val = part.partition("=")
        if not sep:
            raise ValidationError(f"bad --fix entry {part!r}; expected axis=value")
        if name in fixed:
            raise ValidationError(f"axis {name!r} fixed twice")
        try:
            fixed[name.strip()] = float(val)
        except ValueError:
            raise ValidationError(f"bad value in --fix entry {part!r}") from None
    return fixed


def cmd_slice(args) -> int:
    table = load_table(args.value)
    fixed = _parse_fix(args.fix)
    free = [f.strip() for f in args.free.split(",") if f.strip()]
    M = export_slice(table, fixed, free)
    rows = table.grid.axes[table.grid.index(free[0])].nodes
    cols = table.grid.axes[table.grid.index(free[1])].nodes
    lines = [",".join([f"{free[0]}\\{free[1]}"] + [repr(float(c)) for c in cols])]
    for r, vals in zip(rows, M):
        lines.append(",".join([repr(float(r))] + [repr(float(v)) for v in vals]))
    Path(args.out).write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import report, run_suite

    kw = {}
    seed = args.seed
    if args.suite == "acceptance":
        kw = {"cache": args.cache, "trials": args.trials}
    elif seed is None:
        seed = 0
    checks = run_suite(args.suite, seed, **kw)
    rep = report(args.suite, seed, checks)
    path = Path(args.report or f"verify-{args.suite}.json")
    path.write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.id}: {c.detail}")
    print(f"report: {path}")
    return EXIT_OK if rep["passed"] else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _policy_flags(p):
    p.add_argument("--scenario", required=True, help="scenario JSON")
    p.add_argument("--ego", required=True, choices=sorted(CLI_EGO))
    p.add_argument("--opponent", required=True, choices=sorted(CLI_OPP))
    p.add_argument("--tables", required=True, help="directory holding <scenario-hash>/<mode>.bsra")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--eps", type=float, default=None, help="ego threshold (default: scenario epsilon)")
    p.add_argument("--eps-tilde", type=float, default=0.05, help="threshold of the unmodeled opponent")
    p.add_argument("--monotone-discard", action="store_true", help="contingency never re-admits a type")
    p.add_argument("--start-filter", default="own", help="'own', 'none' or a table name for safe starts")
    p.add_argument("--force", action="store_true", help="accept tables that did not converge")
    p.add_argument("--threads", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dgame", description="Belief-space reach-avoid games on a grid.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve one value table")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", required=True, help="belief | per-type:<id> | robust | subset:<ids>")
    p.add_argument("--out", required=True, help="a .bsra path or a tables directory")
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--discount", type=float, default=1.0)
    p.add_argument("--backend", choices=("fast", "reference"), default="fast")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", help="run a seeded batch of trials")
    _policy_flags(p)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sim", help="run one trial and write its log")
    _policy_flags(p)
    p.add_argument("--trial-index", type=int, default=0)
    p.add_argument("--traj", required=True)
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("slice", help="export a 2D slice of a value table as CSV")
    p.add_argument("--value", required=True)
    p.add_argument("--fix", required=True, help="axis=value,... for every non-free axis")
    p.add_argument("--free", required=True, help="two axis names, comma separated")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("verify", help="run a self-check suite")
    p.add_argument("--suite", required=True, choices=("invariants", "oracle", "acceptance"))
    p.add_argument("--seed", type=int, default=None, help="default 0, or 7 for the acceptance suite")
    p.add_argument("--report", default=None, help="report JSON path (default verify-<suite>.json)")
    p.add_argument("--cache", default=None, help="table cache for the acceptance suite")
    p.add_argument("--trials", type=int, default=500, help="trials per acceptance batch")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:  # usage errors exit 2, --help exits 0
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TrialError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except NotConvergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (ValidationError, EmptyInferredBound, FileNotFoundError, IsADirectoryError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:  # noqa: BLE001 - keep the exit-code contract closed
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
