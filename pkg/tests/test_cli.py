import json

import numpy as np
import pytest

from dgame import sim
from dgame.cli import main
from dgame.grid import Grid, ValueTable, load_table, save_table
from dgame.state_space import ScenarioConfig, load_config, save_config
from dgame.verify import SMALL_NODES

TINY = {"p_x": 6, "p_y": 4, "v": 3, "p_y_opp": 5, "b": 6}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def policy_args(scen, tables, ego="deception", opp="modeled", seed=5):
    return ["--scenario", scen, "--ego", ego, "--opponent", opp, "--tables", tables, "--seed", seed]


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.json"
    save_config(ScenarioConfig(grid_nodes=TINY), p)
    return p


# -- solve --------------------------------------------------------------------

def test_solve_writes_table_and_residuals(capsys, tmp_path, tiny_config):
    code, out, _ = run(capsys, "solve", "--config", tiny_config, "--mode", "belief", "--out", tmp_path / "t",
                       "--discount", "0.99", "--max-iters", "3000")
    cfg = load_config(tiny_config)
    path = tmp_path / "t" / cfg.scenario_hash() / "belief.bsra"
    assert code == 0, out
    t = load_table(path)
    assert t.meta["mode"] == "belief" and t.meta["converged"]
    assert path.with_suffix(".residuals.csv").read_text().startswith("sweep,residual,wall_seconds")


def test_solve_rejects_bad_eps(capsys, tmp_path, tiny_config):
    bad = tmp_path / "bad.json"
    d = json.loads(tiny_config.read_text())
    d["epsilon"] = 0.6
    bad.write_text(json.dumps(d))
    code, _, err = run(capsys, "solve", "--config", bad, "--mode", "belief", "--out", tmp_path / "x.bsra")
    assert code == 2 and "epsilon" in err
    code, _, _ = run(capsys, "solve", "--config", tiny_config, "--mode", "belief", "--eps", "0.7",
                     "--out", tmp_path / "x.bsra")
    assert code == 2


def test_solve_non_convergence(capsys, tmp_path, tiny_config):
    out = tmp_path / "r.bsra"
    code, _, _ = run(capsys, "solve", "--config", tiny_config, "--mode", "robust", "--out", out, "--max-iters", "1")
    assert code == 3
    assert load_table(out).meta["converged"] is False


def test_solve_validation_errors(capsys, tmp_path, tiny_config):
    assert run(capsys, "solve", "--config", tmp_path / "missing.json", "--mode", "belief", "--out", tmp_path)[0] == 2
    assert run(capsys, "solve", "--config", tiny_config, "--mode", "bogus", "--out", tmp_path)[0] == 2
    assert run(capsys, "solve", "--config", tiny_config, "--mode", "robust", "--out", tmp_path, "--threads", "0")[0] == 2
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "solve")[0] == 2


# -- eval ---------------------------------------------------------------------

def test_eval_outputs_and_determinism(capsys, tmp_path, tables_dir):
    scen, tables = tables_dir
    docs = []
    for i, threads in enumerate((1, 8, 1)):
        out = tmp_path / f"e{i}"
        code, stdout, _ = run(capsys, "eval", *policy_args(scen, tables), "--trials", 6, "--out", out,
                              "--threads", threads)
        assert code == 0
        assert "Failure rate" in stdout
        assert (out / "metrics.txt").exists()
        assert (out / "trials.csv").read_text().count("\n") == 7
        docs.append((out / "metrics.json").read_bytes())
    assert docs[0] == docs[1] == docs[2]
    m = json.loads(docs[0])
    assert m["metrics"]["n_trials"] == 6 and m["ego"] == "DeceptionGame"


def test_eval_missing_tables(capsys, tmp_path, small_cfg, tables):
    d = tmp_path / "tables" / small_cfg.scenario_hash()
    d.mkdir(parents=True)
    save_table(tables.get("belief"), d / "belief.bsra")
    save_table(tables.get("per_type_0"), d / "per_type_0.bsra")
    scen = tmp_path / "s.json"
    save_config(small_cfg, scen)
    code, _, err = run(capsys, "eval", *policy_args(scen, tmp_path / "tables", ego="contingency"), "--trials", 2,
                       "--out", tmp_path / "o")
    assert code == 2 and "missing value table" in err


def test_eval_mismatched_scenario(capsys, tmp_path, tables_dir):
    scen, tables = tables_dir
    other = tmp_path / "other.json"
    save_config(ScenarioConfig(grid_nodes=SMALL_NODES, safety_buffer=1.0, likelihood_sigma=2.0), other)
    code, _, _ = run(capsys, "eval", *policy_args(other, tables), "--trials", 2, "--out", tmp_path / "o")
    assert code == 2


def test_eval_trial_error_exit_4(capsys, tmp_path, tables_dir, monkeypatch):
    scen, tables = tables_dir

    def boom(cfg):
        raise RuntimeError("boom")

    monkeypatch.setattr(sim, "run_trial", boom)
    code, _, err = run(capsys, "eval", *policy_args(scen, tables), "--trials", 2, "--out", tmp_path / "o")
    assert code == 4 and "trial 0" in err


def test_eval_unmodeled_eps_tilde_bound(capsys, tmp_path, tables_dir):
    scen, tables = tables_dir
    code, _, _ = run(capsys, "eval", *policy_args(scen, tables, opp="unmodeled"), "--eps-tilde", "0.3",
                     "--trials", 2, "--out", tmp_path / "o")
    assert code == 2
    code, _, _ = run(capsys, "eval", *policy_args(scen, tables, ego="map", opp="scripted"), "--trials", 2,
                     "--out", tmp_path / "o")
    assert code == 0


# -- sim ----------------------------------------------------------------------

def test_sim_writes_log_and_is_deterministic(capsys, tmp_path, tables_dir):
    scen, tables = tables_dir
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for p in paths:
        assert run(capsys, "sim", *policy_args(scen, tables), "--trial-index", 3, "--traj", p)[0] == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    doc = json.loads(paths[0].read_text())
    assert set(doc["outcome"]) == {"kind", "time_s"}


def test_sim_immediate_completion(capsys, tmp_path, tables_dir):
    scen, tables = tables_dir
    d = json.loads(scen.read_text())
    d["init_ranges"] = {"p_x": [100.0, 100.0], "p_y": [90.0, 90.0], "v": [10.0, 10.0],
                        "p_y_opp": [80.0, 80.0], "b_ped": [0.5, 0.5]}
    s2 = tmp_path / "done.json"
    s2.write_text(json.dumps(d))
    assert run(capsys, "sim", *policy_args(s2, tables), "--traj", tmp_path / "t.json")[0] == 0
    doc = json.loads((tmp_path / "t.json").read_text())
    assert doc["outcome"] == {"kind": "Completed", "time_s": 0.0}


# -- slice --------------------------------------------------------------------

def test_slice_emits_matrix(capsys, tmp_path, tables_dir, small_cfg):
    _, tables = tables_dir
    value = tables / small_cfg.scenario_hash() / "belief.bsra"
    out = tmp_path / "s.csv"
    code, _, _ = run(capsys, "slice", "--value", value, "--fix", "v=15,p_y_opp=92,b=0.5", "--free", "p_x,p_y",
                     "--out", out)
    assert code == 0
    rows = out.read_text().splitlines()
    assert rows[0].startswith("p_x\\p_y,")
    assert len(rows) == 1 + SMALL_NODES["p_x"] and len(rows[1].split(",")) == 1 + SMALL_NODES["p_y"]


def test_slice_validation(capsys, tmp_path, tables_dir, small_cfg):
    _, tables = tables_dir
    value = tables / small_cfg.scenario_hash() / "belief.bsra"
    out = tmp_path / "s.csv"
    assert run(capsys, "slice", "--value", value, "--fix", "p_x=1,v=15,p_y_opp=92,b=0.5", "--free", "p_x,p_y",
               "--out", out)[0] == 2
    assert run(capsys, "slice", "--value", value, "--fix", "v=15,p_y_opp", "--free", "p_x,p_y", "--out", out)[0] == 2
    assert run(capsys, "slice", "--value", value, "--fix", "v=15,p_y_opp=92,b=0.5", "--free", "p_x,zz",
               "--out", out)[0] == 2


def test_slice_constant_table(capsys, tmp_path):
    grid = Grid.for_scenario(ScenarioConfig(grid_nodes=TINY), belief=False)
    p = tmp_path / "c.bsra"
    save_table(ValueTable(grid, np.full(grid.size, 1.75)), p)
    out = tmp_path / "c.csv"
    assert run(capsys, "slice", "--value", p, "--fix", "v=7,p_y_opp=85", "--free", "p_y,p_x", "--out", out)[0] == 0
    body = [line.split(",")[1:] for line in out.read_text().splitlines()[1:]]
    assert {float(x) for row in body for x in row} == {1.75}


# -- verify -------------------------------------------------------------------

@pytest.mark.parametrize("suite", ["oracle", "invariants"])
def test_verify_suites_pass(capsys, tmp_path, suite):
    report = tmp_path / "r.json"
    code, out, _ = run(capsys, "verify", "--suite", suite, "--report", report)
    assert code == 0, out
    rep = json.loads(report.read_text())
    assert rep["passed"] and rep["failures"] == []
    assert all("." in c["id"] and c["module"] for c in rep["checks"])
