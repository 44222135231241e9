import pytest

from dgame.grid import save_table
from dgame.state_space import save_config
from dgame.verify import small_scenario, small_tables


@pytest.fixture(scope="session")
def small_cfg():
    return small_scenario()


@pytest.fixture(scope="session")
def tables(small_cfg):
    """Belief, robust and per-type tables on the small test grid."""
    return small_tables(small_cfg)


@pytest.fixture(scope="session")
def tables_dir(tmp_path_factory, small_cfg, tables):
    """Scenario JSON plus a tables directory in the ``<hash>/<mode>.bsra`` layout."""
    root = tmp_path_factory.mktemp("tables")
    scen = root / "scenario.json"
    save_config(small_cfg, scen)
    d = root / "tables" / small_cfg.scenario_hash()
    d.mkdir(parents=True)
    for name, t in tables.tables.items():
        save_table(t, d / f"{name}.bsra")
    return scen, root / "tables"


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for key in ("passed", "failed", "xfailed", "xpassed"):
        for rep in terminalreporter.stats.get(key, []):
            if "test_acceptance.py" not in getattr(rep, "nodeid", "") or rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                lines.append((props["criterion"], key.upper(), props.get("detail", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for n, status, detail in sorted(lines):
            terminalreporter.write_line(f"criterion {n:>2}: {status:<7} {detail}")


@pytest.fixture(scope="session")
def acceptance():
    """Acceptance harness on the coarse grid; tables are solved once and cached."""
    from dgame.acceptance import Acceptance

    return Acceptance()
