import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgame.grid import (
    Axis,
    Grid,
    ValueTable,
    discretize_controls,
    interp_array,
    interpolate,
    load_table,
    node_state,
    save_table,
)
from dgame.state_space import ControlBox, JointState, PhysicalState, ScenarioConfig, ValidationError, make_belief

CFG = ScenarioConfig(grid_nodes={"p_x": 6, "p_y": 5, "v": 4, "p_y_opp": 5, "b": 5})
GRID = Grid.for_scenario(CFG)


def joint(px, py, v, po, b):
    return JointState(PhysicalState(px, py, v, po), make_belief([b, 1 - b]))


def test_node_state_corners():
    lo = node_state(GRID, [0] * 5)
    hi = node_state(GRID, [n - 1 for n in GRID.shape])
    assert (lo.phys.p_x, lo.phys.p_y, lo.phys.v, lo.phys.p_y_opp, lo.belief[0]) == tuple(a.min for a in GRID.axes)
    assert (hi.phys.p_x, hi.phys.p_y, hi.phys.v, hi.phys.p_y_opp, hi.belief[0]) == tuple(a.max for a in GRID.axes)
    assert node_state(GRID, [0, 0, 0, 0, 2]).belief[0] == 0.5
    with pytest.raises(IndexError):
        node_state(GRID, [0, 0, 0, 0, 5])


def test_interpolate_at_nodes_is_exact():
    rng = np.random.default_rng(0)
    t = ValueTable(GRID, rng.normal(size=GRID.size))
    for _ in range(50):
        idx = [int(rng.integers(n)) for n in GRID.shape]
        assert interpolate(t, node_state(GRID, idx)) == t.array[tuple(idx)]


def test_interpolate_multilinear_exact():
    c = GRID.coords()
    t = ValueTable(GRID, 2 * c[..., 0] + 3 * c[..., 4])
    rng = np.random.default_rng(1)
    lo, hi = GRID.mins(), GRID.mins() + GRID.steps() * (np.array(GRID.shape) - 1)
    pts = rng.uniform(lo, hi, size=(1000, 5))
    got = interp_array(t.array, GRID.mins(), GRID.steps(), pts)
    np.testing.assert_allclose(got, 2 * pts[:, 0] + 3 * pts[:, 4], atol=1e-9)


def test_interpolate_clamps():
    c = GRID.coords()
    t = ValueTable(GRID, c[..., 0] + c[..., 2])
    assert interpolate(t, joint(150.0, 90, 50.0, 90, 0.5)) == pytest.approx(100.0 + 30.0)
    assert interpolate(t, joint(-10.0, 90, 0.0, 90, 0.5)) == pytest.approx(0.0)


@settings(max_examples=100)
@given(st.integers(0, 2**31))
def test_interpolate_monotone_in_table(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=GRID.shape)
    B = A + rng.uniform(0, 1, size=GRID.shape)
    lo, hi = GRID.mins(), GRID.mins() + GRID.steps() * (np.array(GRID.shape) - 1)
    pts = rng.uniform(lo - 1, hi + 1, size=(50, 5))
    assert np.all(interp_array(A, GRID.mins(), GRID.steps(), pts) <= interp_array(B, GRID.mins(), GRID.steps(), pts))


def test_discretize_examples():
    assert discretize_controls(ControlBox((-2.0,), (2.0,)), 5).ravel().tolist() == [-2, -1, 0, 1, 2]
    assert discretize_controls(ControlBox((-8.0,), (0.0,)), 2).ravel().tolist() == [-8, 0]
    assert discretize_controls(ControlBox((3.0,), (3.0,)), 5).ravel().tolist() == [3]


def test_discretize_2d_lexicographic():
    m = discretize_controls(ControlBox((-4.0, -1.5), (3.0, 1.5)), (3, 2))
    assert m.tolist() == [[-4, -1.5], [-4, 1.5], [-0.5, -1.5], [-0.5, 1.5], [3, -1.5], [3, 1.5]]


@given(st.floats(-10, 10), st.floats(0.01, 10), st.integers(2, 12))
def test_discretize_sorted_with_endpoints(lo, width, n):
    hi = lo + width
    m = discretize_controls(ControlBox((lo,), (hi,)), n).ravel()
    assert m[0] == lo and m[-1] == hi
    assert np.all(np.diff(m) > 0)


def test_axis_and_grid_validation():
    with pytest.raises(ValidationError):
        Axis("x", 0, 1, 1)
    with pytest.raises(ValidationError):
        Axis("x", 1, 0, 3)
    with pytest.raises(ValidationError):
        Grid((Axis("b", 0, 0.5, 3),))
    with pytest.raises(ValidationError):
        ValueTable(GRID, np.zeros(3))
    with pytest.raises(ValidationError):
        ValueTable(GRID, np.full(GRID.size, np.nan))


def test_bsra_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    t = ValueTable(GRID, rng.normal(size=GRID.size), {"mode": "belief", "converged": True})
    p = tmp_path / "t.bsra"
    save_table(t, p)
    back = load_table(p)
    assert back.grid == t.grid and back.meta == t.meta
    assert np.array_equal(back.values, t.values)
    raw = p.read_bytes()
    assert raw[:4] == b"BSRA" and raw[4] == 1


def test_bsra_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.bsra"
    p.write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(ValidationError):
        load_table(p)
    t = ValueTable(GRID, np.zeros(GRID.size))
    save_table(t, p)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValidationError):
        load_table(p)
    save_table(t, p)
    raw = bytearray(p.read_bytes())
    raw[4] = 2
    p.write_bytes(bytes(raw))
    with pytest.raises(ValidationError):
        load_table(p)

