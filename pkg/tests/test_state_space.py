import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgame.state_space import (
    Belief,
    ControlBox,
    PhysicalState,
    ScenarioConfig,
    ValidationError,
    load_config,
    make_belief,
    map_type,
    margin_failure,
    margin_target,
    save_config,
    solver_margin,
)

CFG = ScenarioConfig()


def far(p_x=0.0, p_y=90.0):
    return PhysicalState(p_x, p_y, 10.0, 90.0 + 1000.0)


def test_make_belief_examples():
    assert make_belief([0.2, 0.8]).probs == (0.2, 0.8)
    assert make_belief([1, 1]).probs == (0.5, 0.5)
    with pytest.raises(ValidationError):
        make_belief([0, 0])


@pytest.mark.parametrize("bad", [[], [-0.1, 1.1], [np.nan, 1.0], [np.inf, 1.0]])
def test_make_belief_rejects(bad):
    with pytest.raises(ValidationError):
        make_belief(bad)


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=6).filter(lambda w: sum(w) > 1e-6))
def test_make_belief_idempotent(w):
    b = make_belief(w)
    assert abs(sum(b.probs) - 1.0) < 1e-12
    assert make_belief(b.probs).probs == b.probs or np.allclose(make_belief(b.probs).probs, b.probs, atol=1e-15)


def test_belief_validates_sum():
    with pytest.raises(ValidationError):
        Belief((0.5, 0.6))


def test_margin_target_examples():
    assert margin_target(far(p_x=100.0), CFG) == 15.0
    assert margin_target(far(p_x=0.0), CFG) == -85.0


def test_margin_failure_examples():
    at_opp = PhysicalState(CFG.cross_line_x, 91.0, 10.0, 91.0)
    assert margin_failure(at_opp, CFG) == -CFG.collision_radius
    assert margin_failure(far(p_y=CFG.road_center_y), CFG) == CFG.road_halfwidth
    assert margin_failure(far(p_y=CFG.road_center_y + CFG.road_halfwidth), CFG) == 0.0


def test_solver_margin_subtracts_buffer():
    cfg = ScenarioConfig(safety_buffer=1.0)
    x = far()
    assert solver_margin(x, cfg) == margin_failure(x, cfg) - 1.0
    with pytest.raises(ValidationError):
        ScenarioConfig(safety_buffer=4.0)


def test_map_type_examples():
    assert map_type(Belief((0.3, 0.7))) == 1
    assert map_type(Belief((0.5, 0.5))) == 0
    assert map_type(Belief((1.0, 0.0))) == 0


@settings(max_examples=300)
@given(st.tuples(*[st.floats(-200, 200)] * 4), st.tuples(*[st.floats(-3, 3)] * 4))
def test_margins_lipschitz(a, d):
    xa = PhysicalState(a[0], a[1], 10.0, a[3])
    xb = PhysicalState(a[0] + d[0], a[1] + d[1], 10.0, a[3] + d[3])
    dist = math.sqrt(d[0] ** 2 + d[1] ** 2 + d[3] ** 2)
    assert abs(margin_target(xa, CFG) - margin_target(xb, CFG)) <= dist + 1e-9
    # the collision distance uses p_y - p_y_opp, which moves at most sqrt(2) times as fast
    assert abs(margin_failure(xa, CFG) - margin_failure(xb, CFG)) <= math.sqrt(2) * dist + 1e-9


def test_control_box():
    box = ControlBox((-2.0,), (2.0,))
    assert box.contains([2.0]) and not box.contains([2.1])
    assert box.clip([5.0]).tolist() == [2.0]
    with pytest.raises(ValidationError):
        ControlBox((1.0,), (0.0,))


def test_config_validation():
    with pytest.raises(ValidationError):
        ScenarioConfig(epsilon=0.6)
    with pytest.raises(ValidationError):
        ScenarioConfig(dt=0.0)
    with pytest.raises(ValidationError):
        ScenarioConfig(grid_nodes={"q": 3})
    with pytest.raises(ValidationError):
        ScenarioConfig.from_dict({"nonsense": 1})


def test_config_roundtrip(tmp_path):
    cfg = ScenarioConfig(epsilon=0.1, grid_nodes={"b": 11}, obs_noise=[[0.5], [-0.5]])
    p = tmp_path / "s.json"
    save_config(cfg, p)
    back = load_config(p)
    assert back == cfg
    assert back.scenario_hash() == cfg.scenario_hash()


def test_hash_ignores_sim_only_fields():
    a = ScenarioConfig()
    assert ScenarioConfig(completion_x=95.0).scenario_hash() == a.scenario_hash()
    assert ScenarioConfig(horizon_timeout=20.0).scenario_hash() == a.scenario_hash()
    assert ScenarioConfig(epsilon=0.1).scenario_hash() != a.scenario_hash()
    assert ScenarioConfig(safety_buffer=0.5).scenario_hash() != a.scenario_hash()


def test_load_config_bad_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ValidationError):
        load_config(p)
    p.write_text(json.dumps([1, 2]))
    with pytest.raises(ValidationError):
        load_config(p)
