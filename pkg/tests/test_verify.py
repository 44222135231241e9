import numpy as np

from dgame.oracles import ToyGame, direct_posterior, game_tree_value
from dgame.verify import Check, check_bayes_oracle, check_interp, check_toy_oracle, report


def test_toy_game_tree_hand_values():
    game = ToyGame()
    # from x = 0 the ego steps right: min(1, max(-1, V(1))) with V(1) = min(2, max(0, .)) >= 0
    assert game_tree_value(game, 0.0, 1) == 0.0
    assert game_tree_value(game, 2.0, 5) == 1.0
    assert game_tree_value(game, -2.0, 0) == -3.0


def test_direct_posterior_closed_form():
    p = direct_posterior([0.5, 0.5], [-4.0], [[0.0], [-4.0]], 2.0)
    assert abs(p[1] - 1 / (1 + np.exp(-2.0))) < 1e-15


def test_oracle_checks_pass():
    for c in check_toy_oracle() + check_bayes_oracle(np.random.default_rng(0), n=2000):
        assert c.passed, c.detail


def test_interp_checks_pass():
    for c in check_interp(np.random.default_rng(1)):
        assert c.passed, c.detail


def test_report_shape():
    checks = [Check("grid.a", True), Check("solver.b", np.bool_(False), "why")]
    rep = report("oracle", 3, checks)
    assert rep["passed"] is False and rep["failures"] == ["solver.b"]
    assert rep["checks"][1]["module"] == "solver" and rep["checks"][1]["passed"] is False
