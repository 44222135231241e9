import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgame.learning import (
    EmptyInferredBound,
    LikelihoodParams,
    ObservationModel,
    above_threshold,
    active_types,
    bayes_update,
    bayes_update_b0,
    inferred_bound,
    observe,
    type_mean,
)
from dgame.oracles import direct_posterior
from dgame.state_space import Belief, ControlBox, Hypothesis, PhysicalState, ScenarioConfig, ValidationError, make_belief

CFG = ScenarioConfig()
HYPS = CFG.hypotheses
X = PhysicalState(0.0, 90.0, 10.0, 90.0)
PARAMS = LikelihoodParams(2.0, ((0.0,), (-4.0,)))


def test_observe_examples():
    assert observe(X, [-4.0], [0.0]).tolist() == [-4.0]
    assert observe(X, [-4.0], [0.5]).tolist() == [-3.5]
    with pytest.raises(ValidationError):
        observe(X, [-4.0, 1.0], [0.0], ObservationModel(dim=1))


def test_bayes_symmetric_observation_leaves_belief():
    b = bayes_update(Belief((0.5, 0.5)), [-2.0], PARAMS)
    assert b.probs == (0.5, 0.5)


@pytest.mark.parametrize("y", [-50.0, -4.0, 0.0, 3.0, 80.0])
def test_bayes_degenerate_prior_is_fixed(y):
    assert bayes_update(Belief((1.0, 0.0)), [y], PARAMS).probs == (1.0, 0.0)


def test_bayes_closed_form():
    b = bayes_update(Belief((0.5, 0.5)), [-4.0], PARAMS)
    exp = 1.0 / (1.0 + math.exp(-2.0))
    assert abs(b[1] - exp) <= 1e-12 * exp
    assert abs(b[1] - 0.8808) < 1e-4


@settings(max_examples=500)
@given(st.floats(0.01, 0.99), st.floats(-12, 12), st.floats(0.5, 3.0))
def test_bayes_matches_direct_density(p, y, sigma):
    params = LikelihoodParams(sigma, ((0.0,), (-4.0,)))
    got = bayes_update(make_belief([p, 1 - p]), [y], params).as_array()
    ref = direct_posterior([p, 1 - p], [y], [[0.0], [-4.0]], sigma)
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=0)


@settings(max_examples=300)
@given(st.floats(0.0, 1.0), st.floats(-200, 200))
def test_bayes_simplex_preserved(p, y):
    b = bayes_update(make_belief([p, 1 - p]), [y], PARAMS)
    assert all(x >= 0 for x in b.probs)
    assert abs(sum(b.probs) - 1.0) <= 1e-12


def test_bayes_no_underflow_for_far_observation():
    b = bayes_update(Belief((0.5, 0.5)), [-1000.0], PARAMS)
    assert b[1] == 1.0 or b[0] >= 0.0
    b = bayes_update(Belief((0.5, 0.5)), [-30.0], PARAMS)
    assert 0.0 < b[0] < 1e-10


def test_vectorized_b0_update_matches():
    b0 = np.linspace(0, 1, 11)
    for y in (-6.0, -2.0, 0.5):
        ref = [bayes_update(make_belief([p, 1 - p]), [y], LikelihoodParams(1.5, ((0.0,), (-4.0,))))[0] for p in b0]
        np.testing.assert_allclose(bayes_update_b0(b0, y, 0.0, -4.0, 1.5), ref, atol=1e-15)


def test_type_mean_examples():
    assert type_mean(HYPS[0]).tolist() == [0.0]
    assert type_mean(HYPS[1]).tolist() == [-4.0]
    assert type_mean(ControlBox((3.0,), (3.0,))).tolist() == [3.0]


def test_inferred_bound_examples():
    assert [k for k, _ in inferred_bound(Belief((0.5, 0.5)), 0.2, HYPS)] == [0, 1]
    assert [k for k, _ in inferred_bound(Belief((0.1, 0.9)), 0.2, HYPS)] == [1]
    for p in (0.0, 0.01, 0.7, 1.0):
        assert [k for k, _ in inferred_bound(make_belief([p, 1 - p]), 0.0, HYPS)] == [0, 1]


def test_inferred_bound_inclusive_and_float_slack():
    # 1 - 0.8 is a hair below 0.2 in floating point; the inclusive test must keep it
    assert 1 - 0.8 < 0.2
    assert active_types(np.array([1 - 0.8, 0.8]), 0.2) == [0, 1]
    assert above_threshold(0.2, 0.2)


def test_inferred_bound_errors():
    three = (Hypothesis(0, "a", ControlBox((0.0,), (1.0,))), Hypothesis(1, "b", ControlBox((0.0,), (1.0,))),
             Hypothesis(2, "c", ControlBox((0.0,), (1.0,))))
    with pytest.raises(EmptyInferredBound):
        inferred_bound(make_belief([0.34, 0.33, 0.33]), 0.4, three)
    with pytest.raises(ValidationError):
        inferred_bound(Belief((0.5, 0.5)), 1.5, HYPS)


def test_bound_monotone_in_eps():
    eps = np.linspace(0, 0.5, 26)
    for p in np.linspace(0, 1, 101):
        b = make_belief([p, 1 - p])
        sets = [set(active_types(b, e)) for e in eps]
        assert all(sets[i + 1] <= sets[i] for i in range(len(sets) - 1))


def test_reactivation_within_100_steps():
    b = make_belief([0.99, 0.01])
    params = LikelihoodParams.from_hypotheses(HYPS, CFG.likelihood_sigma)
    for step in range(100):
        b = bayes_update(b, type_mean(HYPS[1]), params)
        if b[1] >= 0.2:
            break
    assert b[1] >= 0.2
