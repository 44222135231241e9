# coding: utf-8

# # Learning the opponent's type
#
# The opponent is either a pedestrian (velocity in [-2, 2] m/s) or a
# segway (velocity in [-8, 0] m/s). Each step we see its velocity and
# update a categorical belief over the two types with a Gaussian likelihood
# centred on each box's midpoint.

import numpy as np

from dgame.learning import LikelihoodParams, bayes_update, inferred_bound
from dgame.state_space import ScenarioConfig, make_belief

cfg = ScenarioConfig()
params = LikelihoodParams.from_hypotheses(cfg.hypotheses, cfg.likelihood_sigma)
print("type means:", params.mean_array().ravel())

# An ambiguous mover whose speed sits between the two type means. The
# belief swings back and forth, and the segway box leaves the inferred
# bound whenever its probability drops below epsilon, then comes back.

rng = np.random.default_rng(0)
b = make_belief([0.5, 0.5])
for t in range(12):
    y = rng.normal(-2.0, 1.0)
    b = bayes_update(b, [y], params)
    active = [cfg.hypotheses[k].label for k, _ in inferred_bound(b, cfg.epsilon, cfg.hypotheses)]
    print(f"t={t}  y={y:+.2f}  b(ped)={b[0]:.3f}  inferred types: {active}")

# A single fast downward step is strong evidence for the segway.

b = bayes_update(make_belief([0.5, 0.5]), [-6.0], params)
print("after y = -6:", b.probs)

# With epsilon = 0 nothing is ever discarded, which is the robust setting.

print("eps = 0:", [h for h, _ in inferred_bound(make_belief([0.999, 0.001]), 0.0, cfg.hypotheses)])
