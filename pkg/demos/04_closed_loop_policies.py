# coding: utf-8

# # Closed-loop comparison of ego policies
#
# Uses the cached tables of the acceptance grid (the first run solves them,
# which takes a few minutes). Each ego faces the adversarial opponent that
# picks the worst action within the types it is allowed to use.

import logging

from dgame.acceptance import Acceptance
from dgame.policies import OpponentPolicy, PolicyBundle
from dgame.sim import TrialConfig, format_table, run_batch, run_trial

logging.basicConfig(level=logging.INFO, format="%(message)s")

N = 100
acc = Acceptance()
cfg, tables = acc.cfg, acc.tables()

for modeled, eps_opp in ((True, cfg.epsilon), (False, 0.05)):
    opp = OpponentPolicy.adversarial(tables, eps_opp, modeled=modeled)
    results = {}
    for kind in ("DeceptionGame", "MAP", "Robust"):
        ego = PolicyBundle(kind, tables)
        results[kind], _ = run_batch(TrialConfig(7, 0, ego, opp, cfg), N)
    print(f"\n{'modeled' if modeled else 'unmodeled'} adversary, {N} trials")
    print(format_table(results))

# One trial in detail: time, ego state, opponent and belief.

ego = PolicyBundle("DeceptionGame", tables)
opp = OpponentPolicy.adversarial(tables, cfg.epsilon)
log = run_trial(TrialConfig(7, 3, ego, opp, cfg))
print(f"\ntrial 3: {log.outcome} after {log.time_s:.1f} s, min g = {log.min_g:.2f}")
for s in log.steps[::5]:
    print({k: s[k] for k in ("t", "state", "value") if k in s})
