# coding: utf-8

# # Solving the belief-space crossing game
#
# Solve the reach-avoid value function over (p_x, p_y, v, p_y_opp, b(ped))
# on a small grid and look at 2D slices. V >= 0 marks states from which the
# ego can reach the far side of the crossing without ever colliding, as
# long as the opponent only uses controls of types with belief >= epsilon.

import numpy as np

from dgame.grid import Grid
from dgame.solver import SolveMode, SolverParams, export_slice, value_iteration
from dgame.verify import SMALL_PARAMS, small_scenario

cfg = small_scenario()
grid = Grid.for_scenario(cfg)
print("grid:", dict(zip(grid.names, grid.shape)), "nodes:", grid.size)

res = value_iteration(grid, SolveMode.belief(cfg.epsilon), cfg, SMALL_PARAMS)
print(f"belief solve: {len(res.history)} sweeps, residual {res.history[-1][1]:.2e}")

robust = value_iteration(Grid.for_scenario(cfg, belief=False), SolveMode.robust(), cfg, SMALL_PARAMS)

# Certified fraction of a (p_x, p_y_opp) slice at the road centre, 15 m/s,
# for several beliefs. Once one type is nearly certain the other type's box
# drops out and the safe region grows; in between both boxes stay in play.
# The belief table never certifies less than the robust one.

fix = {"p_y": 90.0, "v": 15.0}
S_rb = export_slice(robust.table, fix, ("p_x", "p_y_opp"))
print(f"robust          : {np.mean(S_rb >= 0):.2%} of the slice certified")
for b in (0.0, 0.25, 0.5, 0.75, 1.0):
    S = export_slice(res.table, dict(fix, b=b), ("p_x", "p_y_opp"))
    print(f"belief b(ped)={b:.2f}: {np.mean(S >= 0):.2%} certified")

# Sign map of one slice, rows p_x, columns p_y_opp ('+' safe, '.' not).

S = export_slice(res.table, dict(fix, b=0.9), ("p_x", "p_y_opp"))
for px, row in zip(grid.axes[grid.index("p_x")].nodes, S):
    print(f"{px:6.1f} " + "".join("+" if v >= 0 else "." for v in row))

# Residuals fall geometrically once the discount kicks in.

r = np.array([h[1] for h in res.history])
print("residual every 100 sweeps:", np.round(r[::100], 5))
