# coding: utf-8

# # Value iteration against brute-force minimax
#
# A 1D toy reach-avoid game on integer positions -2..2. The ego moves by
# -1 or +1, the disturbance adds one of a few offsets, the target is x >= 1
# and the failure set is x < -1. Because the dynamics map nodes onto nodes,
# grid value iteration should reproduce the game-tree value exactly.

import time

import numpy as np

from dgame.oracles import ToyGame, game_tree_values, toy_value_iteration

for opp in [(0.0,), (-1.0, 0.0), (-1.0, 0.0, 1.0)]:
    game = ToyGame(opp=opp)
    t0 = time.perf_counter()
    V, history, converged = toy_value_iteration(game)
    dt = time.perf_counter() - t0
    tree = game_tree_values(game)
    print(f"disturbance {opp}: nodes {game.nodes()}")
    print(f"  VI   {V}  ({len(history)} sweeps, {dt * 1e3:.1f} ms)")
    print(f"  tree {tree}  max diff {np.abs(V - tree).max():.1e}")

# A stronger disturbance can push the ego back, so fewer starts are winning
# (V >= 0): that is the shrinking reach-avoid set.

# The discounted game on a wider line matches the tree as well.

game = ToyGame(lo=-3, hi=3, gamma=0.9)
V, _, _ = toy_value_iteration(game)
print("gamma 0.9:", np.round(V, 4), "tree:", np.round(game_tree_values(game), 4))
