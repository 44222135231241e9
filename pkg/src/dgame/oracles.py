"""Independent reference computations used by the oracle suite and the tests.

The toy game lives on integer nodes so every successor lands exactly on a
node; its value is then checked against plain game-tree recursion.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .grid import Axis, Grid
from .solver import SolverParams, reference_value_iteration


class ToyGame:
    """1D reach-avoid toy: ``x' = clamp(x + u + d)``, ``l = x - 1``, ``g = x + 1``.

    Positions are clamped to the grid so that the enumeration and the grid
    solver see the same finite graph.
    """

    def __init__(self, ego=(-1.0, 1.0), opp=(0.0,), lo: int = -2, hi: int = 2, gamma: float = 1.0):
        self.grid = Grid((Axis("x", lo, hi, hi - lo + 1),))
        self.lo, self.hi = lo, hi
        self.ego = tuple(float(u) for u in ego)
        self.opp = tuple(float(d) for d in opp)
        self.n_ego, self.n_opp, self.n_noise = len(self.ego), len(self.opp), 1
        self.gamma = gamma
        self.clip = False

    def margins(self, coords):
        x = np.asarray(coords, dtype=float)[..., 0]
        return x + 1.0, x - 1.0

    def step(self, x, u, d):
        return np.clip(x + u + d, self.lo, self.hi)

    def successor(self, coords, ie, io, inoise):
        return self.step(np.asarray(coords, dtype=float), self.ego[ie], self.opp[io])

    def opp_mask(self, coords):
        return np.ones(np.asarray(coords).shape[:-1] + (self.n_opp,), dtype=bool)

    def nodes(self) -> np.ndarray:
        return self.grid.axes[0].nodes


def toy_value_iteration(game: ToyGame, tol: float = 1e-14, max_iters: int = 1000):
    params = SolverParams(tol=tol, max_iters=max_iters, discount=game.gamma, margin_clip=False, backend="reference")
    V, history, converged = reference_value_iteration(game, params)
    return V, history, converged


def game_tree_value(game: ToyGame, x: float, horizon: int) -> float:
    """Finite-horizon minimax value by explicit recursion over the game tree
    (no grid, no interpolation)."""

    def g(x):
        return x + 1.0

    def l(x):
        return x - 1.0

    @lru_cache(maxsize=None)
    def W(x: float, k: int) -> float:
        if k == 0:
            return min(g(x), l(x))
        best = -math.inf
        for u in game.ego:
            worst = math.inf
            for d in game.opp:
                worst = min(worst, W(float(game.step(x, u, d)), k - 1))
            best = max(best, worst)
        return min(g(x), max(l(x), game.gamma * best))

    return W(float(x), int(horizon))


def game_tree_values(game: ToyGame, horizon: int | None = None) -> np.ndarray:
    nodes = game.nodes()
    h = len(nodes) if horizon is None else horizon
    return np.array([game_tree_value(game, x, h) for x in nodes])


def direct_posterior(prior, y, means, sigma) -> np.ndarray:
    """Bayes rule from Gaussian densities, without any log-domain shift."""
    prior = np.asarray(prior, dtype=float)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    means = np.asarray(means, dtype=float).reshape(len(prior), -1)
    d = means.shape[1]
    norm = (2.0 * math.pi * sigma**2) ** (-d / 2.0)
    dens = norm * np.exp(-np.sum((y - means) ** 2, axis=1) / (2.0 * sigma**2))
    w = dens * prior
    return w / w.sum()
