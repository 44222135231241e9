"""Discrete-time point-mass ego, crossing-line opponent, and the joint
physical/belief step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .learning import LikelihoodParams, ObservationModel, bayes_update, observe
from .state_space import JointState, PhysicalState, ScenarioConfig


@dataclass(frozen=True)
class EgoControl:
    a: float
    u_lat: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.u_lat])


@dataclass(frozen=True)
class OppControl:
    u_y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.u_y])


def ego_step(ego, u: EgoControl, w=None, dt: float = 0.1, v_min: float = 0.0, v_max: float = 30.0):
    """Forward-Euler step of ``(p_x, p_y, v)``; noise ``w`` perturbs velocity."""
    p_x, p_y, v = ego
    w_v = 0.0 if w is None else float(np.atleast_1d(w)[0])
    v_next = min(max(v + u.a * dt + w_v, v_min), v_max)
    return (p_x + v * dt, p_y + u.u_lat * dt, v_next)


def opp_step(p_y_opp: float, u: OppControl, dt: float = 0.1) -> float:
    return p_y_opp + u.u_y * dt


def phys_step(x: PhysicalState, u_e: EgoControl, u_o: OppControl, w, cfg: ScenarioConfig) -> PhysicalState:
    px, py, v = ego_step(x.ego, u_e, w, cfg.dt, cfg.v_min, cfg.v_max)
    return PhysicalState(px, py, v, opp_step(x.p_y_opp, u_o, cfg.dt))


@dataclass(frozen=True)
class Learner:
    """Bundles the observation model with the likelihood used for updates."""

    model: ObservationModel
    params: LikelihoodParams

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "Learner":
        return cls(
            ObservationModel(obs_noise=cfg.obs_noise, dim=1),
            LikelihoodParams.from_hypotheses(cfg.hypotheses, cfg.likelihood_sigma),
        )


def joint_step(z: JointState, u_e: EgoControl, u_o: OppControl, w, v, cfg: ScenarioConfig,
               learner: Learner | None = None) -> JointState:
    """Advance physics and belief together.

    The belief update observes the opponent from the pre-step physical state.
    The physical successor never reads the belief.
    """
    learner = learner or Learner.from_config(cfg)
    y = observe(z.phys, u_o.as_array(), v, learner.model)
    belief = bayes_update(z.belief, y, learner.params)
    return JointState(phys_step(z.phys, u_e, u_o, w, cfg), belief)
