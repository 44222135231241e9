"""Runtime learning: observation model, Bayesian belief update and the
belief-thresholded (inferred) opponent control bound."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .state_space import Belief, ControlBox, Hypothesis, JointState, PhysicalState, ValidationError


# beliefs read off grid nodes carry rounding error (1 - 0.8 < 0.2 in floats),
# so the inclusive threshold test allows this much slack
THRESHOLD_SLACK = 1e-12


def above_threshold(p, eps: float):
    """Inclusive test ``p >= eps`` with :data:`THRESHOLD_SLACK`; works on arrays."""
    return np.asarray(p) >= eps - THRESHOLD_SLACK


class EmptyInferredBound(ValueError):
    """No hypothesis clears the threshold; the caller must pick a fallback."""


@dataclass(frozen=True)
class ObservationModel:
    kind: str = "DirectAction"
    obs_noise: tuple[tuple[float, ...], ...] = ()
    dim: int = 1

    def __post_init__(self):
        if self.kind != "DirectAction":
            raise ValidationError(f"unsupported observation model kind {self.kind!r}")
        noise = tuple(tuple(float(x) for x in np.atleast_1d(v)) for v in self.obs_noise)
        if any(len(v) != self.dim for v in noise):
            raise ValidationError(f"observation noise vectors must have dimension {self.dim}")
        object.__setattr__(self, "obs_noise", noise)

    def noise_points(self) -> np.ndarray:
        """Noise list used by the worst-case backup; zero when empty."""
        if not self.obs_noise:
            return np.zeros((1, self.dim))
        return np.asarray(self.obs_noise, dtype=float)


@dataclass(frozen=True)
class LikelihoodParams:
    """Isotropic Gaussian action likelihood with one mean per hypothesis."""

    sigma: float
    means: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValidationError("likelihood sigma must be > 0")
        object.__setattr__(self, "means", tuple(tuple(float(x) for x in np.atleast_1d(m)) for m in self.means))

    @classmethod
    def from_hypotheses(cls, hyps: Sequence[Hypothesis], sigma: float) -> "LikelihoodParams":
        return cls(sigma, tuple(tuple(type_mean(h)) for h in hyps))

    def mean_array(self) -> np.ndarray:
        return np.asarray(self.means, dtype=float)


def type_mean(h: Hypothesis | ControlBox) -> np.ndarray:
    box = h.control_box if isinstance(h, Hypothesis) else h
    return (np.asarray(box.lower) + np.asarray(box.upper)) / 2.0


def observe(x: PhysicalState, u_o, v, model: ObservationModel | None = None) -> np.ndarray:
    """Direct-action observation ``y = u_o + v``."""
    dim = model.dim if model is not None else 1
    u = np.atleast_1d(np.asarray(u_o, dtype=float))
    noise = np.zeros(dim) if v is None else np.atleast_1d(np.asarray(v, dtype=float))
    if u.shape != (dim,) or noise.shape != (dim,):
        raise ValidationError(f"observation expects {dim}-D control and noise, got {u.shape} and {noise.shape}")
    return u + noise


def bayes_update(b: Belief, y, params: LikelihoodParams) -> Belief:
    """Posterior ``b'(k) ∝ exp(-|y - mu_k|^2 / 2 sigma^2) b(k)``.

    Log-likelihoods are shifted by their maximum over hypotheses with nonzero
    prior before exponentiating, so no nonzero prior underflows to an exact
    zero for observations within any practical range.
    """
    prior = b.as_array()
    post = _posterior(prior, np.atleast_1d(np.asarray(y, dtype=float)), params.mean_array(), params.sigma)
    return Belief(tuple(post.tolist()))


def _posterior(prior: np.ndarray, y: np.ndarray, means: np.ndarray, sigma: float) -> np.ndarray:
    if means.shape[0] != prior.shape[0]:
        raise ValidationError("likelihood means and belief have different lengths")
    if y.shape != means.shape[1:]:
        raise ValidationError(f"observation dimension {y.shape} does not match means {means.shape[1:]}")
    loglik = -np.sum((y - means) ** 2, axis=1) / (2.0 * sigma**2)
    support = prior > 0
    loglik = loglik - loglik[support].max()
    w = np.where(support, np.exp(loglik) * prior, 0.0)
    return w / w.sum()


def bayes_update_b0(b0: np.ndarray, y: float, mu0: float, mu1: float, sigma: float) -> np.ndarray:
    """Vectorized two-type update of ``b(type 0)`` for a scalar observation."""
    b0 = np.asarray(b0, dtype=float)
    # posterior odds of type 1 over type 0 scale by the likelihood ratio
    log_ratio = ((y - mu0) ** 2 - (y - mu1) ** 2) / (2.0 * sigma**2)
    r = np.exp(np.clip(log_ratio, -700.0, 700.0))
    b1 = 1.0 - b0
    return b0 / (b0 + r * b1)


def active_types(b: Belief | np.ndarray, eps: float) -> list[int]:
    probs = b.as_array() if isinstance(b, Belief) else np.asarray(b)
    return [k for k, p in enumerate(probs) if above_threshold(p, eps)]


def inferred_bound(z: JointState | Belief, eps: float, hyps: Sequence[Hypothesis]) -> list[tuple[int, ControlBox]]:
    """Control boxes of all hypotheses whose belief is at least ``eps``.

    The comparison is inclusive. Raises :class:`EmptyInferredBound` when no
    hypothesis qualifies, which can only happen for ``eps > 1/K``.
    """
    if not 0.0 <= eps <= 1.0:
        raise ValidationError(f"threshold must lie in [0, 1], got {eps}")
    b = z.belief if isinstance(z, JointState) else z
    if len(b) != len(hyps):
        raise ValidationError("belief length does not match hypothesis count")
    out = [(h.id, h.control_box) for h in hyps if above_threshold(b[h.id], eps)]
    if not out:
        raise EmptyInferredBound(f"no hypothesis has belief >= {eps}: {b.probs}")
    return out
