"""Softmax policies, the log-barrier regularizer and exact objective gradients."""

import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    bias_q_v_a,
    discounted_q_v_a,
    discounted_visitation,
    policy_reward,
    stationary_distribution,
    transition_matrix,
)
from .dp import discounted_optimal, relative_value_iteration
from .mdp import Mdp
from .mixing import MixingConstants, mixing_constants

LOGIT_CLIP = 500.0


@dataclass(frozen=True)
class SoftmaxParams:
    theta: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.ndim != 2:
            raise ValueError(f"theta must be an (S, A) array, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta has non-finite entries")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)


def _as_params(params) -> SoftmaxParams:
    return params if isinstance(params, SoftmaxParams) else SoftmaxParams(params)


def _clipped(theta):
    if np.abs(theta).max() > LOGIT_CLIP:
        warnings.warn(f"logits clipped to +/-{LOGIT_CLIP}", RuntimeWarning, stacklevel=3)
        return np.clip(theta, -LOGIT_CLIP, LOGIT_CLIP)
    return theta


def policy_from_params(params) -> np.ndarray:
    """Row-wise softmax of the logits, stabilized by subtracting the row max."""
    theta = _clipped(_as_params(params).theta)
    z = np.exp(theta - theta.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def log_policy(params) -> np.ndarray:
    theta = _clipped(_as_params(params).theta)
    shifted = theta - theta.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def regularizer(params):
    """``Omega = lam/(SA) sum log pi`` and its gradient ``lam/(SA) - (lam/S) pi``."""
    params = _as_params(params)
    S, A = params.theta.shape
    lam = params.lam
    omega = lam / (S * A) * log_policy(params).sum()
    grad = lam / (S * A) - (lam / S) * policy_from_params(params)
    return float(omega), grad


@dataclass(frozen=True)
class ObjectiveGradient:
    value: float
    gradient: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.gradient))


def grad_average_objective(mdp: Mdp, params) -> ObjectiveGradient:
    """``Lbar = eta + Omega`` with ``d eta / d theta_sa = mu(s) pi(a|s) Abar(s, a)``."""
    params = _as_params(params)
    pi = policy_from_params(params)
    mu = stationary_distribution(transition_matrix(mdp, pi))
    _, _, Abar = bias_q_v_a(mdp, pi)
    omega, g_omega = regularizer(params)
    eta = float(mu @ policy_reward(mdp, pi))
    return ObjectiveGradient(eta + omega, mu[:, None] * pi * Abar + g_omega)


def grad_discounted_objective(mdp: Mdp, params, gamma: float) -> ObjectiveGradient:
    """``L^gamma = V^gamma / (1 - gamma) + Omega``.

    With the normalized advantage ``A`` the gradient of ``V^gamma`` is
    ``d(s) pi(a|s) A(s, a) / (1 - gamma)``; dividing the objective by
    ``1 - gamma`` contributes the second factor.
    """
    params = _as_params(params)
    pi = policy_from_params(params)
    d = discounted_visitation(mdp, pi, gamma)
    _, V, Adv = discounted_q_v_a(mdp, pi, gamma)
    omega, g_omega = regularizer(params)
    scale = 1.0 / (1.0 - gamma) ** 2
    value = float(mdp.rho @ V) / (1.0 - gamma) + omega
    return ObjectiveGradient(value, scale * d[:, None] * pi * Adv + g_omega)


def smoothness_constants(consts: MixingConstants, gamma: float, lam: float, S: int):
    """``(beta_lam, betabar_lam)`` for the discounted and average objectives."""
    beta_disc = 8.0 / (1.0 - gamma) ** 3 + 2.0 * lam / S
    beta_avg = 22.0 * np.sqrt(S) * (2.0 * consts.C / (1.0 - consts.alpha) + 1.0) ** 3 + 2.0 * lam / S
    return beta_disc, float(beta_avg)


@dataclass(frozen=True)
class DominationBound:
    premise_holds: bool
    bound: float
    grad_norm: float
    threshold: float


def domination_bound_average(lam, mu_star, consts: MixingConstants) -> float:
    S = len(mu_star)
    return lam * S * float(np.max(mu_star)) / (1.0 - consts.alpha)


def domination_bound_discounted(lam, d_star, rho, consts: MixingConstants) -> float:
    S = len(d_star)
    with np.errstate(divide="ignore"):
        ratio = np.where(rho > 0, d_star / np.where(rho > 0, rho, 1.0), np.where(d_star > 0, np.inf, 0.0))
    return lam * min(float(ratio.max()), S * float(np.max(d_star)) / (1.0 - consts.alpha))


def gradient_domination_bound(
    mdp: Mdp,
    params,
    setting: str,
    gamma: float = None,
    threshold: float = None,
    consts: MixingConstants = None,
) -> DominationBound:
    """Sub-optimality bound implied by a small regularized gradient.

    The bound is always computed; ``premise_holds`` reports whether the
    gradient norm is below ``threshold`` (default ``lam / (2SA)``).
    """
    params = _as_params(params)
    consts = consts or mixing_constants(mdp)
    S, A = mdp.S, mdp.A
    if threshold is None:
        threshold = params.lam / (2 * S * A)
    if setting == "average":
        g = grad_average_objective(mdp, params)
        pi_star = relative_value_iteration(mdp).policy
        mu_star = stationary_distribution(transition_matrix(mdp, pi_star))
        bound = domination_bound_average(params.lam, mu_star, consts)
    elif setting == "discounted":
        if gamma is None:
            raise ValueError("discounted setting needs gamma")
        g = grad_discounted_objective(mdp, params, gamma)
        d_star = discounted_optimal(mdp, gamma).visitation
        bound = domination_bound_discounted(params.lam, d_star, mdp.rho, consts)
    else:
        raise ValueError(f"unknown setting {setting!r}")
    return DominationBound(g.norm <= threshold, bound, g.norm, threshold)
