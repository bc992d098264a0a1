"""Exact evaluators for finite-horizon, discounted and average-reward quantities."""

from dataclasses import dataclass, field

import numpy as np

from .mdp import Mdp

SOLVE_RESIDUAL_TOL = 1e-10


class ErgodicityError(ArithmeticError):
    """The induced chain does not have a unique stationary distribution."""


@dataclass(frozen=True)
class ValueReport:
    value: float
    setting: str  # "finite-horizon" | "discounted" | "average"
    params: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.value)


def check_policy(mdp: Mdp, pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (mdp.S, mdp.A):
        raise ValueError(f"policy shape {pi.shape} does not match (S, A) = {(mdp.S, mdp.A)}")
    return pi


def transition_matrix(mdp: Mdp, pi) -> np.ndarray:
    """State-to-state kernel ``P_pi[s, s'] = sum_a pi(a|s) p(s'|s, a)``."""
    pi = check_policy(mdp, pi)
    return np.einsum("sat,sa->st", mdp.p, pi)


def policy_reward(mdp: Mdp, pi) -> np.ndarray:
    """Per-state expected reward ``r_pi(s) = sum_a pi(a|s) r(s, a)``."""
    return np.einsum("sa,sa->s", check_policy(mdp, pi), mdp.r)


def stationary_distribution(P) -> np.ndarray:
    """Unique stationary distribution of an ergodic chain.

    Solves ``[P^T - I; 1^T] mu = [0; 1]`` in least squares and checks that the
    system has full column rank and a small residual.
    """
    P = np.asarray(P, dtype=float)
    S = P.shape[0]
    M = np.vstack([P.T - np.eye(S), np.ones((1, S))])
    b = np.zeros(S + 1)
    b[-1] = 1.0
    mu, _, rank, _ = np.linalg.lstsq(M, b, rcond=None)
    if rank < S:
        raise ErgodicityError("stationary distribution is not unique (chain not irreducible)")
    resid = np.abs(mu @ P - mu).max()
    if resid > SOLVE_RESIDUAL_TOL or mu.min() < -SOLVE_RESIDUAL_TOL:
        raise ErgodicityError(f"stationary solve failed (residual {resid:.3e}, min {mu.min():.3e})")
    mu = np.clip(mu, 0.0, None)
    return mu / mu.sum()


def state_distributions(mdp: Mdp, pi, H: int) -> np.ndarray:
    """Rows ``rho P_pi^h`` for ``h = 0..H-1``."""
    P = transition_matrix(mdp, pi)
    out = np.empty((H, mdp.S))
    out[0] = mdp.rho
    for h in range(1, H):
        out[h] = out[h - 1] @ P
    return out


def finite_horizon_value(mdp: Mdp, seq, H: int) -> ValueReport:
    """Per-step mean reward over ``H`` steps of a (possibly non-stationary)
    policy sequence.  A single ``(S, A)`` array is treated as stationary."""
    if H < 1:
        raise ValueError("H must be at least 1")
    seq = np.asarray(seq, dtype=float)
    if seq.ndim == 2:
        seq = np.broadcast_to(seq, (H, *seq.shape))
    if seq.shape[0] != H:
        raise ValueError(f"policy sequence has length {seq.shape[0]}, horizon is {H}")
    dist = mdp.rho.copy()
    total = 0.0
    for pi in seq:
        total += dist @ policy_reward(mdp, pi)
        dist = dist @ transition_matrix(mdp, pi)
    return ValueReport(total / H, "finite-horizon", {"H": H})


def _check_gamma(gamma):
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")


def discounted_visitation(mdp: Mdp, pi, gamma: float) -> np.ndarray:
    """``d = (1 - gamma) rho (I - gamma P_pi)^{-1}``."""
    _check_gamma(gamma)
    P = transition_matrix(mdp, pi)
    d = np.linalg.solve((np.eye(mdp.S) - gamma * P).T, (1.0 - gamma) * mdp.rho)
    return d


def _discounted_v(mdp, pi, gamma):
    P = transition_matrix(mdp, pi)
    return np.linalg.solve(np.eye(mdp.S) - gamma * P, (1.0 - gamma) * policy_reward(mdp, pi))


def discounted_value(mdp: Mdp, pi, gamma: float) -> ValueReport:
    """Normalized discounted value ``(1 - gamma) rho (I - gamma P)^{-1} r_pi``."""
    _check_gamma(gamma)
    return ValueReport(float(mdp.rho @ _discounted_v(mdp, pi, gamma)), "discounted", {"gamma": gamma})


def average_reward(mdp: Mdp, pi) -> ValueReport:
    mu = stationary_distribution(transition_matrix(mdp, pi))
    return ValueReport(float(mu @ policy_reward(mdp, pi)), "average", {})


def discounted_q_v_a(mdp: Mdp, pi, gamma: float):
    """Normalized ``(Q, V, A)``: ``V = (1-g) r_pi + g P V`` and
    ``Q = (1-g) r + g p V``."""
    _check_gamma(gamma)
    V = _discounted_v(mdp, pi, gamma)
    Q = (1.0 - gamma) * mdp.r + gamma * mdp.p @ V
    return Q, V, Q - V[:, None]


def deviation_matrix(P, mu=None) -> np.ndarray:
    """``Y = (I - P + 1 mu)^{-1} - 1 mu`` for an ergodic kernel ``P``."""
    P = np.asarray(P, dtype=float)
    if mu is None:
        mu = stationary_distribution(P)
    S = P.shape[0]
    Pinf = np.outer(np.ones(S), mu)
    return np.linalg.inv(np.eye(S) - P + Pinf) - Pinf


def bias_q_v_a(mdp: Mdp, pi):
    """Average-reward bias functions ``(Qbar, Vbar, Abar)``.

    ``Vbar = Y r_pi`` is the bias vector normalized so that ``mu . Vbar = 0``;
    ``Qbar(s, a) = r(s, a) - eta + sum_s' p(s'|s, a) Vbar(s')``.
    """
    pi = check_policy(mdp, pi)
    P = transition_matrix(mdp, pi)
    mu = stationary_distribution(P)
    r_pi = policy_reward(mdp, pi)
    eta = mu @ r_pi
    Vbar = deviation_matrix(P, mu) @ r_pi
    Qbar = mdp.r - eta + mdp.p @ Vbar
    Vbar = np.einsum("sa,sa->s", pi, Qbar)
    return Qbar, Vbar, Qbar - Vbar[:, None]


def finite_horizon_occupancy(mdp: Mdp, pi, H: int) -> np.ndarray:
    """Average state distribution ``w^H = (1/H) sum_{h<H} rho P^h``."""
    if H < 1:
        raise ValueError("H must be at least 1")
    return state_distributions(mdp, pi, H).mean(axis=0)


def truncated_q_table(mdp: Mdp, pi, gamma: float, steps: int) -> np.ndarray:
    """Stack ``q[k]`` of un-normalized ``k+1``-step discounted action values.

    ``q[0] = r`` and ``q[k] = r + gamma * p @ (sum_a pi q[k-1])``.
    """
    pi = check_policy(mdp, pi)
    q = np.empty((steps, mdp.S, mdp.A))
    q[0] = mdp.r
    p, r = mdp.p, mdp.r
    for k in range(1, steps):
        q[k] = r + gamma * (p @ (pi * q[k - 1]).sum(axis=1))
    return q


def truncated_discounted_q(mdp: Mdp, pi, gamma: float, H: int, h: int) -> np.ndarray:
    """``E[sum_{h'=h}^{H-1} gamma^(h'-h) r_h' | s_h = s, a_h = a]``."""
    if not 0 <= h < H:
        raise IndexError(f"step h={h} outside [0, {H})")
    return truncated_q_table(mdp, pi, gamma, H - h)[-1]
