"""Bellman-operator machinery: finite-horizon optima, relative and discounted value iteration."""

from dataclasses import dataclass

import numpy as np

from .core import _check_gamma, discounted_visitation
from .mdp import Mdp


class NonConvergenceError(RuntimeError):
    pass


def span(J) -> float:
    J = np.asarray(J)
    return float(J.max() - J.min())


def _q_values(mdp: Mdp, J):
    return mdp.r + mdp.p @ J


def greedy(values) -> np.ndarray:
    """One-hot greedy policy; ``argmax`` already breaks ties by lowest index."""
    return np.eye(values.shape[1])[values.argmax(axis=1)]


def bellman_operator(mdp: Mdp, J) -> np.ndarray:
    """``[LJ]_s = max_a (r(s, a) + sum_s' p(s'|s, a) J(s'))``."""
    return _q_values(mdp, np.asarray(J, dtype=float)).max(axis=1)


def finite_horizon_optimal(mdp: Mdp, H: int):
    """Optimal ``V^{H,*}`` and a greedy, possibly non-stationary, policy sequence.

    ``J_k`` is the optimal total reward with ``k`` steps left, ``J_0 = 0``;
    the step-``h`` policy is greedy for ``r + p J_{H-h-1}``.
    """
    if H < 1:
        raise ValueError("H must be at least 1")
    J = np.zeros(mdp.S)
    seq = np.empty((H, mdp.S, mdp.A))
    for h in range(H - 1, -1, -1):
        Q = _q_values(mdp, J)
        seq[h] = greedy(Q)
        J = Q.max(axis=1)
    return float(mdp.rho @ J) / H, seq


@dataclass(frozen=True)
class RelativeVIResult:
    lo: float
    hi: float
    policy: np.ndarray
    J: np.ndarray
    span_trace: np.ndarray  # sp(L^{n+1} 0 - L^n 0) for n = 0, 1, ...
    iterations: int

    @property
    def eta(self) -> float:
        """Bracket midpoint; the half-width is the certified error."""
        return 0.5 * (self.lo + self.hi)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.hi - self.lo)


def relative_value_iteration(mdp: Mdp, tol: float = 1e-11, max_iter: int = 100_000) -> RelativeVIResult:
    """Bracket the optimal average reward by ``min/max (LJ - J)``.

    ``J`` starts at zero and is shifted by ``J[0]`` after every sweep, which
    leaves ``LJ - J`` unchanged.
    """
    J = np.zeros(mdp.S)
    trace = []
    for n in range(max_iter):
        Q = _q_values(mdp, J)
        LJ = Q.max(axis=1)
        diff = LJ - J
        trace.append(span(diff))
        lo, hi = float(diff.min()), float(diff.max())
        if hi - lo <= tol:
            return RelativeVIResult(lo, hi, greedy(Q), J, np.array(trace), n + 1)
        J = LJ - LJ[0]
    raise NonConvergenceError(f"relative value iteration did not reach span {tol} in {max_iter} sweeps")


@dataclass(frozen=True)
class DiscountedOptimum:
    value: float
    policy: np.ndarray
    visitation: np.ndarray
    V: np.ndarray


def discounted_optimal(mdp: Mdp, gamma: float, tol: float = 1e-12, max_iter: int = 1_000_000) -> DiscountedOptimum:
    """Value iteration on the normalized values ``V = max_a ((1-g) r + g p V)``.

    Stops once successive sweeps differ by at most ``tol * (1 - gamma)`` in
    sup norm, which puts ``V`` within ``tol`` of the fixed point.
    """
    _check_gamma(gamma)
    V = mdp.r.max(axis=1) * (1.0 - gamma)
    for _ in range(max_iter):
        Q = (1.0 - gamma) * mdp.r + gamma * (mdp.p @ V)
        V_new = Q.max(axis=1)
        done = np.abs(V_new - V).max() <= tol * (1.0 - gamma)
        V = V_new
        if done:
            break
    else:
        raise NonConvergenceError("discounted value iteration did not converge")
    pi = greedy((1.0 - gamma) * mdp.r + gamma * (mdp.p @ V))
    return DiscountedOptimum(float(mdp.rho @ V), pi, discounted_visitation(mdp, pi, gamma), V)
