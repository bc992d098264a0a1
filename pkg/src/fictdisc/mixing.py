"""Uniform mixing constants, deterministic-policy decomposition and chain identities."""

import itertools
from dataclasses import dataclass

import numpy as np

from .core import deviation_matrix, stationary_distribution, transition_matrix
from .mdp import Mdp

ENUMERATION_CAP = 10**6
DEGENERATE_CONSTANT = 1.0 + 1e-9
_BATCH = 4096


class AssumptionViolation(ValueError):
    """Some deterministic policy induces a chain that is not irreducible and aperiodic."""


@dataclass(frozen=True)
class MixingConstants:
    m_p: int
    p_min: float
    n_SA: int
    alpha_tilde: float
    alpha: float
    C: float
    beta_tilde: float
    beta: float
    E: float
    D: float

    @property
    def mixing_sum(self) -> float:
        """``C / (1 - alpha)``, the recurring geometric-sum factor."""
        return self.C / (1.0 - self.alpha)


def _check_cap(S, A, cap):
    if A**S > cap:
        raise ValueError(f"A^S = {A}^{S} deterministic policies exceeds the enumeration cap {cap}")


def enumerate_deterministic_policies(S: int, A: int, cap: int = ENUMERATION_CAP):
    """Yield every deterministic policy as a one-hot ``(S, A)`` array."""
    _check_cap(S, A, cap)
    eye = np.eye(A)
    for actions in itertools.product(range(A), repeat=S):
        yield eye[list(actions)]


def deterministic_action_batches(S: int, A: int, cap: int = ENUMERATION_CAP):
    """Yield ``(K, S)`` arrays of action choices covering all ``A^S`` policies."""
    _check_cap(S, A, cap)
    total = A**S
    for start in range(0, total, _BATCH):
        idx = np.arange(start, min(start + _BATCH, total))
        yield np.stack(np.unravel_index(idx, (A,) * S), axis=1)


def _deterministic_kernels(p, actions):
    S = p.shape[0]
    return p[np.arange(S), actions]  # (K, S, S)


def mixing_constants(mdp: Mdp, cap: int = ENUMERATION_CAP) -> MixingConstants:
    """Constructive Dobrushin and span-contraction constants of ``mdp``.

    ``m_p`` is the smallest power at which every deterministic chain is
    entrywise positive; ``p_min`` is the smallest entry of those powers.
    When ``alpha_tilde`` (or ``beta_tilde``) is zero the reciprocal constant
    is replaced by ``1 + 1e-9`` so that ``C > 1`` still holds.
    """
    S, A = mdp.S, mdp.A
    wielandt = (S - 1) ** 2 + 1
    pos = mdp.p > 0
    m_p = 1
    for actions in deterministic_action_batches(S, A, cap):
        step = _deterministic_kernels(pos, actions).astype(np.int64)
        power = step.copy()
        m = 1
        while m < m_p or not np.all(power > 0):
            if m >= wielandt:
                raise AssumptionViolation(
                    f"some deterministic chain is not primitive within {wielandt} steps"
                )
            power = np.minimum(power @ step, 1)
            m += 1
        m_p = max(m_p, m)
    p_min = np.inf
    for actions in deterministic_action_batches(S, A, cap):
        P = _deterministic_kernels(mdp.p, actions)
        p_min = min(p_min, float(np.linalg.matrix_power(P, m_p).min()))
    n_SA = S * (A - 1) + 1
    alpha_tilde = max(0.0, 1.0 - S * p_min / n_SA ** (m_p - 1))
    beta_tilde = max(0.0, 1.0 - S * p_min)
    alpha = alpha_tilde ** (1.0 / m_p)
    beta = beta_tilde ** (1.0 / m_p)
    C = 1.0 / alpha_tilde if alpha_tilde > 0 else DEGENERATE_CONSTANT
    E = 1.0 / beta_tilde if beta_tilde > 0 else DEGENERATE_CONSTANT
    D = 1.0 + 2.0 * E * m_p * beta / (1.0 - beta)
    return MixingConstants(m_p, p_min, n_SA, alpha_tilde, alpha, C, beta_tilde, beta, E, D)


def total_variation(mu, nu) -> float:
    return 0.5 * float(np.abs(np.asarray(mu) - np.asarray(nu)).sum())


def verify_dobrushin(mdp: Mdp, pi, h_max: int, consts: MixingConstants = None):
    """List of ``(h, d_TV(rho P^h, mu), C alpha^h)`` for ``h = 0..h_max``."""
    consts = consts or mixing_constants(mdp)
    P = transition_matrix(mdp, pi)
    mu = stationary_distribution(P)
    rows, dist = [], mdp.rho.copy()
    for h in range(h_max + 1):
        rows.append((h, total_variation(dist, mu), consts.C * consts.alpha**h))
        dist = dist @ P
    return rows


@dataclass(frozen=True)
class PolicyDecomposition:
    """Convex combination ``sum_i coef[i] * onehot(actions[i])``."""

    coefficients: np.ndarray  # (K,)
    actions: np.ndarray  # (K, S) integer action per state
    num_actions: int

    def __len__(self):
        return len(self.coefficients)

    def policies(self) -> np.ndarray:
        return np.eye(self.num_actions)[self.actions]

    def reconstruct(self) -> np.ndarray:
        return np.einsum("k,ksa->sa", self.coefficients, self.policies())


def decompose_policy(pi, zero_tol: float = 1e-14) -> PolicyDecomposition:
    """Write ``pi`` as a convex combination of at most ``S(A-1)+1`` deterministic policies.

    Each step peels the smallest positive entry ``c`` of the residual at
    ``(s_min, a_min)`` with a deterministic atom that plays ``a_min`` there
    and the residual's largest entry elsewhere.  Working with the
    un-normalized residual is equivalent to renormalizing after each step.
    """
    resid = np.array(pi, dtype=float)
    S, A = resid.shape
    coefs, atoms = [], []
    rows = np.arange(S)
    while True:
        resid[resid <= zero_tol] = 0.0
        if np.all((resid > 0).sum(axis=1) <= 1):
            break
        masked = np.where(resid > 0, resid, np.inf)
        s_min, a_min = np.unravel_index(np.argmin(masked), resid.shape)
        c = resid[s_min, a_min]
        acts = resid.argmax(axis=1)
        acts[s_min] = a_min
        resid[rows, acts] -= c
        coefs.append(c)
        atoms.append(acts)
    coefs.append(max(0.0, 1.0 - sum(coefs)))
    atoms.append(resid.argmax(axis=1))
    return PolicyDecomposition(np.array(coefs), np.array(atoms, dtype=int), A)


def perturbation_identity_check(mdp: Mdp, pi1, pi2) -> float:
    """``||(mu1 - mu2) - mu1 (P1 - P2) Y2||_1``, zero up to roundoff."""
    P1, P2 = transition_matrix(mdp, pi1), transition_matrix(mdp, pi2)
    mu1, mu2 = stationary_distribution(P1), stationary_distribution(P2)
    Y2 = deviation_matrix(P2, mu2)
    return float(np.abs((mu1 - mu2) - mu1 @ (P1 - P2) @ Y2).sum())
