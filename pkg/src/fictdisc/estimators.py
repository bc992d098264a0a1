"""Trajectory sampling, the DAE and doubly discounted REINFORCE estimators,
and exact oracles for their first and second moments."""

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import state_distributions, truncated_q_table
from .mdp import Mdp
from .mixing import MixingConstants
from .softmax import policy_from_params, regularizer

ENUMERATION_CAP = 10**5
ESTIMATORS = ("dae", "dd")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k).tolist() for k in ("states", "actions", "rewards")})


@dataclass(frozen=True)
class TrajectoryBatch:
    """``N`` trajectories of length ``H`` stored as ``(N, H)`` arrays."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __len__(self):
        return self.states.shape[0]

    def __getitem__(self, i) -> Trajectory:
        return Trajectory(self.states[i], self.actions[i], self.rewards[i])

    @classmethod
    def from_trajectories(cls, trajs):
        return cls(*(np.stack([getattr(t, k) for t in trajs]) for k in ("states", "actions", "rewards")))


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, *stream)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


def _inverse_cdf(cdf, u):
    """Index ``j`` with ``cdf[j-1] <= u < cdf[j]`` row-wise.

    Zero-probability entries are never returned; a ``u`` past the last
    (rounded) cdf value maps to the last index with positive mass.
    """
    idx = (cdf <= u[:, None]).sum(axis=1)
    K = cdf.shape[1]
    over = idx >= K
    if np.any(over):
        probs = np.diff(cdf, prepend=0.0, axis=1)
        last_pos = K - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
        idx = np.where(over, last_pos, idx)
    return idx


def sample_batch(mdp: Mdp, pi, H: int, N: int, seed: int, stream=()) -> TrajectoryBatch:
    """Draw ``N`` trajectories of length ``H`` by inverse-CDF sampling.

    All randomness comes from one ``(N, H, 2)`` uniform array, so results
    depend only on ``(seed, stream)``.
    """
    pi = np.asarray(pi, dtype=float)
    U = rng_for(seed, *stream).random((N, H, 2))
    pi_cdf = np.cumsum(pi, axis=1)
    p_cdf = np.cumsum(mdp.p, axis=2)
    rho_cdf = np.cumsum(mdp.rho)
    states = np.empty((N, H), dtype=np.int64)
    actions = np.empty((N, H), dtype=np.int64)
    s = _inverse_cdf(np.broadcast_to(rho_cdf, (N, mdp.S)), U[:, 0, 0])
    for h in range(H):
        a = _inverse_cdf(pi_cdf[s], U[:, h, 1])
        states[:, h], actions[:, h] = s, a
        if h + 1 < H:
            s = _inverse_cdf(p_cdf[s, a], U[:, h + 1, 0])
    return TrajectoryBatch(states, actions, mdp.r[states, actions])


def sample_trajectory(mdp: Mdp, pi, H: int, rng_seed: int) -> Trajectory:
    return sample_batch(mdp, pi, H, 1, rng_seed)[0]


@dataclass(frozen=True)
class EstimatorConfig:
    gamma: float
    H: int
    N: int = 1
    beta: float = None
    baseline: np.ndarray = None

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.H < 1 or self.N < 1:
            raise ConfigError("H and N must be positive")
        if self.beta is not None and not 0.0 < self.beta < 1.0:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")

    def baseline_for(self, S: int) -> np.ndarray:
        return np.zeros(S) if self.baseline is None else np.asarray(self.baseline, dtype=float)

    @property
    def B(self) -> float:
        return 0.0 if self.baseline is None else float(np.abs(self.baseline).max())

    @property
    def truncation(self) -> int:
        """``floor(beta * H)`` evaluated exactly on the decimal value of ``beta``."""
        if self.beta is None:
            raise ConfigError("the DAE estimator needs beta")
        T = math.floor(Fraction(str(self.beta)) * self.H)
        if T == 0:
            raise ConfigError(f"floor(beta * H) = 0 for beta={self.beta}, H={self.H}")
        return T

    def step_weights(self, which: str) -> np.ndarray:
        """Per-step score weights: ``1/T`` on the first ``T`` steps (DAE) or ``gamma^h`` (DD)."""
        if which == "dae":
            T = self.truncation
            w = np.zeros(self.H)
            w[:T] = 1.0 / T
            return w
        if which == "dd":
            return self.gamma ** np.arange(self.H)
        raise ConfigError(f"unknown estimator {which!r}")


@dataclass(frozen=True)
class GradEstimate:
    g: np.ndarray
    N: int
    seed: int = None

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.g))


def discounted_returns(rewards, gamma):
    """``G[:, h] = sum_{h' >= h} gamma^(h'-h) r[:, h']``."""
    G = np.empty_like(rewards, dtype=float)
    acc = np.zeros(rewards.shape[0])
    for h in range(rewards.shape[1] - 1, -1, -1):
        acc = rewards[:, h] + gamma * acc
        G[:, h] = acc
    return G


def per_trajectory_gradients(mdp: Mdp, params, config: EstimatorConfig, batch: TrajectoryBatch, which: str):
    """``(N, S, A)`` single-trajectory estimates, each including ``grad Omega``."""
    pi = policy_from_params(params)
    _, g_omega = regularizer(params)
    b = config.baseline_for(mdp.S)
    N, H = batch.states.shape
    if H != config.H:
        raise ConfigError(f"trajectories have length {H}, config says H={config.H}")
    coef = config.step_weights(which)[None, :] * (discounted_returns(batch.rewards, config.gamma) - b[batch.states])
    rows = np.broadcast_to(np.arange(N)[:, None], (N, H))
    hits = np.zeros((N, mdp.S, mdp.A))
    np.add.at(hits, (rows, batch.states, batch.actions), coef)
    # score = onehot(a) - pi(s); the second part only depends on the state
    mass = hits.sum(axis=2, keepdims=True)
    return hits - mass * pi[None] + g_omega[None]


def _estimate(mdp, params, config, trajectories, which, seed=None):
    if not isinstance(trajectories, TrajectoryBatch):
        trajectories = TrajectoryBatch.from_trajectories(trajectories)
    g = per_trajectory_gradients(mdp, params, config, trajectories, which)
    return GradEstimate(np.mean(g, axis=0), len(trajectories), seed)


def dae_estimator(mdp: Mdp, params, config: EstimatorConfig, trajectories, seed=None) -> GradEstimate:
    """Truncated DAE REINFORCE estimate averaged over the first ``floor(beta H)`` steps."""
    return _estimate(mdp, params, config, trajectories, "dae", seed)


def dd_estimator(mdp: Mdp, params, config: EstimatorConfig, trajectories, seed=None) -> GradEstimate:
    """Doubly discounted estimate: the score at step ``h`` is weighted by ``gamma^h``."""
    return _estimate(mdp, params, config, trajectories, "dd", seed)


def estimate(mdp, params, config, trajectories, which, seed=None) -> GradEstimate:
    return _estimate(mdp, params, config, trajectories, which, seed)


def exact_estimator_expectation(mdp: Mdp, params, config: EstimatorConfig, which: str) -> np.ndarray:
    """Analytic ``E[g]`` from step-``h`` occupancies and truncated action values.

    At step ``h`` the expected score term is
    ``rho_h(s) pi(a|s) (c(s, a) - sum_a' pi(a'|s) c(s, a'))`` where
    ``c = q_{H-h} - b`` and ``q_k`` is the ``k``-step discounted action value.
    """
    pi = policy_from_params(params)
    weights = config.step_weights(which)
    H = config.H
    last = int(np.nonzero(weights)[0].max()) + 1
    rho_h = state_distributions(mdp, pi, last)
    q = truncated_q_table(mdp, pi, config.gamma, H)
    b = config.baseline_for(mdp.S)
    c = q[H - 1 : H - 1 - last : -1] if last < H else q[::-1]
    c = c - b[None, :, None]
    adv = c - (pi[None] * c).sum(axis=2, keepdims=True)
    g = np.einsum("h,hs,sa,hsa->sa", weights[:last], rho_h, pi, adv)
    return g + regularizer(params)[1]


def enumerate_trajectories(mdp: Mdp, pi, H: int, cap: int = ENUMERATION_CAP):
    """All positive-probability trajectories with their probabilities."""
    S, A = mdp.S, mdp.A
    total = (S * A) ** H
    if total > cap:
        raise ValueError(f"(S*A)^H = {total} trajectories exceeds the enumeration cap {cap}")
    codes = np.stack(np.unravel_index(np.arange(total), (S * A,) * H), axis=1)
    states, actions = codes // A, codes % A
    prob = mdp.rho[states[:, 0]] * pi[states[:, 0], actions[:, 0]]
    for h in range(1, H):
        prob = prob * mdp.p[states[:, h - 1], actions[:, h - 1], states[:, h]] * pi[states[:, h], actions[:, h]]
    keep = prob > 0
    batch = TrajectoryBatch(states[keep], actions[keep], mdp.r[states[keep], actions[keep]])
    return batch, prob[keep]


def enumerated_moments(mdp: Mdp, params, config: EstimatorConfig, which: str, cap: int = ENUMERATION_CAP):
    """``(E g, E ||g||^2)`` for a single-trajectory estimate by full enumeration."""
    pi = policy_from_params(params)
    batch, prob = enumerate_trajectories(mdp, pi, config.H, cap)
    g = per_trajectory_gradients(mdp, params, config, batch, which)
    mean = np.einsum("n,nsa->sa", prob, g)
    second = float(prob @ np.einsum("nsa,nsa->n", g, g))
    return mean, second


def exact_second_moment(mdp: Mdp, params, config: EstimatorConfig, which: str, cap: int = ENUMERATION_CAP) -> float:
    """Exact ``E||g||^2`` for the batch-mean estimator with ``config.N`` trajectories.

    For ``N`` i.i.d. trajectories ``E||mean||^2 = ||E g||^2 + (E||g||^2 - ||E g||^2) / N``.
    """
    mean, second = enumerated_moments(mdp, params, config, which, cap)
    sq = float(mean.ravel() @ mean.ravel())
    return sq + (second - sq) / config.N


# Constants of the estimator lemmas (rewards in [0, 1]).


def dae_bias_bound(consts: MixingConstants, H: int, gamma: float, beta: float) -> float:
    T = EstimatorConfig(gamma, H, beta=beta).truncation
    k = consts.mixing_sum
    one_a = 1.0 - consts.alpha
    return (
        16.0 * k / T * (1.0 + k)
        + 8.0 * consts.C * (1.0 - gamma) / one_a**2
        + 4.0 * gamma ** ((1.0 - beta) * H) * (1.0 + k)
    )


def dd_bias_bound(H: int, gamma: float) -> float:
    return 2.0 * gamma**H / (1.0 - gamma) * (H + 1.0 / (1.0 - gamma))


def g_gamma_const(gamma: float, B: float = 0.0) -> float:
    """Almost-sure norm scale of the DAE estimate without the regularizer."""
    return 2.0 * (1.0 + (1.0 - gamma) * B) / (1.0 - gamma)


def g_dd_const(gamma: float, B: float = 0.0) -> float:
    return 2.0 * (1.0 + B * (1.0 - gamma)) / (1.0 - gamma) ** 2


def g_bar_const(consts: MixingConstants) -> float:
    """Norm bound on the exact average-reward gradient without the regularizer."""
    return 4.0 * (1.0 + consts.mixing_sum)


def m_bar_const(delta_bar: float, g_gamma: float, lam: float, N: int) -> float:
    return 2.0 * delta_bar**2 + (g_gamma + 2.0 * lam) ** 2 / N


def m_dd_const(delta: float, g: float, lam: float, N: int) -> float:
    return 2.0 * delta**2 + (g + 2.0 * lam) ** 2 / N
