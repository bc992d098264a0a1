"""Truncated DAE and doubly discounted REINFORCE training loops with exact diagnostics."""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import estimators as est
from .core import (
    average_reward,
    discounted_value,
    finite_horizon_value,
    stationary_distribution,
    transition_matrix,
)
from .dp import discounted_optimal, finite_horizon_optimal, relative_value_iteration
from .mdp import Mdp
from .mixing import MixingConstants, mixing_constants
from .softmax import (
    SoftmaxParams,
    domination_bound_average,
    domination_bound_discounted,
    grad_average_objective,
    grad_discounted_objective,
    policy_from_params,
    smoothness_constants,
)

ALGORITHMS = ("dae", "dd")
TRACE_COLUMNS = (
    "k",
    "grad_norm",
    "eta_gap",
    "vh_gap",
    "vgamma_gap",
    "best_eta_gap",
    "best_vh_gap",
    "best_vgamma_gap",
    "step_size",
)


class TrainingDiverged(FloatingPointError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str
    H: int
    sigma: float
    epsilon: float
    delta: float = 0.1
    beta: float = 0.5
    N: int = 1
    K_max: int = 1000
    baseline: tuple = None
    seed: int = 0
    log_every: int = 10
    theta0: tuple = None
    certify_stop: bool = True
    threshold: float = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise est.ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not 0.0 < self.sigma < 1.0:
            raise est.ConfigError(f"sigma must lie in (0, 1), got {self.sigma}")
        if self.epsilon <= 0 or not 0.0 < self.delta < 1.0:
            raise est.ConfigError("need epsilon > 0 and delta in (0, 1)")
        if self.H < 1 or self.N < 1 or self.K_max < 0 or self.log_every < 1:
            raise est.ConfigError("H, N, log_every must be positive and K_max non-negative")
        if self.algorithm == "dae":
            self.estimator_config().truncation  # raises on floor(beta H) == 0

    @property
    def gamma(self) -> float:
        return 1.0 - self.H ** (-self.sigma)

    def estimator_config(self) -> est.EstimatorConfig:
        b = None if self.baseline is None else np.asarray(self.baseline, dtype=float)
        beta = self.beta if self.algorithm == "dae" else None
        return est.EstimatorConfig(self.gamma, self.H, self.N, beta, b)


def lambda_from_quadratic(epsilon: float, G_const: float, Delta_const: float, S: int, A: int) -> float:
    """Larger root of ``2 (G + 2 lam) Delta = (lam - eps)^2 / (4 S^2 A^2)``.

    Written as ``eps + 8k Delta + sqrt(16k Delta eps + 64 k^2 Delta^2 + 8k Delta G)``
    with ``k = S^2 A^2``, which is exactly ``eps`` when ``Delta = 0``.
    """
    if epsilon <= 0 or G_const <= 0 or Delta_const < 0:
        raise ValueError("need epsilon > 0, G > 0 and Delta >= 0")
    k = (S * A) ** 2
    disc = 16 * k * Delta_const * epsilon + 64 * k**2 * Delta_const**2 + 8 * k * Delta_const * G_const
    assert disc >= 0.0
    return epsilon + 8 * k * Delta_const + math.sqrt(disc)


def step_schedule(k: int, beta_smooth: float) -> float:
    """``alpha^k = 1 / (2 beta sqrt(k+3) log2(k+3))``."""
    return 1.0 / (2.0 * beta_smooth * math.sqrt(k + 3) * math.log2(k + 3))


@dataclass(frozen=True)
class TrainingSetup:
    """Constants fixed before the first iteration."""

    consts: MixingConstants
    gamma: float
    lam: float
    Delta: float
    G: float
    beta_smooth: float
    threshold: float


def training_setup(mdp: Mdp, config: TrainConfig, consts: MixingConstants = None) -> TrainingSetup:
    consts = consts or mixing_constants(mdp)
    gamma = config.gamma
    ecfg = config.estimator_config()
    if config.algorithm == "dae":
        Delta = est.dae_bias_bound(consts, config.H, gamma, config.beta)
        G = est.g_bar_const(consts)
    else:
        Delta = est.dd_bias_bound(config.H, gamma)
        G = est.g_dd_const(gamma, ecfg.B)
    lam = lambda_from_quadratic(config.epsilon, G, Delta, mdp.S, mdp.A)
    beta_disc, beta_avg = smoothness_constants(consts, gamma, lam, mdp.S)
    beta_smooth = beta_avg if config.algorithm == "dae" else beta_disc
    threshold = config.threshold if config.threshold is not None else lam / (2 * mdp.S * mdp.A)
    return TrainingSetup(consts, gamma, lam, Delta, G, beta_smooth, threshold)


@dataclass(frozen=True)
class References:
    """Optimal values the diagnostics are measured against."""

    eta_hi: float
    eta_lo: float
    mu_star: np.ndarray
    vh_star: float
    vgamma_star: float
    d_star: np.ndarray


def references(mdp: Mdp, H: int, gamma: float) -> References:
    rvi = relative_value_iteration(mdp)
    mu_star = stationary_distribution(transition_matrix(mdp, rvi.policy))
    vh_star, _ = finite_horizon_optimal(mdp, H)
    dopt = discounted_optimal(mdp, gamma)
    return References(rvi.hi, rvi.lo, mu_star, vh_star, dopt.value, dopt.visitation)


@dataclass
class TrainTrace:
    rows: list = field(default_factory=list)

    def append(self, row: dict):
        if self.rows:
            prev = self.rows[-1]
            for key in ("eta_gap", "vh_gap", "vgamma_gap"):
                row["best_" + key] = min(prev["best_" + key], row[key])
        else:
            for key in ("eta_gap", "vh_gap", "vgamma_gap"):
                row["best_" + key] = row[key]
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in self.rows:
            writer.writerow([r["k"]] + [repr(float(r[c])) for c in TRACE_COLUMNS[1:]])
        return buf.getvalue()


@dataclass(frozen=True)
class Certificate:
    """Record emitted when the regularized gradient falls below the threshold."""

    k: int
    setting: str
    grad_norm: float
    threshold: float
    bound: float  # gradient-domination sub-optimality bound
    measured_gap: float  # exact gap against the conservative optimum


@dataclass
class TrainResult:
    trace: TrainTrace
    theta: np.ndarray
    setup: TrainingSetup
    refs: References
    certificate: Certificate = None
    iterations: int = 0


def _objective_gradient(mdp, params, config, gamma):
    if config.algorithm == "dae":
        return grad_average_objective(mdp, params)
    return grad_discounted_objective(mdp, params, gamma)


def _diagnostics(mdp, pi, H, gamma, refs):
    return {
        "eta_gap": refs.eta_hi - float(average_reward(mdp, pi)),
        "vh_gap": refs.vh_star - float(finite_horizon_value(mdp, pi, H)),
        "vgamma_gap": refs.vgamma_star - float(discounted_value(mdp, pi, gamma)),
    }


def _train(mdp: Mdp, config: TrainConfig, exact: bool, consts=None, refs=None) -> TrainResult:
    setup = training_setup(mdp, config, consts)
    gamma = setup.gamma
    refs = refs or references(mdp, config.H, gamma)
    ecfg = config.estimator_config()
    theta = np.zeros((mdp.S, mdp.A)) if config.theta0 is None else np.array(config.theta0, dtype=float)
    trace = TrainTrace()
    certificate = None

    def log(k, grad_norm, pi):
        row = {"k": k, "grad_norm": grad_norm, "step_size": step_schedule(k, setup.beta_smooth)}
        row.update(_diagnostics(mdp, pi, config.H, gamma, refs))
        trace.append(row)

    k = 0
    while True:
        params = SoftmaxParams(theta, setup.lam)
        pi = policy_from_params(params)
        grad_norm = _objective_gradient(mdp, params, config, gamma).norm
        if config.certify_stop and grad_norm <= setup.threshold:
            log(k, grad_norm, pi)
            certificate = _certify(mdp, config, setup, refs, k, grad_norm, pi)
            break
        if k == config.K_max:
            log(k, grad_norm, pi)
            break
        if k % config.log_every == 0:
            log(k, grad_norm, pi)
        if exact:
            g = est.exact_estimator_expectation(mdp, params, ecfg, config.algorithm)
        else:
            batch = est.sample_batch(mdp, pi, config.H, config.N, config.seed, stream=(k,))
            g = est.estimate(mdp, params, ecfg, batch, config.algorithm).g
        theta = theta + step_schedule(k, setup.beta_smooth) * g
        k += 1
        if not np.all(np.isfinite(theta)):
            raise TrainingDiverged(f"non-finite parameters at iteration {k}", trace)
    return TrainResult(trace, theta, setup, refs, certificate, k)


def _certify(mdp, config, setup, refs, k, grad_norm, pi):
    if config.algorithm == "dae":
        bound = domination_bound_average(setup.lam, refs.mu_star, setup.consts)
        gap = refs.eta_hi - float(average_reward(mdp, pi))
        return Certificate(k, "average", grad_norm, setup.threshold, bound, gap)
    bound = domination_bound_discounted(setup.lam, refs.d_star, mdp.rho, setup.consts)
    gap = refs.vgamma_star - float(discounted_value(mdp, pi, setup.gamma))
    return Certificate(k, "discounted", grad_norm, setup.threshold, bound, gap)


def run_training(mdp: Mdp, config: TrainConfig, consts=None, refs=None) -> TrainResult:
    """Stochastic-gradient training; the batch at iteration ``k`` is seeded by ``(seed, k)``."""
    return _train(mdp, config, exact=False, consts=consts, refs=refs)


def run_exact_gradient_training(mdp: Mdp, config: TrainConfig, consts=None, refs=None) -> TrainResult:
    """Training with the analytic estimator expectation in place of samples."""
    return _train(mdp, config, exact=True, consts=consts, refs=refs)
