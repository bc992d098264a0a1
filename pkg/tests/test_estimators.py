import json
import math

import numpy as np
import pytest

import oracles
from fictdisc import estimators as est
from fictdisc.estimators import (
    ConfigError,
    EstimatorConfig,
    TrajectoryBatch,
    dae_estimator,
    dd_estimator,
    enumerated_moments,
    exact_estimator_expectation,
    exact_second_moment,
    sample_batch,
    sample_trajectory,
)
from fictdisc.mdp import Mdp
from fictdisc.mixing import mixing_constants
from fictdisc.softmax import SoftmaxParams, grad_discounted_objective, policy_from_params, regularizer


def loop_estimate(mdp, theta, lam, states, actions, weights, gamma, b):
    """Single-trajectory estimate written as plain loops."""
    pi = policy_from_params(theta)
    H = len(states)
    g = np.zeros((mdp.S, mdp.A))
    for h in range(H):
        ret = sum(gamma ** (k - h) * mdp.r[states[k], actions[k]] for k in range(h, H))
        score = -pi[states[h]].copy()
        score[actions[h]] += 1.0
        g[states[h]] += weights[h] * (ret - b[states[h]]) * score
    return g + regularizer(SoftmaxParams(theta, lam))[1]


def enumerated_mean(mdp, theta, lam, cfg, which):
    pi = policy_from_params(theta)
    w = cfg.step_weights(which)
    b = cfg.baseline_for(mdp.S)
    mean = np.zeros((mdp.S, mdp.A))
    for prob, states, actions in oracles.trajectories(mdp, pi, cfg.H):
        mean += prob * loop_estimate(mdp, theta, lam, states, actions, w, cfg.gamma, b)
    return mean


class TestSampling:
    def test_single_state_binomial_band(self, fix1):
        q = 0.3
        batch = sample_batch(fix1, [[q, 1 - q]], 1, 10**4, seed=5)
        assert np.all(batch.states == 0)
        n = batch.actions.size
        count = int((batch.actions == 0).sum())
        assert abs(count - n * q) <= 3 * math.sqrt(n * q * (1 - q))

    def test_horizon_one(self, fix3):
        traj = sample_trajectory(fix3, np.full((4, 3), 1 / 3), 1, 9)
        assert traj.states.shape == traj.actions.shape == traj.rewards.shape == (1,)
        assert traj.rewards[0] == fix3.r[traj.states[0], traj.actions[0]]
        starts = sample_batch(fix3, np.full((4, 3), 1 / 3), 1, 8000, seed=1).states[:, 0]
        freq = np.bincount(starts, minlength=4) / 8000
        assert np.all(np.abs(freq - 0.25) <= 4 * math.sqrt(0.25 * 0.75 / 8000))

    def test_same_seed_same_trajectory(self, fix3):
        pi = np.full((4, 3), 1 / 3)
        a, b = sample_trajectory(fix3, pi, 20, 17), sample_trajectory(fix3, pi, 20, 17)
        assert a.to_json() == b.to_json()
        assert json.loads(a.to_json())["states"] == a.states.tolist()
        c = sample_batch(fix3, pi, 20, 1, 17, stream=(1,))[0]
        assert c.to_json() != a.to_json()

    def test_trajectory_law(self, fix2):
        """Empirical trajectory frequencies against the enumerated law."""
        pi = np.array([[0.7, 0.3], [0.4, 0.6]])
        n = 50_000
        batch = sample_batch(fix2, pi, 3, n, seed=3)
        codes = {}
        for s, a in zip(map(tuple, batch.states), map(tuple, batch.actions)):
            codes[s + a] = codes.get(s + a, 0) + 1
        law = {tuple(st) + tuple(ac): p for p, st, ac in oracles.trajectories(fix2, pi, 3)}
        assert set(codes) <= set(law)
        for key, p in law.items():
            assert abs(codes.get(key, 0) - n * p) <= 4.5 * math.sqrt(n * p * (1 - p)) + 1

    def test_zero_probability_never_sampled(self):
        p = np.zeros((2, 2, 2))
        p[:, :, 1] = 1.0
        mdp = Mdp(p, np.zeros((2, 2)), np.array([0.0, 1.0]))
        batch = sample_batch(mdp, np.array([[0.0, 1.0], [1.0, 0.0]]), 5, 1000, seed=0)
        assert np.all(batch.states == 1) and np.all(batch.actions == 0)

    def test_inverse_cdf_rounding(self):
        cdf = np.array([[0.3, 0.6, 0.6, 0.9999999999999999]])
        assert est._inverse_cdf(cdf, np.array([0.99999999999999995]))[0] == 3
        assert est._inverse_cdf(cdf, np.array([0.6]))[0] == 3


class TestConfig:
    def test_dae_truncation_guard(self):
        with pytest.raises(ConfigError, match="floor"):
            EstimatorConfig(0.9, 1, beta=0.5).truncation

    def test_exact_floor(self):
        assert 0.29 * 100 < 29  # binary rounding would give 28
        assert EstimatorConfig(0.9, 100, beta=0.29).truncation == 29

    @pytest.mark.parametrize("kw", [dict(gamma=1.0, H=3), dict(gamma=0.5, H=0), dict(gamma=0.5, H=3, beta=1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            EstimatorConfig(**kw)

    def test_unknown_estimator(self):
        with pytest.raises(ConfigError):
            EstimatorConfig(0.5, 3).step_weights("td")

    def test_length_mismatch(self, fix1):
        batch = sample_batch(fix1, [[0.5, 0.5]], 3, 2, 0)
        with pytest.raises(ConfigError, match="length"):
            dd_estimator(fix1, np.zeros((1, 2)), EstimatorConfig(0.5, 4), batch)


class TestHandValues:
    @pytest.mark.parametrize("gamma", [0.0, 0.5, 0.9])
    def test_dae_two_steps(self, fix1, gamma):
        cfg = EstimatorConfig(gamma, 2, beta=0.6)
        assert cfg.truncation == 1
        batch = TrajectoryBatch(np.zeros((1, 2), int), np.zeros((1, 2), int), np.ones((1, 2)))
        g = dae_estimator(fix1, SoftmaxParams(np.zeros((1, 2))), cfg, batch).g
        np.testing.assert_allclose(g, np.array([[0.5, -0.5]]) * (1 + gamma), atol=1e-15)

    def test_dd_one_step(self, fix1):
        batch = TrajectoryBatch(np.zeros((1, 1), int), np.zeros((1, 1), int), np.ones((1, 1)))
        params = SoftmaxParams(np.zeros((1, 2)), 0.4)
        g = dd_estimator(fix1, params, EstimatorConfig(0.7, 1), batch).g
        np.testing.assert_allclose(g, np.array([[0.5, -0.5]]) + regularizer(params)[1], atol=1e-15)

    def test_dd_gamma_zero_keeps_first_step(self, fix3, rng):
        theta = rng.normal(size=(4, 3))
        pi = policy_from_params(theta)
        b = rng.uniform(size=4)
        batch = sample_batch(fix3, pi, 6, 50, seed=2)
        g = dd_estimator(fix3, SoftmaxParams(theta, 0.2), EstimatorConfig(0.0, 6, baseline=b), batch).g
        expect = np.zeros((4, 3))
        for s, a, r in zip(batch.states[:, 0], batch.actions[:, 0], batch.rewards[:, 0]):
            score = -pi[s].copy()
            score[a] += 1
            expect[s] += (r - b[s]) * score / 50
        np.testing.assert_allclose(g, expect + regularizer(SoftmaxParams(theta, 0.2))[1], atol=1e-14)

    def test_batch_matches_loop(self, fix3, rng):
        theta = rng.normal(size=(4, 3))
        b = rng.uniform(size=4)
        cfg = EstimatorConfig(0.8, 7, beta=0.5, baseline=b)
        batch = sample_batch(fix3, policy_from_params(theta), 7, 5, seed=4)
        for which, fn in (("dae", dae_estimator), ("dd", dd_estimator)):
            loops = [
                loop_estimate(fix3, theta, 0.3, batch.states[i], batch.actions[i], cfg.step_weights(which), 0.8, b)
                for i in range(5)
            ]
            np.testing.assert_allclose(fn(fix3, SoftmaxParams(theta, 0.3), cfg, batch).g, np.mean(loops, axis=0),
                                       atol=1e-13)  # fmt: skip


class TestExactExpectation:
    @pytest.mark.parametrize("which", ["dae", "dd"])
    @pytest.mark.parametrize("H", [1, 2, 3, 4])
    def test_matches_enumeration(self, fix3, rng, which, H):
        if which == "dae" and H == 1:
            return
        theta = rng.normal(size=(4, 3))
        cfg = EstimatorConfig(0.85, H, beta=0.5, baseline=rng.uniform(size=4))
        exact = exact_estimator_expectation(fix3, SoftmaxParams(theta, 0.2), cfg, which)
        np.testing.assert_allclose(exact, enumerated_mean(fix3, theta, 0.2, cfg, which), atol=1e-10)

    @pytest.mark.parametrize("which", ["dae", "dd"])
    def test_library_enumeration_agrees(self, fix2, rng, which):
        theta = rng.normal(size=(2, 2))
        cfg = EstimatorConfig(0.9, 6, beta=0.5)
        mean, _ = enumerated_moments(fix2, SoftmaxParams(theta), cfg, which)
        np.testing.assert_allclose(mean, exact_estimator_expectation(fix2, theta, cfg, which), atol=1e-12)

    @pytest.mark.parametrize("which", ["dae", "dd"])
    def test_baseline_shift(self, fix3, rng, which):
        theta = rng.normal(size=(4, 3))
        g0 = exact_estimator_expectation(fix3, theta, EstimatorConfig(0.9, 30, beta=0.5), which)
        g1 = exact_estimator_expectation(fix3, theta, EstimatorConfig(0.9, 30, beta=0.5, baseline=np.full(4, 0.7)), which)
        np.testing.assert_allclose(g0, g1, atol=1e-12)

    @pytest.mark.parametrize("H", [50, 200, 1000])
    def test_dd_approaches_discounted_gradient(self, fix3, rng, H):
        theta = rng.normal(size=(4, 3))
        gamma = 0.9
        exact = exact_estimator_expectation(fix3, theta, EstimatorConfig(gamma, H), "dd")
        target = grad_discounted_objective(fix3, theta, gamma).gradient
        # at H = 1000 the bound is ~1e-42, below roundoff, hence the audit slack
        assert np.linalg.norm(exact - target) <= est.dd_bias_bound(H, gamma) + 1e-9

    def test_sample_mean_converges(self, fix2):
        theta = np.array([[0.3, -0.2], [0.1, 0.4]])
        cfg = EstimatorConfig(0.9, 5, beta=0.6)
        batch = sample_batch(fix2, policy_from_params(theta), 5, 200_000, seed=8)
        for which in ("dae", "dd"):
            per = est.per_trajectory_gradients(fix2, SoftmaxParams(theta), cfg, batch, which)
            se = per.std(axis=0) / math.sqrt(len(batch))
            exact = exact_estimator_expectation(fix2, theta, cfg, which)
            assert np.all(np.abs(per.mean(axis=0) - exact) <= 4.5 * se + 1e-12)


class TestSecondMoment:
    def test_single_step_closed_form(self, fix1):
        theta = np.array([[0.4, -0.3]])
        params = SoftmaxParams(theta, 0.5)
        pi = policy_from_params(theta)[0]
        g_om = regularizer(params)[1][0]
        expect = 0.0
        for a in range(2):
            score = -pi.copy()
            score[a] += 1
            expect += pi[a] * np.sum((score * fix1.r[0, a] + g_om) ** 2)
        got = exact_second_moment(fix1, params, EstimatorConfig(0.9, 1), "dd")
        assert got == pytest.approx(expect, abs=1e-14)

    def test_deterministic_outcome(self):
        p = np.zeros((2, 2, 2))
        p[0, :, 1] = p[1, :, 0] = 1.0
        mdp = Mdp(p, np.array([[1.0, 0.0], [0.5, 0.2]]), np.array([1.0, 0.0]))
        theta = np.array([[40.0, 0.0], [0.0, 40.0]])
        cfg = EstimatorConfig(0.9, 4)
        single = sample_batch(mdp, policy_from_params(theta), 4, 1, 0)
        g = dd_estimator(mdp, theta, cfg, single).g
        assert exact_second_moment(mdp, theta, cfg, "dd") == pytest.approx(float(np.sum(g**2)), abs=1e-12)

    def test_fix2_monte_carlo(self, fix2):
        theta = np.array([[0.5, -0.5], [0.2, 0.0]])
        cfg = EstimatorConfig(0.9, 3, beta=0.5)
        batch = sample_batch(fix2, policy_from_params(theta), 3, 10**6, seed=21)
        for which in ("dae", "dd"):
            sq = np.einsum("nsa,nsa->n", *(est.per_trajectory_gradients(fix2, SoftmaxParams(theta), cfg, batch, which),) * 2)
            exact = exact_second_moment(fix2, theta, cfg, which)
            assert abs(sq.mean() - exact) <= 3 * sq.std() / math.sqrt(len(sq))

    def test_batch_mean_formula(self, fix2):
        theta = np.array([[0.5, -0.5], [0.2, 0.0]])
        mean, second = enumerated_moments(fix2, theta, EstimatorConfig(0.9, 3), "dd")
        got = exact_second_moment(fix2, theta, EstimatorConfig(0.9, 3, N=4), "dd")
        m2 = float(np.sum(mean**2))
        assert got == pytest.approx(m2 + (second - m2) / 4)

    def test_cap(self, fix3):
        with pytest.raises(ValueError, match="cap"):
            exact_second_moment(fix3, np.zeros((4, 3)), EstimatorConfig(0.9, 8), "dd")


class TestConstants:
    def test_dd_bias_bound(self):
        assert est.dd_bias_bound(10, 0.5) == pytest.approx(2 * 0.5**10 / 0.5 * (10 + 2))

    def test_dd_bias_negligible_at_64(self):
        # the gamma^H term alone is far below the full bound at sigma = 1/2
        gamma = 1 - 64**-0.5
        assert gamma**64 < 2e-4
        assert est.dd_bias_bound(64, gamma) == pytest.approx(2 * gamma**64 * 8 * (64 + 8))

    def test_dae_bias_bound_terms(self, fix2):
        c = mixing_constants(fix2)
        H, gamma, beta = 40, 0.9, 0.5
        k = 1.25 / 0.2
        expect = 16 * k / 20 * (1 + k) + 8 * 1.25 * 0.1 / 0.04 + 4 * 0.9**20 * (1 + k)
        assert est.dae_bias_bound(c, H, gamma, beta) == pytest.approx(expect)

    def test_norm_constants(self, fix2):
        c = mixing_constants(fix2)
        assert est.g_gamma_const(0.5) == 4.0
        assert est.g_gamma_const(0.5, B=1.0) == 6.0
        assert est.g_dd_const(0.5) == 8.0
        assert est.g_bar_const(c) == pytest.approx(4 * 7.25)
        assert est.m_bar_const(0.1, 4.0, 0.5, 2) == pytest.approx(0.02 + 12.5)

    def test_almost_sure_norms(self, fix2, rng):
        lam = 0.3
        for _ in range(5):
            theta = rng.normal(size=(2, 2))
            cfg = EstimatorConfig(0.8, 12, beta=0.5)
            batch = sample_batch(fix2, policy_from_params(theta), 12, 2000, seed=1)
            for which, G in (("dae", est.g_gamma_const(0.8)), ("dd", est.g_dd_const(0.8))):
                per = est.per_trajectory_gradients(fix2, SoftmaxParams(theta, lam), cfg, batch, which)
                assert np.linalg.norm(per.reshape(len(per), -1), axis=1).max() <= G + 2 * lam
