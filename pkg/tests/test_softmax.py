import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fictdisc.core import average_reward, discounted_value
from fictdisc.dp import discounted_optimal, relative_value_iteration
from fictdisc.mdp import generate_mdp
from fictdisc.mixing import mixing_constants
from fictdisc.softmax import (
    SoftmaxParams,
    gradient_domination_bound,
    grad_average_objective,
    grad_discounted_objective,
    log_policy,
    policy_from_params,
    regularizer,
    smoothness_constants,
)


def omega_by_hand(theta, lam):
    z = np.exp(theta - theta.max(axis=1, keepdims=True))
    p = z / z.sum(axis=1, keepdims=True)
    S, A = theta.shape
    return lam / (S * A) * np.log(p).sum()


class TestPolicy:
    def test_zero_is_uniform(self):
        np.testing.assert_allclose(policy_from_params(np.zeros((3, 4))), 0.25)

    def test_row_shift_invariance(self, rng):
        theta = rng.normal(size=(4, 3))
        shifted = theta + rng.normal(size=(4, 1))
        np.testing.assert_allclose(policy_from_params(theta), policy_from_params(shifted), atol=1e-15)

    def test_two_actions_closed_form(self):
        assert policy_from_params([[10.0, 0.0]])[0, 0] == pytest.approx(1 / (1 + math.exp(-10)), rel=1e-15)

    def test_log_policy_consistent(self, rng):
        theta = 5 * rng.normal(size=(4, 3))
        np.testing.assert_allclose(np.exp(log_policy(theta)), policy_from_params(theta), atol=1e-15)

    def test_clip_warns(self):
        with pytest.warns(RuntimeWarning, match="clipped"):
            pi = policy_from_params([[1000.0, 0.0]])
        assert pi[0, 0] == 1.0

    def test_rejects_bad_params(self):
        with pytest.raises(ValueError):
            SoftmaxParams(np.zeros(3))
        with pytest.raises(ValueError):
            SoftmaxParams(np.zeros((2, 2)), lam=-1.0)
        with pytest.raises(ValueError):
            SoftmaxParams(np.array([[np.inf, 0.0]]))


class TestRegularizer:
    def test_uniform(self):
        omega, grad = regularizer(SoftmaxParams(np.zeros((3, 4)), 0.7))
        assert omega == pytest.approx(-0.7 * math.log(4))
        np.testing.assert_allclose(grad, 0.0, atol=1e-16)

    @pytest.mark.parametrize("lam", [0.0, 1.0, 10.0])
    def test_fix1_zero(self, lam):
        np.testing.assert_allclose(regularizer(SoftmaxParams(np.zeros((1, 2)), lam))[1], 0.0, atol=1e-16)

    def test_finite_differences(self, rng):
        theta = rng.normal(size=(4, 3))
        lam = 0.8
        fd = oracles.central_difference(lambda t: omega_by_hand(t, lam), theta)
        assert oracles.relative_error(regularizer(SoftmaxParams(theta, lam))[1], fd) <= 1e-6


class TestAverageGradient:
    def test_fix1_uniform(self, fix1):
        g = grad_average_objective(fix1, SoftmaxParams(np.zeros((1, 2))))
        np.testing.assert_allclose(g.gradient, [[0.25, -0.25]], atol=1e-15)
        assert g.value == pytest.approx(0.5)

    def test_l1_bound(self, fix3, rng):
        c = mixing_constants(fix3)
        for lam in (0.0, 1.0):
            for _ in range(20):
                g = grad_average_objective(fix3, SoftmaxParams(3 * rng.normal(size=(4, 3)), lam)).gradient
                assert np.abs(g).sum() <= 4 * (1 + c.C / (1 - c.alpha)) + 2 * lam

    @pytest.mark.parametrize("lam", [0.0, 0.5])
    def test_finite_differences(self, fix3, rng, lam):
        theta = rng.normal(size=(4, 3))

        def objective(t):
            return float(average_reward(fix3, policy_from_params(t))) + omega_by_hand(t, lam)

        fd = oracles.central_difference(objective, theta)
        got = grad_average_objective(fix3, SoftmaxParams(theta, lam))
        assert oracles.relative_error(got.gradient, fd) <= 1e-6
        assert got.value == pytest.approx(objective(theta), abs=1e-13)


class TestDiscountedGradient:
    def test_gamma_zero_one_step(self, fix3, rng):
        theta = rng.normal(size=(4, 3))
        pi = policy_from_params(theta)
        rpi = (pi * fix3.r).sum(axis=1)
        expect = fix3.rho[:, None] * pi * (fix3.r - rpi[:, None]) + regularizer(SoftmaxParams(theta, 0.3))[1]
        got = grad_discounted_objective(fix3, SoftmaxParams(theta, 0.3), 0.0).gradient
        np.testing.assert_allclose(got, expect, atol=1e-15)

    @pytest.mark.parametrize("gamma", [0.0, 0.5, 0.9])
    def test_fix1_uniform(self, fix1, gamma):
        # the objective is pi(a0) / (1 - gamma), so its gradient carries 1 / (1 - gamma)
        g = grad_discounted_objective(fix1, SoftmaxParams(np.zeros((1, 2))), gamma).gradient
        np.testing.assert_allclose(g, np.array([[0.25, -0.25]]) / (1 - gamma), atol=1e-14)

    @pytest.mark.parametrize("lam", [0.0, 0.5])
    def test_finite_differences(self, fix3, rng, lam):
        theta = rng.normal(size=(4, 3))
        gamma = 0.9

        def objective(t):
            return float(discounted_value(fix3, policy_from_params(t), gamma)) / (1 - gamma) + omega_by_hand(t, lam)

        fd = oracles.central_difference(objective, theta)
        got = grad_discounted_objective(fix3, SoftmaxParams(theta, lam), gamma)
        assert oracles.relative_error(got.gradient, fd) <= 1e-6
        assert got.value == pytest.approx(objective(theta), abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 6), st.integers(2, 3), st.integers(0, 10**6), st.sampled_from([0.3, 0.9, 0.99]))
    def test_finite_differences_property(self, S, A, seed, gamma):
        mdp = generate_mdp(S, A, seed, floor=0.5 / S)
        theta = np.random.default_rng(seed).normal(size=(S, A))
        fd = oracles.central_difference(
            lambda t: float(discounted_value(mdp, policy_from_params(t), gamma)) / (1 - gamma), theta
        )
        got = grad_discounted_objective(mdp, theta, gamma).gradient
        assert np.linalg.norm(got - fd) <= 1e-6 * max(np.linalg.norm(fd), 1e-3)


class TestSmoothness:
    def test_discounted(self, fix2):
        assert smoothness_constants(mixing_constants(fix2), 0.5, 0.0, 2)[0] == pytest.approx(64.0)

    def test_average_fix2(self, fix2):
        assert smoothness_constants(mixing_constants(fix2), 0.5, 0.0, 2)[1] == pytest.approx(
            22 * math.sqrt(2) * 13.5**3, rel=1e-12
        )

    def test_linear_in_lambda(self, fix3):
        c = mixing_constants(fix3)
        b1 = np.array(smoothness_constants(c, 0.9, 0.5, 4))
        b2 = np.array(smoothness_constants(c, 0.9, 1.0, 4))
        np.testing.assert_allclose(b2 - b1, 2 * 0.5 / 4, rtol=1e-9)

    def test_discounted_gradient_lipschitz(self, fix3, rng):
        c = mixing_constants(fix3)
        beta_disc, beta_avg = smoothness_constants(c, 0.9, 0.2, 4)
        for _ in range(20):
            t1, t2 = rng.normal(size=(2, 4, 3))
            d = np.linalg.norm(t1 - t2)
            g1 = grad_discounted_objective(fix3, SoftmaxParams(t1, 0.2), 0.9).gradient
            g2 = grad_discounted_objective(fix3, SoftmaxParams(t2, 0.2), 0.9).gradient
            assert np.linalg.norm(g1 - g2) <= beta_disc * d
            a1 = grad_average_objective(fix3, SoftmaxParams(t1, 0.2)).gradient
            a2 = grad_average_objective(fix3, SoftmaxParams(t2, 0.2)).gradient
            assert np.linalg.norm(a1 - a2) <= beta_avg * d


class TestGradientDomination:
    def test_premise_false_still_bounded(self, fix3, rng):
        res = gradient_domination_bound(fix3, SoftmaxParams(rng.normal(size=(4, 3)), 1e-3), "average")
        assert not res.premise_holds
        assert np.isfinite(res.bound) and res.bound > 0

    def test_unknown_setting(self, fix2):
        with pytest.raises(ValueError):
            gradient_domination_bound(fix2, np.zeros((2, 2)), "episodic")
        with pytest.raises(ValueError):
            gradient_domination_bound(fix2, np.zeros((2, 2)), "discounted")

    @pytest.mark.parametrize("t", [5.0, 10.0, 20.0])
    def test_fix1_large_logit(self, fix1, t):
        params = SoftmaxParams([[t, 0.0]], 0.0)
        res = gradient_domination_bound(fix1, params, "average", threshold=1.0)
        gap = 1.0 - float(average_reward(fix1, policy_from_params(params)))
        # ||grad|| = sqrt(2) pi0 (1 - pi0) and the gap is 1 - pi0 < e^-t, up to roundoff
        assert res.grad_norm <= 1.5 * math.exp(-t) and gap <= 1.01 * math.exp(-t)
        # with lam = 0 the bound is zero and the gap closes like e^-t
        assert res.premise_holds and res.bound == 0.0

    @pytest.mark.parametrize("setting", ["average", "discounted"])
    def test_fix3_stationary_point(self, fix3, setting):
        """Ascend the regularized objective until the premise holds, then check the bound."""
        lam, gamma = 0.5, 0.9
        grad = (
            (lambda t: grad_average_objective(fix3, SoftmaxParams(t, lam)))
            if setting == "average"
            else (lambda t: grad_discounted_objective(fix3, SoftmaxParams(t, lam), gamma))
        )
        theta = np.zeros((4, 3))
        step = 1.0 if setting == "average" else 0.05
        for _ in range(20000):
            g = grad(theta)
            if g.norm <= lam / (2 * 12):
                break
            theta = theta + step * g.gradient
        res = gradient_domination_bound(fix3, SoftmaxParams(theta, lam), setting, gamma)
        assert res.premise_holds
        pi = policy_from_params(theta)
        if setting == "average":
            gap = relative_value_iteration(fix3).hi - float(average_reward(fix3, pi))
        else:
            gap = discounted_optimal(fix3, gamma).value - float(discounted_value(fix3, pi, gamma))
        assert gap <= res.bound + 1e-9
