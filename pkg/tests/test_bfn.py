import numpy as np
import pytest
from numpy.testing import assert_allclose

from anobfn.bfn import (
    ThetaState,
    bayes_update,
    bayes_update_conditioned,
    compute_alpha_a,
    discrete_loss,
    sample_sender,
)
from anobfn.noise import NoiseConfig, sample_field

from oracles import kl_quadrature

# logistic gate values frozen from direct evaluation at k=30, t_c=0.5
GATE_AT_HORIZON = 0.999999694097773


def random_state(rng, shape=(6, 6), array_rho=False):
    mu = rng.normal(size=shape)
    if array_rho:
        rho = rng.uniform(0.5, 5.0, size=shape)
    else:
        rho = float(rng.uniform(0.5, 5.0))
    return ThetaState(mu=mu, rho=rho)


class TestThetaState:
    def test_scalar_and_array_rho(self):
        mu = np.zeros((3, 3))
        assert ThetaState(mu=mu, rho=2.0).mean_rho == 2.0
        st = ThetaState(mu=mu, rho=np.full((3, 3), 4.0))
        assert st.mean_rho == 4.0

    def test_rejects_bad_rho(self):
        mu = np.zeros((3, 3))
        with pytest.raises(ValueError):
            ThetaState(mu=mu, rho=0.0)
        with pytest.raises(ValueError):
            ThetaState(mu=mu, rho=-1.0)
        with pytest.raises(ValueError):
            ThetaState(mu=mu, rho=np.full((2, 2), 1.0))
        with pytest.raises(ValueError):
            ThetaState(mu=mu, rho=float("inf"))

    def test_rejects_non_finite_mu(self):
        with pytest.raises(ValueError):
            ThetaState(mu=np.array([[np.nan, 0.0]]), rho=1.0)


class TestSampleSender:
    def test_accuracy_scales_noise(self):
        x0 = np.zeros((4, 4))
        eps = np.ones((4, 4))
        assert_allclose(sample_sender(x0, 4.0, eps), 0.5)
        assert_allclose(sample_sender(x0, 0.25, eps), 2.0)

    def test_accepts_noise_field(self):
        f = sample_field(8, 8, NoiseConfig(seed=1), 0)
        x0 = np.zeros((8, 8))
        assert_allclose(sample_sender(x0, 1.0, f), f.values)

    def test_errors(self):
        with pytest.raises(ValueError):
            sample_sender(np.zeros((4, 4)), 0.0, np.zeros((4, 4)))
        with pytest.raises(ValueError):
            sample_sender(np.zeros((4, 4)), 1.0, np.zeros((2, 2)))


class TestBayesUpdate:
    def test_precision_additivity(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            st = random_state(rng)
            x = rng.normal(size=st.mu.shape)
            a = float(rng.uniform(0.0, 3.0))
            new = bayes_update(st, x, a)
            assert_allclose(np.asarray(new.rho), np.asarray(st.rho) + a, rtol=1e-12)

    def test_two_updates_commute(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            st = random_state(rng, array_rho=bool(rng.integers(0, 2)))
            x1, x2 = rng.normal(size=(2, 6, 6))
            a1, a2 = rng.uniform(0.1, 3.0, size=2)
            ab = bayes_update(bayes_update(st, x1, a1), x2, a2)
            ba = bayes_update(bayes_update(st, x2, a2), x1, a1)
            assert_allclose(ab.mu, ba.mu, atol=1e-12)
            assert_allclose(np.asarray(ab.rho), np.asarray(ba.rho), atol=1e-12)

    def test_two_updates_merge(self):
        # folding x at a1 then a2 equals folding x once at a1 + a2
        rng = np.random.default_rng(2)
        for _ in range(50):
            st = random_state(rng)
            x = rng.normal(size=st.mu.shape)
            a1, a2 = rng.uniform(0.1, 3.0, size=2)
            twice = bayes_update(bayes_update(st, x, a1), x, a2)
            once = bayes_update(st, x, a1 + a2)
            assert_allclose(twice.mu, once.mu, atol=1e-12)

    def test_zero_alpha_is_identity(self):
        st = ThetaState(mu=np.array([[0.3, -0.7]]), rho=2.5)
        new = bayes_update(st, np.array([[100.0, 100.0]]), 0.0)
        assert_allclose(new.mu, st.mu)
        assert new.rho == st.rho

    def test_mean_is_precision_weighted(self):
        st = ThetaState(mu=np.full((2, 2), 1.0), rho=3.0)
        new = bayes_update(st, np.full((2, 2), -1.0), 1.0)
        assert_allclose(new.mu, (3.0 * 1.0 + 1.0 * -1.0) / 4.0)

    def test_per_pixel_alpha(self):
        st = ThetaState(mu=np.zeros((2, 2)), rho=1.0)
        a = np.array([[0.0, 1.0], [2.0, 3.0]])
        new = bayes_update(st, np.ones((2, 2)), a)
        assert_allclose(np.asarray(new.rho), 1.0 + a)
        assert_allclose(new.mu, a / (1.0 + a))

    def test_errors(self):
        st = ThetaState(mu=np.zeros((2, 2)), rho=1.0)
        with pytest.raises(ValueError):
            bayes_update(st, np.zeros((3, 3)), 1.0)
        with pytest.raises(ValueError):
            bayes_update(st, np.zeros((2, 2)), -0.1)
        with pytest.raises(ValueError):
            bayes_update(st, np.zeros((2, 2)), np.full((3, 3), 1.0))


class TestConditionedUpdate:
    def test_reduces_to_plain_at_zero_feedback(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            st = random_state(rng, array_rho=bool(rng.integers(0, 2)))
            x_hat = rng.normal(size=st.mu.shape)
            x0 = rng.normal(size=st.mu.shape)
            a_t = float(rng.uniform(0.1, 3.0))
            cond = bayes_update_conditioned(st, x_hat, a_t, x0, np.zeros(st.mu.shape))
            plain = bayes_update(st, x_hat, a_t)
            assert_allclose(cond.mu, plain.mu, atol=1e-15)
            assert_allclose(np.asarray(cond.rho), np.asarray(plain.rho), atol=1e-15)

    def test_equals_two_sequential_plain_updates(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            st = random_state(rng)
            x_hat = rng.normal(size=st.mu.shape)
            x0 = rng.normal(size=st.mu.shape)
            a_t = float(rng.uniform(0.1, 3.0))
            a_a = rng.uniform(0.0, 2.0, size=st.mu.shape)
            cond = bayes_update_conditioned(st, x_hat, a_t, x0, a_a)
            seq = bayes_update(bayes_update(st, x_hat, a_t), x0, a_a)
            assert_allclose(cond.mu, seq.mu, atol=1e-12)
            assert_allclose(np.asarray(cond.rho), np.asarray(seq.rho), atol=1e-12)

    def test_full_feedback_pins_to_input(self):
        st = ThetaState(mu=np.zeros((3, 3)), rho=1.0)
        x0 = np.full((3, 3), 0.5)
        huge = np.full((3, 3), 1e9)
        new = bayes_update_conditioned(st, np.ones((3, 3)), 1.0, x0, huge)
        assert_allclose(new.mu, x0, atol=1e-6)

    def test_rho_becomes_array(self):
        st = ThetaState(mu=np.zeros((2, 2)), rho=1.0)
        new = bayes_update_conditioned(
            st, np.zeros((2, 2)), 1.0, np.zeros((2, 2)), np.full((2, 2), 0.5)
        )
        assert np.asarray(new.rho).shape == (2, 2)


class TestAlphaA:
    def test_bounded_by_alpha_t(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            psi = rng.normal(size=(5, 5))
            x0 = rng.normal(size=(5, 5))
            a_t = float(rng.uniform(0.0, 4.0))
            t = float(rng.uniform(0.0, 1.0))
            a = compute_alpha_a(psi, x0, a_t, t, 1.0)
            assert np.all(a >= 0)
            assert np.all(a <= a_t + 1e-15)

    def test_agreement_gate(self):
        x0 = np.zeros((1, 3))
        psi = np.array([[0.0, 1.0, 3.0]])
        a = compute_alpha_a(psi, x0, 2.0, 1.0, 1.0)
        # perfect agreement keeps (almost) all of alpha_t; mismatch decays as exp(-d^2)
        assert_allclose(a[0, 0], 2.0 * GATE_AT_HORIZON, rtol=1e-12)
        assert_allclose(a[0, 1] / a[0, 0], np.exp(-1.0), rtol=1e-12)
        assert_allclose(a[0, 2] / a[0, 0], np.exp(-9.0), rtol=1e-12)

    def test_time_gate_frozen_values(self):
        z = np.zeros((2, 2))
        assert_allclose(compute_alpha_a(z, z, 1.0, 1.0, 1.0), GATE_AT_HORIZON, rtol=1e-12)
        assert_allclose(compute_alpha_a(z, z, 1.0, 0.5, 1.0), 0.5, rtol=1e-12)
        # late in generation the gate is the horizon value reflected about 1/2
        assert_allclose(compute_alpha_a(z, z, 1.0, 0.0, 1.0), 1.0 - GATE_AT_HORIZON, rtol=1e-6)

    def test_time_gate_monotone(self):
        z = np.zeros((1, 1))
        vals = [float(compute_alpha_a(z, z, 1.0, t, 1.0)[0, 0]) for t in np.linspace(0, 1, 21)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_horizon_rescaling(self):
        z = np.zeros((2, 2))
        a1 = compute_alpha_a(z, z, 1.0, 0.75, 1.0)
        a2 = compute_alpha_a(z, z, 1.0, 1.5, 2.0)
        assert_allclose(a1, a2, rtol=1e-12)

    def test_errors(self):
        z = np.zeros((2, 2))
        with pytest.raises(ValueError):
            compute_alpha_a(z, z, 1.0, 2.0, 1.0)
        with pytest.raises(ValueError):
            compute_alpha_a(z, z, -1.0, 0.5, 1.0)
        with pytest.raises(ValueError):
            compute_alpha_a(z, z, 1.0, 0.5, 1.0, k=0.0)
        with pytest.raises(ValueError):
            compute_alpha_a(z, np.zeros((3, 3)), 1.0, 0.5, 1.0)


class TestDiscreteLoss:
    def test_matches_kl_between_observation_laws(self):
        # the loss must equal the Gaussian KL between sender and receiver
        # observation distributions, computed here by numerical quadrature
        rng = np.random.default_rng(6)
        for _ in range(5):
            x0 = rng.normal(size=(3, 3))
            psi = rng.normal(size=(3, 3))
            alpha = float(rng.uniform(0.5, 2.0))
            n = int(rng.integers(2, 60))
            expected = n * kl_quadrature(x0, psi, alpha)
            assert_allclose(discrete_loss(x0, psi, alpha, n), expected, rtol=1e-6)

    def test_closed_form(self):
        x0 = np.zeros((2, 2))
        psi = np.full((2, 2), 0.5)
        # 50 * (0.8 / 2) * 4 * 0.25
        assert_allclose(discrete_loss(x0, psi, 0.8, 50), 20.0)

    def test_batch_averages(self):
        x0 = np.zeros((4, 2, 2))
        psi = np.zeros((4, 2, 2))
        psi[0] += 1.0  # only one batch element off
        batched = discrete_loss(x0, psi, 1.0, 10)
        single = discrete_loss(x0[0], psi[0], 1.0, 10)
        assert_allclose(batched, single / 4.0)

    def test_zero_at_perfect_prediction(self):
        x = np.random.default_rng(7).normal(size=(5, 5))
        assert discrete_loss(x, x.copy(), 1.0, 50) == 0.0

    def test_errors(self):
        z = np.zeros((2, 2))
        with pytest.raises(ValueError):
            discrete_loss(z, z, 0.0, 50)
        with pytest.raises(ValueError):
            discrete_loss(z, z, 1.0, 0)
        with pytest.raises(ValueError):
            discrete_loss(z, np.zeros((3, 3)), 1.0, 50)
