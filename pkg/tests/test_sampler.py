import numpy as np
import pytest

from latentbeam.errors import ConfigurationError
from latentbeam.oracle import CountingDenoiser, GaussianMixture, GmmDenoiser, gmm_posterior_mean
from latentbeam.sampler import (
    ddim_sample,
    ddim_sample_candidates,
    ddim_step,
    ddim_transition_mean,
    dpmpp_jump_estimate,
    dpmpp_lookahead,
    dpmpp_noise_std,
    dpmpp_sample,
    dpmpp_sample_candidates,
    dpmpp_transition_mean,
    lookahead_estimate,
    sample_candidates,
    tweedie_estimate,
)
from latentbeam.schedule import NoiseSchedule, ddim_noise_scale, dpm_coefficients, linear_beta_schedule


def literal_ddim(z, eps, ab_t, ab_prev, sigma):
    """Textbook DDIM update written out term by term."""
    x0 = (z - np.sqrt(1 - ab_t) * eps) / np.sqrt(ab_t)
    direction = np.sqrt(1 - ab_prev - sigma**2) * eps
    return np.sqrt(ab_prev) * x0 + direction


class TestDdimStep:
    def test_matches_literal_formula(self, rng):
        z, eps = rng.standard_normal(3), rng.standard_normal(3)
        assert np.allclose(ddim_step(z, eps, 0.3, 0.5, 0.2), literal_ddim(z, eps, 0.3, 0.5, 0.2), atol=1e-15)

    def test_last_step_returns_clean_prediction(self, rng):
        z, eps = rng.standard_normal(3), rng.standard_normal(3)
        assert np.array_equal(ddim_step(z, eps, 0.9, 1.0, 0.0), (z - np.sqrt(1.0 - 0.9) * eps) / np.sqrt(0.9))

    def test_flat_segment_is_identity(self, rng):
        z, eps = rng.standard_normal(3), rng.standard_normal(3)
        assert np.allclose(ddim_step(z, eps, 0.6, 0.6, 0.0), z, atol=1e-15)

    def test_negative_radicand(self):
        with pytest.raises(ConfigurationError):
            ddim_step(np.zeros(1), np.zeros(1), 0.3, 0.5, 0.9)

    def test_transition_mean_step_range(self, denoiser2, schedule):
        scale = ddim_noise_scale(schedule, 1.0)
        with pytest.raises(ConfigurationError):
            ddim_transition_mean(np.zeros(2), 0, denoiser2, schedule, scale)


class TestCandidates:
    def test_zero_noise_copies(self):
        c = sample_candidates(np.array([1.0, 2.0]), 0.0, 4, 0, 5, 0)
        assert c.shape == (4, 2) and np.all(c == [1.0, 2.0])

    def test_reproducible_and_prefix_stable(self):
        a = sample_candidates(np.zeros(3), 0.5, 2, 9, 7, 1)
        b = sample_candidates(np.zeros(3), 0.5, 6, 9, 7, 1)
        assert np.array_equal(a, b[:2])

    def test_empirical_variance(self):
        c = np.concatenate([sample_candidates(np.zeros(50), 0.3, 40, 1, s, 0) for s in range(10)])
        assert abs(c.var() - 0.09) < 0.01

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            sample_candidates(np.zeros(1), -1.0, 2, 0, 0, 0)
        with pytest.raises(ConfigurationError):
            sample_candidates(np.zeros(1), 1.0, 0, 0, 0, 0)

    def test_ddim_candidates_use_transition_noise(self, denoiser2, schedule):
        scale = ddim_noise_scale(schedule, 1.0)
        m = ddim_transition_mean(np.ones(2), 30, denoiser2, schedule, scale)
        c = ddim_sample_candidates(m, scale.sigma[30], 3, 4, 0)
        assert np.array_equal(c, sample_candidates(m.latent, scale.sigma[30], 3, 4, 30, 0))


class TestEstimators:
    def test_tweedie_at_zero_is_free(self, denoiser2, schedule):
        e = tweedie_estimate(np.array([0.1, 0.2]), 0, denoiser2, schedule)
        assert e.nfe_cost == 0 and np.array_equal(e.value, [0.1, 0.2])

    def test_tweedie_equals_posterior_mean_bitwise(self, denoiser2, schedule, rng):
        z = rng.standard_normal((100, 2))
        for t in (1, 10, 25, 50):
            e = tweedie_estimate(z, t, denoiser2, schedule)
            assert np.array_equal(e.value, gmm_posterior_mean(denoiser2.gmm, z, schedule.alpha_bar[t]))

    def test_conjugate_single_component(self, schedule):
        g = GaussianMixture([1.0], [[0.7, -0.3]], [1.0])
        d = GmmDenoiser(g, schedule)
        z = np.sqrt(schedule.alpha_bar[20]) * g.means[0]
        assert np.allclose(tweedie_estimate(z, 20, d, schedule).value, g.means[0], atol=1e-12)

    def test_one_step_lookahead_is_tweedie(self, denoiser2, schedule, rng):
        z = rng.standard_normal((5, 2))
        la = lookahead_estimate(z, 30, 1, denoiser2, schedule)
        tw = tweedie_estimate(z, 30, denoiser2, schedule)
        assert np.array_equal(la.value, tw.value) and la.nfe_cost == 1

    def test_lookahead_from_zero(self, denoiser2, schedule):
        e = lookahead_estimate(np.array([0.3, 0.3]), 0, 6, denoiser2, schedule)
        assert e.nfe_cost == 0 and np.array_equal(e.value, [0.3, 0.3])

    @pytest.mark.parametrize("entry,tp", [(49, 6), (30, 12), (5, 6), (1, 3), (20, 20)])
    def test_nfe_cost_is_audited(self, denoiser2, schedule, entry, tp):
        c = CountingDenoiser(denoiser2)
        e = lookahead_estimate(np.zeros(2), entry, tp, c, schedule)
        assert c.count == e.nfe_cost == min(entry, tp)

    def test_reward_error_ordering(self, denoiser2, schedule, rng):
        # mid-trajectory entries, 1-Lipschitz reward <w, x> with unit w
        w = np.array([0.6, 0.8])
        for entry in (20, 25, 30):
            z = rng.standard_normal((300, 2))
            ref = lookahead_estimate(z, entry, entry, denoiser2, schedule).value @ w
            err = {tp: np.mean(np.abs(lookahead_estimate(z, entry, tp, denoiser2, schedule).value @ w - ref)) for tp in (1, 2, 6)}
            assert err[6] < err[2] < err[1]


class TestDdimChains:
    def test_deterministic_chain_reproducible(self, denoiser2, schedule, rng):
        z = rng.standard_normal((10, 2))
        assert np.array_equal(ddim_sample(denoiser2, schedule, 0.0, z, 1), ddim_sample(denoiser2, schedule, 0.0, z, 2))

    def test_stochastic_chain_seeded(self, denoiser2, schedule, rng):
        z = rng.standard_normal((10, 2))
        a = ddim_sample(denoiser2, schedule, 1.0, z, 1)
        assert np.array_equal(a, ddim_sample(denoiser2, schedule, 1.0, z, 1))
        assert not np.array_equal(a, ddim_sample(denoiser2, schedule, 1.0, z, 2))


class TestDpm:
    def test_same_step_is_identity(self, denoiser2, schedule):
        dpm = dpm_coefficients(schedule)
        c = CountingDenoiser(denoiser2)
        m = dpmpp_transition_mean(np.array([0.2, 0.1]), 10, 10, c, dpm)
        assert np.array_equal(m.latent, [0.2, 0.1]) and c.count == 0
        assert dpmpp_noise_std(dpm, 10, 10) == 0.0

    def test_ordering_error(self, denoiser2, schedule):
        with pytest.raises(ConfigurationError):
            dpmpp_transition_mean(np.zeros(2), 5, 6, denoiser2, dpm_coefficients(schedule))

    def test_first_order_sde_equals_ddim_eta_one(self, denoiser2, schedule, rng):
        # first-order SDE-DPM++ is algebraically the DDPM ancestral step
        dpm = dpm_coefficients(schedule)
        scale = ddim_noise_scale(schedule, 1.0)
        z = rng.standard_normal((4, 2))
        for t in (50, 30, 10, 2):
            a = dpmpp_transition_mean(z, t, t - 1, denoiser2, dpm).latent
            b = ddim_transition_mean(z, t, denoiser2, schedule, scale).latent
            assert np.allclose(a, b, atol=1e-12)
            assert dpmpp_noise_std(dpm, t, t - 1) == pytest.approx(scale.sigma[t], abs=1e-12)

    def test_terminal_jump_is_clean_prediction(self, denoiser2, schedule, rng):
        dpm = dpm_coefficients(schedule)
        z = rng.standard_normal(2)
        e = dpmpp_jump_estimate(z, 25, denoiser2, dpm)
        assert np.array_equal(e.value, tweedie_estimate(z, 25, denoiser2, schedule).value) and e.nfe_cost == 1
        assert dpmpp_jump_estimate(z, 0, denoiser2, dpm).nfe_cost == 0

    def test_one_step_lookahead_is_jump(self, denoiser2, schedule, rng):
        dpm = dpm_coefficients(schedule)
        z = rng.standard_normal((3, 2))
        assert np.array_equal(dpmpp_lookahead(z, 30, 1, denoiser2, dpm).value, dpmpp_jump_estimate(z, 30, denoiser2, dpm).value)
        assert np.array_equal(dpmpp_lookahead(z, 0, 4, denoiser2, dpm).value, z)

    def test_lookahead_error_decreases(self, denoiser2, schedule, rng):
        dpm = dpm_coefficients(schedule)
        z = rng.standard_normal((200, 2))
        ref = dpmpp_lookahead(z, 30, 30, denoiser2, dpm).value
        errs = [np.mean(np.linalg.norm(dpmpp_lookahead(z, 30, m, denoiser2, dpm).value - ref, axis=1)) for m in (1, 2, 3, 6, 12)]
        assert all(a > b for a, b in zip(errs, errs[1:]))

    def test_candidates_and_chain(self, denoiser2, schedule):
        dpm = dpm_coefficients(schedule)
        m = dpmpp_transition_mean(np.zeros(2), 20, 19, denoiser2, dpm)
        c = dpmpp_sample_candidates(m, 19, dpm, 3, 0, 0)
        assert c.shape == (3, 2)
        out = dpmpp_sample(denoiser2, dpm, np.zeros((5, 2)), 0)
        assert out.shape == (5, 2) and np.all(np.isfinite(out))


def test_eta_one_chain_moments():
    sch = linear_beta_schedule(1e-4, 2e-2, 1000)
    g = GaussianMixture([0.4, 0.6], [[-1.0, 0.5], [1.2, -0.3]], [0.1, 0.2])
    d = GmmDenoiser(g, sch)
    n = 4000
    z = np.random.default_rng(0).standard_normal((n, 2))
    x = ddim_sample(d, sch, 1.0, z, seed=11)
    se = np.sqrt(np.diag(g.covariance()) / n)
    assert np.all(np.abs(x.mean(0) - g.mean()) < 4 * se)
