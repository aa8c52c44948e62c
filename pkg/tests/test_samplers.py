"""Posterior samplers: exact conjugate draws, the Gibbs sweep for the
random-effects model, the MH fallback, MAP optimization, and ESS."""

import math

import numpy as np
import pytest

from ijcov import (
    ChainConfig,
    Dataset,
    NormalMeanModel,
    NumericalError,
    PoissonGammaConjugateModel,
    PoissonGammaREModel,
    SimSpec,
    ess,
    exact_normal_posterior,
    map_optimize,
    sample_posterior,
    simulate_poisson_re,
)


class TestChainConfig:
    def test_burn_default_is_half(self):
        assert ChainConfig(m_draws=4000).resolved_burn_in == 2000

    def test_retained_counts(self):
        cfg = ChainConfig(m_draws=11, burn_in=3, thin=2)
        assert cfg.retained() == 4  # draws 3,5,7,9 of 0..10

    def test_too_few_retained_rejected(self):
        with pytest.raises(ValueError, match="retained"):
            ChainConfig(m_draws=4, burn_in=3).retained()

    @pytest.mark.parametrize("bad", [dict(m_draws=1), dict(m_draws=10, thin=0),
                                     dict(m_draws=10, burn_in=10)])
    def test_invalid_settings(self, bad):
        with pytest.raises(ValueError):
            ChainConfig(**bad)


class TestExactNormalSampler:
    def test_moments_match_conjugate_formula(self):
        model = NormalMeanModel(known_sd=1.0, prior_mean=0.0, prior_sd=1.0)
        data = Dataset(np.array([0.0, 2.0]))
        cfg = ChainConfig(m_draws=200_000, rng_seed=0)
        s = sample_posterior(model, data, cfg=cfg)
        mu, var = exact_normal_posterior(model, data)
        # exact sampler keeps every draw
        assert s.draws.shape == (200_000, 1)
        assert s.draws.mean() == pytest.approx(mu, abs=4 * math.sqrt(var / 200_000))
        assert s.draws.var(ddof=1) == pytest.approx(var, rel=0.05)

    def test_loglik_matrix_shape_and_content(self):
        model = NormalMeanModel(known_sd=2.0)
        data = Dataset(np.array([1.0, -1.0, 0.5]))
        s = sample_posterior(model, data, cfg=ChainConfig(m_draws=50, rng_seed=1))
        assert s.loglik.shape == (50, 3)
        want = model.log_lik(1.0, s.draws[7])
        assert s.loglik[7, 0] == pytest.approx(want, rel=1e-14)

    def test_seed_determinism(self):
        model = NormalMeanModel(known_sd=1.0)
        data = Dataset(np.array([0.0, 1.0]))
        a = sample_posterior(model, data, cfg=ChainConfig(m_draws=20, rng_seed=5))
        b = sample_posterior(model, data, cfg=ChainConfig(m_draws=20, rng_seed=5))
        c = sample_posterior(model, data, cfg=ChainConfig(m_draws=20, rng_seed=6))
        np.testing.assert_array_equal(a.draws, b.draws)
        assert not np.array_equal(a.draws, c.draws)

    def test_zero_weights_drop_data(self):
        # weighting {0,2,99} with (1,1,0) must reproduce the {0,2} posterior
        model = NormalMeanModel(known_sd=1.0, prior_mean=0.0, prior_sd=1.0)
        data3 = Dataset(np.array([0.0, 2.0, 99.0]))
        w = np.array([1.0, 1.0, 0.0])
        mu_w, var_w = exact_normal_posterior(model, data3, w)
        mu, var = exact_normal_posterior(model, Dataset(np.array([0.0, 2.0])))
        assert (mu_w, var_w) == (pytest.approx(mu), pytest.approx(var))


class TestExactPoissonGammaSampler:
    def test_moments_match_gamma_posterior(self):
        model = PoissonGammaConjugateModel(prior_shape=2.0, prior_rate=1.0)
        data = Dataset(np.array([3.0, 5.0, 1.0]))
        shape, rate = model.posterior_params(data)
        s = sample_posterior(model, data, cfg=ChainConfig(m_draws=100_000, rng_seed=2))
        assert s.draws.mean() == pytest.approx(shape / rate, rel=0.01)
        assert s.draws.var(ddof=1) == pytest.approx(shape / rate**2, rel=0.05)


class TestGibbsSampler:
    def test_gibbs_matches_mh_reference(self):
        """Two independent sampler families agree on E[gamma | data] within
        4 combined MC standard errors."""
        spec = SimSpec(n=30, g_count=3, gamma_true=1.5, alpha=25.0, beta=2.5, rng_seed=3)
        data, _ = simulate_poisson_re(spec)
        model = PoissonGammaREModel(group_count=3, alpha=25.0, beta=2.5)
        sg = sample_posterior(model, data, cfg=ChainConfig(m_draws=40_000, rng_seed=0),
                              method="gibbs", want_loglik=False)
        sm = sample_posterior(model, data, cfg=ChainConfig(m_draws=80_000, rng_seed=1),
                              method="mh", want_loglik=False)
        gg, gm = sg.g_values[:, 0], sm.g_values[:, 0]
        se = math.hypot(gg.std(ddof=1) / math.sqrt(ess(gg)),
                        gm.std(ddof=1) / math.sqrt(ess(gm)))
        assert abs(gg.mean() - gm.mean()) < 4 * se

    def test_single_group_rate_concentrates_at_log_mean(self):
        # with G=1 only gamma + lambda_1 is identified; its posterior mean
        # approaches log(ybar) for large N
        rng = np.random.default_rng(8)
        y = rng.poisson(12.0, size=4000)
        data = Dataset(np.column_stack([y, np.zeros_like(y)]))
        model = PoissonGammaREModel(group_count=1, alpha=25.0, beta=2.5)
        s = sample_posterior(model, data, cfg=ChainConfig(m_draws=4000, rng_seed=0),
                             want_loglik=False)
        combined = s.draws[:, 0] + s.draws[:, 1]
        assert combined.mean() == pytest.approx(math.log(y.mean()), abs=0.02)

    def test_burn_and_thin_applied(self):
        spec = SimSpec(n=12, g_count=2, gamma_true=1.0, alpha=2.0, beta=1.0, rng_seed=0)
        data, _ = simulate_poisson_re(spec)
        model = PoissonGammaREModel(group_count=2, alpha=2.0, beta=1.0)
        cfg = ChainConfig(m_draws=100, burn_in=40, thin=3)
        s = sample_posterior(model, data, cfg=cfg, want_loglik=False)
        assert s.draws.shape == (20, 3)

    def test_all_zero_counts_rejected(self):
        # flat prior on gamma is improper when the total count is zero
        data = Dataset(np.array([[0, 0], [0, 1]]))
        model = PoissonGammaREModel(group_count=2, alpha=2.0, beta=1.0)
        with pytest.raises(NumericalError):
            sample_posterior(model, data, cfg=ChainConfig(m_draws=100, rng_seed=0))


class TestMapOptimize:
    def test_flat_prior_normal_map_is_sample_mean(self):
        model = NormalMeanModel(known_sd=2.0)
        x = np.array([1.0, 2.0, 6.0])
        fit = map_optimize(model, Dataset(x))
        assert fit.converged
        assert fit.theta_hat[0] == pytest.approx(3.0, abs=1e-10)
        # info = (1/N) sum 1/sd^2 = 1/4; score cov = s^2_N / sd^4
        assert fit.info_hat[0, 0] == pytest.approx(0.25, rel=1e-12)
        s2n = x.var()
        assert fit.score_cov_hat[0, 0] == pytest.approx(s2n / 16.0, rel=1e-12)
        assert fit.n_data == 3

    def test_proper_prior_shifts_optimum(self):
        model = NormalMeanModel(known_sd=1.0, prior_mean=0.0, prior_sd=1.0)
        fit = map_optimize(model, Dataset(np.array([0.0, 2.0])))
        assert fit.theta_hat[0] == pytest.approx(2.0 / 3.0, abs=1e-10)

    def test_poisson_gamma_map(self):
        # flat-ish prior (shape 1, rate 0): MAP of conjugate Gamma(1+Sy, N)
        # is (shape-1)/rate = ybar
        model = PoissonGammaConjugateModel(prior_shape=1.0, prior_rate=0.0)
        y = np.array([3.0, 5.0, 4.0])
        fit = map_optimize(model, Dataset(y))
        assert fit.converged
        assert fit.theta_hat[0] == pytest.approx(4.0, abs=1e-9)


class TestEss:
    def test_iid_chain_near_m(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=20_000)
        assert ess(x) > 0.8 * 20_000

    def test_ar1_chain_reduced(self):
        # AR(1) with phi = 0.9 has tau = (1+phi)/(1-phi) = 19
        rng = np.random.default_rng(1)
        m, phi = 100_000, 0.9
        x = np.empty(m)
        x[0] = rng.normal()
        eps = rng.normal(size=m)
        for t in range(1, m):
            x[t] = phi * x[t - 1] + eps[t]
        got = ess(x)
        assert got == pytest.approx(m / 19.0, rel=0.25)

    def test_constant_chain_returns_m(self):
        assert ess(np.ones(500)) == 500.0

    def test_short_chain_rejected(self):
        with pytest.raises(ValueError):
            ess(np.arange(5.0))

    def test_never_exceeds_m(self):
        rng = np.random.default_rng(2)
        # antithetic-ish negatively correlated chain
        z = rng.normal(size=5000)
        x = np.ravel(np.column_stack([z, -z]))
        assert ess(x) <= 10_000.0
