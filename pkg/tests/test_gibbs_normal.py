import numpy as np
import pytest
from scipy import stats
from scipy.integrate import cumulative_trapezoid, trapezoid

from funmix.errors import ConfigError, InvalidSpecError
from funmix.gibbs_normal import (ChainConfig, NormalPrior, NormalState, gamma_probs, gibbs_sweep,
                                 initial_state, mean_conditional, run_chain, sample_sigma2,
                                 sigma2_conditional, summarize_chain, truncated_normal_draw)
from funmix.glm import CoefPrior
from funmix.summary import stored_count


def _state(y, gamma, mu0=0.0, mu1=9.0, sigma2=18.0, D=1):
    return NormalState(mu0, mu1, sigma2, np.zeros(D), np.asarray(gamma), CoefPrior(D))


class TestGammaProbs:
    def test_symmetric_midpoint(self):
        assert gamma_probs([4.5], [0.5], 0.0, 9.0, 18.0)[0] == pytest.approx(0.5)

    def test_degenerate_limit(self):
        assert gamma_probs([9.0], [0.3], 0.0, 9.0, 1e-6)[0] == pytest.approx(1.0)

    def test_two_term_enumeration(self):
        y, p, mu0, mu1, s2 = 2.7, 0.35, -1.0, 4.0, 3.0
        a = p * stats.norm.pdf(y, mu1, np.sqrt(s2))
        b = (1 - p) * stats.norm.pdf(y, mu0, np.sqrt(s2))
        assert gamma_probs([y], [p], mu0, mu1, s2)[0] == pytest.approx(a / (a + b), abs=1e-12)

    def test_extreme_outlier_no_nan(self):
        r = gamma_probs([1e6, -1e6], [0.5, 0.5], 0.0, 9.0, 1.0)
        np.testing.assert_array_equal(r, [1.0, 0.0])


class TestMeanConditional:
    def test_flat_prior_limit(self):
        y = np.array([1.0, 2.0, 6.0])
        m, v = mean_conditional(y, np.zeros(3), 1.0, 1e12, 0)
        assert m == pytest.approx(3.0)
        assert v == pytest.approx(1 / 3)

    def test_empty_component_is_prior(self):
        m, v = mean_conditional(np.array([1.0, 2.0]), np.zeros(2), 2.0, 100.0, 1)
        assert (m, v) == (0.0, pytest.approx(100.0))

    def test_conjugacy_oracle(self):
        # Posterior of mu on a fine grid: prior N(0, tau^2) times the likelihood.
        y, sigma2, tau = np.array([0.4, 1.9, 3.1]), 2.0, 3.0
        m, v = mean_conditional(y, np.ones(3), sigma2, tau ** 2, 1)
        prec = 1 / tau ** 2 + 3 / sigma2
        assert v == pytest.approx(1 / prec, rel=1e-12)
        assert m == pytest.approx(y.sum() / sigma2 / prec, rel=1e-12)
        g = np.linspace(-10, 15, 200001)
        logd = stats.norm.logpdf(g, 0, tau) + stats.norm.logpdf(y[:, None], g, np.sqrt(sigma2)).sum(0)
        d = np.exp(logd - logd.max())
        d /= trapezoid(d, g)
        assert trapezoid(g * d, g) == pytest.approx(m, abs=1e-8)
        assert trapezoid((g - m) ** 2 * d, g) == pytest.approx(v, abs=1e-8)


class TestTruncatedNormal:
    @pytest.mark.parametrize("lower", [-1.0, 0.5, 3.0, 7.0])
    def test_lower_truncation_ks(self, lower):
        rng = np.random.default_rng(int(lower * 10) + 50)
        draws = np.array([truncated_normal_draw(0.0, 1.0, lower, np.inf, rng)
                          for _ in range(20000)])
        assert draws.min() > lower
        ks = stats.kstest(draws, stats.truncnorm(lower, np.inf).cdf)
        assert ks.statistic < 0.015

    def test_upper_truncation_ks(self):
        rng = np.random.default_rng(3)
        draws = np.array([truncated_normal_draw(2.0, 4.0, -np.inf, 1.0, rng)
                          for _ in range(20000)])
        assert draws.max() < 1.0
        ks = stats.kstest(draws, stats.truncnorm(-np.inf, -0.5, loc=2.0, scale=2.0).cdf)
        assert ks.statistic < 0.015

    def test_two_sided_rejected(self):
        with pytest.raises(InvalidSpecError):
            truncated_normal_draw(0, 1, -1, 1, np.random.default_rng(0))


class TestSigma2:
    def test_no_data_is_prior(self):
        prior = NormalPrior(a0=2.0, b0=3.0)
        assert sigma2_conditional(np.array([]), np.array([]), 0, 1, prior) == (2.0, 3.0)

    def test_zero_residuals(self):
        prior = NormalPrior(a0=2.0, b0=3.0)
        y = np.array([0.0, 9.0])
        assert sigma2_conditional(y, [0, 1], 0.0, 9.0, prior) == (3.0, 3.0)

    def test_grid_oracle_ks(self):
        y = np.array([-0.5, 1.2, 8.0, 10.3])
        gamma = np.array([0, 0, 1, 1])
        prior = NormalPrior(a0=1.0, b0=1.0)
        st = _state(y, gamma, 0.0, 9.0, 1.0)
        rng = np.random.default_rng(10)
        draws = np.array([sample_sigma2(st, y, prior, rng) for _ in range(100_000)])
        # Unnormalized likelihood x InvGamma(1, 1) prior on a log-spaced grid.
        g = np.geomspace(1e-3, 1e4, 400001)
        resid = np.where(gamma == 1, y - 9.0, y)
        logd = stats.norm.logpdf(resid[:, None], 0, np.sqrt(g)).sum(0) + stats.invgamma.logpdf(g, 1.0)
        d = np.exp(logd - logd.max())
        cdf = cumulative_trapezoid(d, g, initial=0)
        cdf /= cdf[-1]
        ks = stats.kstest(draws, lambda s: np.interp(s, g, cdf))
        assert ks.statistic < 0.01


class TestInitialState:
    def test_median_split(self):
        y = np.array([0.0, 1.0, 9.0, 10.0])
        s = initial_state(y, np.ones((4, 1)), NormalPrior())
        np.testing.assert_array_equal(s.gamma, [0, 0, 1, 1])
        assert (s.mu0, s.mu1) == (0.5, 9.5)
        assert s.sigma2 == pytest.approx(0.5)
        np.testing.assert_array_equal(s.beta, [0.0])

    def test_constant_responses_still_ordered(self):
        s = initial_state(np.full(5, 2.0), np.ones((5, 1)), NormalPrior())
        assert s.mu1 > s.mu0 and s.sigma2 > 0


class TestChainConfig:
    def test_stored_counts(self):
        assert stored_count(15000, 10000, 100) == 50
        assert stored_count(11, 10, 1) == 1

    @pytest.mark.parametrize("kw", [dict(iters=10, burnin=10), dict(thin=0),
                                    dict(linearize_at="mean"), dict(burnin=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ChainConfig(**kw)

    def test_metropolis_default(self):
        assert ChainConfig().use_metropolis(False) is False
        assert ChainConfig(metropolis=True).use_metropolis(False) is True


def _mixture(n, seed):
    rng = np.random.default_rng(seed)
    g = rng.random(n) < 0.5
    return np.where(g, 9.0, 0.0) + rng.normal(0, 1.5, n), g


class TestRunChain:
    def test_default_stores_fifty(self):
        y, _ = _mixture(30, 0)
        tr = run_chain(y, np.ones((30, 1)), config=ChainConfig(1500, 1000, 10, seed=1))
        assert tr.draws.shape == (50, 4)
        assert tr.names == ["mu0", "mu1", "sigma2", "beta[0]"]

    def test_single_stored_draw(self):
        y, _ = _mixture(10, 0)
        tr = run_chain(y, np.ones((10, 1)), config=ChainConfig(5, 4, 1))
        assert tr.n_draws == 1

    def test_bitwise_reproducible(self):
        y, _ = _mixture(40, 2)
        cfg = ChainConfig(300, 100, 5, seed=9)
        a = run_chain(y, np.ones((40, 1)), config=cfg)
        b = run_chain(y, np.ones((40, 1)), config=cfg)
        np.testing.assert_array_equal(a.draws, b.draws)
        np.testing.assert_array_equal(a.responsibilities, b.responsibilities)

    def test_single_sweep_reproducible(self):
        y, _ = _mixture(20, 3)
        x = np.ones((20, 1))
        s0 = initial_state(y, x, NormalPrior())
        s1 = gibbs_sweep(s0, y, x, NormalPrior(), np.random.default_rng(4))
        s2 = gibbs_sweep(s0, y, x, NormalPrior(), np.random.default_rng(4))
        assert (s1.mu0, s1.mu1, s1.sigma2) == (s2.mu0, s2.mu1, s2.sigma2)
        np.testing.assert_array_equal(s1.beta, s2.beta)

    @pytest.mark.parametrize("metropolis", [False, True])
    def test_order_constraint_every_sweep(self, metropolis):
        y, _ = _mixture(25, 5)
        seen = []
        run_chain(y, np.ones((25, 1)), config=ChainConfig(400, 0, 1, metropolis=metropolis),
                  callback=lambda it, s: seen.append(s.mu1 > s.mu0))
        assert all(seen) and len(seen) == 400

    def test_intercept_only_recovers_means(self):
        y, g = _mixture(200, 6)
        tr = run_chain(y, np.ones((200, 1)), config=ChainConfig(2000, 1000, 10, seed=2))
        s = summarize_chain(tr, y)
        assert s.param("mu0").lower < 0.0 < s.param("mu0").upper
        assert s.param("mu1").lower < 9.0 < s.param("mu1").upper
        assert np.mean(s.membership[g] > 0.5) > 0.95
        assert len(s.ppc) == 4

    def test_shape_mismatch(self):
        with pytest.raises(InvalidSpecError):
            run_chain(np.zeros(5), np.ones((4, 1)))

    def test_metadata(self):
        y, _ = _mixture(20, 1)
        tr = run_chain(y, np.ones((20, 1)), config=ChainConfig(20, 10, 2, metropolis=True))
        assert tr.meta["metropolis"] is True
        assert 0.0 <= tr.meta["acceptance"] <= 1.0
        assert tr.meta["stored"] == 5


class TestCovariateRecovery:
    def test_label_coherence(self, study1_normal):
        sim, design = study1_normal
        tr = run_chain(sim.y, design.x, config=ChainConfig(1500, 1000, 10, seed=3))
        s = summarize_chain(tr)
        one = sim.gamma == 1
        assert np.mean(s.membership[one] > 0.5) >= 0.85
