from dataclasses import replace

import numpy as np
import pytest
from scipy import stats
from scipy.special import gammaln

from funmix.errors import NumericalError
from funmix.gibbs_zimp import ZimpPrior, class_probs
from funmix.glm import CoefPrior, irls_weight
from funmix.quadrature import logsumexp3
from funmix.vb_normal import VBConfig
from funmix.vb_zimp import (VBZimpState, beta_candidate_zimp, e0, e1, e2, e3, e4, e5, elbo_zimp,
                            f2, f3, f4, f5, fitted_probs_zimp, initial_state, run_cavi_zimp,
                            update_alpha_zimp, update_betas_vb, update_lambdas_vb)

EULER = 0.5772156649015329
N_MC = 10**6


def _state(n=4, D=2, seed=0, **kw):
    rng = np.random.default_rng(seed)
    a = rng.dirichlet(np.ones(3), n)
    base = dict(alpha=a, psi1=4.0, zeta1=2.0, psi2=30.0, zeta2=3.0,
                mean1=rng.normal(size=D) * 0.4, cov1=np.diag(rng.uniform(0.1, 0.4, D)),
                mean2=rng.normal(size=D) * 0.4, cov2=np.diag(rng.uniform(0.1, 0.4, D)),
                coef1=CoefPrior(D, np.inf, rng.uniform(0.5, 2, D)),
                coef2=CoefPrior(D, np.inf, rng.uniform(0.5, 2, D)))
    base.update(kw)
    return VBZimpState(**base)


def _data(n=4, D=2, seed=0):
    rng = np.random.default_rng(seed + 50)
    x = np.column_stack([np.ones(n), rng.normal(size=(n, D - 1))])
    y = rng.poisson(4.0, n).astype(float)
    y[0] = 0.0
    return y, x


class TestUpdateAlpha:
    def test_positive_counts_exclude_zero_class(self):
        y, x = _data(6)
        a = update_alpha_zimp(_state(6), y, x)
        assert np.all(a[y > 0, 0] == 0)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)

    def test_symmetric_parameters(self):
        s = _state(1, D=1, psi2=4.0, zeta2=2.0, mean1=np.zeros(1), mean2=np.zeros(1))
        a = update_alpha_zimp(s, [3.0], np.ones((1, 1)))[0]
        np.testing.assert_allclose(a, [0, 0.5, 0.5])

    def test_hand_evaluation(self):
        # Digamma at integers: psi(k) = H_{k-1} - Euler's constant.
        dg3 = 1 + 1 / 2 - EULER
        dg9 = sum(1 / k for k in range(1, 9)) - EULER
        r1 = np.exp(-3 + 2 * dg3)
        r2 = np.exp(-9 + 2 * dg9)
        s = _state(1, D=1, psi1=3.0, zeta1=1.0, psi2=9.0, zeta2=1.0, mean1=np.zeros(1),
                   mean2=np.zeros(1))
        a = update_alpha_zimp(s, [2.0], np.ones((1, 1)))[0]
        np.testing.assert_allclose(a, [0, r1 / (r1 + r2), r2 / (r1 + r2)], rtol=1e-12)


class TestUpdateLambdas:
    prior = ZimpPrior(a1=1.5, b1=0.2, a2=2.0, b2=0.3)

    def test_empty_column(self):
        s = _state(3, alpha=np.tile([1.0, 0.0, 0.0], (3, 1)))
        assert update_lambdas_vb(s, np.zeros(3), self.prior) == (1.5, 0.2, 2.0, 0.3)

    def test_single_subject(self):
        s = _state(1, alpha=np.array([[0.0, 1.0, 0.0]]))
        psi1, zeta1, _, _ = update_lambdas_vb(s, np.array([3.0]), self.prior)
        assert (psi1, zeta1) == (4.5, pytest.approx(1.2))

    def test_flat_prior_weighted_mean(self):
        y = np.array([1.0, 4.0, 9.0])
        a = np.array([[0, 0.2, 0.8], [0, 0.6, 0.4], [0, 0.1, 0.9]])
        tiny = ZimpPrior(a1=1e-12, b1=1e-12, a2=1e-12, b2=1e-12)
        psi1, zeta1, psi2, zeta2 = update_lambdas_vb(_state(3, alpha=a), y, tiny)
        assert psi1 / zeta1 == pytest.approx(a[:, 1] @ y / a[:, 1].sum())
        assert psi2 / zeta2 == pytest.approx(a[:, 2] @ y / a[:, 2].sum())


class TestUpdateBetas:
    def test_dense_oracle(self):
        y, x = _data(8, 2, 1)
        s = _state(8, 2, 1)
        mean, cov = beta_candidate_zimp(s, x, 2)
        p = class_probs(x, s.mean1, s.mean2)[:, 2]
        off = np.log1p(np.exp(x @ s.mean1))
        psi = np.log(p / (1 - p)) + (s.alpha[:, 2] - p) / (p * (1 - p)) + off
        W = np.diag(irls_weight(p))
        want_cov = np.linalg.inv(x.T @ W @ x + np.diag(1 / s.coef2.scales))
        np.testing.assert_allclose(cov, want_cov, atol=1e-10)
        np.testing.assert_allclose(mean, want_cov @ x.T @ W @ psi, atol=1e-10)

    def test_zero_residual_fixed_point(self):
        _, x = _data(10, 2, 2)
        b1, b2 = np.array([0.3, -0.5]), np.array([-0.2, 0.4])
        big = CoefPrior(2, np.inf, 1e6)
        s = _state(10, 2, alpha=class_probs(x, b1, b2), mean1=b1, mean2=b2, coef1=big,
                   coef2=big.copy())
        for l, b in ((1, b1), (2, b2)):
            np.testing.assert_allclose(beta_candidate_zimp(s, x, l)[0], b, atol=1e-9)

    def test_prior_dominated(self):
        _, x = _data(10, 2, 2)
        tight = CoefPrior(2, np.inf, 1e-6, [0.7, -0.7])
        s = _state(10, 2, coef1=tight)
        np.testing.assert_allclose(beta_candidate_zimp(s, x, 1)[0], [0.7, -0.7], atol=1e-8)

    def test_safeguard(self):
        y, x = _data(12, 2, 3)
        prior = ZimpPrior()
        for seed in range(4):
            s = _state(12, 2, seed, mean1=np.array([4.0, -4.0]))
            assert elbo_zimp(update_betas_vb(s, x, prior), y, x, prior) >= elbo_zimp(
                s, y, x, prior)


class TestElboPieces:
    prior = ZimpPrior(a1=2.0, b1=0.5, a2=3.0, b2=0.4)

    def _mc(self, f, seed=0):
        return float(np.mean(f(np.random.default_rng(seed), N_MC)))

    def test_e0(self):
        s = _state()
        y, _ = _data()

        def draw(rng, n):
            l1 = rng.gamma(s.psi1, 1 / s.zeta1, n)
            l2 = rng.gamma(s.psi2, 1 / s.zeta2, n)
            return (s.alpha[:, 1] @ stats.poisson.logpmf(y[:, None], l1)
                    + s.alpha[:, 2] @ stats.poisson.logpmf(y[:, None], l2))
        assert e0(s, y) == pytest.approx(self._mc(draw), rel=1e-2)

    def test_e1(self):
        s = _state()
        _, x = _data()

        def draw(rng, n):
            b1 = rng.multivariate_normal(s.mean1, s.cov1, n)
            b2 = rng.multivariate_normal(s.mean2, s.cov2, n)
            u, v = b1 @ x.T, b2 @ x.T
            return ((u * s.alpha[:, 1] + v * s.alpha[:, 2]).sum(1) - logsumexp3(u, v).sum(1))
        assert e1(s, x) == pytest.approx(self._mc(draw), rel=1e-2)

    def test_rate_pieces(self):
        s = _state()
        for e, f, a, b, psi, zeta in ((e2, f2, 2.0, 0.5, s.psi1, s.zeta1),
                                      (e3, f3, 3.0, 0.4, s.psi2, s.zeta2)):
            q = stats.gamma(psi, scale=1 / zeta)
            p = stats.gamma(a, scale=1 / b)
            assert e(s, self.prior) == pytest.approx(
                self._mc(lambda r, n: p.logpdf(q.rvs(n, random_state=r))), rel=1e-2)
            assert f(s) == pytest.approx(
                self._mc(lambda r, n: q.logpdf(q.rvs(n, random_state=r))), rel=1e-2)

    def test_coefficient_pieces(self):
        s = _state()
        for e, f, m, c, coef in ((e4, f4, s.mean1, s.cov1, s.coef1),
                                 (e5, f5, s.mean2, s.cov2, s.coef2)):
            q = stats.multivariate_normal(m, c)
            p = stats.multivariate_normal(coef.location, np.diag(coef.scales))
            assert e(s) == pytest.approx(
                self._mc(lambda r, n: p.logpdf(q.rvs(n, random_state=r))), rel=1e-2)
            assert f(s) == pytest.approx(
                self._mc(lambda r, n: q.logpdf(q.rvs(n, random_state=r))), rel=1e-2)

    def test_e0_keeps_factorials(self):
        s = _state(1, alpha=np.array([[0.0, 1.0, 0.0]]))
        lam, loglam = s.rate_moments(1)
        assert e0(s, [5.0]) == pytest.approx(-lam + 5 * loglam - gammaln(6))

    def test_priors_only_terms_cancel(self):
        c = CoefPrior(2, np.inf, [1.2, 0.7])
        s = VBZimpState(np.zeros((0, 3)), 2.0, 0.5, 3.0, 0.4, np.zeros(2), np.diag(c.scales),
                        np.zeros(2), np.diag(c.scales), c, c.copy())
        assert elbo_zimp(s, np.zeros(0), np.zeros((0, 2)), self.prior) == pytest.approx(
            0.0, abs=1e-12)

    def test_non_finite(self):
        y, x = _data()
        with pytest.raises(NumericalError):
            elbo_zimp(_state(psi1=np.inf), y, x, self.prior)


class TestRunCavi:
    def test_single_sweep(self, study1_zimp):
        sim, design = study1_zimp
        state, _ = run_cavi_zimp(sim.y, design.x, config=VBConfig(tol=1e6))
        assert len(state.elbo_history) == 2

    @pytest.mark.parametrize("seed", range(20))
    def test_monotone_elbo(self, seed):
        from funmix.design import CovariateSpec, build_design, from_simulated
        from funmix.simulate import ScenarioConfig, generate
        sim = generate(ScenarioConfig(model="zimp", n=100), np.random.default_rng(seed))
        x = build_design(from_simulated(sim), default=CovariateSpec(K=5)).x
        state, _ = run_cavi_zimp(sim.y, x)
        assert np.all(np.diff(state.elbo_history) >= -1e-8)

    def test_fit_properties(self, study1_zimp):
        sim, design = study1_zimp
        state, summary = run_cavi_zimp(sim.y, design.x)
        np.testing.assert_allclose(state.alpha.sum(axis=1), 1.0, atol=1e-12)
        pos = sim.y[sim.y > 0]
        for psi, zeta in ((state.psi1, state.zeta1), (state.psi2, state.zeta2)):
            assert pos.min() <= psi / zeta <= pos.max()
        assert state.psi1 / state.zeta1 < state.psi2 / state.zeta2
        assert summary.membership.shape == (sim.n, 3)
        p = fitted_probs_zimp(state, design.x)
        np.testing.assert_allclose(p.sum(axis=1), 1.0)

    def test_initial_ordering(self):
        y = np.array([0.0, 1.0, 2.0, 9.0, 11.0])
        s = initial_state(y, np.ones((5, 1)), ZimpPrior())
        assert s.psi1 / s.zeta1 < s.psi2 / s.zeta2
        np.testing.assert_array_equal(s.alpha.argmax(axis=1), [0, 1, 1, 2, 2])

    def test_refresh_scales_changes_prior(self, study1_zimp):
        sim, design = study1_zimp
        a, _ = run_cavi_zimp(sim.y, design.x, config=VBConfig(max_sweeps=3))
        b, _ = run_cavi_zimp(sim.y, design.x, config=VBConfig(max_sweeps=3, refresh_scales=True))
        assert not np.allclose(a.coef1.scales, b.coef1.scales)
        assert np.isinf(b.coef1.df)
