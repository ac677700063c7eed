import numpy as np
import pytest
from scipy import stats

from funmix.errors import InvalidSpecError
from funmix.gibbs_normal import ChainConfig
from funmix.gibbs_zimp import (ZimpPrior, ZimpState, beta_block_posteriors, class_probs,
                               initial_state, label_probs, lambda_conditionals, relabel,
                               run_chain_zimp, sample_betas_zimp, sample_lambdas,
                               summarize_chain_zimp)
from funmix.glm import CoefPrior, irls_weight
from funmix.simulate import metric_mr_zimp


class TestClassProbs:
    def test_symmetric(self):
        np.testing.assert_allclose(class_probs(np.ones((1, 1)), np.zeros(1), np.zeros(1)),
                                   [[1 / 3] * 3], rtol=1e-15)

    def test_limit(self):
        p = class_probs(np.ones((1, 1)), np.array([1e4]), np.zeros(1))[0]
        np.testing.assert_allclose(p, [0, 1, 0], atol=1e-12)

    def test_arithmetic(self):
        p = class_probs(np.ones((1, 1)), np.array([1.0]), np.array([-1.0]))[0]
        den = 1 + np.e + 1 / np.e
        np.testing.assert_allclose(p, [1 / den, np.e / den, 1 / np.e / den], rtol=1e-15)

    def test_clamped_extremes(self):
        p = class_probs(np.ones((2, 1)), np.array([1e6]), np.array([-1e6]))
        assert np.all(np.isfinite(p))
        np.testing.assert_allclose(p.sum(axis=1), 1.0)


class TestLabelProbs:
    def test_positive_count_excludes_zero_class(self):
        r = label_probs([3.0], np.ones((1, 1)), 2.0, 10.0, np.zeros(1), np.zeros(1))
        assert r[0, 0] == 0.0

    def test_symmetric_rates(self):
        r = label_probs([4.0], np.ones((1, 1)), 3.0, 3.0, np.ones(1), np.ones(1))
        assert r[0, 1] == pytest.approx(r[0, 2])

    def test_three_term_enumeration(self):
        r = label_probs([0.0], np.ones((1, 1)), 2.0, 10.0, np.zeros(1), np.zeros(1))[0]
        w = np.array([1.0, np.exp(-2), np.exp(-10)])
        np.testing.assert_allclose(r, w / w.sum(), atol=1e-12)

    def test_large_counts_stable(self):
        r = label_probs([400.0], np.ones((1, 1)), 2.0, 300.0, np.zeros(1), np.zeros(1))
        np.testing.assert_allclose(r[0], [0, 0, 1], atol=1e-12)


class TestLambdas:
    prior = ZimpPrior(a1=1.0, b1=0.1, a2=2.0, b2=0.5)

    def test_empty_classes_give_prior(self):
        assert lambda_conditionals(np.zeros(3), np.zeros(3, int), self.prior) == (
            (1.0, 0.1), (2.0, 0.5))

    def test_single_member(self):
        (s1, r1), _ = lambda_conditionals(np.array([3.0]), np.array([1]), self.prior)
        assert (s1, r1) == (4.0, pytest.approx(1.1))

    def test_conjugacy_ks(self):
        y = np.array([1.0, 2.0, 12.0, 15.0])
        labels = np.array([1, 1, 2, 2])
        st = ZimpState(2.0, 10.0, np.zeros(1), np.zeros(1), labels)
        rng = np.random.default_rng(0)
        lam = np.array([[s.lam1, s.lam2] for s in
                        (sample_lambdas(st, y, self.prior, rng) for _ in range(100_000))])
        assert stats.kstest(lam[:, 0], stats.gamma(4.0, scale=1 / 2.1).cdf).statistic < 0.01
        assert stats.kstest(lam[:, 1], stats.gamma(29.0, scale=1 / 2.5).cdf).statistic < 0.01

    def test_relabel_swaps_everything(self):
        st = ZimpState(9.0, 2.0, np.array([1.0]), np.array([-1.0]), np.array([0, 1, 2]),
                       CoefPrior(1, scale=1.0), CoefPrior(1, scale=2.0))
        r = relabel(st)
        assert (r.lam1, r.lam2) == (2.0, 9.0)
        np.testing.assert_array_equal(r.labels, [0, 2, 1])
        assert (r.beta1[0], r.beta2[0]) == (-1.0, 1.0)
        assert (r.coef1.scale[0], r.coef2.scale[0]) == (2.0, 1.0)


class TestBetas:
    def test_dense_oracle(self):
        rng = np.random.default_rng(1)
        x = np.column_stack([np.ones(10), rng.normal(size=10)])
        labels = rng.integers(0, 3, 10)
        c = CoefPrior(2, np.inf, [3.0, 1.5])
        st = ZimpState(2.0, 9.0, np.array([0.2, -0.4]), np.array([-0.3, 0.5]), labels, c,
                       c.copy())
        post1, _ = beta_block_posteriors(st, x)
        p = class_probs(x, st.beta1, st.beta2)[:, 1]
        off = np.log1p(np.exp(x @ st.beta2))
        psi = np.log(p / (1 - p)) + (np.asarray(labels == 1, float) - p) / (p * (1 - p)) + off
        W = np.diag(irls_weight(p))
        prec = np.diag(1 / c.scales)
        cov = np.linalg.inv(x.T @ W @ x + prec)
        np.testing.assert_allclose(post1.cov, cov, atol=1e-10)
        np.testing.assert_allclose(post1.mean, cov @ x.T @ W @ psi, atol=1e-10)

    def test_empty_class_pulled_to_prior(self):
        rng = np.random.default_rng(2)
        x = np.column_stack([np.ones(30), rng.normal(size=30)])
        c = CoefPrior(2, np.inf, 1.0)
        st = ZimpState(2.0, 9.0, np.zeros(2), np.zeros(2), np.zeros(30, int), c, c.copy())
        post1, post2 = beta_block_posteriors(st, x)
        assert post1.mean[0] < 0 and post2.mean[0] < 0

    def test_exchange_symmetry(self):
        rng = np.random.default_rng(3)
        x = np.ones((40, 1))
        labels = np.repeat([1, 2], 20)
        c = CoefPrior(1, np.inf, 2.0)
        st = ZimpState(3.0, 3.0, np.zeros(1), np.zeros(1), labels, c, c.copy())
        draws = np.array([[s.beta1[0], s.beta2[0]] for s in
                          (sample_betas_zimp(st, x, ZimpPrior(), rng, metropolis=False)
                           for _ in range(4000))])
        assert draws[:, 0].mean() == pytest.approx(draws[:, 1].mean(), abs=0.03)
        assert draws[:, 0].std() == pytest.approx(draws[:, 1].std(), rel=0.05)

    def test_metropolis_targets_exact_conditional(self):
        # One coefficient, fixed labels: compare the chain to grid quadrature.
        x = np.ones((6, 1))
        labels = np.array([0, 1, 1, 2, 2, 2])
        c = CoefPrior(1, np.inf, 2.0)
        st = ZimpState(3.0, 8.0, np.zeros(1), np.zeros(1), labels, c, c.copy())
        rng = np.random.default_rng(4)
        keep = []
        for _ in range(6000):
            st = sample_betas_zimp(st, x, ZimpPrior(), rng)
            keep.append(st.beta1[0])
        # Joint density of both blocks on a grid, block 2 summed out.
        g = np.linspace(-12, 12, 1001)
        B1, B2 = np.meshgrid(g, g, indexing="ij")
        logp = (2 * B1 + 3 * B2 - 6 * np.log1p(np.exp(B1) + np.exp(B2))
                - 0.5 * (B1 ** 2 + B2 ** 2) / 4)
        w = np.exp(logp - logp.max()).sum(axis=1)
        mean = (g @ w) / w.sum()
        assert np.mean(keep[500:]) == pytest.approx(mean, abs=0.1)


def _zimp_data(n, seed):
    rng = np.random.default_rng(seed)
    labels = rng.choice(3, size=n, p=[0.3, 0.35, 0.35])
    y = np.where(labels == 0, 0, rng.poisson(np.where(labels == 1, 2.0, 10.0)))
    return y.astype(float), labels


class TestChain:
    def test_initial_state(self):
        y = np.array([0.0, 0.0, 1.0, 2.0, 9.0, 11.0])
        s = initial_state(y, np.ones((6, 1)), ZimpPrior())
        np.testing.assert_array_equal(s.labels, [0, 0, 1, 1, 2, 2])
        assert (s.lam1, s.lam2) == (1.5, 10.0)

    def test_invariants_every_sweep(self):
        y, _ = _zimp_data(60, 0)
        bad = []

        def check(it, s):
            if np.any(s.labels[y > 0] == 0) or not s.lam1 <= s.lam2:
                bad.append(it)
        run_chain_zimp(y, np.ones((60, 1)), config=ChainConfig(500, 0, 1), callback=check)
        assert bad == []

    def test_stored_draws_ordered(self):
        y, _ = _zimp_data(60, 1)
        tr = run_chain_zimp(y, np.ones((60, 1)), config=ChainConfig(600, 100, 5))
        assert np.all(tr.column("lam1") <= tr.column("lam2"))
        np.testing.assert_allclose(tr.responsibilities.sum(axis=2), 1.0)

    def test_reproducible(self):
        y, _ = _zimp_data(40, 2)
        cfg = ChainConfig(200, 100, 5, seed=3)
        a = run_chain_zimp(y, np.ones((40, 1)), config=cfg)
        b = run_chain_zimp(y, np.ones((40, 1)), config=cfg)
        np.testing.assert_array_equal(a.draws, b.draws)

    def test_rejects_non_counts(self):
        with pytest.raises(InvalidSpecError):
            run_chain_zimp(np.array([0.5, 1.0]), np.ones((2, 1)))
        with pytest.raises(InvalidSpecError):
            ZimpPrior(link="probit")

    def test_metadata(self):
        y, _ = _zimp_data(30, 3)
        tr = run_chain_zimp(y, np.ones((30, 1)), config=ChainConfig(40, 20, 2))
        assert tr.meta["metropolis"] is True
        assert 0 < tr.meta["acceptance"] <= 1
        assert tr.names[:2] == ["lam1", "lam2"]

    def test_study1_recovery(self, study1_zimp):
        sim, design = study1_zimp
        tr = run_chain_zimp(sim.y, design.x, config=ChainConfig(2000, 1000, 10, seed=1))
        s = summarize_chain_zimp(tr, sim.y)
        # Intervals should cover the realized class means of this sample.
        for nm, c in (("lam1", 1), ("lam2", 2)):
            ybar = sim.y[sim.gamma == c].mean()
            assert s.param(nm).lower < ybar < s.param(nm).upper
        assert metric_mr_zimp(sim.gamma, s.membership) < 0.1
        assert len(s.ppc) == 4
