"""Coordinate-ascent variational inference for the zero-inflated Poisson mixture.

Mean-field family::

    q(gamma_i) = Multinomial(1; alpha_i0, alpha_i1, alpha_i2),
    q(lambda_l) = Gamma(psi_l, zeta_l),  q(beta_l) = N(mu_l*, V_l).

Responsibility and rate updates are exact coordinate steps.  Each
coefficient block is a linearized step with the ELBO safeguard of
:mod:`funmix.vb_normal`.  The expected log-normalizer of the softmax is a
two-dimensional Gaussian expectation evaluated on a tensor Gauss-Hermite grid.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.special import digamma, gammaln, xlogy

from .errors import NumericalError
from .gibbs_zimp import ZimpPrior, initial_state as gibbs_initial_state
from .glm import CoefPrior, em_scale_update, linearized_posterior
from .quadrature import (expected_logsumexp3, gauss_expect_2d, linear_predictor_moments,
                         logsumexp3)
from .summary import FitSummary, ParamRow, membership_deciles
from .vb_normal import VBConfig, _gaussian_prior_term, _mvn_neg_entropy


@dataclass
class VBZimpState:
    alpha: np.ndarray
    psi1: float
    zeta1: float
    psi2: float
    zeta2: float
    mean1: np.ndarray
    cov1: np.ndarray
    mean2: np.ndarray
    cov2: np.ndarray
    coef1: CoefPrior = field(repr=False, default=None)
    coef2: CoefPrior = field(repr=False, default=None)
    elbo_history: list = field(default_factory=list)
    converged: bool = False

    def rate_moments(self, l: int):
        """``E[lambda_l]`` and ``E[log lambda_l]``."""
        psi, zeta = (self.psi1, self.zeta1) if l == 1 else (self.psi2, self.zeta2)
        return psi / zeta, digamma(psi) - np.log(zeta)


def _gaussian_coef(prior: ZimpPrior, x) -> CoefPrior:
    base = prior.coef_prior(x)
    return CoefPrior(base.dim, np.inf, base.scale, base.location)


def initial_state(y, x, prior: ZimpPrior) -> VBZimpState:
    """Hard responsibilities from the Gibbs initialization; rates follow from them."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    labels = gibbs_initial_state(y, x, prior).labels
    alpha = np.eye(3)[labels]
    coef = _gaussian_coef(prior, x)
    D = x.shape[1]
    state = VBZimpState(alpha, prior.a1, prior.b1, prior.a2, prior.b2, np.zeros(D),
                        np.diag(coef.scales), np.zeros(D), np.diag(coef.scales), coef,
                        coef.copy())
    psi1, zeta1, psi2, zeta2 = update_lambdas_vb(state, y, prior)
    if psi1 / zeta1 > psi2 / zeta2:
        psi1, zeta1, psi2, zeta2 = psi2, zeta2, psi1, zeta1
        state = replace(state, alpha=alpha[:, [0, 2, 1]])
    return replace(state, psi1=psi1, zeta1=zeta1, psi2=psi2, zeta2=zeta2)


def update_alpha_zimp(state: VBZimpState, y, x) -> np.ndarray:
    """Class responsibilities; class 0 is impossible for positive counts."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    logs = [np.where(y == 0, 0.0, -np.inf)]
    for l, mean in ((1, state.mean1), (2, state.mean2)):
        lam, loglam = state.rate_moments(l)
        logs.append(-lam + y * loglam + x @ mean)
    L = np.stack(logs, axis=-1)
    m = L.max(axis=-1, keepdims=True)
    w = np.exp(L - m)
    return w / w.sum(axis=-1, keepdims=True)


def update_lambdas_vb(state: VBZimpState, y, prior: ZimpPrior):
    """Returns ``(psi1, zeta1, psi2, zeta2)``."""
    y = np.asarray(y, dtype=float)
    a = state.alpha
    return (prior.a1 + float(a[:, 1] @ y), prior.b1 + float(a[:, 1].sum()),
            prior.a2 + float(a[:, 2] @ y), prior.b2 + float(a[:, 2].sum()))


def beta_candidate_zimp(state: VBZimpState, x, l: int):
    """Linearized step for block ``l`` at the previous variational means."""
    x = np.asarray(x, dtype=float)
    own, other = (state.mean1, state.mean2) if l == 1 else (state.mean2, state.mean1)
    coef = state.coef1 if l == 1 else state.coef2
    post = linearized_posterior(x, state.alpha[:, l], x @ own, coef, "logit",
                                offset=np.logaddexp(0.0, x @ other))
    return post.mean, post.cov


def _with_block(state: VBZimpState, l: int, mean, cov) -> VBZimpState:
    if l == 1:
        return replace(state, mean1=mean, cov1=cov)
    return replace(state, mean2=mean, cov2=cov)


def _block_terms(state: VBZimpState, x, l: int) -> float:
    if l == 1:
        return e1(state, x) + e4(state) - f4(state)
    return e1(state, x) + e5(state) - f5(state)


def update_betas_vb(state: VBZimpState, x, prior: ZimpPrior | None = None,
                    backtrack_steps: int = 30) -> VBZimpState:
    """Block 1 then block 2, each accepted only if the ELBO does not drop."""
    for l in (1, 2):
        new_mean, new_cov = beta_candidate_zimp(state, x, l)
        old_mean, old_cov = (state.mean1, state.cov1) if l == 1 else (state.mean2, state.cov2)
        base = _block_terms(state, x, l)
        t = 1.0
        accepted = state
        for _ in range(backtrack_steps):
            trial = _with_block(state, l, old_mean + t * (new_mean - old_mean),
                                old_cov + t * (new_cov - old_cov))
            if _block_terms(trial, x, l) >= base:
                accepted = trial
                break
            t *= 0.5
        state = accepted
    return state


_NORMALIZER_CACHE: list = []


def expected_log_normalizer(state: VBZimpState, x) -> np.ndarray:
    """``E_q[log(1 + e^u + e^v)]`` per subject with ``u = x' beta_1``, ``v = x' beta_2``.

    The last few results are memoized on the identity of the moment arrays,
    which the updates always replace rather than modify.
    """
    key = (x, state.mean1, state.cov1, state.mean2, state.cov2)
    for k, val in _NORMALIZER_CACHE:
        if all(a is b for a, b in zip(k, key)):
            return val
    m1, v1 = linear_predictor_moments(x, state.mean1, state.cov1)
    m2, v2 = linear_predictor_moments(x, state.mean2, state.cov2)
    val = expected_logsumexp3(m1, v1, m2, v2)
    _NORMALIZER_CACHE.insert(0, (key, val))
    del _NORMALIZER_CACHE[4:]
    return val


def e0(state: VBZimpState, y) -> float:
    y = np.asarray(y, dtype=float)
    out = 0.0
    for l in (1, 2):
        lam, loglam = state.rate_moments(l)
        out += float(state.alpha[:, l] @ (-lam + y * loglam - gammaln(y + 1)))
    return out


def e1(state: VBZimpState, x) -> float:
    x = np.asarray(x, dtype=float)
    a = state.alpha
    return float(a[:, 1] @ (x @ state.mean1) + a[:, 2] @ (x @ state.mean2)
                 - expected_log_normalizer(state, x).sum())


def _gamma_prior_term(a, b, psi, zeta) -> float:
    elog = digamma(psi) - np.log(zeta)
    return a * np.log(b) - gammaln(a) + (a - 1) * elog - b * psi / zeta


def e2(state: VBZimpState, prior: ZimpPrior) -> float:
    return _gamma_prior_term(prior.a1, prior.b1, state.psi1, state.zeta1)


def e3(state: VBZimpState, prior: ZimpPrior) -> float:
    return _gamma_prior_term(prior.a2, prior.b2, state.psi2, state.zeta2)


def e4(state: VBZimpState) -> float:
    return _gaussian_prior_term(state.mean1, state.cov1, state.coef1)


def e5(state: VBZimpState) -> float:
    return _gaussian_prior_term(state.mean2, state.cov2, state.coef2)


def f1(state: VBZimpState) -> float:
    return float(np.sum(xlogy(state.alpha, state.alpha)))


def _gamma_neg_entropy(psi, zeta) -> float:
    return -gammaln(psi) + psi * np.log(zeta) + (psi - 1) * (digamma(psi) - np.log(zeta)) - psi


def f2(state: VBZimpState) -> float:
    return _gamma_neg_entropy(state.psi1, state.zeta1)


def f3(state: VBZimpState) -> float:
    return _gamma_neg_entropy(state.psi2, state.zeta2)


def f4(state: VBZimpState) -> float:
    return _mvn_neg_entropy(state.cov1)


def f5(state: VBZimpState) -> float:
    return _mvn_neg_entropy(state.cov2)


def elbo_pieces_zimp(state: VBZimpState, y, x, prior: ZimpPrior) -> dict:
    _check_finite(state)
    return {"E0": e0(state, y), "E1": e1(state, x), "E2": e2(state, prior),
            "E3": e3(state, prior), "E4": e4(state), "E5": e5(state), "F1": f1(state),
            "F2": f2(state), "F3": f3(state), "F4": f4(state), "F5": f5(state)}


def elbo_zimp(state: VBZimpState, y, x, prior: ZimpPrior) -> float:
    p = elbo_pieces_zimp(state, y, x, prior)
    return float(sum(v for k, v in p.items() if k[0] == "E")
                 - sum(v for k, v in p.items() if k[0] == "F"))


def _check_finite(state: VBZimpState):
    arrays = [state.alpha, state.mean1, state.mean2, state.cov1, state.cov2,
              np.array([state.psi1, state.zeta1, state.psi2, state.zeta2])]
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise NumericalError("non-finite variational parameter")


def cavi_sweep_zimp(state: VBZimpState, y, x, prior: ZimpPrior, config: VBConfig) -> VBZimpState:
    state = replace(state, alpha=update_alpha_zimp(state, y, x))
    psi1, zeta1, psi2, zeta2 = update_lambdas_vb(state, y, prior)
    state = replace(state, psi1=psi1, zeta1=zeta1, psi2=psi2, zeta2=zeta2)
    state = update_betas_vb(state, x, prior, config.backtrack_steps)
    if config.refresh_scales:
        coefs = []
        for coef, mean in ((state.coef1, state.mean1), (state.coef2, state.mean2)):
            c = coef.copy()
            c.df = prior.coef_df
            c.scales = em_scale_update(mean, c)
            c.df = np.inf
            coefs.append(c)
        state = replace(state, coef1=coefs[0], coef2=coefs[1])
    return state


def run_cavi_zimp(y, x, prior: ZimpPrior | None = None, config: VBConfig | None = None,
                  names=None, init: VBZimpState | None = None):
    """CAVI loop; returns ``(state, summary)`` as :func:`funmix.vb_normal.run_cavi`."""
    prior = prior or ZimpPrior()
    config = config or VBConfig()
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    start = time.perf_counter()
    state = init if init is not None else initial_state(y, x, prior)
    history = [elbo_zimp(state, y, x, prior)]
    converged = False
    for _ in range(config.max_sweeps):
        state = cavi_sweep_zimp(state, y, x, prior, config)
        history.append(elbo_zimp(state, y, x, prior))
        if abs(history[-1] - history[-2]) < config.tol * abs(history[-2]):
            converged = True
            break
    state = replace(state, elbo_history=history, converged=converged)
    elapsed = time.perf_counter() - start
    return state, variational_summary_zimp(state, x, names, elapsed)


def fitted_probs_zimp(state: VBZimpState, x) -> np.ndarray:
    """``E_q`` of the softmax class probabilities, shape ``(n, 3)``."""
    m1, v1 = linear_predictor_moments(x, state.mean1, state.cov1)
    m2, v2 = linear_predictor_moments(x, state.mean2, state.cov2)
    out = []
    for num in (lambda u, v: 0.0 * u, lambda u, v: u, lambda u, v: v):
        out.append(gauss_expect_2d(lambda u, v, f=num: np.exp(f(u, v) - logsumexp3(u, v)),
                                   m1, v1, m2, v2))
    p = np.stack(out, axis=-1)
    return p / p.sum(axis=-1, keepdims=True)


def variational_summary_zimp(state: VBZimpState, x, names=None, elapsed: float = 0.0,
                             level: float = 0.95) -> FitSummary:
    lo_q, hi_q = 0.5 * (1 - level), 0.5 * (1 + level)
    rows = []
    for nm, psi, zeta in (("lam1", state.psi1, state.zeta1), ("lam2", state.psi2, state.zeta2)):
        g = stats.gamma(psi, scale=1.0 / zeta)
        rows.append(ParamRow(nm, float(g.mean()), float(g.std()), float(g.ppf(lo_q)),
                             float(g.ppf(hi_q))))
    D = state.mean1.size
    coef_names = list(names) if names is not None else [f"beta[{d}]" for d in range(D)]
    z = stats.norm.ppf(hi_q)
    for tag, mean, cov in (("b1", state.mean1, state.cov1), ("b2", state.mean2, state.cov2)):
        sd = np.sqrt(np.diag(cov))
        for nm, m, s in zip(coef_names, mean, sd):
            rows.append(ParamRow(f"{tag}:{nm}", float(m), float(s), float(m - z * s),
                                 float(m + z * s)))
    return FitSummary(model="zimp", engine="vb", params=rows, membership=state.alpha.copy(),
                      fitted=fitted_probs_zimp(state, x),
                      deciles=membership_deciles(state.alpha), elapsed=elapsed,
                      converged=state.converged, level=level)
