"""Coordinate-ascent variational inference for the normal mixture.

Mean-field family::

    q(gamma_i) = Bernoulli(alpha_i),  q(mu_l) = N(m_l, s_l^2),
    q(sigma^2) = InvGamma(A0, B0),   q(beta) = N(mu_b*, V_b).

The alpha, mean and variance blocks are exact coordinate updates.  The
coefficient block uses the expected pseudo-data linearized at the previous
variational mean; the candidate is accepted only if it does not lower the
ELBO, otherwise it is shrunk back toward the previous moments.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.special import digamma, gammaln, xlogy

from .errors import ConfigError, NumericalError
from .glm import CoefPrior, em_scale_update, get_link, linearized_posterior
from .gibbs_normal import NormalPrior
from .quadrature import gauss_expect, linear_predictor_moments
from .summary import FitSummary, ParamRow, membership_deciles

_LOG_2PI = np.log(2.0 * np.pi)
ALPHA_EPS = 1e-10


@dataclass
class VBConfig:
    max_sweeps: int = 500
    tol: float = 1e-6
    seed: int = 0
    refresh_scales: bool = False
    backtrack_steps: int = 30

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ConfigError("max_sweeps must be >= 1")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")


@dataclass
class VBNormalState:
    alpha: np.ndarray
    m0: float
    s0_sq: float
    m1: float
    s1_sq: float
    A0: float
    B0: float
    beta_mean: np.ndarray
    beta_cov: np.ndarray
    coef: CoefPrior = field(repr=False, default=None)
    elbo_history: list = field(default_factory=list)
    converged: bool = False

    @property
    def inv_sigma2(self) -> float:
        return self.A0 / self.B0

    @property
    def log_sigma2(self) -> float:
        """``E_q[log sigma^2]``."""
        return np.log(self.B0) - digamma(self.A0)


def gaussian_coef_prior(prior: NormalPrior, x) -> CoefPrior:
    """Fixed-scale Gaussian prior used by the variational engines."""
    base = prior.coef_prior(x)
    return CoefPrior(base.dim, np.inf, base.scale, base.location)


def initial_state(y, x, prior: NormalPrior) -> VBNormalState:
    """Responsibilities from a median split, moments from the implied groups."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    n = y.size
    hard = (y > np.median(y)).astype(float)
    if hard.all() or not hard.any():
        hard = np.zeros(n)
        hard[np.argmax(y)] = 1.0
    alpha = np.clip(hard, ALPHA_EPS, 1 - ALPHA_EPS)
    m0, m1 = y[hard == 0].mean(), y[hard == 1].mean()
    resid = np.where(hard == 1, y - m1, y - m0)
    s2 = float(resid @ resid / max(n - 2, 1)) or float(np.var(y)) or 1.0
    A0 = prior.a0 + 0.5 * n
    coef = gaussian_coef_prior(prior, x)
    return VBNormalState(alpha, float(m0), s2 / max(hard.size - hard.sum(), 1), float(m1),
                         s2 / max(hard.sum(), 1), A0, A0 * s2, np.zeros(x.shape[1]),
                         np.diag(coef.scales), coef)


def expected_log_probs(x, beta_mean, beta_cov, link="logit"):
    """``E_q[log p_i]`` and ``E_q[log(1 - p_i)]`` by Gauss-Hermite quadrature."""
    link = get_link(link)
    mean, var = linear_predictor_moments(x, beta_mean, beta_cov)
    return (gauss_expect(link.log_inverse, mean, var),
            gauss_expect(link.log1m_inverse, mean, var))


def update_alpha(state: VBNormalState, y, x, prior: NormalPrior) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    elp, el1mp = expected_log_probs(x, state.beta_mean, state.beta_cov, prior.link)
    h = 0.5 * state.inv_sigma2
    l1 = elp - h * ((y - state.m1) ** 2 + state.s1_sq)
    l0 = el1mp - h * ((y - state.m0) ** 2 + state.s0_sq)
    alpha = np.exp(l1 - np.logaddexp(l1, l0))
    return np.clip(alpha, ALPHA_EPS, 1 - ALPHA_EPS)


def update_means(state: VBNormalState, y, prior: NormalPrior):
    """Returns ``(m0, s0^2, m1, s1^2)``."""
    y = np.asarray(y, dtype=float)
    e = state.inv_sigma2
    a = state.alpha
    s1 = 1.0 / (e * a.sum() + 1.0 / prior.tau1_sq)
    m1 = s1 * e * float(a @ y)
    s0 = 1.0 / (e * (1 - a).sum() + 1.0 / prior.tau0_sq)
    m0 = s0 * e * float((1 - a) @ y)
    return m0, s0, m1, s1


def _expected_sq_resid(state: VBNormalState, y):
    r1 = (y - state.m1) ** 2 + state.s1_sq
    r0 = (y - state.m0) ** 2 + state.s0_sq
    return float(state.alpha @ r1 + (1 - state.alpha) @ r0)


def update_sigma2(state: VBNormalState, y, prior: NormalPrior):
    """Returns ``(A0, B0)``."""
    y = np.asarray(y, dtype=float)
    return prior.a0 + 0.5 * y.size, prior.b0 + 0.5 * _expected_sq_resid(state, y)


def beta_candidate(state: VBNormalState, x, prior: NormalPrior):
    """Linearized coefficient update at the previous variational mean."""
    x = np.asarray(x, dtype=float)
    post = linearized_posterior(x, state.alpha, x @ state.beta_mean, state.coef, prior.link)
    return post.mean, post.cov


def beta_terms(state: VBNormalState, x, prior: NormalPrior, mean, cov) -> float:
    """ELBO terms that involve ``q(beta)``: E1 + E5 - F5."""
    trial = replace(state, beta_mean=mean, beta_cov=cov)
    return e1(trial, x, prior) + e5(trial) - f5(trial)


def update_beta(state: VBNormalState, x, prior: NormalPrior, backtrack_steps: int = 30):
    """Safeguarded coefficient step; returns ``(mean, cov)``.

    The linearized candidate is blended with the current moments,
    ``theta = theta_old + t (theta_new - theta_old)`` with ``t = 1, 1/2, ...``,
    until the ELBO does not decrease.  A convex combination of SPD matrices
    stays SPD.
    """
    new_mean, new_cov = beta_candidate(state, x, prior)
    old_mean, old_cov = state.beta_mean, state.beta_cov
    base = beta_terms(state, x, prior, old_mean, old_cov)
    t = 1.0
    for _ in range(backtrack_steps):
        mean = old_mean + t * (new_mean - old_mean)
        cov = old_cov + t * (new_cov - old_cov)
        if beta_terms(state, x, prior, mean, cov) >= base:
            return mean, cov
        t *= 0.5
    return old_mean, old_cov


# ELBO pieces: expectations under q of the log joint (E) and of log q (F).

def e0(state: VBNormalState, y) -> float:
    y = np.asarray(y, dtype=float)
    n = y.size
    return (-0.5 * n * _LOG_2PI - 0.5 * state.inv_sigma2 * _expected_sq_resid(state, y)
            - 0.5 * n * state.log_sigma2)


def e1(state: VBNormalState, x, prior: NormalPrior) -> float:
    elp, el1mp = expected_log_probs(x, state.beta_mean, state.beta_cov, prior.link)
    return float(state.alpha @ elp + (1 - state.alpha) @ el1mp)


def _normal_prior_term(m, s_sq, tau_sq) -> float:
    return -0.5 * np.log(2 * np.pi * tau_sq) - 0.5 * (m * m + s_sq) / tau_sq


def e2(state: VBNormalState, prior: NormalPrior) -> float:
    return _normal_prior_term(state.m0, state.s0_sq, prior.tau0_sq)


def e3(state: VBNormalState, prior: NormalPrior) -> float:
    return _normal_prior_term(state.m1, state.s1_sq, prior.tau1_sq)


def e4(state: VBNormalState, prior: NormalPrior) -> float:
    a0, b0 = prior.a0, prior.b0
    return (a0 * np.log(b0) - gammaln(a0) - (a0 + 1) * state.log_sigma2
            - b0 * state.inv_sigma2)


def e5(state: VBNormalState) -> float:
    return _gaussian_prior_term(state.beta_mean, state.beta_cov, state.coef)


def _gaussian_prior_term(mean, cov, coef: CoefPrior) -> float:
    d = mean - coef.location
    prec = coef.precision
    D = mean.size
    return float(-0.5 * D * _LOG_2PI - 0.5 * np.sum(np.log(coef.scales))
                 - 0.5 * (d @ (prec * d) + np.sum(prec * np.diag(cov))))


def f1(state: VBNormalState) -> float:
    a = state.alpha
    return float(np.sum(xlogy(a, a) + xlogy(1 - a, 1 - a)))


def _normal_neg_entropy(s_sq) -> float:
    return -0.5 * _LOG_2PI - 0.5 - 0.5 * np.log(s_sq)


def f2(state: VBNormalState) -> float:
    return _normal_neg_entropy(state.s0_sq)


def f3(state: VBNormalState) -> float:
    return _normal_neg_entropy(state.s1_sq)


def f4(state: VBNormalState) -> float:
    A, B = state.A0, state.B0
    return A * np.log(B) - gammaln(A) - (A + 1) * (np.log(B) - digamma(A)) - A


def _mvn_neg_entropy(cov) -> float:
    D = cov.shape[0]
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise NumericalError("variational covariance is not positive definite")
    return float(-0.5 * D * _LOG_2PI - 0.5 * logdet - 0.5 * D)


def f5(state: VBNormalState) -> float:
    return _mvn_neg_entropy(state.beta_cov)


def elbo_pieces(state: VBNormalState, y, x, prior: NormalPrior) -> dict:
    _check_finite(state)
    return {"E0": e0(state, y), "E1": e1(state, x, prior), "E2": e2(state, prior),
            "E3": e3(state, prior), "E4": e4(state, prior), "E5": e5(state),
            "F1": f1(state), "F2": f2(state), "F3": f3(state), "F4": f4(state),
            "F5": f5(state)}


def elbo_normal(state: VBNormalState, y, x, prior: NormalPrior) -> float:
    p = elbo_pieces(state, y, x, prior)
    return float(sum(v for k, v in p.items() if k[0] == "E")
                 - sum(v for k, v in p.items() if k[0] == "F"))


def _check_finite(state: VBNormalState):
    scalars = [state.m0, state.s0_sq, state.m1, state.s1_sq, state.A0, state.B0]
    if not (np.all(np.isfinite(scalars)) and np.all(np.isfinite(state.alpha))
            and np.all(np.isfinite(state.beta_mean)) and np.all(np.isfinite(state.beta_cov))):
        raise NumericalError("non-finite variational parameter")


def cavi_sweep(state: VBNormalState, y, x, prior: NormalPrior, config: VBConfig) -> VBNormalState:
    state = replace(state, alpha=update_alpha(state, y, x, prior))
    m0, s0, m1, s1 = update_means(state, y, prior)
    state = replace(state, m0=m0, s0_sq=s0, m1=m1, s1_sq=s1)
    A0, B0 = update_sigma2(state, y, prior)
    state = replace(state, A0=A0, B0=B0)
    mean, cov = update_beta(state, x, prior, config.backtrack_steps)
    state = replace(state, beta_mean=mean, beta_cov=cov)
    if config.refresh_scales:
        coef = state.coef.copy()
        coef.df = prior.coef_df
        coef.scales = em_scale_update(mean, coef)
        coef.df = np.inf
        state = replace(state, coef=coef)
    return state


def run_cavi(y, x, prior: NormalPrior | None = None, config: VBConfig | None = None,
             names=None, init: VBNormalState | None = None):
    """Iterate the coordinate updates until the relative ELBO change drops below ``tol``.

    Returns
    -------
    state : VBNormalState
        Final variational parameters with ``elbo_history`` (initial value
        first) and a ``converged`` flag.
    summary : FitSummary
    """
    prior = prior or NormalPrior()
    config = config or VBConfig()
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    start = time.perf_counter()
    state = init if init is not None else initial_state(y, x, prior)
    history = [elbo_normal(state, y, x, prior)]
    converged = False
    for _ in range(config.max_sweeps):
        state = cavi_sweep(state, y, x, prior, config)
        history.append(elbo_normal(state, y, x, prior))
        if abs(history[-1] - history[-2]) < config.tol * abs(history[-2]):
            converged = True
            break
    state = replace(state, elbo_history=history, converged=converged)
    elapsed = time.perf_counter() - start
    return state, variational_summary(state, x, prior, names, elapsed)


def fitted_probs(state: VBNormalState, x, link="logit") -> np.ndarray:
    """``E_q[g^{-1}(x_i' beta)]``."""
    mean, var = linear_predictor_moments(x, state.beta_mean, state.beta_cov)
    return gauss_expect(get_link(link).inverse, mean, var)


def variational_summary(state: VBNormalState, x, prior: NormalPrior, names=None,
                        elapsed: float = 0.0, level: float = 0.95) -> FitSummary:
    """Variational means, sds and equal-tailed quantile bounds."""
    lo_q, hi_q = 0.5 * (1 - level), 0.5 * (1 + level)
    rows = []
    for nm, m, v in (("mu0", state.m0, state.s0_sq), ("mu1", state.m1, state.s1_sq)):
        d = stats.norm(m, np.sqrt(v))
        rows.append(ParamRow(nm, m, np.sqrt(v), d.ppf(lo_q), d.ppf(hi_q)))
    ig = stats.invgamma(state.A0, scale=state.B0)
    rows.append(ParamRow("sigma2", float(ig.mean()), float(ig.std()), ig.ppf(lo_q), ig.ppf(hi_q)))
    D = state.beta_mean.size
    coef_names = list(names) if names is not None else [f"beta[{d}]" for d in range(D)]
    sd = np.sqrt(np.diag(state.beta_cov))
    z = stats.norm.ppf(hi_q)
    for nm, m, s in zip(coef_names, state.beta_mean, sd):
        rows.append(ParamRow(nm, float(m), float(s), float(m - z * s), float(m + z * s)))
    return FitSummary(model="normal", engine="vb", params=rows, membership=state.alpha.copy(),
                      fitted=fitted_probs(state, x, prior.link),
                      deciles=membership_deciles(state.alpha), elapsed=elapsed,
                      converged=state.converged, level=level)
