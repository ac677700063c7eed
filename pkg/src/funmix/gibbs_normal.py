"""Gibbs sampler for the two-component normal mixture with covariate-driven membership.

Model::

    y_i | gamma_i ~ N(mu_{gamma_i}, sigma^2),  gamma_i ~ Bernoulli(p_i),
    g(p_i) = x_i' beta,  mu_1 > mu_0.

Component means get independent normal priors restricted to ``mu_1 > mu_0``,
``sigma^2`` an inverse-gamma prior, and ``beta`` the EM-refreshed t prior of
:mod:`funmix.glm`.  The coefficient step draws from one IRLS linearization
around the previous draw (optionally a running mode estimate) and, on
request, accepts that draw by a Metropolis-Hastings test against the exact
conditional given the labels.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ConfigError, InvalidSpecError
from .glm import (CoefPrior, em_scale_update, gaussian_log_prior, get_link, linearized_posterior,
                  metropolis_correct, sample_beta,
                  scaled_prior_scales)
from .summary import Trace, stored_count, summarize

@dataclass
class NormalPrior:
    """Hyperparameters of the normal mixture.

    With ``autoscale`` the coefficient scales are adapted per design column
    (see :func:`funmix.glm.scaled_prior_scales`); otherwise every
    coefficient gets ``coef_scale``.
    """

    tau0_sq: float = 100.0
    tau1_sq: float = 100.0
    a0: float = 1.0
    b0: float = 1.0
    coef_df: float = 1.0
    coef_scale: float = 2.5
    intercept_scale: float = 10.0
    autoscale: bool = True
    link: str = "logit"

    def __post_init__(self):
        for nm in ("tau0_sq", "tau1_sq", "a0", "b0", "coef_scale", "intercept_scale"):
            if not getattr(self, nm) > 0:
                raise InvalidSpecError(f"{nm} must be positive")
        get_link(self.link)

    def coef_prior(self, x) -> CoefPrior:
        x = np.asarray(x, dtype=float)
        if self.autoscale and x.shape[0] > 1:
            scale = scaled_prior_scales(x, self.coef_scale, self.intercept_scale, self.link)
        else:
            scale = self.coef_scale
        return CoefPrior(x.shape[1], self.coef_df, scale)


@dataclass
class ChainConfig:
    iters: int = 15000
    burnin: int = 10000
    thin: int = 100
    seed: int = 0
    linearize_at: str = "draw"
    metropolis: bool | None = None

    def use_metropolis(self, default: bool) -> bool:
        """The ``metropolis`` flag, or the engine's ``default`` when unset."""
        return default if self.metropolis is None else bool(self.metropolis)

    def __post_init__(self):
        if self.linearize_at not in ("mode", "draw"):
            raise ConfigError(f"linearize_at must be 'mode' or 'draw', got {self.linearize_at!r}")
        if not (int(self.iters) == self.iters and int(self.burnin) == self.burnin):
            raise ConfigError("iters and burnin must be integers")
        if self.burnin < 0 or self.iters <= self.burnin:
            raise ConfigError(f"need iters > burnin >= 0, got {self.iters}, {self.burnin}")
        if self.thin < 1:
            raise ConfigError(f"thin must be >= 1, got {self.thin}")


@dataclass
class NormalState:
    mu0: float
    mu1: float
    sigma2: float
    beta: np.ndarray
    gamma: np.ndarray
    coef: CoefPrior = field(repr=False, default=None)
    beta_hat: np.ndarray = None
    n_accept: int = 0

    def __post_init__(self):
        if self.beta_hat is None:
            self.beta_hat = np.array(self.beta, dtype=float, copy=True)

    def check(self):
        if not self.mu1 > self.mu0:
            raise InvalidSpecError(f"need mu1 > mu0, got {self.mu0}, {self.mu1}")
        if not self.sigma2 > 0:
            raise InvalidSpecError("sigma2 must be positive")


def initial_state(y, x, prior: NormalPrior) -> NormalState:
    """Median split of the responses; within-group means; pooled variance; ``beta = 0``."""
    y = np.asarray(y, dtype=float)
    gamma = (y > np.median(y)).astype(int)
    if gamma.all() or not gamma.any():
        gamma = np.zeros(y.size, dtype=int)
        gamma[np.argmax(y)] = 1
    mu0 = y[gamma == 0].mean()
    mu1 = y[gamma == 1].mean()
    if not mu1 > mu0:
        mu1 = mu0 + 1.0
    resid = np.where(gamma == 1, y - mu1, y - mu0)
    sigma2 = float(resid @ resid / max(y.size - 2, 1))
    if not sigma2 > 0:
        sigma2 = float(np.var(y)) if np.var(y) > 0 else 1.0
    x = np.asarray(x, dtype=float)
    return NormalState(float(mu0), float(mu1), sigma2, np.zeros(x.shape[1]), gamma,
                       prior.coef_prior(x))


def membership_probs(x, beta, link="logit") -> np.ndarray:
    return get_link(link).inverse(np.asarray(x, dtype=float) @ beta)


def gamma_probs(y, p, mu0, mu1, sigma2) -> np.ndarray:
    """``P(gamma_i = 1 | rest)``, normalized in log space so extreme outliers give no 0/0."""
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        l1 = np.log(p) - 0.5 * (y - mu1) ** 2 / sigma2
        l0 = np.log1p(-p) - 0.5 * (y - mu0) ** 2 / sigma2
    return np.exp(l1 - np.logaddexp(l1, l0))


def sample_gamma(state: NormalState, y, x, prior: NormalPrior, rng) -> np.ndarray:
    p = membership_probs(x, state.beta, prior.link)
    r = gamma_probs(y, p, state.mu0, state.mu1, state.sigma2)
    return (rng.random(r.size) < r).astype(int)


def mean_conditional(y, gamma, sigma2, tau_sq, component: int) -> tuple[float, float]:
    """Untruncated conjugate mean and variance of ``mu_component``."""
    y = np.asarray(y, dtype=float)
    w = gamma if component == 1 else 1 - gamma
    n_l = float(np.sum(w))
    var = 1.0 / (1.0 / tau_sq + n_l / sigma2)
    mean = var * float(w @ y) / sigma2
    return mean, var


def _std_normal_above(a: float, rng) -> float:
    """Standard normal restricted to ``(a, inf)``."""
    if a < 5.0:
        # Inverse CDF on the upper tail keeps precision for a > 0.
        u = rng.random()
        return float(-ndtri(u * ndtr(-a)))
    # Far tail: exponential proposal with rate a (accepts with prob. > 0.96).
    while True:
        z = a + rng.exponential(1.0 / a)
        if rng.random() < np.exp(-0.5 * (z - a) ** 2):
            return float(z)


def truncated_normal_draw(mean, var, lower=-np.inf, upper=np.inf, rng=None) -> float:
    """One draw from ``N(mean, var)`` restricted to a half-line.

    Exactly one of ``lower``, ``upper`` may be finite.
    """
    sd = np.sqrt(var)
    if np.isfinite(lower) and np.isfinite(upper):
        raise InvalidSpecError("only one-sided truncation is supported")
    if np.isfinite(lower):
        return mean + sd * _std_normal_above((lower - mean) / sd, rng)
    if np.isfinite(upper):
        return mean - sd * _std_normal_above((mean - upper) / sd, rng)
    return mean + sd * float(rng.standard_normal())


def sample_means(state: NormalState, y, prior: NormalPrior, rng) -> tuple[float, float]:
    """Draw ``mu_0 | mu_1`` on ``(-inf, mu_1)`` then ``mu_1 | mu_0`` on ``(mu_0, inf)``.

    An empty component reduces the conditional to its (truncated) prior.
    """
    m0, v0 = mean_conditional(y, state.gamma, state.sigma2, prior.tau0_sq, 0)
    mu0 = truncated_normal_draw(m0, v0, -np.inf, state.mu1, rng)
    m1, v1 = mean_conditional(y, state.gamma, state.sigma2, prior.tau1_sq, 1)
    mu1 = truncated_normal_draw(m1, v1, mu0, np.inf, rng)
    return mu0, mu1


def sigma2_conditional(y, gamma, mu0, mu1, prior: NormalPrior) -> tuple[float, float]:
    """Inverse-gamma shape and rate: component residuals only."""
    y = np.asarray(y, dtype=float)
    resid = np.where(np.asarray(gamma) == 1, y - mu1, y - mu0)
    return prior.a0 + 0.5 * y.size, prior.b0 + 0.5 * float(resid @ resid)


def sample_sigma2(state: NormalState, y, prior: NormalPrior, rng) -> float:
    shape, rate = sigma2_conditional(y, state.gamma, state.mu0, state.mu1, prior)
    return rate / rng.gamma(shape)


def beta_log_target(x, gamma, link, coef: CoefPrior):
    """Exact conditional log density of ``beta`` given hard labels, up to a constant."""
    link = get_link(link)

    def log_target(beta):
        eta = x @ beta
        ll = np.where(gamma == 1, link.log_inverse(eta), link.log1m_inverse(eta))
        return float(ll.sum()) + gaussian_log_prior(beta, coef)
    return log_target


def sample_beta_step(state: NormalState, x, prior: NormalPrior, rng, block_names=None,
                     linearize_at: str = "draw", metropolis: bool = False):
    """One IRLS step, one draw of ``beta`` and one EM refresh of the prior scales.

    With ``linearize_at="mode"`` the linearization point is the mean of the
    previous step (a warm-started mode iteration that the draws never feed
    into) and the EM refresh uses that mean.  With ``"draw"`` both use the
    previous draw.  With ``metropolis`` the normal draw is a proposal
    accepted against the exact conditional given the labels; this sampler
    leaves it off unless :attr:`ChainConfig.metropolis` asks for it.

    Returns
    -------
    beta, beta_hat, coef, accepted
    """
    x = np.asarray(x, dtype=float)
    coef = state.coef
    anchor = state.beta_hat if linearize_at == "mode" else state.beta
    post = linearized_posterior(x, state.gamma, x @ anchor, coef, prior.link,
                                block_names=block_names)
    beta = sample_beta(post, rng)
    accepted = True
    if metropolis:
        target = beta_log_target(x, state.gamma, prior.link, coef)
        reverse = None
        if linearize_at == "draw":
            reverse = linearized_posterior(x, state.gamma, x @ beta, coef, prior.link,
                                           block_names=block_names)
        beta, accepted = metropolis_correct(state.beta, beta, target, post, reverse, rng)
    new_coef = coef.copy()
    new_coef.scales = em_scale_update(post.mean if linearize_at == "mode" else beta, coef)
    return beta, post.mean, new_coef, accepted


def gibbs_sweep(state: NormalState, y, x, prior: NormalPrior, rng, fix_beta: bool = False,
                block_names=None, config: ChainConfig | None = None) -> NormalState:
    """One sweep in the order gamma, means, variance, coefficients."""
    config = config or ChainConfig()
    gamma = sample_gamma(state, y, x, prior, rng)
    state = replace(state, gamma=gamma)
    mu0, mu1 = sample_means(state, y, prior, rng)
    state = replace(state, mu0=mu0, mu1=mu1)
    state = replace(state, sigma2=sample_sigma2(state, y, prior, rng))
    if not fix_beta:
        beta, beta_hat, coef, acc = sample_beta_step(state, x, prior, rng, block_names,
                                                     config.linearize_at,
                                                     config.use_metropolis(False))
        state = replace(state, beta=beta, beta_hat=beta_hat, coef=coef,
                        n_accept=state.n_accept + int(acc))
    return state


def param_names(dim: int, names=None) -> list:
    coef = list(names) if names is not None else [f"beta[{d}]" for d in range(dim)]
    return ["mu0", "mu1", "sigma2"] + coef


def run_chain(y, x, prior: NormalPrior | None = None, config: ChainConfig | None = None,
              names=None, init: NormalState | None = None, fix_beta: bool = False,
              callback=None) -> Trace:
    """Run one chain and keep every ``thin``-th draw after ``burnin``.

    Parameters
    ----------
    y : array_like, shape (n,)
    x : array_like, shape (n, D)
        Design matrix including the intercept column.
    names : list of str, optional
        Coefficient names used in the trace header.
    fix_beta : bool
        Hold the coefficients at their initial value (testing hook).
    callback : callable, optional
        Called as ``callback(it, state)`` after every sweep.
    """
    prior = prior or NormalPrior()
    config = config or ChainConfig()
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise InvalidSpecError(f"design shape {x.shape} does not match {y.size} responses")
    rng = np.random.default_rng(config.seed)
    state = init if init is not None else initial_state(y, x, prior)
    if state.coef is None:
        state = replace(state, coef=prior.coef_prior(x))
    n_keep = stored_count(config.iters, config.burnin, config.thin)
    D = x.shape[1]
    draws = np.empty((n_keep, 3 + D))
    resp = np.empty((n_keep, y.size))
    probs = np.empty((n_keep, y.size))
    k = 0
    start = time.perf_counter()
    for it in range(config.iters):
        state = gibbs_sweep(state, y, x, prior, rng, fix_beta, names, config)
        if callback is not None:
            callback(it, state)
        if it >= config.burnin and (it - config.burnin + 1) % config.thin == 0 and k < n_keep:
            p = membership_probs(x, state.beta, prior.link)
            draws[k, :3] = state.mu0, state.mu1, state.sigma2
            draws[k, 3:] = state.beta
            resp[k] = gamma_probs(y, p, state.mu0, state.mu1, state.sigma2)
            probs[k] = p
            k += 1
    elapsed = time.perf_counter() - start
    meta = dict(model="normal", engine="gibbs", seed=config.seed, iters=config.iters,
                burnin=config.burnin, thin=config.thin, stored=n_keep, elapsed=elapsed,
                link=prior.link, linearize_at=config.linearize_at,
                metropolis=config.use_metropolis(False),
                acceptance=state.n_accept / config.iters if not fix_beta else None)
    return Trace(param_names(D, names), draws, resp, probs, meta)


def posterior_predictive(trace: Trace, rng) -> np.ndarray:
    """One replicate data set per stored draw, shape ``(n_draws, n)``."""
    p = trace.probabilities
    gamma = rng.random(p.shape) < p
    mu = np.where(gamma, trace.column("mu1")[:, None], trace.column("mu0")[:, None])
    sd = np.sqrt(trace.column("sigma2"))[:, None]
    return mu + sd * rng.standard_normal(p.shape)


def summarize_chain(trace: Trace, y=None, level: float = 0.95, thresholds=None):
    """Summary with a posterior-predictive table seeded from the trace metadata."""
    from .summary import PPC_THRESHOLDS
    reps = None
    if y is not None:
        reps = posterior_predictive(trace, np.random.default_rng(trace.meta.get("seed", 0)))
    return summarize(trace, level, y, thresholds or PPC_THRESHOLDS, reps, engine="gibbs")
