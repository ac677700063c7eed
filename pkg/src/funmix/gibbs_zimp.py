"""Gibbs sampler for the zero-inflated mixture of two Poissons.

Model::

    y_i | gamma_i = 0 ~ delta_0,  y_i | gamma_i = l ~ Poisson(lambda_l)  (l = 1, 2),
    P(gamma_i = l) = softmax(0, x_i' beta_1, x_i' beta_2)_l,  lambda_1 < lambda_2.

Rates have conjugate gamma priors.  Each coefficient block is updated with
a binary IRLS linearization of its class indicator (anchored and
Metropolis-corrected, which this sampler does by default), where the softmax
probability enters through an offset (see :func:`funmix.glm.linearized_posterior`).
Labels 1 and 2 are reordered after every rate draw so that ``lambda_1 < lambda_2``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidSpecError
from .glm import (CoefPrior, em_scale_update, gaussian_log_prior, linearized_posterior,
                  metropolis_correct, sample_beta, scaled_prior_scales)
from .gibbs_normal import ChainConfig
from .summary import PPC_THRESHOLDS, Trace, stored_count, summarize

ETA_CLAMP = 30.0


@dataclass
class ZimpPrior:
    a1: float = 1.0
    b1: float = 0.1
    a2: float = 1.0
    b2: float = 0.1
    coef_df: float = 1.0
    coef_scale: float = 2.5
    intercept_scale: float = 10.0
    autoscale: bool = True
    link: str = "logit"

    def __post_init__(self):
        for nm in ("a1", "b1", "a2", "b2", "coef_scale", "intercept_scale"):
            if not getattr(self, nm) > 0:
                raise InvalidSpecError(f"{nm} must be positive")
        if self.link != "logit":
            raise InvalidSpecError("the zero-inflated model uses the multinomial logit only")

    def coef_prior(self, x) -> CoefPrior:
        x = np.asarray(x, dtype=float)
        if self.autoscale and x.shape[0] > 1:
            scale = scaled_prior_scales(x, self.coef_scale, self.intercept_scale, "logit")
        else:
            scale = self.coef_scale
        return CoefPrior(x.shape[1], self.coef_df, scale)


@dataclass
class ZimpState:
    lam1: float
    lam2: float
    beta1: np.ndarray
    beta2: np.ndarray
    labels: np.ndarray
    coef1: CoefPrior = field(repr=False, default=None)
    coef2: CoefPrior = field(repr=False, default=None)
    beta1_hat: np.ndarray = None
    beta2_hat: np.ndarray = None
    n_accept: int = 0

    def __post_init__(self):
        if self.beta1_hat is None:
            self.beta1_hat = np.array(self.beta1, dtype=float, copy=True)
        if self.beta2_hat is None:
            self.beta2_hat = np.array(self.beta2, dtype=float, copy=True)

    @property
    def gamma(self) -> np.ndarray:
        """One-hot ``(n, 3)`` view of the labels."""
        return np.eye(3, dtype=int)[self.labels]


def linear_predictors(x, beta1, beta2):
    x = np.asarray(x, dtype=float)
    eta1 = np.clip(x @ beta1, -ETA_CLAMP, ETA_CLAMP)
    eta2 = np.clip(x @ beta2, -ETA_CLAMP, ETA_CLAMP)
    return eta1, eta2


def class_probs(x, beta1, beta2) -> np.ndarray:
    """``(p_i0, p_i1, p_i2)``; a single design row gives shape ``(3,)``."""
    eta1, eta2 = linear_predictors(x, beta1, beta2)
    z = np.stack(np.broadcast_arrays(np.zeros_like(eta1), eta1, eta2), axis=-1)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def label_probs(y, x, lam1, lam2, beta1, beta2) -> np.ndarray:
    """``P(gamma_i = l | rest)`` for ``l = 0, 1, 2`` by log-sum-exp.

    Factorials and the softmax normalizer cancel and are never formed.
    """
    y = np.asarray(y, dtype=float)
    eta1, eta2 = linear_predictors(x, beta1, beta2)
    with np.errstate(divide="ignore"):
        l0 = np.where(y == 0, 0.0, -np.inf)
    l1 = -lam1 + y * np.log(lam1) + eta1
    l2 = -lam2 + y * np.log(lam2) + eta2
    L = np.stack([l0, l1, l2], axis=-1)
    m = L.max(axis=-1, keepdims=True)
    w = np.exp(L - m)
    return w / w.sum(axis=-1, keepdims=True)


def initial_state(y, x, prior: ZimpPrior) -> ZimpState:
    """Zeros to class 0; positives split at their median into classes 1 and 2."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    labels = np.zeros(y.size, dtype=int)
    pos = y > 0
    if pos.any():
        med = np.median(y[pos])
        labels[pos] = np.where(y[pos] > med, 2, 1)
        if not np.any(labels == 2):
            labels[pos & (y == y[pos].max())] = 2
    lam1 = y[labels == 1].mean() if np.any(labels == 1) else 1.0
    lam2 = y[labels == 2].mean() if np.any(labels == 2) else lam1 + 1.0
    if not lam2 > lam1:
        lam2 = lam1 + 1.0
    coef = prior.coef_prior(x)
    D = x.shape[1]
    return ZimpState(float(lam1), float(lam2), np.zeros(D), np.zeros(D), labels,
                     coef, coef.copy())


def sample_gamma_zimp(state: ZimpState, y, x, rng) -> np.ndarray:
    """New labels in ``{0, 1, 2}``; class 0 only where ``y == 0``."""
    r = label_probs(y, x, state.lam1, state.lam2, state.beta1, state.beta2)
    u = rng.random(r.shape[0])
    c = np.cumsum(r, axis=1)
    return (u[:, None] >= c[:, :2]).sum(axis=1)


def lambda_conditionals(y, labels, prior: ZimpPrior):
    """Gamma shape and rate for each rate parameter."""
    y = np.asarray(y, dtype=float)
    g1 = labels == 1
    g2 = labels == 2
    return ((prior.a1 + y[g1].sum(), prior.b1 + g1.sum()),
            (prior.a2 + y[g2].sum(), prior.b2 + g2.sum()))


def relabel(state: ZimpState) -> ZimpState:
    """Swap classes 1 and 2 when ``lambda_1 > lambda_2``."""
    if state.lam1 <= state.lam2:
        return state
    labels = np.where(state.labels == 1, 2, np.where(state.labels == 2, 1, 0))
    return replace(state, lam1=state.lam2, lam2=state.lam1, beta1=state.beta2,
                   beta2=state.beta1, labels=labels, coef1=state.coef2, coef2=state.coef1,
                   beta1_hat=state.beta2_hat, beta2_hat=state.beta1_hat)


def sample_lambdas(state: ZimpState, y, prior: ZimpPrior, rng) -> ZimpState:
    (s1, r1), (s2, r2) = lambda_conditionals(y, state.labels, prior)
    lam1 = rng.gamma(s1, 1.0 / r1)
    lam2 = rng.gamma(s2, 1.0 / r2)
    return relabel(replace(state, lam1=float(lam1), lam2=float(lam2)))


def block_posterior(x, gamma, block: int, eta, eta_other, coef: CoefPrior, block_names=None):
    """Linearized normal conditional of one coefficient block at ``(eta, eta_other)``."""
    return linearized_posterior(x, gamma[:, block], eta, coef, "logit",
                                offset=np.logaddexp(0.0, eta_other), block_names=block_names)


def beta_block_posteriors(state: ZimpState, x, linearize_at: str = "draw"):
    """Linearized normal conditionals of both blocks at the start-of-step point."""
    x = np.asarray(x, dtype=float)
    if linearize_at == "mode":
        eta1, eta2 = linear_predictors(x, state.beta1_hat, state.beta2_hat)
    else:
        eta1, eta2 = linear_predictors(x, state.beta1, state.beta2)
    gamma = state.gamma
    return (block_posterior(x, gamma, 1, eta1, eta2, state.coef1),
            block_posterior(x, gamma, 2, eta2, eta1, state.coef2))


def block_log_target(x, gamma, block: int, other_beta, coef: CoefPrior):
    """Exact conditional log density of one coefficient block, up to a constant."""
    x = np.asarray(x, dtype=float)
    eta_other = np.clip(x @ other_beta, -ETA_CLAMP, ETA_CLAMP)
    g = gamma[:, block]

    def log_target(beta):
        eta = np.clip(x @ beta, -ETA_CLAMP, ETA_CLAMP)
        lse = np.logaddexp(np.logaddexp(0.0, eta), eta_other)
        return float(g @ eta - lse.sum()) + gaussian_log_prior(beta, coef)
    return log_target


def _mh_block(x, gamma, block, beta, other, coef, linearize_at, anchor, anchor_other, rng):
    """Propose one block from its linearization and accept against the exact conditional."""
    clip = lambda v: np.clip(x @ v, -ETA_CLAMP, ETA_CLAMP)
    if linearize_at == "mode":
        post = block_posterior(x, gamma, block, clip(anchor), clip(anchor_other), coef)
    else:
        post = block_posterior(x, gamma, block, clip(beta), clip(other), coef)
    prop = sample_beta(post, rng)
    reverse = None
    if linearize_at == "draw":
        reverse = block_posterior(x, gamma, block, clip(prop), clip(other), coef)
    target = block_log_target(x, gamma, block, other, coef)
    new, acc = metropolis_correct(beta, prop, target, post, reverse, rng)
    return new, post, acc


def sample_betas_zimp(state: ZimpState, x, prior: ZimpPrior, rng,
                      linearize_at: str = "draw", metropolis: bool = True) -> ZimpState:
    """Update both coefficient blocks.

    Without ``metropolis`` both blocks are drawn from their linearized
    conditionals at the start-of-step point.  With it, block 1 and then
    block 2 (given the new block 1) are proposed from their linearizations
    and accepted against the exact conditional.
    """
    x = np.asarray(x, dtype=float)
    gamma = state.gamma
    if metropolis:
        beta1, post1, a1 = _mh_block(x, gamma, 1, state.beta1, state.beta2, state.coef1,
                                     linearize_at, state.beta1_hat, state.beta2_hat, rng)
        beta2, post2, a2 = _mh_block(x, gamma, 2, state.beta2, beta1, state.coef2,
                                     linearize_at, state.beta2_hat, post1.mean, rng)
        n_acc = int(a1) + int(a2)
    else:
        post1, post2 = beta_block_posteriors(state, x, linearize_at)
        beta1 = sample_beta(post1, rng)
        beta2 = sample_beta(post2, rng)
        n_acc = 2
    at_mode = linearize_at == "mode"
    coef1, coef2 = state.coef1.copy(), state.coef2.copy()
    coef1.scales = em_scale_update(post1.mean if at_mode else beta1, state.coef1)
    coef2.scales = em_scale_update(post2.mean if at_mode else beta2, state.coef2)
    return replace(state, beta1=beta1, beta2=beta2, coef1=coef1, coef2=coef2,
                   beta1_hat=post1.mean, beta2_hat=post2.mean,
                   n_accept=state.n_accept + n_acc)


def gibbs_sweep_zimp(state: ZimpState, y, x, prior: ZimpPrior, rng,
                     fix_beta: bool = False, config: ChainConfig | None = None) -> ZimpState:
    config = config or ChainConfig()
    state = replace(state, labels=sample_gamma_zimp(state, y, x, rng))
    state = sample_lambdas(state, y, prior, rng)
    if not fix_beta:
        state = sample_betas_zimp(state, x, prior, rng, config.linearize_at,
                                   config.use_metropolis(True))
    return state


def param_names(dim: int, names=None) -> list:
    coef = list(names) if names is not None else [f"beta[{d}]" for d in range(dim)]
    return ["lam1", "lam2"] + [f"b1:{c}" for c in coef] + [f"b2:{c}" for c in coef]


def run_chain_zimp(y, x, prior: ZimpPrior | None = None, config: ChainConfig | None = None,
                   names=None, init: ZimpState | None = None, fix_beta: bool = False,
                   callback=None) -> Trace:
    """Run one chain; arguments as :func:`funmix.gibbs_normal.run_chain`."""
    prior = prior or ZimpPrior()
    config = config or ChainConfig()
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise InvalidSpecError(f"design shape {x.shape} does not match {y.size} responses")
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise InvalidSpecError("responses must be nonnegative integers")
    rng = np.random.default_rng(config.seed)
    state = init if init is not None else initial_state(y, x, prior)
    if state.coef1 is None:
        coef = prior.coef_prior(x)
        state = replace(state, coef1=coef, coef2=coef.copy())
    n_keep = stored_count(config.iters, config.burnin, config.thin)
    D = x.shape[1]
    draws = np.empty((n_keep, 2 + 2 * D))
    resp = np.empty((n_keep, y.size, 3))
    probs = np.empty((n_keep, y.size, 3))
    k = 0
    start = time.perf_counter()
    for it in range(config.iters):
        state = gibbs_sweep_zimp(state, y, x, prior, rng, fix_beta, config)
        if callback is not None:
            callback(it, state)
        if it >= config.burnin and (it - config.burnin + 1) % config.thin == 0 and k < n_keep:
            draws[k, :2] = state.lam1, state.lam2
            draws[k, 2:2 + D] = state.beta1
            draws[k, 2 + D:] = state.beta2
            resp[k] = label_probs(y, x, state.lam1, state.lam2, state.beta1, state.beta2)
            probs[k] = class_probs(x, state.beta1, state.beta2)
            k += 1
    elapsed = time.perf_counter() - start
    meta = dict(model="zimp", engine="gibbs", seed=config.seed, iters=config.iters,
                burnin=config.burnin, thin=config.thin, stored=n_keep, elapsed=elapsed,
                link="logit", linearize_at=config.linearize_at,
                metropolis=config.use_metropolis(True),
                acceptance=state.n_accept / (2 * config.iters) if not fix_beta else None)
    return Trace(param_names(D, names), draws, resp, probs, meta)


def posterior_predictive_zimp(trace: Trace, rng) -> np.ndarray:
    p = trace.probabilities
    u = rng.random(p.shape[:2])
    labels = (u[..., None] >= np.cumsum(p, axis=-1)[..., :2]).sum(axis=-1)
    lam = np.stack([np.zeros(trace.n_draws), trace.column("lam1"), trace.column("lam2")], 1)
    rates = np.take_along_axis(lam, labels, axis=1)
    return rng.poisson(rates).astype(float)


def summarize_chain_zimp(trace: Trace, y=None, level: float = 0.95, thresholds=None):
    reps = None
    if y is not None:
        reps = posterior_predictive_zimp(trace, np.random.default_rng(trace.meta.get("seed", 0)))
    return summarize(trace, level, y, thresholds or PPC_THRESHOLDS, reps, engine="gibbs")
