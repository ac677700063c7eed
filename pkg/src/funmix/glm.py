"""Prior-regularized binary regression step shared by all four engines.

The membership regression is handled as in weakly informative Bayesian
logistic regression: the likelihood is linearized around a current fit
(pseudo-data plus IRLS weights), combined with an independent normal prior
on every coefficient, and the per-coefficient prior variances are refreshed
by an approximate EM step that realizes a Student-t prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit, log_ndtr, logit, ndtr, ndtri

from .errors import InvalidSpecError, NumericalError

P_CLIP = 1e-8
_SQRT_2PI = np.sqrt(2.0 * np.pi)


class Link:
    """Binary link ``g`` with inverse, derivative and log-probabilities."""

    name = "link"

    def __call__(self, p):
        raise NotImplementedError

    def inverse(self, eta):
        raise NotImplementedError

    def deriv(self, p):
        """``g'(p)``."""
        raise NotImplementedError

    def log_inverse(self, eta):
        """``log g^{-1}(eta)``, stable for large ``|eta|``."""
        raise NotImplementedError

    def log1m_inverse(self, eta):
        """``log(1 - g^{-1}(eta))``."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class LogitLink(Link):
    name = "logit"

    def __call__(self, p):
        return logit(p)

    def inverse(self, eta):
        return expit(eta)

    def deriv(self, p):
        return 1.0 / (p * (1.0 - p))

    def log_inverse(self, eta):
        return -np.logaddexp(0.0, -eta)

    def log1m_inverse(self, eta):
        return -np.logaddexp(0.0, eta)


class ProbitLink(Link):
    name = "probit"

    def __call__(self, p):
        return ndtri(p)

    def inverse(self, eta):
        return ndtr(eta)

    def deriv(self, p):
        z = ndtri(p)
        return _SQRT_2PI * np.exp(0.5 * z * z)

    def log_inverse(self, eta):
        return log_ndtr(eta)

    def log1m_inverse(self, eta):
        return log_ndtr(-eta)


LINKS = {"logit": LogitLink(), "probit": ProbitLink()}


def get_link(link) -> Link:
    if isinstance(link, Link):
        return link
    try:
        return LINKS[link]
    except KeyError:
        raise InvalidSpecError(f"unknown link {link!r}; choose from {sorted(LINKS)}") from None


def clip_prob(p):
    return np.clip(p, P_CLIP, 1.0 - P_CLIP)


def pseudo_data(p_hat, target, link="logit"):
    """Working response ``g(p) + (target - p) g'(p)`` at the clipped ``p_hat``."""
    link = get_link(link)
    p = clip_prob(np.asarray(p_hat, dtype=float))
    return link(p) + (np.asarray(target, dtype=float) - p) * link.deriv(p)


def irls_weight(p_hat, link="logit"):
    """IRLS weight ``1 / (g'(p)^2 p (1 - p))`` at the clipped ``p_hat``."""
    link = get_link(link)
    p = clip_prob(np.asarray(p_hat, dtype=float))
    d = link.deriv(p)
    return 1.0 / (d * d * p * (1.0 - p))


@dataclass
class CoefPrior:
    """Independent normal prior per coefficient with EM-refreshed variances.

    ``df=inf`` keeps the variances fixed at ``scale**2`` (Gaussian prior);
    finite ``df`` turns the EM refresh into a Student-t prior (``df=1`` is
    Cauchy).  ``scale`` may be a scalar or one value per coefficient.
    """

    dim: int
    df: float = 1.0
    scale: np.ndarray | float = 2.5
    location: np.ndarray | float = 0.0
    scales: np.ndarray = field(default=None)

    def __post_init__(self):
        self.scale = np.broadcast_to(np.asarray(self.scale, dtype=float), (self.dim,)).copy()
        self.location = np.broadcast_to(
            np.asarray(self.location, dtype=float), (self.dim,)).copy()
        if self.scales is None:
            self.scales = self.scale ** 2
        self.scales = np.asarray(self.scales, dtype=float).copy()
        if not self.df >= 1:
            raise InvalidSpecError(f"prior degrees of freedom must be >= 1, got {self.df}")
        if np.any(self.scale <= 0) or np.any(self.scales <= 0):
            raise InvalidSpecError("prior scales must be positive")

    def copy(self) -> "CoefPrior":
        return CoefPrior(self.dim, self.df, self.scale.copy(), self.location.copy(),
                         self.scales.copy())

    @property
    def precision(self) -> np.ndarray:
        return 1.0 / self.scales


def scaled_prior_scales(x: np.ndarray, scale: float = 2.5, intercept_scale: float = 10.0,
                        link="logit") -> np.ndarray:
    """Per-column prior scales adapted to the spread of each design column.

    Constant columns (the intercept) get ``intercept_scale``; two-valued
    columns get ``scale / range``; others ``scale / (2 sd)``.  Probit scales
    are shrunk by 1.6 to match the logit-probit scale ratio.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape[1])
    for d in range(x.shape[1]):
        col = x[:, d]
        rng = np.ptp(col)
        if rng == 0:
            out[d] = intercept_scale
        elif np.unique(col).size == 2:
            out[d] = scale / rng
        else:
            out[d] = scale / (2.0 * col.std(ddof=1))
    if get_link(link).name == "probit":
        out /= 1.6
    return out


@dataclass
class BetaPosterior:
    """Normal law ``N(mean, cov)``; ``chol`` is any factor with ``chol @ chol.T == cov``."""

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(repr=False, default=None)
    prec_chol: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.chol is None:
            try:
                self.chol = linalg.cholesky(self.cov, lower=True)
            except linalg.LinAlgError as exc:
                raise NumericalError(f"posterior covariance is not SPD: {exc}") from None


def beta_posterior(x, psi, W, prior: CoefPrior, block_names=None) -> BetaPosterior:
    """Normal full conditional of the coefficients under the linearized likelihood.

    Covariance ``(x' W x + S^-1)^-1`` and mean ``cov (x' W psi + S^-1 mu)``
    with ``S = diag(prior.scales)``.
    """
    x = np.asarray(x, dtype=float)
    W = np.asarray(W, dtype=float)
    prec = prior.precision
    xw = x * W[:, None]
    Q = x.T @ xw
    Q[np.diag_indices_from(Q)] += prec
    rhs = xw.T @ np.asarray(psi, dtype=float) + prec * prior.location
    if not np.all(np.isfinite(Q)) or not np.all(np.isfinite(rhs)):
        raise NumericalError("linearized system has non-finite entries")
    try:
        L = linalg.cholesky(Q, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise NumericalError(_spd_message(Q, block_names)) from None
    Linv = linalg.solve_triangular(L, np.eye(len(rhs)), lower=True, check_finite=False)
    cov = Linv.T @ Linv
    return BetaPosterior(cov @ rhs, cov, Linv.T, L)


def _spd_message(Q, block_names):
    eigval, eigvec = np.linalg.eigh(Q)
    worst = int(np.argmax(np.abs(eigvec[:, 0])))
    where = block_names[worst] if block_names is not None else f"coefficient {worst}"
    return (f"linearized system is not positive definite (min eigenvalue {eigval[0]:.3g}); "
            f"offending direction loads on {where}")


def em_scale_update(beta_hat, prior: CoefPrior) -> np.ndarray:
    """EM refresh ``(beta_d^2 + df s_d^2) / (1 + df)``; unchanged for ``df=inf``."""
    if np.isinf(prior.df):
        return prior.scale ** 2
    b = np.asarray(beta_hat, dtype=float) - prior.location
    return (b * b + prior.df * prior.scale ** 2) / (1.0 + prior.df)


def sample_beta(post: BetaPosterior, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(post.mean.shape[0])
    return post.mean + post.chol @ z


def gaussian_log_prior(beta, prior: CoefPrior) -> float:
    """Log density of the current normal prior, up to a constant."""
    d = np.asarray(beta, dtype=float) - prior.location
    return float(-0.5 * np.sum(d * d / prior.scales))


def gaussian_logpdf(post: BetaPosterior, b) -> float:
    """Log density of ``N(post.mean, post.cov)`` at ``b``, up to ``-D/2 log(2 pi)``."""
    d = np.asarray(b, dtype=float) - post.mean
    if post.prec_chol is not None:
        z = post.prec_chol.T @ d
        return -0.5 * float(z @ z) + float(np.sum(np.log(np.diag(post.prec_chol))))
    z = np.linalg.solve(post.chol, d)
    return -0.5 * float(z @ z) - np.linalg.slogdet(post.chol)[1]


def metropolis_correct(current, proposal, log_target, forward: BetaPosterior,
                       reverse: BetaPosterior | None, rng):
    """Metropolis-Hastings accept step for a Gaussian proposal.

    ``forward`` is the law the proposal was drawn from and ``reverse`` the law
    that would propose ``current`` from ``proposal`` (``None`` for an
    independence proposal).  ``log_target`` evaluates the exact conditional
    log density up to a constant.  Returns ``(beta, accepted)``.
    """
    reverse = forward if reverse is None else reverse
    log_r = (log_target(proposal) - log_target(current)
             + gaussian_logpdf(reverse, current) - gaussian_logpdf(forward, proposal))
    if np.log(rng.random()) < log_r:
        return proposal, True
    return current, False


def linearized_posterior(x, target, eta, prior: CoefPrior, link="logit", offset=None,
                         block_names=None) -> BetaPosterior:
    """One IRLS linearization at the linear predictor ``eta``.

    ``offset`` is added to the working response when the class probability
    is a softmax component rather than a plain inverse link; it holds the
    part of ``eta`` not explained by ``g(p_hat)``.
    """
    link = get_link(link)
    p_hat = link.inverse(eta) if offset is None else expit(eta - offset)
    psi = pseudo_data(p_hat, target, link)
    if offset is not None:
        psi = psi + offset
    W = irls_weight(p_hat, link)
    return beta_posterior(x, psi, W, prior, block_names)
