"""Simulation scenarios and evaluation metrics.

Two scenarios are provided.

* ``study1`` draws segregating curves: each subject carries a latent
  template label, and its two curves are noisy, amplitude-perturbed copies
  of the template for that label.  The weights are compact bumps, so the
  linear predictors separate the templates.
* ``study2`` draws non-segregating curves as random cubic B-spline
  expansions with 13 coefficients on 9 equally spaced knots.

In both, the linear predictors are grid sums ``sum_t w(t) X(t)``; the class
probabilities are then the logistic (two-component model) or the softmax
with class 0 as baseline (zero-inflated model).

Study 1 convention
------------------
Grids: ``T = [16, 60]`` with 45 points, ``S = [0, 1]`` with 30 points.

Weights::

    w1(t) = (1 - ((t - 38) / 14)^2)^2           for |t - 38| < 14, else 0
    w2(s) = sin(2 pi s) * (1 - (2s - 1)^2)      on [0, 1]

with ``w1' = 0.5 w1`` and ``w2' = -0.25 w2`` driving the second predictor.

Templates, for a label with amplitudes ``(A, B)`` and level ``c``::

    X1(t) = A * u1(t),   u1 = logistic((t - 38) / 4),       sum_t w1 u1 = 1
    X2(s) = B * u2(s) + c,   u2(s) = sin(2 pi s),           sum_s w2 u2 = 1

so the template contributes ``A`` and ``B`` to the two sums (``w2`` is odd
about ``s = 1/2``, so the level ``c`` does not).  Each subject scales its
template by ``1 + xi_i`` with ``xi_i ~ N(0, 0.25)`` and adds pointwise
``N(0, 0.1^2)`` noise.  The template label is uniform over the labels in
:data:`STUDY1_TEMPLATES`; the class label is then drawn from the implied
probabilities, so it agrees with the template only most of the time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .bspline import Domain, eval_basis, make_knots
from .errors import InvalidSpecError

ETA_CLAMP = 30.0

# (A, B, level) per template label.
STUDY1_TEMPLATES = {
    "normal": {0: (-1.25, -0.5, -1.0), 1: (1.25, 0.5, 1.0)},
    "zimp": {0: (-6.0, 0.0, 0.0), 1: (4.0, 4.0, 1.5), 2: (8.0, -6.0, -1.5)},
}
STUDY1_AMP_SD = 0.5
STUDY1_NOISE_SD = 0.1


@dataclass
class ScenarioConfig:
    scenario: str = "study1"
    model: str = "normal"
    n: int = 100
    base_n: int = 500
    mu0: float = 0.0
    mu1: float = 9.0
    sigma2: float = 18.0
    lam1: float | None = None
    lam2: float | None = None
    zero_weights: bool = False

    def __post_init__(self):
        if self.scenario not in ("study1", "study2"):
            raise InvalidSpecError(f"unknown scenario {self.scenario!r}")
        if self.model not in ("normal", "zimp"):
            raise InvalidSpecError(f"unknown model {self.model!r}")
        if self.n <= 0:
            raise InvalidSpecError("n must be positive")
        if self.lam1 is None:
            self.lam1 = 2.0
        if self.lam2 is None:
            self.lam2 = 10.0 if self.scenario == "study1" else 8.5

    @property
    def grids(self):
        if self.scenario == "study1":
            return np.linspace(16.0, 60.0, 45), np.linspace(0.0, 1.0, 30)
        return np.linspace(0.0, 10.0, 256), np.linspace(0.0, 1.0, 256)

    @property
    def domains(self):
        if self.scenario == "study1":
            return Domain(16.0, 60.0), Domain(0.0, 1.0)
        return Domain(0.0, 10.0), Domain(0.0, 1.0)


@dataclass
class SimulatedDataset:
    """Responses, true labels and probabilities, curves and true weights.

    ``probs`` has two columns ``(p_i0, p_i1)`` for the normal model and three
    ``(p_i0, p_i1, p_i2)`` for the zero-inflated model; ``gamma`` holds the
    class label per subject.
    """

    model: str
    y: np.ndarray
    gamma: np.ndarray
    probs: np.ndarray
    grids: list
    curves: list
    weights: dict = field(default_factory=dict)
    subject_ids: np.ndarray = None
    template: np.ndarray = None

    def __post_init__(self):
        if self.subject_ids is None:
            self.subject_ids = np.arange(self.y.size)

    @property
    def n(self) -> int:
        return self.y.size

    def subset(self, idx) -> "SimulatedDataset":
        idx = np.asarray(idx)
        return SimulatedDataset(
            self.model, self.y[idx], self.gamma[idx], self.probs[idx], self.grids,
            [c[idx] for c in self.curves], self.weights, self.subject_ids[idx],
            None if self.template is None else self.template[idx])


def mixture_probs(eta1, eta2=None, model: str = "normal") -> np.ndarray:
    """Class probabilities from linear predictors.

    ``model="normal"`` gives ``(1 - p, p)`` with ``p = expit(eta1)``;
    ``model="zimp"`` gives the softmax over ``(0, eta1, eta2)``.
    """
    eta1 = np.clip(np.asarray(eta1, dtype=float), -ETA_CLAMP, ETA_CLAMP)
    if model == "normal":
        p = expit(eta1)
        return np.stack([1.0 - p, p], axis=-1)
    if model != "zimp":
        raise InvalidSpecError(f"unknown model {model!r}")
    if eta2 is None:
        raise InvalidSpecError("zimp probabilities need two linear predictors")
    eta2 = np.clip(np.asarray(eta2, dtype=float), -ETA_CLAMP, ETA_CLAMP)
    z = np.stack(np.broadcast_arrays(np.zeros_like(eta1), eta1, eta2), axis=-1)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def study1_weights(t, s):
    r = (t - 38.0) / 14.0
    w1 = np.where(np.abs(r) < 1, (1 - r * r) ** 2, 0.0)
    w2 = np.sin(2 * np.pi * s) * (1 - (2 * s - 1) ** 2)
    return w1, w2


def study1_shapes(t, s):
    w1, w2 = study1_weights(t, s)
    u1 = expit((t - 38.0) / 4.0)
    u2 = np.sin(2 * np.pi * s)
    return u1 / (w1 @ u1), u2 / (w2 @ u2)


def _draw_responses(model, probs, cfg: ScenarioConfig, rng):
    n = probs.shape[0]
    u = rng.random(n)
    gamma = (u[:, None] > np.cumsum(probs, axis=1)[:, :-1]).sum(axis=1)
    if model == "normal":
        e = rng.normal(0.0, np.sqrt(cfg.sigma2), n)
        y = np.where(gamma == 1, cfg.mu1, cfg.mu0) + e
    else:
        lam = np.array([0.0, cfg.lam1, cfg.lam2])
        y = rng.poisson(lam[gamma]).astype(float)
    return y, gamma


def _predictors(cfg: ScenarioConfig, w1, w2, X1, X2):
    if cfg.zero_weights:
        w1 = np.zeros_like(w1)
        w2 = np.zeros_like(w2)
    eta1 = X1 @ w1 + X2 @ w2
    eta2 = X1 @ (0.5 * w1) + X2 @ (-0.25 * w2)
    return mixture_probs(eta1, eta2 if cfg.model == "zimp" else None, cfg.model), w1, w2


def gen_study1(config: ScenarioConfig, rng) -> SimulatedDataset:
    """Segregating-curve scenario; nested across ``n`` for a fixed seed."""
    cfg = config
    t, s = cfg.grids
    base = max(cfg.base_n, cfg.n)
    templates = STUDY1_TEMPLATES[cfg.model]
    labels = rng.integers(0, len(templates), base)
    amp = np.array([templates[k] for k in range(len(templates))])[labels]
    scale = 1.0 + rng.normal(0.0, STUDY1_AMP_SD, base)
    u1, u2 = study1_shapes(t, s)
    X1 = scale[:, None] * amp[:, :1] * u1 + rng.normal(0, STUDY1_NOISE_SD, (base, t.size))
    X2 = (scale[:, None] * amp[:, 1:2] * u2 + amp[:, 2:3]
          + rng.normal(0, STUDY1_NOISE_SD, (base, s.size)))
    w1, w2 = study1_weights(t, s)
    probs, w1, w2 = _predictors(cfg, w1, w2, X1, X2)
    y, gamma = _draw_responses(cfg.model, probs, cfg, rng)
    full = SimulatedDataset(cfg.model, y, gamma, probs, [t, s], [X1, X2],
                            {"w1": w1, "w2": w2}, np.arange(base), labels)
    order = rng.permutation(base)
    return full.subset(order[:cfg.n])


def nested_study1(config: ScenarioConfig, sizes, seed) -> dict:
    """Datasets for several sizes sharing one base draw (smaller ones nested)."""
    out = {}
    for n in sizes:
        cfg = ScenarioConfig(**{**config.__dict__, "n": n, "base_n": max(max(sizes), config.base_n)})
        out[n] = gen_study1(cfg, np.random.default_rng(seed))
    return out


def study2_weights(t, s):
    w1 = -norm.pdf(t, 2.0, 0.5) + norm.pdf(t, 7.5, 0.5)
    w2 = 2.0 * np.sin(10.0 * s * np.pi / 3.0)
    return w1, w2


def gen_study2(config: ScenarioConfig, rng) -> SimulatedDataset:
    """Random B-spline curves: ``C = Z U`` with 13 coefficients per curve."""
    cfg = config
    t, s = cfg.grids
    dom_t, dom_s = cfg.domains
    K = 13
    B1 = eval_basis(make_knots(dom_t, K), t)
    B2 = eval_basis(make_knots(dom_s, K), s)
    Z1 = rng.normal(0.1, 1.0, (cfg.n, K))
    Z2 = rng.normal(0.0, 1.0, (cfg.n, K))
    U1 = rng.random((K, K))
    U2 = rng.random((K, K))
    C1, C2 = Z1 @ U1, Z2 @ U2
    X1, X2 = C1 @ B1.T, C2 @ B2.T
    w1, w2 = study2_weights(t, s)
    probs, w1, w2 = _predictors(cfg, w1, w2, X1, X2)
    y, gamma = _draw_responses(cfg.model, probs, cfg, rng)
    return SimulatedDataset(cfg.model, y, gamma, probs, [t, s], [X1, X2],
                            {"w1": w1, "w2": w2, "C1": C1, "C2": C2})


def generate(config: ScenarioConfig, rng) -> SimulatedDataset:
    if config.scenario == "study1":
        return gen_study1(config, rng)
    return gen_study2(config, rng)


def metric_mse(p_true, p_hat) -> float:
    """Mean over subjects (and replicates) of ``(1/L) sum_l (p_il - p_hat_il)^2``."""
    p_true = np.asarray(p_true, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    if p_true.shape != p_hat.shape:
        raise InvalidSpecError(f"shape mismatch {p_true.shape} vs {p_hat.shape}")
    return float(np.mean((p_true - p_hat) ** 2))


def metric_mr_normal(gamma_true, p_hat, p: float = 0.5) -> float:
    """Fraction of subjects with ``I(p_hat_i > p) != gamma_i``."""
    gamma_true = np.asarray(gamma_true)
    p_hat = np.asarray(p_hat, dtype=float)
    if gamma_true.shape != p_hat.shape:
        raise InvalidSpecError(f"shape mismatch {gamma_true.shape} vs {p_hat.shape}")
    return float(np.mean((p_hat > p).astype(int) != gamma_true))


def metric_mr_zimp(labels_true, alpha_hat) -> float:
    """Mean ``|L_i - argmax_l alpha_il|``; ties go to the lower label."""
    alpha_hat = np.asarray(alpha_hat, dtype=float)
    labels_true = np.asarray(labels_true)
    if alpha_hat.shape[:-1] != labels_true.shape:
        raise InvalidSpecError("label and responsibility shapes disagree")
    return float(np.mean(np.abs(labels_true - np.argmax(alpha_hat, axis=-1))))
