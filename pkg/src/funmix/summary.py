"""Posterior traces and the summaries reported for a fit.

A :class:`Trace` stores thinned draws after burn-in together with the
per-draw membership probabilities needed for classification metrics.  Both
sampling and variational fits are reduced to a :class:`FitSummary`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, InvalidSpecError

PPC_THRESHOLDS = (-5.0, 0.0, 5.0, 10.0)
_DECILE_EDGES = np.round(np.arange(1, 10) / 10.0, 2)


def decile_labels() -> list[str]:
    labels = ["0.00 - 0.10"]
    for k in range(1, 10):
        labels.append(f"{k / 10 + 0.01:.2f} - {(k + 1) / 10:.2f}")
    return labels


@dataclass
class Trace:
    """Stored draws of one chain.

    Attributes
    ----------
    names : list of str
        One name per parameter column of ``draws``.
    draws : ndarray, shape (n_draws, n_params)
    responsibilities : ndarray, shape (n_draws, n) or (n_draws, n, 3)
        Per-draw conditional membership probabilities ``P(gamma_i | rest)``.
    probabilities : ndarray, same shape as ``responsibilities``
        Per-draw covariate-driven class probabilities ``p_i``.
    meta : dict
        Seed, iteration counts, model name and wall-clock seconds.
    """

    names: list
    draws: np.ndarray
    responsibilities: np.ndarray | None = None
    probabilities: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        if self.draws.shape[1] != len(self.names):
            raise InvalidSpecError(
                f"{len(self.names)} names for {self.draws.shape[1]} trace columns")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    def block(self, prefix: str) -> np.ndarray:
        idx = [k for k, nm in enumerate(self.names) if nm.startswith(prefix)]
        return self.draws[:, idx]


def stored_count(iters: int, burnin: int, thin: int) -> int:
    return (iters - burnin) // thin


def hpd_interval(draws, level: float = 0.95) -> tuple[float, float]:
    """Shortest window over the sorted draws holding ``ceil(level n)`` of them."""
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise InsufficientDataError("HPD interval of an empty sample")
    if not 0 < level <= 1:
        raise InvalidSpecError(f"level must lie in (0, 1], got {level}")
    k = max(1, int(np.ceil(level * n - 1e-9)))
    widths = x[k - 1:] - x[:n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def decile_table(probs) -> list[tuple[str, int]]:
    """Counts of subjects per probability decile, closed on the right."""
    p = np.asarray(probs, dtype=float).ravel()
    if np.any((p < 0) | (p > 1)):
        raise InvalidSpecError("probabilities must lie in [0, 1]")
    idx = np.searchsorted(_DECILE_EDGES, p, side="left")
    counts = np.bincount(idx, minlength=10)
    return list(zip(decile_labels(), counts.tolist()))


def ppc_statistic(y, t) -> float:
    """Proportion of the sample above ``t``."""
    return float(np.mean(np.asarray(y) > t))


def ppc_table(y, replicates, thresholds=PPC_THRESHOLDS) -> list[tuple[float, float, float, float]]:
    """Observed statistic, replicate mean and ``P(h(y_rep) >= h(y))`` per threshold."""
    y = np.asarray(y, dtype=float)
    reps = np.atleast_2d(np.asarray(replicates, dtype=float))
    rows = []
    for t in thresholds:
        obs = ppc_statistic(y, t)
        h_rep = np.mean(reps > t, axis=1)
        rows.append((float(t), obs, float(h_rep.mean()), float(np.mean(h_rep >= obs))))
    return rows


@dataclass
class ParamRow:
    name: str
    mean: float
    sd: float
    lower: float
    upper: float


@dataclass
class FitSummary:
    """Reduced view of a fit.

    ``membership`` holds the posterior (or variational) class probabilities
    per subject; ``fitted`` the covariate-driven probabilities ``p_i``.  For
    the two-component model both are vectors for class 1; for the
    zero-inflated model they are ``(n, 3)``.
    """

    model: str
    engine: str
    params: list
    membership: np.ndarray
    fitted: np.ndarray
    deciles: list
    ppc: list = field(default_factory=list)
    elapsed: float = 0.0
    converged: bool = True
    level: float = 0.95

    def param(self, name: str) -> ParamRow:
        for row in self.params:
            if row.name == name:
                return row
        raise KeyError(name)

    def interval(self, name: str) -> tuple[float, float]:
        row = self.param(name)
        return row.lower, row.upper


def membership_deciles(membership) -> list:
    m = np.asarray(membership, dtype=float)
    if m.ndim == 1:
        return decile_table(m)
    # One table per non-baseline class.
    return [(f"class {c}", decile_table(m[:, c])) for c in range(1, m.shape[1])]


def summarize(trace: Trace, level: float = 0.95, y=None, thresholds=PPC_THRESHOLDS,
              replicates=None, engine: str = "gibbs") -> FitSummary:
    """Posterior means, sds, HPD intervals, mean memberships and the PPC table.

    ``replicates`` (posterior-predictive draws, one row per draw) are
    generated by the caller; the PPC table is empty when either ``y`` or
    ``replicates`` is missing.
    """
    if trace.n_draws == 0:
        raise InsufficientDataError("cannot summarize an empty trace")
    rows = []
    for k, name in enumerate(trace.names):
        col = trace.draws[:, k]
        lo, hi = hpd_interval(col, level)
        sd = float(col.std(ddof=1)) if col.size > 1 else 0.0
        rows.append(ParamRow(name, float(col.mean()), sd, lo, hi))
    membership = trace.responsibilities.mean(axis=0)
    fitted = trace.probabilities.mean(axis=0)
    ppc = []
    if y is not None and replicates is not None:
        ppc = ppc_table(y, replicates, thresholds)
    return FitSummary(
        model=trace.meta.get("model", ""), engine=engine, params=rows,
        membership=membership, fitted=fitted, deciles=membership_deciles(membership),
        ppc=ppc, elapsed=float(trace.meta.get("elapsed", 0.0)), level=level)
