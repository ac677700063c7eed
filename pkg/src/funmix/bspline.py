"""Clamped cubic B-spline bases and functional design rows.

Curves are treated as the piecewise-linear interpolant of their
observations.  Against a cubic basis the integrands of both the linear and
the tensor-product design rows are then piecewise polynomials, so the rows
are computed with Gauss-Legendre rules on the merged breakpoint set and are
exact up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .errors import InsufficientDataError, InvalidSpecError, OutOfDomainError

DEGREE = 3

# 5-point rule: exact for degree <= 9, enough for cubic x cubic (x linear).
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


@dataclass(frozen=True)
class Domain:
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise InvalidSpecError(f"domain endpoints must be finite, got [{self.lo}, {self.hi}]")
        if not self.lo < self.hi:
            raise InvalidSpecError(f"degenerate domain [{self.lo}, {self.hi}]")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (t >= self.lo) & (t <= self.hi)


@dataclass(frozen=True)
class BasisSpec:
    """Clamped cubic basis: ``num_basis`` functions on ``num_basis + 4`` knots."""

    domain: Domain
    num_basis: int
    knots: np.ndarray = field(repr=False)

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        K = self.num_basis
        if K < DEGREE + 1:
            raise InvalidSpecError(f"need at least 4 basis functions, got {K}")
        if knots.shape != (K + DEGREE + 1,):
            raise InvalidSpecError(f"expected {K + 4} knots, got {knots.size}")
        if np.any(np.diff(knots) < 0):
            raise InvalidSpecError("knots must be nondecreasing")
        lo, hi = self.domain.lo, self.domain.hi
        if not (np.all(knots[:4] == lo) and np.all(knots[-4:] == hi)):
            raise InvalidSpecError("knots must be clamped with multiplicity 4 at both ends")
        inner = knots[4:-4]
        if np.any((inner <= lo) | (inner >= hi)):
            raise InvalidSpecError("interior knots must lie strictly inside the domain")

    @property
    def interior_knots(self) -> np.ndarray:
        return self.knots[DEGREE + 1:-(DEGREE + 1)]

    @property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.knots)


@dataclass(frozen=True)
class TensorBasisSpec:
    time_spec: BasisSpec
    value_spec: BasisSpec

    @property
    def size(self) -> int:
        return self.time_spec.num_basis * self.value_spec.num_basis


@dataclass(frozen=True)
class Curve:
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if grid.ndim != 1 or values.shape != grid.shape:
            raise InvalidSpecError("curve grid and values must be 1-D arrays of equal length")
        if grid.size < 2:
            raise InsufficientDataError(f"a curve needs at least 2 observations, got {grid.size}")
        if np.any(np.diff(grid) <= 0):
            raise InvalidSpecError("curve grid must be strictly increasing")
        if not (np.all(np.isfinite(grid)) and np.all(np.isfinite(values))):
            raise InvalidSpecError("curve contains non-finite entries")

    def standardized(self) -> "Curve":
        sd = self.values.std()
        if sd == 0:
            return Curve(self.grid, self.values - self.values.mean())
        return Curve(self.grid, (self.values - self.values.mean()) / sd)

    def __call__(self, t):
        return np.interp(t, self.grid, self.values)


def make_knots(domain: Domain, K: int, placement: str = "equal", sample=None) -> BasisSpec:
    """Build a clamped cubic basis with ``K - 4`` interior knots.

    ``placement="quantile"`` puts the interior knots at equally spaced
    quantiles of ``sample`` (observation times, or curve values for a value
    basis) instead of equally spaced points.
    """
    if int(K) != K or K < DEGREE + 1:
        raise InvalidSpecError(f"K must be an integer >= 4, got {K}")
    K = int(K)
    n_inner = K - DEGREE - 1
    if placement == "equal":
        inner = domain.lo + domain.length * np.arange(1, n_inner + 1) / (n_inner + 1)
    elif placement == "quantile":
        if sample is None:
            raise InvalidSpecError("quantile knot placement needs a sample")
        sample = np.asarray(sample, dtype=float)
        sample = sample[domain.contains(sample)]
        inner = np.quantile(sample, np.arange(1, n_inner + 1) / (n_inner + 1))
        if np.any(np.diff(inner) <= 0) or np.any((inner <= domain.lo) | (inner >= domain.hi)):
            raise InvalidSpecError("sample quantiles do not give distinct interior knots")
    else:
        raise InvalidSpecError(f"unknown knot placement {placement!r}")
    knots = np.concatenate([np.full(4, domain.lo), inner, np.full(4, domain.hi)])
    return BasisSpec(domain, K, knots)


def eval_basis(spec: BasisSpec, t) -> np.ndarray:
    """Basis values at ``t``; shape ``(K,)`` for scalar input, ``(m, K)`` otherwise."""
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float)).ravel()
    if not np.all(spec.domain.contains(t)):
        bad = t[~spec.domain.contains(t)][0]
        raise OutOfDomainError(
            f"t={bad} outside [{spec.domain.lo}, {spec.domain.hi}]; no extrapolation")
    B = BSpline.design_matrix(t, spec.knots, DEGREE).toarray()
    return B[0] if scalar else B


def _gauss_points(breaks: np.ndarray, subdivisions: int):
    """Quadrature nodes and weights over consecutive breakpoint intervals."""
    if subdivisions > 1:
        frac = np.arange(subdivisions + 1) / subdivisions
        a, b = breaks[:-1, None], breaks[1:, None]
        breaks = np.unique((a + (b - a) * frac).ravel())
    a, b = breaks[:-1], breaks[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    nodes = (mid[:, None] + half[:, None] * _GL_NODES).ravel()
    weights = (half[:, None] * _GL_WEIGHTS).ravel()
    return nodes, weights


def _check_grid(curve: Curve, domain: Domain):
    if curve.grid[0] < domain.lo or curve.grid[-1] > domain.hi:
        raise OutOfDomainError(
            f"curve grid [{curve.grid[0]}, {curve.grid[-1]}] leaves the domain "
            f"[{domain.lo}, {domain.hi}]")


def functional_design_row(curve: Curve, spec: BasisSpec, subdivisions: int = 1) -> np.ndarray:
    """Row ``R_k = int B_k(t) X(t) dt`` over the observed span of the curve."""
    _check_grid(curve, spec.domain)
    lo, hi = curve.grid[0], curve.grid[-1]
    inner = spec.breakpoints
    breaks = np.union1d(curve.grid, inner[(inner > lo) & (inner < hi)])
    nodes, weights = _gauss_points(breaks, subdivisions)
    B = eval_basis(spec, nodes)
    return B.T @ (weights * curve(nodes))


def _value_crossings(curve: Curve, levels: np.ndarray) -> np.ndarray:
    """Times at which the interpolated curve passes through each level."""
    t0, t1 = curve.grid[:-1, None], curve.grid[1:, None]
    x0, x1 = curve.values[:-1, None], curve.values[1:, None]
    dx = x1 - x0
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = (levels[None, :] - x0) / dx
    hit = (dx != 0) & (frac > 0) & (frac < 1)
    return (t0 + frac * (t1 - t0))[hit]


def tensor_design_row(curve: Curve, spec: TensorBasisSpec, clip: bool = False,
                      subdivisions: int = 1) -> np.ndarray:
    """Row of length ``K_value * K_time``.

    Entry ``k1 * K_time + k2`` holds ``int B^value_k1(X(t)) B^time_k2(t) dt``.
    Values outside the value domain are clipped when ``clip`` is set and
    raise otherwise.
    """
    time_spec, value_spec = spec.time_spec, spec.value_spec
    _check_grid(curve, time_spec.domain)
    vdom = value_spec.domain
    if not np.all(vdom.contains(curve.values)):
        if not clip:
            raise OutOfDomainError(
                f"curve values [{curve.values.min()}, {curve.values.max()}] leave the value "
                f"domain [{vdom.lo}, {vdom.hi}]")
        curve = Curve(curve.grid, np.clip(curve.values, vdom.lo, vdom.hi))
    lo, hi = curve.grid[0], curve.grid[-1]
    tk = time_spec.breakpoints
    cross = _value_crossings(curve, value_spec.interior_knots)
    breaks = np.unique(np.concatenate([curve.grid, tk[(tk > lo) & (tk < hi)], cross]))
    nodes, weights = _gauss_points(breaks, subdivisions)
    Bt = eval_basis(time_spec, nodes)
    x = np.clip(curve(nodes), vdom.lo, vdom.hi)
    Bv = eval_basis(value_spec, x)
    return np.einsum("m,mi,mj->ij", weights, Bv, Bt).ravel()


def value_domain(curves, expand: float = 0.01) -> Domain:
    """Pooled min/max of all curve values, widened by ``expand`` of the range."""
    vals = np.concatenate([np.asarray(c.values, dtype=float) for c in curves])
    lo, hi = float(vals.min()), float(vals.max())
    pad = expand * (hi - lo)
    return Domain(lo - pad, hi + pad)


def weight_function(spec: BasisSpec, coefs, t) -> np.ndarray:
    """Evaluate ``w(t) = sum_k coefs_k B_k(t)``."""
    return eval_basis(spec, np.atleast_1d(t)) @ np.asarray(coefs, dtype=float)
