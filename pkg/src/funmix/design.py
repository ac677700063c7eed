"""Subject-level data and assembly of the design matrix.

Row ``i`` of the design is ``(1, z_i, R_i1, ..., R_iJ)`` where ``R_ij`` is
the integral block of functional covariate ``j``: the linear model uses
``int B_k(t) X_ij(t) dt``, the nonlinear model the tensor-product block.
A :class:`DesignLayout` names every column so coefficient blocks can be
mapped back to weight functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bspline import (BasisSpec, Curve, Domain, TensorBasisSpec, functional_design_row,
                      make_knots, tensor_design_row, value_domain, weight_function)
from .errors import DatasetError, InvalidSpecError


@dataclass
class Dataset:
    """Responses, scalar covariates and curves for ``n`` subjects.

    ``curves`` maps a covariate id (1-based) to one :class:`Curve` per
    subject, in the order of ``subject_ids``.
    """

    subject_ids: np.ndarray
    y: np.ndarray
    scalars: np.ndarray = None
    scalar_names: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)

    def __post_init__(self):
        self.subject_ids = np.asarray(self.subject_ids)
        self.y = np.asarray(self.y, dtype=float)
        n = self.y.size
        if self.scalars is None:
            self.scalars = np.empty((n, 0))
        self.scalars = np.asarray(self.scalars, dtype=float).reshape(n, -1)
        if not self.scalar_names:
            self.scalar_names = [f"z{k + 1}" for k in range(self.scalars.shape[1])]
        if len(self.scalar_names) != self.scalars.shape[1]:
            raise DatasetError("scalar names do not match the scalar columns")
        if self.subject_ids.size != n:
            raise DatasetError("one subject id per response is required")
        for j, cs in self.curves.items():
            if len(cs) != n:
                raise DatasetError(f"covariate {j}: {len(cs)} curves for {n} subjects")

    @property
    def n(self) -> int:
        return self.y.size

    def covariate_ids(self) -> list:
        return sorted(self.curves)


@dataclass
class CovariateSpec:
    """Basis choice for one functional covariate."""

    K: int = 6
    model: str = "linear"
    K_value: int = 4
    domain: Domain | None = None
    value_domain: Domain | None = None
    placement: str = "equal"
    clip: bool = False

    def __post_init__(self):
        if self.model not in ("linear", "nonlinear"):
            raise InvalidSpecError(f"unknown functional model {self.model!r}")


@dataclass(frozen=True)
class LayoutEntry:
    kind: str
    covariate: int | None
    index: tuple
    name: str


@dataclass
class DesignLayout:
    entries: list
    bases: dict = field(default_factory=dict)

    @property
    def names(self) -> list:
        return [e.name for e in self.entries]

    def __len__(self):
        return len(self.entries)

    def block(self, covariate: int) -> np.ndarray:
        return np.array([k for k, e in enumerate(self.entries) if e.covariate == covariate])

    def check(self, D: int):
        if len(self.entries) != D or len(set(self.names)) != D:
            raise InvalidSpecError("layout does not cover the design columns one-to-one")


@dataclass
class DesignMatrix:
    x: np.ndarray
    layout: DesignLayout

    @property
    def shape(self):
        return self.x.shape


def _time_domain(curves) -> Domain:
    lo = min(c.grid[0] for c in curves)
    hi = max(c.grid[-1] for c in curves)
    return Domain(float(lo), float(hi))


def build_design(dataset: Dataset, specs: dict | None = None, standardize: bool = False,
                 default: CovariateSpec | None = None) -> DesignMatrix:
    """Assemble ``x`` and its layout.

    Parameters
    ----------
    specs : dict, optional
        Covariate id to :class:`CovariateSpec`; missing ids use ``default``.
    standardize : bool
        Center and scale each curve to unit standard deviation first.
    """
    specs = specs or {}
    default = default or CovariateSpec()
    n = dataset.n
    cols = [np.ones((n, 1)), dataset.scalars]
    entries = [LayoutEntry("intercept", None, (), "intercept")]
    entries += [LayoutEntry("scalar", None, (k,), nm) for k, nm in enumerate(dataset.scalar_names)]
    bases = {}
    for j in dataset.covariate_ids():
        spec = specs.get(j, default)
        curves = dataset.curves[j]
        if standardize:
            curves = [c.standardized() for c in curves]
        dom = spec.domain or _time_domain(curves)
        sample = np.concatenate([c.grid for c in curves]) if spec.placement == "quantile" else None
        tspec = make_knots(dom, spec.K, spec.placement, sample)
        if spec.model == "linear":
            block = np.array([functional_design_row(c, tspec) for c in curves])
            entries += [LayoutEntry("functional", j, (k,), f"X{j}[{k}]") for k in range(spec.K)]
            bases[j] = tspec
        else:
            vdom = spec.value_domain or value_domain(curves)
            vsample = (np.concatenate([c.values for c in curves])
                       if spec.placement == "quantile" else None)
            vspec = make_knots(vdom, spec.K_value, spec.placement, vsample)
            tb = TensorBasisSpec(tspec, vspec)
            block = np.array([tensor_design_row(c, tb, clip=spec.clip) for c in curves])
            entries += [LayoutEntry("tensor", j, (k1, k2), f"X{j}[{k1},{k2}]")
                        for k1 in range(spec.K_value) for k2 in range(spec.K)]
            bases[j] = tb
        cols.append(block.reshape(n, -1))
    x = np.hstack(cols)
    layout = DesignLayout(entries, bases)
    layout.check(x.shape[1])
    return DesignMatrix(x, layout)


def reconstruct_weight(design: DesignMatrix, beta, covariate: int, t) -> np.ndarray:
    """Weight function ``w_j(t) = sum_k phi_jk B_k(t)`` of a linear block."""
    basis = design.layout.bases[covariate]
    if not isinstance(basis, BasisSpec):
        raise InvalidSpecError("weight reconstruction applies to linear blocks only")
    idx = design.layout.block(covariate)
    return weight_function(basis, np.asarray(beta)[idx], t)


def from_simulated(sim) -> Dataset:
    """Wrap a :class:`funmix.simulate.SimulatedDataset` as a :class:`Dataset`."""
    curves = {}
    for j, (grid, vals) in enumerate(zip(sim.grids, sim.curves), start=1):
        curves[j] = [Curve(grid, v) for v in vals]
    return Dataset(sim.subject_ids, sim.y, curves=curves)
