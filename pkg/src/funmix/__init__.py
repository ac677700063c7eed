"""Bayesian latent-class mixture regression with functional covariates.

Two mixture models are provided: a two-component normal mixture and a
zero-inflated mixture of two Poissons.  Class membership follows a
(multinomial) logistic or probit regression on scalar covariates and on
B-spline integral features of functional covariates.  Each model can be fit
by a Gibbs sampler or by coordinate-ascent variational inference.
"""

from .bspline import BasisSpec, Curve, Domain, TensorBasisSpec, eval_basis, make_knots
from .config import RunConfig, load_config, parse_config
from .design import CovariateSpec, Dataset, DesignMatrix, build_design, from_simulated
from .errors import (ConfigError, DatasetError, FunmixError, InsufficientDataError,
                     InvalidSpecError, NumericalError, OutOfDomainError)
from .gibbs_normal import ChainConfig, NormalPrior, run_chain
from .gibbs_zimp import ZimpPrior, run_chain_zimp
from .io import load_dataset, save_dataset
from .runner import bench, fit, run
from .simulate import ScenarioConfig, generate
from .summary import FitSummary, Trace, hpd_interval
from .vb_normal import VBConfig, run_cavi
from .vb_zimp import run_cavi_zimp

__version__ = "0.1.0"

__all__ = [
    "BasisSpec", "ChainConfig", "ConfigError", "CovariateSpec", "Curve", "Dataset",
    "DatasetError", "DesignMatrix", "Domain", "FitSummary", "FunmixError",
    "InsufficientDataError", "InvalidSpecError", "NormalPrior", "NumericalError",
    "OutOfDomainError", "RunConfig", "ScenarioConfig", "TensorBasisSpec", "Trace",
    "VBConfig", "ZimpPrior", "bench", "build_design", "eval_basis", "fit", "from_simulated",
    "generate", "hpd_interval", "load_config", "load_dataset", "make_knots", "parse_config",
    "run", "run_cavi", "run_cavi_zimp", "run_chain", "run_chain_zimp", "save_dataset",
]
