"""Spatial multiple testing on 3D lattices with an Ising-prior hidden MRF.

Fits the two-parameter Ising prior and normal-mixture observation model by
Monte Carlo generalized EM, computes local index of significance (LIS)
statistics from posterior Gibbs chains, and applies LIS/SLIS/PLIS step-up
decisions alongside BH and local-FDR baselines. A simulation harness
reproduces the reference studies at configurable scale.
"""

from ._backend import backend_name, have_compiled
from .emission import GroupSummary, MixtureParams
from .fdr import DecisionResult, Metrics, bh, lis_stepup, local_fdr, metrics, plis, slis
from .gem import EstimationError, GemConfig, GemResult, ModelParams, PosteriorSummary, run_gem
from .ising import GibbsConfig, IsingParams, conditional_prob, enumerate_exact
from .lattice import Lattice3D, build_lattice, read_grid, write_grid

__version__ = "0.1.0"

__all__ = [
    "GroupSummary",
    "MixtureParams",
    "DecisionResult",
    "Metrics",
    "bh",
    "lis_stepup",
    "local_fdr",
    "metrics",
    "plis",
    "slis",
    "EstimationError",
    "GemConfig",
    "GemResult",
    "ModelParams",
    "PosteriorSummary",
    "run_gem",
    "GibbsConfig",
    "IsingParams",
    "conditional_prob",
    "enumerate_exact",
    "Lattice3D",
    "build_lattice",
    "read_grid",
    "write_grid",
    "backend_name",
    "have_compiled",
    "__version__",
]
