"""btdkit: block-term tensor decompositions with group structure.

Submodules
----------
tensor_ops   dense tensor primitives under a column-major convention
model        mixed Tucker / (L_r,1) block-term models and group variants
objective    nonlinear least-squares residual, gradient, Hessian operators
optim        ALS, gradient, conjugate-gradient, and trust-region solvers
constraints  orthogonality/simplex projections, penalties, saddle solves
pipeline     subspace classification, contrast clustering, metrics
io           binary tensor containers, experiment configs, result export
cli          command-line front end
"""

from . import constraints, io, model, objective, optim, pipeline, tensor_ops
from .errors import (
    BadMagicError,
    ConfigError,
    DataFormatError,
    NumericalError,
    TruncatedPayloadError,
    UnknownVersionError,
)

__version__ = "0.1.0"

__all__ = [
    "tensor_ops",
    "model",
    "objective",
    "optim",
    "constraints",
    "pipeline",
    "io",
    "ConfigError",
    "DataFormatError",
    "BadMagicError",
    "UnknownVersionError",
    "TruncatedPayloadError",
    "NumericalError",
    "__version__",
]
