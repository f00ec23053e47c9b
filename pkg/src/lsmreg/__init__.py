"""Learned Tikhonov regularization for sampling-method imaging.

A desk-scale pipeline around the scattering equation F g = u with a
noisy operator: synthesize F and a library of trial patterns, label a
reduced grid with discrepancy-principle regularization parameters,
train a small network to map projected patterns to their parameters,
refine it against the imaging objective, and score the resulting
indicator images.
"""

from . import containers, forward, imaging, morozov, network, spectral, training
from .config import RunConfig, load_config, parse_config
from .errors import (
    CoincidentPoints,
    DimensionMismatch,
    EmptyBackground,
    LsmregError,
    MissingInput,
    NoRoot,
    NoSignal,
    NumericalFailure,
    SingularOperator,
)

__version__ = "0.1.0"

__all__ = [
    "containers",
    "forward",
    "imaging",
    "morozov",
    "network",
    "spectral",
    "training",
    "RunConfig",
    "load_config",
    "parse_config",
    "LsmregError",
    "CoincidentPoints",
    "DimensionMismatch",
    "EmptyBackground",
    "MissingInput",
    "NoRoot",
    "NoSignal",
    "NumericalFailure",
    "SingularOperator",
    "__version__",
]
