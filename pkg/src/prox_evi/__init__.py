"""Proximal-operator residual training of neural surrogates for elliptic variational inequalities."""

__version__ = "0.1.0"

from .benchmarks import REGISTRY, get_benchmark
from .trainer import RunConfig, relative_errors, run

__all__ = ["REGISTRY", "RunConfig", "get_benchmark", "relative_errors", "run", "__version__"]
