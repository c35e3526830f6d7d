"""Numerical toolkit for bounded geometry of Riemannian manifolds with boundary.

Normal charts (Gaussian and normal collar), synchronous frames, covers and
partitions of unity on half-space coordinate domains, with residual checks
for the identities relating curvature to the metric in these charts.
"""

import os

import jax

jax.config.update("jax_enable_x64", True)


def enable_compilation_cache(path=None):
    """Persist compiled kernels on disk; most of the cost of a first run is
    compilation.  ``path`` defaults to ``$BGEOM_CACHE_DIR``."""
    path = path or os.environ.get("BGEOM_CACHE_DIR")
    if not path:
        return None
    os.makedirs(path, exist_ok=True)
    jax.config.update("jax_compilation_cache_dir", str(path))
    jax.config.update("jax_persistent_cache_min_compile_time_secs", 0.2)
    jax.config.update("jax_persistent_cache_min_entry_size_bytes", 0)
    return path


enable_compilation_cache()

from .errors import (  # noqa: E402
    CapabilityError,
    CoverageError,
    DegeneracyError,
    DomainError,
    GeometryError,
    InversionError,
    RadiusError,
    ShapeError,
    StiffnessError,
)
from .tensor_core import (  # noqa: E402
    CurvatureBundle,
    DomainSpec,
    MetricField,
    TensorValue,
    christoffel,
    covariant_derivative,
    inverse_metric_jet,
    metric_jet,
    riemann,
    tensor_norm,
)

__version__ = "0.1.0"

__all__ = [
    "CapabilityError",
    "CoverageError",
    "CurvatureBundle",
    "DegeneracyError",
    "DomainError",
    "DomainSpec",
    "GeometryError",
    "InversionError",
    "MetricField",
    "RadiusError",
    "ShapeError",
    "StiffnessError",
    "TensorValue",
    "christoffel",
    "enable_compilation_cache",
    "covariant_derivative",
    "inverse_metric_jet",
    "metric_jet",
    "riemann",
    "tensor_norm",
]
