"""Geometry, fitting and rendering core for one-shot 3D talking portraits.

Submodules: ``morphable``, ``camera``, ``fitting``, ``rasterizer``,
``triplane``, ``volume``, ``compositor``, ``inpaint``, ``metrics``, ``io``,
``testkit`` and ``cli``. Import them directly; this package module only
re-exports the error types.
"""
from .errors import (BadMagic, ConfigError, DataError, DimensionError, NumericalError, PortraitForgeError,
                     SchemaError, ShapeMismatch, TruncatedPayload)

__version__ = "0.1.0"

__all__ = ["BadMagic", "ConfigError", "DataError", "DimensionError", "NumericalError", "PortraitForgeError",
           "SchemaError", "ShapeMismatch", "TruncatedPayload", "__version__"]
