"""Out-of-process ROI classifier speaking line-delimited JSON."""

from .serve import (
    AdapterConfig,
    AdapterError,
    BadRequest,
    banding_energy,
    classify,
    main,
    parse_request,
    resolve_model,
    serve,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig",
    "AdapterError",
    "BadRequest",
    "banding_energy",
    "classify",
    "main",
    "parse_request",
    "resolve_model",
    "serve",
    "__version__",
]
