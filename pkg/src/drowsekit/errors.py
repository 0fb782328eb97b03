"""Exception types shared across the package.

Every error raised to callers derives from DrowsekitError so that the CLI
can map failures onto its two exit classes: configuration/validation
problems (exit 1) and input parse problems (exit 2).
"""

from __future__ import annotations


class DrowsekitError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DrowsekitError):
    """Invalid configuration value or combination of values."""


class InvalidDimensions(ConfigError):
    """Non-positive image or camera dimensions."""


class DegenerateFace(DrowsekitError):
    """Landmark geometry too collapsed to derive further points from."""


class DegenerateRoi(DrowsekitError):
    """Region of interest has zero area after clamping to the image."""


class BehindCamera(DrowsekitError):
    """A 3D point lies on or behind the camera plane (z <= 0)."""


class NotARotation(DrowsekitError):
    """Matrix is not orthonormal with determinant +1 within tolerance."""


class NonMonotonicFrame(DrowsekitError):
    """Frame index or timestamp went backwards in a recorded stream."""


class EmptyStream(DrowsekitError):
    """An operation that needs at least one record received none."""


class EmptyMatrix(DrowsekitError):
    """Metrics requested for a confusion matrix with zero total count."""


class InsufficientData(DrowsekitError):
    """Dataset too small to produce a meaningful train/test split."""


class ScenarioError(ConfigError):
    """Invalid synthetic-scenario description."""


class ProtocolError(DrowsekitError):
    """External classifier backend sent a malformed or out-of-order reply."""


class BackendUnavailable(DrowsekitError):
    """External classifier process is not running or has exited."""


class ParseError(DrowsekitError):
    """Malformed input line.

    Carries the 1-based line number and any records that were parsed
    successfully before the failure, so callers can report location and
    optionally keep partial results.
    """

    def __init__(self, line_no: int, message: str, records: list | None = None):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no
        self.records = records if records is not None else []
