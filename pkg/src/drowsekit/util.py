"""Small shared helpers."""

from __future__ import annotations

import math


def round_half_away(x: float) -> int:
    """Round to the nearest integer with ties going away from zero.

    Python's built-in round() uses banker's rounding (ties to even),
    which would make pixel rounding depend on parity; all integerization
    of coordinates and counts in this package goes through this helper
    instead so that e.g. 2.5 -> 3 and -2.5 -> -3.
    """
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


def clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


def quantize6(x: float | None) -> float | None:
    """Quantize to 6 decimal places (the wire precision of float fields).

    Records store floats already quantized so that a write/read cycle in
    either output format is an exact identity.
    """
    if x is None:
        return None
    return float(f"{x:.6f}")
