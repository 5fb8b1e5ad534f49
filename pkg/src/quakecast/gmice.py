"""Ground-motion to intensity conversion (EMS-98 from PGA in cm/s^2).

I = 2.03 + 2.28 * log10(PGA), valid on 2 <= I <= 9.5. Values outside that
range are clamped onto it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INTERCEPT = 2.03
SLOPE = 2.28
I_MIN = 2.0
I_MAX = 9.5


@dataclass(frozen=True)
class IntensityResult:
    value: float
    clamped: bool = False
    degenerate: bool = False


def convert_pga(pga: float) -> IntensityResult:
    """Convert a single PGA value, keeping track of clamping.

    Non-positive PGA has no logarithm; it maps to the floor with
    ``degenerate`` set.
    """
    pga = float(pga)
    if not pga > 0.0:
        return IntensityResult(I_MIN, clamped=True, degenerate=True)
    raw = INTERCEPT + SLOPE * np.log10(pga)
    if raw < I_MIN:
        return IntensityResult(I_MIN, clamped=True)
    if raw > I_MAX:
        return IntensityResult(I_MAX, clamped=True)
    return IntensityResult(float(raw))


def pga_to_intensity(pga):
    """Vectorised conversion; scalars in, float out."""
    arr = np.asarray(pga, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = INTERCEPT + SLOPE * np.log10(np.where(arr > 0, arr, 1.0))
    out = np.where(arr > 0, np.clip(raw, I_MIN, I_MAX), I_MIN)
    if out.ndim == 0:
        return float(out)
    return out


def clamp_flags(pga) -> np.ndarray:
    """True where the raw conversion left [2, 9.5] or was undefined."""
    arr = np.asarray(pga, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = INTERCEPT + SLOPE * np.log10(np.where(arr > 0, arr, 1.0))
    return (arr <= 0) | (raw < I_MIN) | (raw > I_MAX)


def intensity_to_pga(intensity):
    """Analytic inverse of the conversion. Raises outside [2, 9.5]."""
    arr = np.asarray(intensity, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < I_MIN) or np.any(arr > I_MAX):
        raise ValueError(f"intensity must lie in [{I_MIN}, {I_MAX}]")
    out = 10.0 ** ((arr - INTERCEPT) / SLOPE)
    if out.ndim == 0:
        return float(out)
    return out
