"""Analytic blast-loading surrogate.

A spherical free-air charge is characterized by Hopkinson-Cranz scaled
distance Z = R / W^(1/3); peak incident overpressure follows a classic
far-field power-law fit in Z. The rendered loading raster carries three
physically ordered channels: normalized peak overpressure, a normalized
positive-phase impulse proxy, and normalized log standoff distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Z_MIN",
    "BlastScenario",
    "scaled_distance",
    "overpressure_surrogate",
    "render_blast_map",
]

# Scaled distances below this are clamped; the power-law fit blows up at 0.
Z_MIN = 0.05


@dataclass(frozen=True)
class BlastScenario:
    """Charge description plus its placement in image coordinates."""

    charge_mass_kg: float = 500_000.0   # 0.50 kt TNT equivalent
    burst_height_m: float = 10.0
    epicenter: tuple[float, float] = (0.0, 0.0)   # (row, col), pixels
    meters_per_pixel: float = 30.0

    def __post_init__(self):
        if self.charge_mass_kg <= 0:
            raise ValueError("charge mass must be positive")
        if self.burst_height_m < 0:
            raise ValueError("burst height must be nonnegative")
        if self.meters_per_pixel <= 0:
            raise ValueError("meters_per_pixel must be positive")


def scaled_distance(r_m, w_kg: float):
    """Z = R / W^(1/3) in m/kg^(1/3); R is the slant range in meters."""
    if w_kg <= 0:
        raise ValueError("charge mass must be positive")
    r_m = np.asarray(r_m, dtype=np.float64)
    if np.any(r_m < 0):
        raise ValueError("range must be nonnegative")
    out = r_m / np.cbrt(w_kg)
    return float(out) if out.ndim == 0 else out


def overpressure_surrogate(z):
    """Peak incident overpressure in kPa: 1772/Z^3 - 114/Z^2 + 108/Z.

    Strictly decreasing in Z; inputs below Z_MIN are clamped to it.
    """
    z = np.maximum(np.asarray(z, dtype=np.float64), Z_MIN)
    out = 1772.0 / z**3 - 114.0 / z**2 + 108.0 / z
    return float(out) if out.ndim == 0 else out


def render_blast_map(scenario: BlastScenario, height: int, width: int) -> np.ndarray:
    """Render the (H, W, 3) loading raster for a scenario.

    Channel 0: peak overpressure, log-compressed (log1p) and normalized by
    the clamp-point maximum; blast quantities span many decades, so a
    linear normalization would flatten the damage-relevant range.
    Channel 1: impulse proxy P * W^(1/3) / R, normalized the same way.
    Channel 2: log10(R + 1) normalized by the map diagonal.
    All channels are clipped to [0, 1]; channels 0 and 1 are nonincreasing
    with distance from the epicenter.
    """
    er, ec = scenario.epicenter
    mpp = scenario.meters_per_pixel
    rows = (np.arange(height)[:, None] - er) * mpp
    cols = (np.arange(width)[None, :] - ec) * mpp
    ground = np.hypot(rows, cols)
    slant = np.hypot(ground, scenario.burst_height_m)

    w = scenario.charge_mass_kg
    cbrt_w = np.cbrt(w)
    pressure = overpressure_surrogate(scaled_distance(slant, w))
    p_ref = overpressure_surrogate(Z_MIN)
    ch0 = np.log1p(pressure) / np.log1p(p_ref)

    r_floor = Z_MIN * cbrt_w
    r_eff = np.maximum(slant, r_floor)
    impulse = overpressure_surrogate(scaled_distance(r_eff, w)) * cbrt_w / r_eff
    impulse_ref = p_ref * cbrt_w / r_floor
    ch1 = np.log1p(impulse) / np.log1p(impulse_ref)

    diag = np.hypot(height * mpp, width * mpp)
    ch2 = np.log10(slant + 1.0) / np.log10(diag + 1.0)

    out = np.stack([ch0, ch1, ch2], axis=-1)
    return np.clip(out, 0.0, 1.0)
