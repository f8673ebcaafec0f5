"""Normalized front position DZ and its radially corrected form."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .core import GeometryState
from .errors import DegenerateGeometry, ValidationError

DZ_VARIANTS = ("base", "hist", "norm", "rad")
CONTROL_CLAMP = (-0.2, 1.5)


@dataclass(frozen=True)
class DzParams:
    adjust_alpha: float = 2.1
    r_edge: float = 1.35  # X-point radius with the strike point at the shelf edge
    variant: str = "base"

    def __post_init__(self):
        if not self.r_edge > 0:
            raise ValidationError("r_edge must be positive")
        if not math.isfinite(self.adjust_alpha):
            raise ValidationError("adjust_alpha must be finite")
        if self.variant not in DZ_VARIANTS:
            raise ValidationError(f"unknown DZ variant {self.variant!r}")


def _leg(geom: GeometryState) -> float:
    leg = geom.z_x - geom.z_s
    if leg == 0:
        raise DegenerateGeometry("X-point and strike point at the same height")
    return leg


def dz_base(z_e: float, geom: GeometryState) -> float:
    """0 at the strike point, 1 at the X-point; deliberately unclamped."""
    return 1.0 - (geom.z_x - z_e) / _leg(geom)


def z_adjust(geom: GeometryState, params: DzParams) -> float:
    return params.adjust_alpha * (geom.r_x - params.r_edge) * (geom.z_x - geom.z_s)


def dz_rad(z_e_norm: float, geom: GeometryState, params: DzParams) -> float:
    return 1.0 - (geom.z_x - (z_e_norm - z_adjust(geom, params))) / _leg(geom)


def compute_dz(z_e: float, geom: GeometryState, params: DzParams) -> float:
    if params.variant == "rad":
        return dz_rad(z_e, geom, params)
    return dz_base(z_e, geom)


def clamp_for_control(dz: float) -> float:
    lo, hi = CONTROL_CLAMP
    return min(max(dz, lo), hi)


def below_strike(z_e: float, geom: GeometryState, params: DzParams) -> bool:
    """True when the (adjusted, for ``rad``) emission height sits under the strike point."""
    if params.variant == "rad":
        z_e = z_e - z_adjust(geom, params)
    return z_e < geom.z_s
