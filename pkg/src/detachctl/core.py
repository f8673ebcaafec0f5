"""Frames, pixel calibration and divertor geometry."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

FRAME_KINDS = ("raw_camera", "inverted_emissivity", "standardized")

# Physical box imaged by the desk-scale camera, in meters.
VIEW_R_MIN, VIEW_R_MAX = 1.0, 1.9
VIEW_Z_TOP, VIEW_Z_BOTTOM = -0.75, -1.35

DESK_WIDTH, DESK_HEIGHT = 180, 120
FULL_WIDTH, FULL_HEIGHT = 720, 480


@dataclass(frozen=True)
class Frame:
    """Immutable 2D intensity grid, indexed ``[row, col]`` with row 0 on top."""

    intensities: np.ndarray
    kind: str = "raw_camera"

    def __post_init__(self):
        arr = np.array(self.intensities, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise ValidationError(f"frame must be a non-empty 2D grid, got shape {arr.shape}")
        if self.kind not in FRAME_KINDS:
            raise ValidationError(f"unknown frame kind {self.kind!r}")
        if self.kind != "standardized" and np.any(arr < 0):
            raise ValidationError(f"{self.kind} frame has negative intensities")
        arr.setflags(write=False)
        object.__setattr__(self, "intensities", arr)

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.intensities.shape

    @property
    def flat(self) -> np.ndarray:
        return self.intensities.reshape(-1)

    def at(self, row: int, col: int) -> float:
        return float(self.flat[row * self.width + col])

    def with_values(self, values, kind: str | None = None) -> "Frame":
        return Frame(np.asarray(values).reshape(self.shape), kind or self.kind)


@dataclass(frozen=True)
class PixelCalibration:
    """Affine pixel <-> (R, Z) map.  Signs of ``dz``/``dr`` carry orientation."""

    z0: float
    dz: float
    r0: float
    dr: float

    def __post_init__(self):
        if self.dz == 0 or self.dr == 0:
            raise ValidationError("calibration steps dz and dr must be non-zero")

    @classmethod
    def desk(cls, width: int = DESK_WIDTH, height: int = DESK_HEIGHT) -> "PixelCalibration":
        """Calibration that maps a ``width x height`` frame onto the standard view box."""
        return cls(
            z0=VIEW_Z_TOP,
            dz=(VIEW_Z_BOTTOM - VIEW_Z_TOP) / height,
            r0=VIEW_R_MIN,
            dr=(VIEW_R_MAX - VIEW_R_MIN) / width,
        )


@dataclass(frozen=True)
class GeometryState:
    r_x: float
    z_x: float
    z_s: float

    def __post_init__(self):
        if not self.z_x > self.z_s:
            raise ValidationError(f"X-point z_x={self.z_x} must lie above strike point z_s={self.z_s}")

    @property
    def leg_length(self) -> float:
        return self.z_x - self.z_s


DEFAULT_GEOMETRY = GeometryState(r_x=1.35, z_x=-1.0, z_s=-1.25)


def pixel_to_physical(cal: PixelCalibration, row, col):
    """Return ``(R, Z)`` for a (possibly fractional) pixel position."""
    return cal.r0 + col * cal.dr, cal.z0 + row * cal.dz


def physical_to_pixel(cal: PixelCalibration, r, z):
    """Inverse of :func:`pixel_to_physical`; returns fractional ``(row, col)``."""
    return (z - cal.z0) / cal.dz, (r - cal.r0) / cal.dr


def xpoint_column(cal: PixelCalibration, r_x: float) -> int:
    """Nearest column to R_X; exact half-pixel ties go to the outboard (larger R) side."""
    col = (r_x - cal.r0) / cal.dr
    base = math.floor(col)
    frac = col - base
    if frac > 0.5:
        return base + 1
    if frac < 0.5:
        return base
    return base + 1 if cal.dr > 0 else base


# --------------------------------------------------------------------------
# FRAME v1 text format
# --------------------------------------------------------------------------

def format_frame(frame: Frame) -> str:
    lines = [f"FRAME v1 {frame.width} {frame.height} {frame.kind}"]
    for row in frame.intensities.tolist():
        # repr is the shortest string that round-trips (<= 17 significant digits)
        lines.append(" ".join(map(repr, row)))
    return "\n".join(lines) + "\n"


def parse_frame(text: str) -> Frame:
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty frame file")
    head = lines[0].split()
    if len(head) != 5 or head[0] != "FRAME" or head[1] != "v1":
        raise FormatError(f"bad frame header: {lines[0]!r}")
    try:
        width, height = int(head[2]), int(head[3])
    except ValueError:
        raise FormatError(f"bad frame dimensions: {lines[0]!r}") from None
    if width <= 0 or height <= 0:
        raise FormatError("frame dimensions must be positive")
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != height:
        raise FormatError(f"expected {height} rows, found {len(body)}")
    try:
        rows = [np.array(ln.split(), dtype=np.float64) for ln in body]
    except ValueError as exc:
        raise FormatError(f"bad intensity value: {exc}") from None
    if any(r.size != width for r in rows):
        raise FormatError(f"every row must have {width} values")
    data = np.vstack(rows)
    if not np.all(np.isfinite(data)):
        raise FormatError("non-finite intensity")
    return Frame(data, head[4])


def write_frame(path, frame: Frame) -> None:
    Path(path).write_text(format_frame(frame))


def read_frame(path) -> Frame:
    return parse_frame(Path(path).read_text())
