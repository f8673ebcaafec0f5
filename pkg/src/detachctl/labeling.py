"""Ground-truth emission height from inverted-emissivity frames.

Only pixels at or outboard of the X-point column contribute.  Rows are
collapsed to row sums ``S_i`` and two weightings are available:

``"literal"`` (default)
    ``sqrt(sum((i * S_i)**2) / sum(S_i**2))`` -- RMS row index weighted by ``S_i**2``.
``"mean"``
    ``sum(i * S_i) / sum(S_i)`` -- the intensity centroid row.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _accel
from .core import Frame, GeometryState, PixelCalibration, pixel_to_physical, xpoint_column
from .errors import AllZeroOutboard, DimensionMismatch, FormatError, LabelingError, XPointOffFrame

LABEL_MODES = ("literal", "mean")


@dataclass(frozen=True)
class LabeledSample:
    frame: Frame
    z_e_label: float
    geometry: GeometryState


def emission_row(frame: Frame, jx: int, mode: str = "literal") -> float:
    """Fractional row index of the outboard emission."""
    if not 0 <= jx < frame.width:
        raise XPointOffFrame(f"X-point column {jx} outside [0, {frame.width})")
    if mode not in LABEL_MODES:
        raise ValueError(f"unknown label mode {mode!r}")
    sums = _accel.outboard_row_sums(frame.intensities, jx)
    if not np.any(sums > 0):
        raise AllZeroOutboard("no emission at or outboard of the X-point column")
    rows = np.arange(sums.size, dtype=np.float64)
    if mode == "literal":
        num = float(np.dot(rows * sums, rows * sums))
        den = float(np.dot(sums, sums))
        return float(np.sqrt(num / den))
    return float(np.dot(rows, sums) / sums.sum())


def label_emission_height(
    frame: Frame, cal: PixelCalibration, geom: GeometryState, mode: str = "literal"
) -> float:
    """Emission height Z_E (meters) of the outboard leg of an inverted frame."""
    jx = xpoint_column(cal, geom.r_x)
    row = emission_row(frame, jx, mode)
    return float(pixel_to_physical(cal, row, 0)[1])


def label_dataset(
    items: Iterable[tuple],
    cal: PixelCalibration,
    mode: str = "literal",
) -> list[LabeledSample]:
    """Label a batch of frames.

    Items are ``(inverted, geometry)`` or ``(camera, inverted, geometry)``.
    The label always comes from the inverted frame; with triples the sample
    carries the camera frame rendered from the same plant state.  Errors are
    re-raised as :class:`LabelingError` carrying the failing index.
    """
    out = []
    shape = None
    for k, item in enumerate(items):
        if len(item) == 2:
            inverted, geom = item
            camera = inverted
        else:
            camera, inverted, geom = item
        if shape is None:
            shape = inverted.shape
        elif inverted.shape != shape:
            raise LabelingError(k, DimensionMismatch(f"frame shape {inverted.shape} != {shape}"))
        try:
            z = label_emission_height(inverted, cal, geom, mode)
        except Exception as exc:
            raise LabelingError(k, exc) from exc
        out.append(LabeledSample(camera, z, geom))
    return out


# --------------------------------------------------------------------------
# dataset manifest: frame_path, z_e_label_m, r_x_m, z_x_m, z_s_m
# --------------------------------------------------------------------------

MANIFEST_COLUMNS = ("frame_path", "z_e_label_m", "r_x_m", "z_x_m", "z_s_m")


def write_manifest(path, rows: Sequence[tuple[str, float, GeometryState]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for frame_path, z, g in rows:
            w.writerow([frame_path] + [format(v, ".17g") for v in (z, g.r_x, g.z_x, g.z_s)])


def read_manifest(path) -> list[tuple[Path, float, GeometryState]]:
    """Return ``(frame_path, label, geometry)``; relative paths resolve against the manifest dir."""
    base = Path(path).parent
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
            raise FormatError(f"manifest header must be {','.join(MANIFEST_COLUMNS)}")
        out = []
        for line, rec in enumerate(reader, start=2):
            try:
                geom = GeometryState(float(rec["r_x_m"]), float(rec["z_x_m"]), float(rec["z_s_m"]))
                z = float(rec["z_e_label_m"])
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{line}: {exc}") from None
            p = Path(rec["frame_path"])
            out.append((p if p.is_absolute() else base / p, z, geom))
    return out
