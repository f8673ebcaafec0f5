"""Histogram matching, per-frame standardization and speckle augmentation.

Preprocessing variants (the ``preprocessing`` tag of a linear map):

========  ==============================  =====================
tag       training frames                 real-time frames
========  ==============================  =====================
base      as rendered                     as captured
hist      matched to reference histogram  as captured
norm      matched, then standardized      standardized
========  ==============================  =====================
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _accel
from .core import Frame
from .errors import DegenerateFrame, EmptyInput, FormatError, ValidationError, ZeroVariance

BIN_COUNT = 256
PREPROCESSING_TAGS = ("base", "hist", "norm")
DEFAULT_SPECKLE_FRACTION = 0.02


@dataclass(frozen=True)
class IntensityHistogram:
    counts: np.ndarray
    lo: float
    hi: float

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (BIN_COUNT,) or np.any(counts < 0):
            raise ValidationError(f"histogram needs {BIN_COUNT} non-negative counts")
        if not self.hi > self.lo:
            raise ValidationError("histogram range needs hi > lo")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, BIN_COUNT + 1)

    @property
    def cdf(self) -> np.ndarray:
        """Cumulative fraction at each of the 257 bin edges."""
        c = np.concatenate([[0], np.cumsum(self.counts)])
        return c / c[-1]

    def bin_of(self, values: np.ndarray) -> np.ndarray:
        width = (self.hi - self.lo) / BIN_COUNT
        idx = np.floor((np.asarray(values) - self.lo) / width).astype(np.int64)
        return np.clip(idx, 0, BIN_COUNT - 1)

    def quantile(self, p: np.ndarray) -> np.ndarray:
        """Inverse of the piecewise-linear CDF; empty bins are skipped."""
        p = np.clip(np.asarray(p, dtype=np.float64), 0.0, 1.0)
        cdf = self.cdf
        k = np.searchsorted(cdf, p, side="right") - 1
        nonempty = np.flatnonzero(self.counts)
        # p == 1 lands past the end: pin it to the top of the last populated bin
        top = p >= 1.0
        k = np.clip(k, 0, BIN_COUNT - 1)
        mass = cdf[k + 1] - cdf[k]
        width = (self.hi - self.lo) / BIN_COUNT
        safe = np.where(mass > 0, mass, 1.0)
        out = self.lo + (k + (p - cdf[k]) / safe) * width
        out = np.where(top, self.lo + (nonempty[-1] + 1) * width, out)
        return np.minimum(out, self.hi)

    def cdf_at(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        cdf = self.cdf
        k = self.bin_of(values)
        width = (self.hi - self.lo) / BIN_COUNT
        t = np.clip((values - (self.lo + k * width)) / width, 0.0, 1.0)
        return cdf[k] + t * (cdf[k + 1] - cdf[k])


def _tally(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    width = (hi - lo) / BIN_COUNT
    idx = np.clip(np.floor((values - lo) / width).astype(np.int64), 0, BIN_COUNT - 1)
    return np.bincount(idx, minlength=BIN_COUNT)


def build_histogram(frames: Sequence[Frame], lo: float | None = None, hi: float | None = None) -> IntensityHistogram:
    """256-bin histogram over ``[min, max]`` of all frames (or an explicit range).

    A constant input has its range widened to ``[v, v + 1]``.
    """
    frames = list(frames)
    if not frames:
        raise EmptyInput("build_histogram needs at least one frame")
    values = [f.flat for f in frames]
    if not all(np.all(np.isfinite(v)) for v in values):
        raise ValidationError("non-finite intensity in histogram input")
    if lo is None:
        lo = min(float(v.min()) for v in values)
    if hi is None:
        hi = max(float(v.max()) for v in values)
    if not hi > lo:
        hi = lo + 1.0
    counts = np.zeros(BIN_COUNT, dtype=np.int64)
    for v in values:
        counts += _tally(v, lo, hi)
    return IntensityHistogram(counts, float(lo), float(hi))


def histogram_match(frame: Frame, reference: IntensityHistogram) -> Frame:
    """Monotone CDF mapping of ``frame`` onto ``reference``."""
    values = frame.flat
    vmin, vmax = float(values.min()), float(values.max())
    if not vmax > vmin:
        raise DegenerateFrame("cannot histogram-match a constant frame")
    source = build_histogram([frame])
    mapped = reference.quantile(source.cdf_at(values))
    kind = "standardized" if frame.kind == "standardized" or reference.lo < 0 else "raw_camera"
    return frame.with_values(mapped, kind)


def standardize(frame: Frame) -> Frame:
    """Zero mean, unit population standard deviation."""
    centered, sigma = _accel.centered_and_std(np.ascontiguousarray(frame.flat))
    if not sigma > 0:
        raise ZeroVariance("frame has zero variance")
    return frame.with_values(np.asarray(centered) / sigma, "standardized")


@dataclass(frozen=True)
class AugmentParams:
    speckle_alpha: float | None = None   # None -> 2% of the frame maximum
    rng_seed: int = 0

    def __post_init__(self):
        if self.speckle_alpha is not None and not self.speckle_alpha >= 0:
            raise ValidationError("speckle_alpha must be >= 0")


def noise_stream(seed: int, frame_index: int, n: int) -> np.ndarray:
    """Standard-normal draws keyed by (seed, frame index); pixel k gets draw k."""
    bitgen = np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, frame_index & 0xFFFFFFFFFFFFFFFF])
    return np.random.Generator(bitgen).standard_normal(n)


def add_speckle(frame: Frame, params: AugmentParams, frame_index: int = 0) -> Frame:
    """``I + alpha * N`` with i.i.d. standard normal ``N``, clamped at zero for raw frames."""
    values = frame.flat
    alpha = params.speckle_alpha
    if alpha is None:
        alpha = DEFAULT_SPECKLE_FRACTION * float(values.max())
    if alpha == 0:
        return frame
    noisy = values + alpha * noise_stream(params.rng_seed, frame_index, values.size)
    if frame.kind != "standardized":
        noisy = np.maximum(noisy, 0.0)
    return frame.with_values(noisy)


def prepare_training(frame: Frame, tag: str, reference: IntensityHistogram | None = None) -> Frame:
    if tag not in PREPROCESSING_TAGS:
        raise ValidationError(f"unknown preprocessing tag {tag!r}")
    if tag in ("hist", "norm") and reference is not None:
        frame = histogram_match(frame, reference)
    if tag == "norm":
        frame = standardize(frame)
    return frame


def prepare_realtime(frame: Frame, tag: str) -> Frame:
    if tag not in PREPROCESSING_TAGS:
        raise ValidationError(f"unknown preprocessing tag {tag!r}")
    if tag == "norm":
        return standardize(frame)
    return frame


# --------------------------------------------------------------------------
# histogram CSV: "HIST v1,lo=<lo>,hi=<hi>" then "bin_index,count" rows
# --------------------------------------------------------------------------

def write_histogram(path, hist: IntensityHistogram) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"HIST v1,lo={hist.lo!r},hi={hist.hi!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_index", "count"])
        for i, c in enumerate(hist.counts):
            w.writerow([i, int(c)])


def read_histogram(path) -> IntensityHistogram:
    with open(path, newline="") as fh:
        head = fh.readline().strip().split(",")
        if len(head) != 3 or head[0] != "HIST v1":
            raise FormatError(f"bad histogram header in {path}")
        try:
            meta = dict(item.split("=", 1) for item in head[1:])
            lo, hi = float(meta["lo"]), float(meta["hi"])
        except (KeyError, ValueError):
            raise FormatError(f"histogram header must carry lo= and hi= ({path})") from None
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["bin_index", "count"]:
        raise FormatError("histogram column header must be bin_index,count")
    counts = np.zeros(BIN_COUNT, dtype=np.int64)
    body = rows[1:]
    if len(body) != BIN_COUNT:
        raise FormatError(f"expected {BIN_COUNT} histogram rows, got {len(body)}")
    for idx, cnt in body:
        counts[int(idx)] = int(cnt)
    return IntensityHistogram(counts, lo, hi)
