"""Closed-loop traces: CSV persistence, tracking error, correlation and alpha fitting."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dzmetric import DZ_VARIANTS
from .errors import EmptyWindow, FormatError, InsufficientSamples, NoSweepDetected, ValidationError

TRACE_COLUMNS = (
    "t", "target", "dz_measured", "dz_variant", "z_e", "gas_command",
    "true_front_z", "proxy_prad", "r_x", "z_x", "z_s", "below_strike",
)
_FLOAT_COLUMNS = tuple(c for c in TRACE_COLUMNS if c not in ("dz_variant", "below_strike"))

MAX_LAG_SECONDS = 0.5
LAG_EPS = 1e-9


@dataclass
class Trace:
    t: np.ndarray
    target: np.ndarray
    dz_measured: np.ndarray
    dz_variant: str
    z_e: np.ndarray
    gas_command: np.ndarray
    true_front_z: np.ndarray
    proxy_prad: np.ndarray
    r_x: np.ndarray
    z_x: np.ndarray
    z_s: np.ndarray
    below_strike: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        for name in _FLOAT_COLUMNS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"trace column {name} has the wrong length")
        self.below_strike = np.asarray(self.below_strike, dtype=bool)
        if self.dz_variant not in DZ_VARIANTS:
            raise ValidationError(f"unknown DZ variant {self.dz_variant!r}")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self) > 1 else 0.0

    @property
    def dz_true(self) -> np.ndarray:
        return (self.true_front_z - self.z_s) / (self.z_x - self.z_s)


def format_trace(trace: Trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for i in range(len(trace)):
        row = []
        for name in TRACE_COLUMNS:
            if name == "dz_variant":
                row.append(trace.dz_variant)
            elif name == "below_strike":
                row.append(int(trace.below_strike[i]))
            else:
                row.append(format(float(getattr(trace, name)[i]), ".9g"))
        w.writerow(row)
    return buf.getvalue()


def write_trace(path, trace: Trace) -> None:
    Path(path).write_text(format_trace(trace))


def read_trace(path) -> Trace:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != TRACE_COLUMNS:
            raise FormatError(f"trace header must be {','.join(TRACE_COLUMNS)}")
        rows = list(reader)
    if not rows:
        raise FormatError("trace has no rows")
    cols = {name: [] for name in TRACE_COLUMNS}
    try:
        for row in rows:
            if len(row) != len(TRACE_COLUMNS):
                raise FormatError(f"trace row has {len(row)} fields")
            for name, val in zip(TRACE_COLUMNS, row):
                cols[name].append(val)
        variants = set(cols["dz_variant"])
        if len(variants) != 1:
            raise FormatError("a trace must carry a single dz_variant")
        kwargs = {n: np.array(cols[n], dtype=np.float64) for n in _FLOAT_COLUMNS}
        kwargs["below_strike"] = np.array(cols["below_strike"], dtype=int) != 0
    except ValueError as exc:
        raise FormatError(f"bad trace value: {exc}") from None
    return Trace(dz_variant=variants.pop(), **kwargs)


# --------------------------------------------------------------------------
# tracking error
# --------------------------------------------------------------------------

@dataclass
class TrackingReport:
    mad_raw: float             # percent
    mad_lag_adjusted: float    # percent
    estimated_lag: float       # seconds
    window: tuple[float, float]

    def as_dict(self) -> dict:
        return {
            "mad_raw_percent": self.mad_raw,
            "mad_lag_adjusted_percent": self.mad_lag_adjusted,
            "estimated_lag_s": self.estimated_lag,
            "window_s": list(self.window),
        }


def detachment_threshold(target: np.ndarray) -> float | None:
    """Value of the first plateau the target reaches after leaving its initial level."""
    target = np.asarray(target, dtype=np.float64)
    scale = max(1.0, float(np.max(np.abs(target))))
    tol = 1e-9 * scale
    moved = np.flatnonzero(np.abs(target - target[0]) > tol)
    if moved.size == 0:
        return None
    i = int(moved[0])
    while i + 1 < target.size and abs(target[i + 1] - target[i]) > tol:
        i += 1
    return float(target[i])


def first_detachment_time(t, target, dz) -> float:
    """First time ``dz`` reaches the detachment plateau; start of the trace if none."""
    t = np.asarray(t)
    level = detachment_threshold(target)
    if level is None:
        return float(t[0])
    rising = level >= target[0]
    hit = np.flatnonzero(np.asarray(dz) >= level) if rising else np.flatnonzero(np.asarray(dz) <= level)
    return float(t[hit[0]]) if hit.size else float(t[-1])


def _mad_percent(dz, target, norm) -> float:
    return 100.0 * float(np.mean(np.abs(dz - target))) / norm


def _pearson(a, b) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b) / den if den > 0 else -np.inf


def tracking_metrics(trace: Trace, window: tuple[float, float] | None = None,
                     max_lag: float = MAX_LAG_SECONDS) -> TrackingReport:
    """Mean absolute tracking error in percent of the target span.

    The lag is the shift in ``[0, max_lag]`` maximising the Pearson correlation
    of ``dz`` against the target.  A lag whose adjusted error exceeds the raw
    error is rejected (lag 0 is reported instead).
    """
    t, target, dz = trace.t, trace.target, trace.dz_measured
    if window is None:
        window = (first_detachment_time(t, target, dz), float(t[-1]))
    sel = np.flatnonzero((t >= window[0] - 1e-12) & (t <= window[1] + 1e-12))
    if sel.size == 0:
        raise EmptyWindow(f"no samples in window {window}")
    span = float(target.max() - target.min())
    norm = span if span > 0 else float(np.mean(np.abs(target[sel])))
    if not norm > 0:
        raise EmptyWindow("target is zero throughout the window")
    lo, hi = int(sel[0]), int(sel[-1]) + 1
    raw = _mad_percent(dz[lo:hi], target[lo:hi], norm)

    dt = trace.dt if len(trace) > 1 else 1.0
    best_lag, best_r = 0, -np.inf
    for lag in range(0, int(round(max_lag / dt)) + 1):
        end = min(hi, len(trace) - lag)
        if end - lo < 2:
            break
        r = _pearson(dz[lo + lag:end + lag], target[lo:end])
        if r > best_r + 1e-12:
            best_lag, best_r = lag, r
    end = min(hi, len(trace) - best_lag)
    adjusted = _mad_percent(dz[lo + best_lag:end + best_lag], target[lo:end], norm)
    if adjusted > raw + LAG_EPS:
        best_lag, adjusted = 0, raw
    return TrackingReport(raw, adjusted, best_lag * dt, (float(t[lo]), float(t[hi - 1])))


# --------------------------------------------------------------------------
# correlation with the radiated-power proxy
# --------------------------------------------------------------------------

def correlate(trace: Trace, window_on_sqrt_dz=(0.65, 1.1), z_cut: float = 2.0, min_samples: int = 10) -> float:
    """Pearson r of ``dz**2`` against proxy power inside the sqrt(DZ) window.

    Samples whose linear-fit residual has a standard score above ``z_cut``
    are dropped before the final correlation.
    """
    dz = trace.dz_measured
    prad = trace.proxy_prad
    root = np.sqrt(np.clip(dz, 0.0, None))
    keep = (dz > 0) & (root > window_on_sqrt_dz[0]) & (root < window_on_sqrt_dz[1])
    x, y = dz[keep] ** 2, prad[keep]
    if x.size < min_samples:
        raise InsufficientSamples(f"{x.size} samples inside the window, need {min_samples}")
    slope, icept = np.polyfit(x, y, 1)
    resid = y - (slope * x + icept)
    sd = resid.std()
    if sd > 0:
        inlier = np.abs(resid - resid.mean()) / sd <= z_cut
        x, y = x[inlier], y[inlier]
    if x.size < min_samples:
        raise InsufficientSamples("too few samples left after outlier removal")
    return _pearson(x, y)


# --------------------------------------------------------------------------
# radial adjustment factor
# --------------------------------------------------------------------------

def fit_adjust_alpha(trace: Trace, r_edge: float = 1.35, expected=None, min_rx_std: float = 1e-3) -> float:
    """Least-squares slope of the Z_E excess against ``(r_x - r_edge) * (z_x - z_s)``.

    ``expected`` defaults to the simulator's true front height; an intercept
    is fitted alongside the slope.
    """
    if len(trace) < 3 or float(np.std(trace.r_x)) < min_rx_std:
        raise NoSweepDetected("r_x does not vary enough to fit the adjustment factor")
    if expected is None:
        expected = trace.true_front_z
    x = (trace.r_x - r_edge) * (trace.z_x - trace.z_s)
    y = trace.z_e - np.asarray(expected, dtype=np.float64)
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)
