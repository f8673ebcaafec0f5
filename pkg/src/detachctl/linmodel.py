"""Linear activation map: Z_E = <weights, frame> + bias.

Training is ridge regression with an unpenalized intercept, solved by
conjugate gradients on the regularized normal equations (CGLS).  The Gram
matrix is never formed; the solver only needs ``X @ v`` and ``X.T @ r``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _accel
from .core import Frame
from .errors import DimensionMismatch, FormatError, InsufficientData, ValidationError
from .preprocess import PREPROCESSING_TAGS

log = logging.getLogger(__name__)

DEFAULT_LAMBDA_SCALE = 1e-4
GRADIENT_RTOL = 1e-8
MAX_PIXELS = 4096 * 4096


@dataclass(frozen=True)
class LinearMap:
    weights: np.ndarray
    bias: float
    preprocessing: str = "base"
    ridge_lambda: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        if w.ndim != 2 or w.size == 0:
            raise ValidationError("weights must be a non-empty 2D grid")
        if not np.all(np.isfinite(w)) or not math.isfinite(self.bias):
            raise ValidationError("model weights and bias must be finite")
        if self.preprocessing not in PREPROCESSING_TAGS:
            raise ValidationError(f"unknown preprocessing tag {self.preprocessing!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))
        object.__setattr__(self, "ridge_lambda", float(self.ridge_lambda))

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape


@dataclass
class SolveInfo:
    iterations: int
    converged: bool
    grad_norm_rel: float
    loss_history: list = field(default_factory=list)


def default_lambda(X: np.ndarray) -> float:
    """1e-4 times the mean eigenvalue of the centered Gram matrix."""
    Xc = X - X.mean(axis=0)
    return DEFAULT_LAMBDA_SCALE * float(np.einsum("ij,ij->", Xc, Xc)) / X.shape[1]


def ridge_objective(X, y, w, b, lam) -> float:
    r = X @ w + b - y
    return float(r @ r + lam * (w @ w))


def ridge_gradient(X, y, w, b, lam) -> tuple[np.ndarray, float]:
    """Analytic gradient of :func:`ridge_objective` with respect to ``(w, b)``."""
    r = X @ w + b - y
    return 2.0 * (X.T @ r) + 2.0 * lam * w, 2.0 * float(r.sum())


def solve_ridge(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    rtol: float = GRADIENT_RTOL,
    maxiter: int | None = None,
) -> tuple[np.ndarray, float, SolveInfo]:
    """CGLS on the centered problem; the intercept is recovered from the means."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    xbar = X.mean(axis=0)
    ybar = float(y.mean())
    yc = y - ybar

    def A(v):
        return _accel.matvec(X, v) - float(xbar @ v)

    def At(r):
        return _accel.rmatvec(X, r) - xbar * float(r.sum())

    if maxiter is None:
        maxiter = max(4 * min(n, d), 500)

    w = np.zeros(d)
    r = yc.copy()
    s = At(r)
    ref = math.sqrt(float(s @ s))
    info = SolveInfo(0, True, 0.0, [float(r @ r)])
    if ref == 0.0:
        return w, ybar, info
    p = s.copy()
    gamma = float(s @ s)
    for it in range(1, maxiter + 1):
        q = A(p)
        delta = float(q @ q) + lam * float(p @ p)
        if delta <= 0.0:
            break
        alpha = gamma / delta
        w += alpha * p
        r -= alpha * q
        s = At(r) - lam * w
        gamma_new = float(s @ s)
        info.iterations = it
        info.loss_history.append(float(r @ r) + lam * float(w @ w))
        info.grad_norm_rel = math.sqrt(gamma_new) / ref
        if info.grad_norm_rel <= rtol:
            break
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    info.converged = info.grad_norm_rel <= rtol
    if not info.converged:
        log.warning("ridge solve stopped at relative gradient %.3g after %d iterations",
                    info.grad_norm_rel, info.iterations)
    return w, ybar - float(xbar @ w), info


def stack_frames(frames: Sequence[Frame]) -> np.ndarray:
    shape = frames[0].shape
    for k, f in enumerate(frames):
        if f.shape != shape:
            raise DimensionMismatch(f"frame {k} has shape {f.shape}, expected {shape}")
    return np.vstack([f.flat for f in frames])


def train(samples, lam: float | None = None, preprocessing: str = "base", return_info: bool = False):
    """Fit a :class:`LinearMap` to labeled samples whose frames are already preprocessed.

    ``lam=None`` picks :func:`default_lambda`.  With ``lam=0`` and
    rank-deficient data the minimum-norm solution is returned.
    """
    samples = list(samples)
    if len(samples) < 2:
        raise InsufficientData("training needs at least 2 samples")
    if lam is not None and not lam >= 0:
        raise ValidationError("ridge lambda must be >= 0")
    frames = [s.frame for s in samples]
    X = stack_frames(frames)
    y = np.array([s.z_e_label for s in samples], dtype=np.float64)
    if lam is None:
        lam = default_lambda(X)
    w, b, info = solve_ridge(X, y, lam)
    model = LinearMap(w.reshape(frames[0].shape), b, preprocessing, lam)
    return (model, info) if return_info else model


def infer(model: LinearMap, frame: Frame) -> float:
    if frame.shape != model.shape:
        raise DimensionMismatch(f"frame shape {frame.shape} != model shape {model.shape}")
    return float(_accel.blocked_dot(model.weights.reshape(-1), np.ascontiguousarray(frame.flat))) + model.bias


def infer_batch(model: LinearMap, frames: Sequence[Frame]) -> np.ndarray:
    X = stack_frames(list(frames))
    if X.shape[1] != model.weights.size or frames[0].shape != model.shape:
        raise DimensionMismatch(f"frame shape {frames[0].shape} != model shape {model.shape}")
    return _accel.matvec(X, model.weights.reshape(-1)) + model.bias


def r2_score(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")


# --------------------------------------------------------------------------
# LINMAP v1 text format
# --------------------------------------------------------------------------

def format_model(model: LinearMap) -> str:
    h, w = model.shape
    lines = [
        f"LINMAP v1 {w} {h} {model.preprocessing} {format(model.ridge_lambda, '.17g')}",
        f"bias {format(model.bias, '.17g')}",
    ]
    for row in model.weights:
        lines.append(" ".join(format(float(v), ".17g") for v in row))
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> LinearMap:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise FormatError("model file truncated")
    head = lines[0].split()
    if len(head) != 6 or head[0] != "LINMAP" or head[1] != "v1":
        raise FormatError(f"bad model header: {lines[0]!r}")
    try:
        width, height = int(head[2]), int(head[3])
        lam = float(head[5])
    except ValueError:
        raise FormatError(f"bad model header: {lines[0]!r}") from None
    if width <= 0 or height <= 0 or width * height > MAX_PIXELS:
        raise FormatError(f"model dimensions {width}x{height} out of range")
    if head[4] not in PREPROCESSING_TAGS:
        raise FormatError(f"unknown preprocessing tag {head[4]!r}")
    bias_line = lines[1].split()
    if len(bias_line) != 2 or bias_line[0] != "bias":
        raise FormatError("second line must be 'bias <value>'")
    rows = lines[2:]
    if len(rows) != height:
        raise FormatError(f"model truncated: expected {height} weight rows, found {len(rows)}")
    try:
        bias = float(bias_line[1])
        weights = np.array([[float(v) for v in ln.split()] for ln in rows if len(ln.split()) == width])
    except ValueError as exc:
        raise FormatError(f"bad model value: {exc}") from None
    if weights.shape != (height, width):
        raise FormatError(f"every weight row must have {width} values")
    if not np.all(np.isfinite(weights)) or not math.isfinite(bias) or not math.isfinite(lam):
        raise FormatError("model contains non-finite values")
    return LinearMap(weights, bias, head[4], lam)


def save_model(path, model: LinearMap) -> None:
    Path(path).write_text(format_model(model))


def load_model(path) -> LinearMap:
    return parse_model(Path(path).read_text())
