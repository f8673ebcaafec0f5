"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is picked once at import time.  Set ``DETACHCTL_NUMBA=0`` to force
the numpy path (useful for debugging or platforms without numba).  Both paths
are always importable so the benchmark can time them side by side.
"""
from __future__ import annotations

import os
import warnings

import numpy as np

_BLOCK = 256

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep in practice
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def deco(func):
            return func

        return deco


def _env_wants_numba() -> bool:
    flag = os.environ.get("DETACHCTL_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and _env_wants_numba()
if _env_wants_numba() and not HAVE_NUMBA:  # pragma: no cover
    warnings.warn("numba unavailable, falling back to numpy kernels")


# --------------------------------------------------------------------------
# numba kernels
# --------------------------------------------------------------------------

@njit(cache=True)
def _nb_blocked_dot(a, b):
    # sequential inside fixed-size blocks, pairwise across block partials
    n = a.shape[0]
    nblocks = (n + _BLOCK - 1) // _BLOCK
    partial = np.zeros(max(nblocks, 1))
    for k in range(nblocks):
        lo = k * _BLOCK
        hi = min(lo + _BLOCK, n)
        # four interleaved accumulators: fixed order, but lets the CPU pipeline
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        a3 = 0.0
        i = lo
        while i + 4 <= hi:
            a0 += a[i] * b[i]
            a1 += a[i + 1] * b[i + 1]
            a2 += a[i + 2] * b[i + 2]
            a3 += a[i + 3] * b[i + 3]
            i += 4
        while i < hi:
            a0 += a[i] * b[i]
            i += 1
        partial[k] = (a0 + a1) + (a2 + a3)
    m = nblocks
    while m > 1:
        half = m // 2
        for i in range(half):
            partial[i] = partial[2 * i] + partial[2 * i + 1]
        if m % 2 == 1:
            partial[half] = partial[m - 1]
            m = half + 1
        else:
            m = half
    return partial[0]


@njit(cache=True)
def _nb_matvec(X, v):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = _nb_blocked_dot(X[i], v)
    return out


@njit(cache=True)
def _nb_rmatvec(X, r):
    n, d = X.shape
    out = np.zeros(d)
    for i in range(n):
        ri = r[i]
        row = X[i]
        for j in range(d):
            out[j] += ri * row[j]
    return out


@njit(cache=True)
def _nb_outboard_row_sums(img, jx):
    n, m = img.shape
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(jx, m):
            acc += img[i, j]
        out[i] = acc
    return out


@njit(cache=True)
def _nb_standardize(x):
    n = x.shape[0]
    total = 0.0
    for i in range(n):
        total += x[i]
    mean = total / n
    c = x - mean
    var = _nb_blocked_dot(c, c) / n
    return c, np.sqrt(var)


# --------------------------------------------------------------------------
# numpy fallbacks
# --------------------------------------------------------------------------

def _np_blocked_dot(a, b):
    return float(np.dot(a, b))


def _np_matvec(X, v):
    return X @ v


def _np_rmatvec(X, r):
    return r @ X


def _np_outboard_row_sums(img, jx):
    return img[:, jx:].sum(axis=1)


def _np_standardize(x):
    c = x - x.mean()
    return c, float(np.sqrt(np.dot(c, c) / x.size))


def _pick(nb, fallback):
    return nb if USE_NUMBA else fallback


blocked_dot = _pick(_nb_blocked_dot, _np_blocked_dot)
matvec = _pick(_nb_matvec, _np_matvec)
rmatvec = _pick(_nb_rmatvec, _np_rmatvec)
outboard_row_sums = _pick(_nb_outboard_row_sums, _np_outboard_row_sums)
centered_and_std = _pick(_nb_standardize, _np_standardize)

BACKENDS = {
    "numba": {
        "blocked_dot": _nb_blocked_dot,
        "matvec": _nb_matvec,
        "rmatvec": _nb_rmatvec,
        "outboard_row_sums": _nb_outboard_row_sums,
        "centered_and_std": _nb_standardize,
    },
    "numpy": {
        "blocked_dot": _np_blocked_dot,
        "matvec": _np_matvec,
        "rmatvec": _np_rmatvec,
        "outboard_row_sums": _np_outboard_row_sums,
        "centered_and_std": _np_standardize,
    },
}


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


def warmup() -> None:
    """Trigger compilation (or cache load) of the active kernels on tiny inputs.

    Frames hold read-only arrays, which numba types separately, so both
    flavours are exercised.
    """
    for writeable in (True, False):
        a = np.ones(4)
        X = np.ones((2, 4))
        r = np.ones(2)
        for arr in (a, X, r):
            arr.setflags(write=writeable)
        blocked_dot(a, a)
        blocked_dot(a, np.ones(4))
        matvec(X, a)
        rmatvec(X, r)
        outboard_row_sums(X, 1)
        centered_and_std(a)
