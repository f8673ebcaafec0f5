"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_backends.py [--repeat 50]

Sizes follow the real workloads: a full 720x480 camera frame for the
real-time path, a 180x120 campaign of 800 frames for the ridge solver.
"""
import argparse
import time

import numpy as np

from detachctl import _accel
from detachctl.core import FULL_HEIGHT, FULL_WIDTH

FRAME_BUDGET_MS = 1000.0 / 30.0


def best_ms(fn, repeat):
    fn()  # compile / warm caches
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1e3 * min(times), 1e3 * float(np.median(times))


def realtime_inference(kern, frame, w, b):
    c, sd = kern["centered_and_std"](frame)
    return kern["blocked_dot"](c / sd, w) + b


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    frame = rng.integers(0, 256, FULL_HEIGHT * FULL_WIDTH).astype(np.float64)
    w = rng.standard_normal(frame.size)
    X = rng.standard_normal((800, 180 * 120))
    v = rng.standard_normal(X.shape[1])
    r = rng.standard_normal(X.shape[0])
    img = rng.random((FULL_HEIGHT, FULL_WIDTH))

    cases = {
        "infer 720x480 (standardize+dot)": lambda k: realtime_inference(k, frame, w, 0.1),
        "blocked_dot 720x480": lambda k: k["blocked_dot"](frame, w),
        "matvec 800x21600": lambda k: k["matvec"](X, v),
        "rmatvec 800x21600": lambda k: k["rmatvec"](X, r),
        "outboard_row_sums 720x480": lambda k: k["outboard_row_sums"](img, 140),
    }
    print(f"active backend: {_accel.backend_name()}  (set DETACHCTL_NUMBA=0 for numpy)")
    print(f"{'kernel':34s} {'numba best/med ms':>20s} {'numpy best/med ms':>20s} {'max |diff|':>11s}")
    for name, case in cases.items():
        res = {}
        out = {}
        for backend, kern in _accel.BACKENDS.items():
            res[backend] = best_ms(lambda: case(kern), args.repeat)
            out[backend] = np.asarray(case(kern), dtype=np.float64)
        diff = float(np.max(np.abs(out["numba"] - out["numpy"])))
        nb, npy = res["numba"], res["numpy"]
        print(f"{name:34s} {nb[0]:9.3f}/{nb[1]:<9.3f} {npy[0]:9.3f}/{npy[1]:<9.3f} {diff:11.2e}")
    worst = max(best_ms(lambda: realtime_inference(k, frame, w, 0.1), args.repeat)[1]
                for k in _accel.BACKENDS.values())
    print(f"real-time inference median (slowest backend) {worst:.3f} ms vs {FRAME_BUDGET_MS:.1f} ms frame budget")


if __name__ == "__main__":
    main()
