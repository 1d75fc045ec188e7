"""Compare the compiled and pure-Python kernels on the hot loops.

Usage: python bench/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from srkit import kernels
from srkit.model import builtin_model


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(model):
    rng = np.random.default_rng(1)
    q0 = rng.uniform(-0.5, 0.5, 3)
    p0 = rng.uniform(-1, 1, 3)
    N = 512
    h = np.zeros((N, 3))
    h[:, :2] = rng.standard_normal((N, 2))
    dt = np.full(N, 1.0 / N)
    return {
        "hamilton_flow (200 steps)": lambda: kernels.hamilton_flow(model, q0, p0, 0.0, 1.0, 200),
        "hamilton_flow + STM": lambda: kernels.hamilton_flow(model, q0, p0, 0.0, 1.0, 200, stm=True),
        "control_flow + sens (N=512)": lambda: kernels.control_flow(model, q0, h, dt, 1, True, True),
        "hamilton_rhs x1000": lambda: [kernels.hamilton_rhs(model, q0, p0) for _ in range(1000)],
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--models", default="heisenberg,martinet")
    args = ap.parse_args()
    if not kernels.compiled_available():
        print("compiled extension not built; only the Python backend is available")
    print(f"{'model':<12}{'kernel':<30}{'python [ms]':>13}{'compiled [ms]':>15}{'speedup':>9}")
    for name in args.models.split(","):
        model = builtin_model(name)
        for label, fn in cases(model).items():
            kernels.set_backend("python")
            tp = _time(fn, args.repeat)
            if kernels.compiled_available():
                kernels.set_backend("compiled")
                tc = _time(fn, args.repeat)
                print(f"{name:<12}{label:<30}{1e3 * tp:13.3f}{1e3 * tc:15.3f}{tp / tc:9.1f}")
            else:
                print(f"{name:<12}{label:<30}{1e3 * tp:13.3f}{'-':>15}{'-':>9}")
    kernels.set_backend("auto")


if __name__ == "__main__":
    main()
