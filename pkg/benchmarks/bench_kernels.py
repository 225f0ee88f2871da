"""Compare the numpy and numba kernel backends on desk-scale shapes.

    python benchmarks/bench_kernels.py [--repeat N]

Prints median wall time per call and the largest relative disagreement
between the two backends for each kernel.
"""

import argparse
import math
import statistics
import time

import numpy as np

from dfmr.kernels import get_backend


def _median_ms(fn, repeat):
    fn()  # warm-up (also triggers numba compilation)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return 1e3 * statistics.median(times)


def cases(rng):
    x = rng.standard_normal((16, 64, 64))
    w = rng.standard_normal((16, 16, 3, 3))
    b = rng.standard_normal(16)
    g = rng.standard_normal((16, 64, 64))
    img = rng.standard_normal((4, 64, 64)) + 1j * rng.standard_normal((4, 64, 64))
    coords = rng.uniform(-math.pi, math.pi, size=(100 * 101, 2))
    samples = rng.standard_normal((4, coords.shape[0])) + 1j * rng.standard_normal((4, coords.shape[0]))
    return {
        "conv2d_forward 16->16 64x64": lambda k: k.conv2d_forward(x, w, b)[0],
        "conv2d_backward 16->16 64x64": lambda k: k.conv2d_backward(x, w, g, True)[0],
        "nudft_forward 4 coils, 10100 samples": lambda k: k.nudft_forward(img, coords),
        "nudft_adjoint 4 coils, 10100 samples": lambda k: k.nudft_adjoint(samples, coords, (64, 64)),
        "nudft_jacobian 4 coils, 10100 samples": lambda k: k.nudft_jacobian(img, coords)[1],
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    ref = get_backend("numpy")
    fast = get_backend("numba")
    if fast is ref:
        fast = None
        print("numba not installed; timing numpy only")
    print(f"{'kernel':40s} {'numpy ms':>10s} {'numba ms':>10s} {'max rel diff':>13s}")
    for name, fn in cases(rng).items():
        t_np = _median_ms(lambda: fn(ref), args.repeat)
        if fast is None:
            print(f"{name:40s} {t_np:10.2f}")
            continue
        t_nb = _median_ms(lambda: fn(fast), args.repeat)
        a, b = fn(ref), fn(fast)
        diff = np.linalg.norm(a - b) / np.linalg.norm(a)
        print(f"{name:40s} {t_np:10.2f} {t_nb:10.2f} {diff:13.2e}")


if __name__ == "__main__":
    main()
