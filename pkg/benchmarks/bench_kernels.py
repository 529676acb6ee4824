"""Time the gradient-row and labelling kernels on both backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Run with RELUSYM_DISABLE_NUMBA=1 to confirm the numpy path alone; without
it both backends are timed side by side and checked for agreement.
"""
import argparse
import time

import numpy as np

from relusym import _kernels
from relusym.network import Architecture, he_init

CASES = [(5, 5, 5, 5, 1), (10, 10, 10, 10, 1), (15, 15, 15, 15, 15, 15, 1)]


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--points", type=int, default=4096)
    a = ap.parse_args()
    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    print(f"default backend: {_kernels.default_backend()}")
    print(f"{'arch':<28}{'kernel':<12}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for widths in CASES:
        net = he_init(Architecture(widths), 0)
        X = np.random.default_rng(0).standard_normal((a.points, widths[0]))
        theta, w = net.flat, net.widths_array
        for name, call in [("grad_rows", lambda b: _kernels.grad_rows(theta, w, X, backend=b)),
                           ("labels", lambda b: _kernels.sign_labels(theta, w, X, backend=b))]:
            ref = call("numpy")
            times = []
            for b in backends:
                out = call(b)  # warm-up, and compiles the numba kernel once
                assert np.allclose(out, ref, rtol=1e-12, atol=1e-12), f"{b} disagrees on {name}"
                times.append(best_of(lambda: call(b), a.repeat))
            sp = f"{times[0] / times[1]:.1f}x" if len(times) > 1 else "-"
            print(f"{str(widths):<28}{name:<12}" + "".join(f"{1e3 * t:>10.2f}ms" for t in times) + f"{sp:>10}")


if __name__ == "__main__":
    main()
