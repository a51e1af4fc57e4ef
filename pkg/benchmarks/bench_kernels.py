#!/usr/bin/env python3
"""Time the numba kernels against their numpy fallbacks.

Each case runs a full sequence scan on random currents, checks that both
backends agree, and reports the best of ``--repeat`` wall-clock timings.

Usage:
    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --T 200 --batch 64 --width 100 512
    python3 benchmarks/bench_kernels.py --output bench.json
"""

import argparse
import json
import time

import numpy as np

from srcnet import kernels
from srcnet._numba import NUMBA_AVAILABLE

SRC_CONSTANTS = dict(alpha=0.9, rho=3.0, r=2.0, r_s=-7.0, zs_hyp=0.9, zs_dep=0.0)


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(T, batch, width, rng):
    cur = rng.normal(0.0, 1.5, size=(T, batch, width))
    b_h = np.full(width, -4.5)
    spikes = (rng.random((T, batch, width)) < 0.1).astype(np.float64)
    w_ro = rng.normal(size=(10, width))
    return {
        "src_scan": lambda be: kernels.src_scan(cur, b_h, **SRC_CONSTANTS, backend=be),
        "src_scan_noisy": lambda be: kernels.src_scan(
            cur, b_h, **SRC_CONSTANTS, r_noise=np.full(cur.shape, 2.0),
            rs_noise=np.full(cur.shape, -7.0), backend=be),
        "src_trace": lambda be: kernels.src_scan(cur, b_h, **SRC_CONSTANTS, trace=True,
                                                 backend=be)["h"],
        "lif_scan": lambda be: kernels.lif_scan(cur, 0.9, 1.0, backend=be)[0],
        "leaky_readout": lambda be: kernels.leaky_readout(spikes, w_ro, 0.99, backend=be),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=200)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--width", type=int, nargs="+", default=[100, 512])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--output", help="write results as JSON")
    args = ap.parse_args()

    if not NUMBA_AVAILABLE:
        print("numba is not installed; only the numpy path can run")
        return 1

    rng = np.random.default_rng(0)
    results = []
    print(f"{'kernel':<16}{'width':>7}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}{'max diff':>12}")
    for width in args.width:
        for name, fn in cases(args.T, args.batch, width, rng).items():
            fn("numba")  # compile outside the timed region
            t_np, out_np = best_time(lambda: fn("numpy"), args.repeat)
            t_nb, out_nb = best_time(lambda: fn("numba"), args.repeat)
            # the two tanh routes differ by an ulp, which the recurrence can amplify a little
            diff = float(np.max(np.abs(out_np - out_nb)))
            if diff > 1e-9:
                raise SystemExit(f"{name}: backends disagree by {diff:.3g}")
            results.append({"kernel": name, "T": args.T, "batch": args.batch, "width": width,
                            "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb,
                            "max_abs_diff": diff})
            print(f"{name:<16}{width:>7}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}"
                  f"{t_np / t_nb:>9.1f}x{diff:>12.1e}")

    if args.output:
        with open(args.output, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
