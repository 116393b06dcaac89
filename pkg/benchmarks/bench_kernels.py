"""Time the numba kernels against the pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--n 5000000] [--repeat 5]

Also times a full simulate+analyze run with each backend (selected through
PAIRSIM_DISABLE_NUMBA in a subprocess, exactly as a user would).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from pairsim import _kernels

RUN = """
import time
from pairsim.model import DetectorParams, SourceParams
from pairsim.simulator import PulseTrainConfig, RunConfig, simulate_run
from pairsim.tia import analyze
from pairsim import _kernels
det_s = DetectorParams(9.17e-4, 100.0, 65.0)
det_i = DetectorParams(4.0e-3, 100.0, 65.0)
t0 = time.perf_counter()
tags = simulate_run(SourceParams(mu=0.12), det_s, det_i, PulseTrainConfig({pulses}), RunConfig(1))
est = analyze(tags)
print(_kernels.BACKEND, time.perf_counter() - t0, est.car)
"""


def inputs(n, rng):
    times = np.cumsum(rng.exponential(2000.0, n)).astype(np.int64)
    starts = np.sort(rng.integers(0, times[-1], n // 4))
    return times, starts


def bench(name, fn, args, repeat):
    fn(*args)  # warm-up, includes JIT compilation
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=5_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--pulses", type=int, default=10**8)
    args = ap.parse_args()

    if "numba" not in _kernels.IMPLEMENTATIONS:
        sys.exit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    times, starts = inputs(args.n, rng)
    cases = {
        "dead_time_mask": (times, 10_000),
        "tia_intervals": (starts, times, 50_000, -20_000, 20_000),
        "merge_sorted": (times, starts),
    }
    print(f"kernel timings, n = {args.n:,} (best of {args.repeat})")
    print(f"{'kernel':<16}{'numpy [ms]':>12}{'numba [ms]':>12}{'speed-up':>10}")
    for name, call_args in cases.items():
        t_np = bench(name, _kernels.IMPLEMENTATIONS["numpy"][name], call_args, args.repeat)
        t_nb = bench(name, _kernels.IMPLEMENTATIONS["numba"][name], call_args, args.repeat)
        print(f"{name:<16}{t_np * 1e3:>12.1f}{t_nb * 1e3:>12.1f}{t_np / t_nb:>10.1f}x")

    print(f"\nend-to-end simulate + analyze, {args.pulses:,} pulses at mu = 0.12")
    for flag in ("1", "0"):
        env = dict(os.environ, PAIRSIM_DISABLE_NUMBA=flag)
        out = subprocess.run(
            [sys.executable, "-c", RUN.format(pulses=args.pulses)],
            env=env, capture_output=True, text=True, check=True,
        ).stdout.split()
        print(f"{out[0]:<8}{float(out[1]):>8.2f} s   car = {float(out[2]):.3f}")


if __name__ == "__main__":
    main()
