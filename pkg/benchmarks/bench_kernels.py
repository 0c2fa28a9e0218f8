"""Compiled vs pure-Python kernel throughput.

    python benchmarks/bench_kernels.py [--reps N] [--threshold A]

Times the same workload on both backends, checks the outputs are identical,
and prints nanoseconds per simulated observation.
"""
import argparse
import time

import numpy as np

from srdetect import _backend, _pykernels
from srdetect.detectors import cusum, sr, srp
from srdetect.metrics import kernel_spec
from srdetect.model import bernoulli_rate, exponential_rate, gaussian_shift
from srdetect.rng import PRE


def bench(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def workloads(A, reps):
    nu_inf = np.full(reps, _pykernels.NU_INF, dtype=np.int64)
    for model in (gaussian_shift(), exponential_rate(1.0, 2.0), bernoulli_rate(0.2, 0.4)):
        for proc in (sr(), srp(), cusum()):
            spec = kernel_spec(proc, model, A)
            yield (f"run_lengths {proc.name:<6} {model.name}",
                   lambda impl, spec=spec: _backend.run_lengths(spec, nu_inf, 1, PRE, 0, 10 ** 8, impl=impl),
                   lambda out: int(out[0].sum()))
    spec = kernel_spec(sr(), gaussian_shift(), A)
    yield ("spliced_sum sr     gaussian",
           lambda impl: _backend.spliced_sum(spec, 1, PRE, 0, reps, 10 ** 8, impl=impl),
           lambda out: int(out[0].sum() + out[2].sum()))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=2000)
    ap.add_argument("--threshold", type=float, default=100.0)
    args = ap.parse_args(argv)
    if _backend._ckernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e .` first")
    print(f"{'workload':<48}{'steps':>12}{'compiled ns':>13}{'python ns':>12}{'speedup':>9}")
    for name, run, steps_of in workloads(args.threshold, args.reps):
        tc, oc = bench(lambda: run(_backend._ckernels))
        tp, op = bench(lambda: run(_pykernels), repeat=1)
        for a, b in zip(oc, op):
            if not np.array_equal(a, b):
                raise SystemExit(f"{name}: backends disagree")
        steps = steps_of(oc)
        print(f"{name:<48}{steps:>12}{1e9 * tc / steps:>13.1f}{1e9 * tp / steps:>12.1f}{tp / tc:>9.1f}")


if __name__ == "__main__":
    main()
