"""Time the numba kernels against the pure-numpy fallback.

Runs the three hot paths -- exit-time sampling, conditional residual
sampling, and level-crossing extraction -- under both backends in
subprocesses (backend choice is import-time), and prints a small table.

    python3 benchmarks/bench_backends.py [--n 200000] [--repeats 3]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

_WORKER = r"""
import json, time
import numpy as np
from hitskel.backend import kernels, backend_name

n = {n}
rng = np.random.default_rng(12345)
u = rng.random(n)
elapsed = rng.random(n) * 3.0

results = {{"backend": backend_name()}}

# warm-up (numba compilation happens here, excluded from timings)
kernels.sample_taus(u[:64], 1e-12, 200)
kernels.conditional_taus(u[:64], elapsed[:64], 1e-12, 200)

t0 = time.perf_counter()
for _ in range({repeats}):
    kernels.sample_taus(u, 1e-12, 200)
results["sample_taus"] = (time.perf_counter() - t0) / {repeats}

t0 = time.perf_counter()
for _ in range({repeats}):
    kernels.conditional_taus(u, elapsed, 1e-12, 200)
results["conditional_taus"] = (time.perf_counter() - t0) / {repeats}

m = 4 * n
dw = rng.standard_normal(m) * np.sqrt(1e-5)
b = np.concatenate(([0.0], np.cumsum(dw)))
kernels.extract_crossings(b[: 1 << 12], 0.05)
t0 = time.perf_counter()
for _ in range({repeats}):
    kernels.extract_crossings(b, 0.05)
results["extract_crossings"] = (time.perf_counter() - t0) / {repeats}

print(json.dumps(results))
"""


def run_backend(disable_numba, n, repeats):
    env = dict(os.environ)
    env["HITSKEL_DISABLE_NUMBA"] = "1" if disable_numba else "0"
    code = _WORKER.format(n=n, repeats=repeats)
    out = subprocess.run(
        [sys.executable, "-c", code], capture_output=True, text=True, env=env
    )
    if out.returncode != 0:
        raise RuntimeError(out.stderr)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200000, help="draws per kernel call")
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)

    numba_res = run_backend(False, args.n, args.repeats)
    numpy_res = run_backend(True, args.n, args.repeats)
    names = ["sample_taus", "conditional_taus", "extract_crossings"]
    print(f"{'kernel':<20} {'numba [s]':>12} {'numpy [s]':>12} {'speedup':>9}")
    for name in names:
        a, b = numba_res[name], numpy_res[name]
        print(f"{name:<20} {a:>12.4f} {b:>12.4f} {b / a:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
