"""Compute one batch of kernel outputs with whichever backend is active.

Run as a script it saves the batch to an ``.npz`` (argv[1]); imported, the
``compute`` function returns the same dict.  tests/test_backends.py runs the
script under ``HITSKEL_DISABLE_NUMBA=1`` and compares against an in-process
call, so the two kernel implementations are fed bit-identical inputs.
"""

import sys

import numpy as np


def compute():
    from hitskel.backend import kernels

    rng = np.random.default_rng(987)
    t_grid = np.concatenate(
        (np.logspace(-6.0, np.log10(55.0), 60), [0.149999, 0.15, 0.150001])
    )
    u = rng.uniform(1e-9, 1.0 - 1e-9, 400)
    taus = kernels.sample_taus(u, 1e-12, 200)

    elapsed = np.repeat([0.0, 0.5, 3.0, 7.9, 8.1, 30.0], 60)
    uc = rng.uniform(1e-6, 1.0 - 1e-6, elapsed.size)
    cond = kernels.conditional_taus(uc, elapsed, 1e-12, 200)

    walk = np.concatenate(
        ([0.0], np.cumsum(0.02 * rng.standard_normal(20000)))
    )
    idx, frac, sign = kernels.extract_crossings(walk, 0.3)

    event_times = np.sort(rng.uniform(0.0, 1.0, 50))
    event_values = rng.standard_normal(50)
    ref = rng.standard_normal(1000)
    mismatch = kernels.step_mismatch_integral(
        event_times, event_values, 0.0, 1e-3, ref, 0.9
    )

    return {
        "t_grid": t_grid,
        "survival": np.array([kernels.survival(float(x)) for x in t_grid]),
        "density": np.array([kernels.density(float(x)) for x in t_grid]),
        "hazard": np.array([kernels.hazard(float(x)) for x in t_grid]),
        "log_survival": np.array(
            [kernels.log_survival(float(x)) for x in t_grid]
        ),
        "u": u,
        "taus": taus,
        "uc": uc,
        "elapsed": elapsed,
        "cond": cond,
        "cross_idx": idx,
        "cross_frac": frac,
        "cross_sign": sign,
        "mismatch": np.array([mismatch]),
    }


if __name__ == "__main__":
    np.savez(sys.argv[1], **compute())
