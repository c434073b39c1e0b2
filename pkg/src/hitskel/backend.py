"""Kernel backend selection: numba-compiled vs pure numpy.

The hot numerical kernels (inverse-CDF bisection sampling, level-crossing
scans, series evaluation inside those loops) exist twice, with identical
algorithms:

* :mod:`hitskel._kernels` — ``@njit``-compiled (default when numba imports),
* :mod:`hitskel._kernels_np` — plain numpy, no compilation.

Set ``HITSKEL_DISABLE_NUMBA=1`` in the environment (before import) to force
the numpy path; it is also selected automatically when numba is missing or
fails to import.  ``benchmarks/bench_backends.py`` times one against the
other.  Results agree to floating-point roundoff (see tests/test_backends.py)
but are not guaranteed bit-identical across backends; determinism guarantees
(same bytes for same seed/config/worker count) hold within a backend.
"""

from __future__ import annotations

import os

_flag = os.environ.get("HITSKEL_DISABLE_NUMBA", "").strip()
NUMBA_DISABLED = _flag not in ("", "0")

HAS_NUMBA = False
if not NUMBA_DISABLED:
    try:
        import numba  # noqa: F401

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover - exercised only without numba
        HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not NUMBA_DISABLED

if USE_NUMBA:
    from hitskel import _kernels as kernels
else:  # pragma: no cover - covered by the HITSKEL_DISABLE_NUMBA test run
    from hitskel import _kernels_np as kernels


def backend_name() -> str:
    """Return ``"numba"`` or ``"numpy"`` for the active kernel backend."""
    return "numba" if USE_NUMBA else "numpy"
