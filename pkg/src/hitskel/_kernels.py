"""Numba-compiled hot kernels.

Algorithmic mirror of :mod:`hitskel._kernels_np`; keep the two in sync.
Everything here works in *scaled* time units (mesh eps = 1, exit from
[-1, 1]); callers rescale by eps**2.

The exit law of standard Brownian motion from [-1, 1] is evaluated through
two complementary series for the survival function P(tau > t):

* spectral form, accurate for t not too small::

      S(t) = (4/pi) * sum_m (-1)^m / (2m+1) * exp(-(2m+1)^2 pi^2 t / 8)

* reflection (image) form, accurate for small t, written with the normal
  tail Qbar(x) = erfc(x/sqrt(2))/2 so the near-1 regime stays stable::

      S(t) = 1 - 2 Qbar(1/sqrt(t))
               + 2 * sum_{m>=1} (-1)^m [Qbar((2m-1)/sqrt(t)) - Qbar((2m+1)/sqrt(t))]

The two agree to ~1e-15 at the crossover T_SWITCH = 0.15 (tested).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

T_SWITCH = 0.15
T_LO = 1e-8
T_HI = 60.0
LAMBDA1 = math.pi * math.pi / 8.0  # leading eigenvalue = asymptotic hazard
# Age beyond which the residual law is exponential(LAMBDA1) to double
# precision: the subleading spectral term is down by exp(-pi^2 * e) < 1e-34.
TAIL_AGE = 8.0
_LOG_4_PI = math.log(4.0 / math.pi)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@njit(cache=True)
def _norm_tail(x):
    # P(Z > x) for standard normal Z
    return 0.5 * math.erfc(x / math.sqrt(2.0))


@njit(cache=True)
def survival(t):
    """P(tau > t) for the exit time of standard BM from [-1, 1]."""
    if t <= 0.0:
        return 1.0
    if t < T_SWITCH:
        rt = 1.0 / math.sqrt(t)
        acc = 1.0 - 2.0 * _norm_tail(rt)
        sign = -1.0
        for m in range(1, 64):
            d = _norm_tail((2 * m - 1) * rt) - _norm_tail((2 * m + 1) * rt)
            acc += 2.0 * sign * d
            if d < 1e-20:
                break
            sign = -sign
        return acc
    acc = 0.0
    sign = 1.0
    for m in range(400):
        c = 2.0 * m + 1.0
        term = sign / c * math.exp(-c * c * LAMBDA1 * t)
        acc += term
        if abs(term) < 1e-20:
            break
        sign = -sign
    return 4.0 / math.pi * acc


@njit(cache=True)
def density(t):
    """Density of the exit time of standard BM from [-1, 1]."""
    if t <= 0.0:
        return 0.0
    if t < T_SWITCH:
        acc = 0.0
        sign = 1.0
        inv2t = 0.5 / t
        for m in range(64):
            c = 2.0 * m + 1.0
            term = sign * c * math.exp(-c * c * inv2t)
            acc += term
            if abs(term) < 1e-30:
                break
            sign = -sign
        return 2.0 * acc / (_SQRT_2PI * t * math.sqrt(t))
    acc = 0.0
    sign = 1.0
    for m in range(400):
        c = 2.0 * m + 1.0
        term = sign * c * math.exp(-c * c * LAMBDA1 * t)
        acc += term
        if abs(term) < 1e-20:
            break
        sign = -sign
    return 0.5 * math.pi * acc


@njit(cache=True)
def log_survival(t):
    """log P(tau > t); stays finite long after survival() underflows."""
    if t <= 0.0:
        return 0.0
    if t > 40.0:
        # remaining spectral terms are below exp(-8 * LAMBDA1 * t) ~ 1e-171
        return _LOG_4_PI - LAMBDA1 * t
    return math.log(survival(t))


@njit(cache=True)
def hazard(t):
    """Hazard rate density(t)/survival(t); tends to pi^2/8 for large t."""
    if t <= 0.0:
        return 0.0
    if t > 200.0:
        return LAMBDA1
    return density(t) / survival(t)


@njit(cache=True)
def _invert_survival(target, lo, hi, cdf_tol, max_iter):
    # survival() is strictly decreasing; find t in [lo, hi] with S(t) = target
    if target >= survival(lo):
        return lo
    if target <= survival(hi):
        return hi
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        s = survival(mid)
        if abs(s - target) <= cdf_tol:
            return mid
        if s > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * (1.0 + mid):
            break
    return 0.5 * (lo + hi)


@njit(cache=True)
def sample_taus(u, cdf_tol, max_iter):
    """Inverse-CDF draws: solve survival(t) = u[i] by bisection on [T_LO, T_HI]."""
    out = np.empty(u.size)
    for i in range(u.size):
        out[i] = _invert_survival(u[i], T_LO, T_HI, cdf_tol, max_iter)
    return out


@njit(cache=True)
def conditional_taus(u, elapsed, cdf_tol, max_iter):
    """Residual draws r >= 0 with law (tau - e | tau > e), e = elapsed[i].

    Solves survival(e + r) = u[i] * survival(e); the tolerance is scaled by
    the conditioning mass so resolution is relative, not absolute.  Beyond
    TAIL_AGE the law is exponential(LAMBDA1) to double precision and is
    inverted in closed form, which never loses resolution however small the
    surviving mass is.  Callers must still reject elapsed values whose
    survival mass underflows entirely (see renewal module).
    """
    out = np.empty(u.size)
    for i in range(u.size):
        e = elapsed[i]
        if e <= 0.0:
            out[i] = _invert_survival(u[i], T_LO, T_HI, cdf_tol, max_iter)
        elif e >= TAIL_AGE:
            uu = u[i] if u[i] > 1e-300 else 1e-300
            out[i] = -math.log(uu) / LAMBDA1
        else:
            mass = survival(e)
            target = u[i] * mass
            x = _invert_survival(target, e, T_HI, cdf_tol * mass, max_iter)
            r = x - e
            out[i] = r if r > 0.0 else 0.0
    return out


@njit(cache=True)
def extract_crossings(x, eps):
    """Scan a sampled scalar path for successive +-eps level crossings.

    Walks the samples keeping a reference level ``ref`` (last crossing level,
    initially x[0]); each time the segment (x[i-1], x[i]) reaches ref +- eps,
    records the sample index i, the fractional position of the linearly
    interpolated crossing inside the segment, and the crossing direction,
    then rebases ref to the crossed level.  Several crossings inside one
    segment are resolved sequentially along the segment.

    Returns (idx, frac, sign) arrays; the crossing time is

        t[i-1] + frac * (t[i] - t[i-1]).
    """
    n = x.size
    idx = np.empty(n, dtype=np.int64)
    frac = np.empty(n)
    sign = np.empty(n, dtype=np.int64)
    cnt = 0
    ref = x[0]
    for i in range(1, n):
        a = x[i - 1]
        b = x[i]
        while abs(b - ref) >= eps:
            s = 1 if b > ref else -1
            level = ref + s * eps
            idx[cnt] = i
            frac[cnt] = (level - a) / (b - a)
            sign[cnt] = s
            cnt += 1
            ref = level
    return idx[:cnt].copy(), frac[:cnt].copy(), sign[:cnt].copy()


@njit(cache=True)
def step_mismatch_integral(event_times, event_values, grid_t0, grid_dt, ref, t_max):
    """integral_0^t_max |step(t) - ref(t)|^2 dt on a uniform reference grid.

    ``step`` holds event_values[j] on [event_times[j], event_times[j+1}) and
    0.0 before the first event; ``ref[i]`` lives at grid_t0 + i*grid_dt.
    Left-endpoint rule in the grid step (the grid is assumed much finer than
    the event spacing).
    """
    n = ref.size
    total = 0.0
    j = -1  # index of last event at or before current grid time
    m = event_times.size
    for i in range(n):
        t = grid_t0 + grid_dt * i
        if t >= t_max:
            break
        while j + 1 < m and event_times[j + 1] <= t:
            j += 1
        sv = event_values[j] if j >= 0 else 0.0
        d = sv - ref[i]
        total += d * d
    return total * grid_dt
