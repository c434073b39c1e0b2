"""Pure-numpy fallback kernels.

Same call surface and same algorithms as :mod:`hitskel._kernels`, selected
by the ``HITSKEL_DISABLE_NUMBA`` environment flag (see ``hitskel.backend``).
The two backends agree to floating-point roundoff, not bit for bit: the
numpy bisection advances all pending draws in lockstep, while the compiled
version converges each draw independently.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc

T_SWITCH = 0.15
T_LO = 1e-8
T_HI = 60.0
LAMBDA1 = math.pi * math.pi / 8.0
TAIL_AGE = 8.0
_LOG_4_PI = math.log(4.0 / math.pi)
_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Term counts chosen so the dropped tail is below 1e-20 at the regime
# boundaries (t = T_SWITCH resp. t -> 0); extra terms underflow to zero.
_M_EIGEN = 40
_M_THETA = 24


def _survival_vec(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.ones_like(t)
    small = (t > 0.0) & (t < T_SWITCH)
    if np.any(small):
        ts = t[small]
        rt = 1.0 / np.sqrt(ts)
        acc = 1.0 - erfc(rt / math.sqrt(2.0))
        sign = -1.0
        for m in range(1, _M_THETA + 1):
            d = 0.5 * (
                erfc((2 * m - 1) * rt / math.sqrt(2.0))
                - erfc((2 * m + 1) * rt / math.sqrt(2.0))
            )
            acc = acc + 2.0 * sign * d
            sign = -sign
        out[small] = acc
    big = t >= T_SWITCH
    if np.any(big):
        tb = t[big]
        acc = np.zeros_like(tb)
        sign = 1.0
        for m in range(_M_EIGEN):
            c = 2.0 * m + 1.0
            acc = acc + sign / c * np.exp(-c * c * LAMBDA1 * tb)
            sign = -sign
        out[big] = 4.0 / math.pi * acc
    return out


def _density_vec(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    small = (t > 0.0) & (t < T_SWITCH)
    if np.any(small):
        ts = t[small]
        acc = np.zeros_like(ts)
        sign = 1.0
        inv2t = 0.5 / ts
        for m in range(_M_THETA):
            c = 2.0 * m + 1.0
            acc = acc + sign * c * np.exp(-c * c * inv2t)
            sign = -sign
        out[small] = 2.0 * acc / (_SQRT_2PI * ts * np.sqrt(ts))
    big = t >= T_SWITCH
    if np.any(big):
        tb = t[big]
        acc = np.zeros_like(tb)
        sign = 1.0
        for m in range(_M_EIGEN):
            c = 2.0 * m + 1.0
            acc = acc + sign * c * np.exp(-c * c * LAMBDA1 * tb)
            sign = -sign
        out[big] = 0.5 * math.pi * acc
    return out


def survival(t):
    return float(_survival_vec(np.float64(t)))


def density(t):
    return float(_density_vec(np.float64(t)))


def log_survival(t):
    if t <= 0.0:
        return 0.0
    if t > 40.0:
        return _LOG_4_PI - LAMBDA1 * t
    return math.log(survival(t))


def hazard(t):
    if t <= 0.0:
        return 0.0
    if t > 200.0:
        return LAMBDA1
    return density(t) / survival(t)


def _invert_survival_vec(target, lo, hi, cdf_tol, max_iter):
    target = np.asarray(target, dtype=np.float64)
    lo = np.full_like(target, lo) if np.isscalar(lo) else np.array(lo, dtype=np.float64)
    hi = np.full_like(target, hi) if np.isscalar(hi) else np.array(hi, dtype=np.float64)
    tol = (
        np.full_like(target, cdf_tol)
        if np.ndim(cdf_tol) == 0
        else np.asarray(cdf_tol, dtype=np.float64)
    )
    out = np.empty_like(target)
    at_lo = target >= _survival_vec(lo)
    at_hi = target <= _survival_vec(hi)
    out[at_lo] = lo[at_lo]
    out[at_hi] = hi[at_hi]
    pend = ~(at_lo | at_hi)
    for _ in range(max_iter):
        if not np.any(pend):
            break
        mid = 0.5 * (lo[pend] + hi[pend])
        s = _survival_vec(mid)
        tp = target[pend]
        done = np.abs(s - tp) <= tol[pend]
        tight = (hi[pend] - lo[pend]) <= 1e-15 * (1.0 + mid)
        go_right = s > tp
        idx = np.flatnonzero(pend)
        lo[idx[go_right]] = mid[go_right]
        hi[idx[~go_right]] = mid[~go_right]
        out[idx[done]] = mid[done]
        pend[idx[done | tight]] = False
    still = np.flatnonzero(pend)
    out[still] = 0.5 * (lo[still] + hi[still])
    return out


def sample_taus(u, cdf_tol, max_iter):
    return _invert_survival_vec(u, T_LO, T_HI, cdf_tol, max_iter)


def conditional_taus(u, elapsed, cdf_tol, max_iter):
    u = np.asarray(u, dtype=np.float64)
    elapsed = np.asarray(elapsed, dtype=np.float64)
    e = np.where(elapsed > 0.0, elapsed, 0.0)
    out = np.empty_like(e)
    # old clocks: exponential(LAMBDA1) residual in closed form, see the
    # compiled twin for why this is exact beyond TAIL_AGE
    tail = e >= TAIL_AGE
    if np.any(tail):
        out[tail] = -np.log(np.maximum(u[tail], 1e-300)) / LAMBDA1
    head = ~tail
    if np.any(head):
        eh = e[head]
        mass = _survival_vec(eh)
        target = u[head] * mass
        lo = np.where(eh > 0.0, eh, T_LO)
        x = _invert_survival_vec(
            target, lo, np.full_like(eh, T_HI), cdf_tol * mass, max_iter
        )
        out[head] = np.maximum(x - eh, 0.0)
    return out


def extract_crossings(x, eps):
    # Block scan: vectorized detection of the next candidate crossing, scalar
    # resolution of the (rare) crossing steps.  Same event semantics as the
    # compiled version, including several crossings inside one segment.
    n = x.size
    idx = np.empty(n, dtype=np.int64)
    frac = np.empty(n)
    sign = np.empty(n, dtype=np.int64)
    cnt = 0
    ref = float(x[0])
    i = 1
    while i < n:
        block = x[i:]
        hit = np.flatnonzero(np.abs(block - ref) >= eps)
        if hit.size == 0:
            break
        i += int(hit[0])
        a = float(x[i - 1])
        b = float(x[i])
        while abs(b - ref) >= eps:
            s = 1 if b > ref else -1
            level = ref + s * eps
            idx[cnt] = i
            frac[cnt] = (level - a) / (b - a)
            sign[cnt] = s
            cnt += 1
            ref = level
        i += 1
    return idx[:cnt].copy(), frac[:cnt].copy(), sign[:cnt].copy()


def step_mismatch_integral(event_times, event_values, grid_t0, grid_dt, ref, t_max):
    n = ref.size
    t = grid_t0 + grid_dt * np.arange(n)
    keep = t < t_max
    t = t[keep]
    j = np.searchsorted(event_times, t, side="right") - 1
    sv = np.where(j >= 0, event_values[np.maximum(j, 0)], 0.0)
    d = sv - ref[keep]
    return float(np.sum(d * d) * grid_dt)
