"""Compiled frame-plane integration kernels.

Mirrors ``PixelList`` in its frame-aligned regime (integer inputs, one input
per reference interval) with the pixel state held in flat arrays, so a whole
plane can be stepped without per-pixel Python overhead.
"""

from __future__ import annotations

import math

import numba
import numpy as np

MAX_NODES = 64
D_MAX = 127
D_ZERO = 254
# worst case events one pixel can emit in a single step
_STEP_MARGIN = MAX_NODES + 80


@numba.njit(cache=True, nogil=True)
def _initial_d(x):
    if x < 1.0:
        return 0
    d = int(math.floor(math.log2(x)))
    return d if d < D_MAX else D_MAX


@numba.njit(cache=True, nogil=True)
def _residual(accum, ticks, q, p, out_p, out_d, out_dt, k):
    t = int(math.floor(ticks + 0.5))
    first = k
    while t >= q:
        if accum < 1.0:
            if k > first:
                out_dt[k - 1] += t
            else:
                out_p[k] = p
                out_d[k] = D_ZERO
                out_dt[k] = t
                k += 1
            break
        d = int(math.floor(math.log2(accum)))
        if d > D_MAX:
            d = D_MAX
        dt = int(math.floor(t * 2.0**d / accum))
        if dt < 1:
            dt = 1
        covered = int(math.ceil(dt / q) * q)
        t -= covered
        accum -= 2.0**d
        out_p[k] = p
        out_d[k] = d
        out_dt[k] = dt
        k += 1
    return k


@numba.njit(cache=True, nogil=True)
def _flush(p, n, nd, nacc, nel, evd, evdt, q, out_p, out_d, out_dt, k):
    cnt = n[p]
    for i in range(cnt):
        if evd[p, i] >= 0:
            out_p[k] = p
            out_d[k] = evd[p, i]
            out_dt[k] = evdt[p, i]
            k += 1
    t = cnt - 1
    if evd[p, t] < 0:
        k = _residual(nacc[p, t], nel[p, t], q, p, out_p, out_d, out_dt, k)
    nd[p, 0] = nd[p, t]
    nacc[p, 0] = 0.0
    nel[p, 0] = 0.0
    evd[p, 0] = -1
    n[p] = 1
    return k


@numba.njit(cache=True, nogil=True)
def _reset(p, v, n, nd, nacc, nel, evd):
    n[p] = 1
    nd[p, 0] = _initial_d(v)
    nacc[p, 0] = 0.0
    nel[p, 0] = 0.0
    evd[p, 0] = -1


@numba.njit(cache=True, nogil=True)
def _event_dt(e, q):
    dt = int(math.floor(e + 0.5)) if q > 1 else int(math.floor(e))
    if q > 1 and dt % q == 0 and dt < e:
        dt += 1
    return dt if dt > 1 else 1


@numba.njit(cache=True, nogil=True)
def _absorb(p, v, q, dt_max, n, nd, nacc, nel, evd, evdt):
    """Return index of a node that saturated at its capped threshold, else -1."""
    intensity = float(v)
    span = float(q)
    i = 0
    while i < n[p]:
        a0 = nacc[p, i]
        e0 = nel[p, i]
        saturated = False
        while intensity > 0.0 and a0 + intensity >= 2.0**nd[p, i]:
            used = 2.0**nd[p, i] - a0
            e = e0 + span * used / intensity
            evd[p, i] = nd[p, i]
            evdt[p, i] = _event_dt(e, q)
            n[p] = i + 1
            if nd[p, i] >= D_MAX or e + 2.0**nd[p, i] * span / intensity > dt_max:
                return i
            nd[p, i] += 1
            saturated = True
        nacc[p, i] = a0 + intensity
        nel[p, i] = e0 + span
        if saturated:
            c = i + 1
            if c >= MAX_NODES:
                raise RuntimeError("pixel chain exceeded MAX_NODES")
            nd[p, c] = _initial_d(intensity)
            nacc[p, c] = 0.0
            nel[p, c] = 0.0
            evd[p, c] = -1
            n[p] = c + 1
            return -1
        i += 1
    return -1


@numba.njit(cache=True, nogil=True)
def frame_step(vals, p0, p1, init, base, n, nd, nacc, nel, evd, evdt,
               q, dt_max, m, out_p, out_d, out_dt):
    """Integrate one frame for pixels ``[p0, p1)``.

    Returns ``(next_pixel, n_events)``; stops early when the output buffer
    cannot hold another pixel's worst case, so the caller can drain and resume.
    """
    k = 0
    cap = out_p.shape[0]
    for p in range(p0, p1):
        if k + _STEP_MARGIN > cap:
            return p, k
        v = float(vals[p])
        if init[p] == 0:
            init[p] = 1
            base[p] = v
            _reset(p, v, n, nd, nacc, nel, evd)
        elif abs(v - base[p]) > m:
            k = _flush(p, n, nd, nacc, nel, evd, evdt, q, out_p, out_d, out_dt, k)
            base[p] = v
            _reset(p, v, n, nd, nacc, nel, evd)
        room = math.floor((dt_max - nel[p, 0]) / q + 1e-9) * q
        if room <= 1e-9:
            k = _flush(p, n, nd, nacc, nel, evd, evdt, q, out_p, out_d, out_dt, k)
        fired = _absorb(p, v, q, dt_max, n, nd, nacc, nel, evd, evdt)
        if fired >= 0:
            for i in range(fired + 1):
                if evd[p, i] >= 0:
                    out_p[k] = p
                    out_d[k] = evd[p, i]
                    out_dt[k] = evdt[p, i]
                    k += 1
            _reset(p, v, n, nd, nacc, nel, evd)
    return p1, k


@numba.njit(cache=True, nogil=True)
def flush_all(p0, p1, init, n, nd, nacc, nel, evd, evdt, q, out_p, out_d, out_dt):
    k = 0
    cap = out_p.shape[0]
    for p in range(p0, p1):
        if k + _STEP_MARGIN > cap:
            return p, k
        if init[p]:
            k = _flush(p, n, nd, nacc, nel, evd, evdt, q, out_p, out_d, out_dt, k)
    return p1, k


class PlaneState:
    """Flat per-pixel integration state for ``n_pixels`` pixel channels."""

    def __init__(self, n_pixels: int):
        self.n_pixels = n_pixels
        self.init = np.zeros(n_pixels, np.uint8)
        self.base = np.zeros(n_pixels, np.float64)
        self.n = np.zeros(n_pixels, np.int32)
        self.nd = np.zeros((n_pixels, MAX_NODES), np.int32)
        self.nacc = np.zeros((n_pixels, MAX_NODES), np.float64)
        self.nel = np.zeros((n_pixels, MAX_NODES), np.float64)
        self.evd = np.full((n_pixels, MAX_NODES), -1, np.int32)
        self.evdt = np.zeros((n_pixels, MAX_NODES), np.int64)

    def _drain(self, p0, p1, call):
        size = max(1024, 4 * (p1 - p0) + 2 * _STEP_MARGIN)
        parts = []
        while p0 < p1:
            out = (np.empty(size, np.int64), np.empty(size, np.uint8), np.empty(size, np.int64))
            p0, k = call(p0, *out)
            parts.append(tuple(a[:k] for a in out))
        return parts

    def step(self, vals, p0, p1, q, dt_max, m):
        return self._drain(p0, p1, lambda start, *out: frame_step(
            vals, start, p1, self.init, self.base, self.n, self.nd, self.nacc,
            self.nel, self.evd, self.evdt, q, float(dt_max), float(m), *out))

    def flush(self, p0, p1, q):
        return self._drain(p0, p1, lambda start, *out: flush_all(
            start, p1, self.init, self.n, self.nd, self.nacc, self.nel,
            self.evd, self.evdt, q, *out))
