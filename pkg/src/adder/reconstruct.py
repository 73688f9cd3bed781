"""Decoding intensity-event streams: framed reconstruction, DVS recovery, precision."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import DVS_DTYPE, check_stream
from .core import D_ZERO, AdderStream


def pixel_index(stream: AdderStream) -> np.ndarray:
    h = stream.header
    ev = stream.events
    return (ev["y"].astype(np.int64) * h.width + ev["x"]) * h.channels + ev["c"]


def event_times(stream: AdderStream) -> np.ndarray:
    """Start tick of every event on its pixel's decoded timeline.

    Framed-source streams round each pixel's running time up to the next
    reference-interval boundary after every event.
    """
    h = stream.header
    ev = stream.events
    pix = pixel_index(stream)
    dt = ev["dt"].astype(np.int64)
    if h.source_kind.framed:
        q = h.ref_interval
        step = -(-dt // q) * q
    else:
        step = dt
    t = np.zeros(len(pix), np.int64)
    if len(pix) == 0:
        return t
    order = np.argsort(pix, kind="stable")
    s = step[order]
    ps = pix[order]
    excl = np.cumsum(s) - s
    first = np.ones(len(ps), bool)
    first[1:] = ps[1:] != ps[:-1]
    group_start = np.maximum.accumulate(np.where(first, np.arange(len(ps)), 0))
    t[order] = excl - excl[group_start]
    return t


def frame_intensity(stream: AdderStream) -> np.ndarray:
    """Per-event intensity normalised to one reference interval."""
    ev = stream.events
    val = np.ldexp(float(stream.header.ref_interval), ev["d"].astype(np.int32)) / ev["dt"]
    val[ev["d"] == D_ZERO] = 0.0
    return val


@numba.njit(cache=True)
def _paint(frames, pix, t0, dur, val, interval):
    nf = frames.shape[0]
    for i in range(pix.shape[0]):
        f0 = t0[i] // interval
        f1 = -((-(t0[i] + dur[i])) // interval)
        if f1 > nf:
            f1 = nf
        for f in range(f0, f1):
            frames[f, pix[i]] = val[i]


def reconstruct_frames(stream: AdderStream, interval: Optional[int] = None,
                       n_frames: Optional[int] = None) -> np.ndarray:
    """Render the stream as float frames of shape ``(n, h, w, c)``.

    Each event holds its intensity over every output frame its span touches
    (start frame floored, end frame ceiled); later events overwrite shared
    boundary frames. Values are in 8-bit units per reference interval and are
    not clamped.
    """
    h = stream.header
    interval = int(interval or h.ref_interval)
    t0 = event_times(stream)
    dur = stream.events["dt"].astype(np.int64)
    if h.source_kind.framed:
        dur = -(-dur // h.ref_interval) * h.ref_interval
    if n_frames is None:
        end = int((t0 + dur).max()) if len(t0) else 0
        n_frames = -(-end // interval)
    frames = np.zeros((n_frames, h.n_pixels), np.float64)
    if len(t0):
        pix = pixel_index(stream)
        order = np.lexsort((t0, pix))
        _paint(frames, pix[order], t0[order], dur[order], frame_intensity(stream)[order], interval)
    return frames.reshape(n_frames, h.height, h.width, h.channels)


def to_u8(frames: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(frames), 0, 255).astype(np.uint8)


class FrameReconstructor(TransformerMixin, BaseEstimator):
    """Decode a stream into 8-bit frames.

    Parameters
    ----------
    interval : int, optional
        Ticks per output frame; defaults to the stream's reference interval.
    fps : float, optional
        Output rate; converted through the header tick rate when given.
    clamp : bool
        Round and clamp to uint8 (default) or return raw float intensities.
    """

    def __init__(self, interval=None, fps=None, clamp=True):
        self.interval = interval
        self.fps = fps
        self.clamp = clamp

    def fit(self, X=None, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        stream = check_stream(X)
        interval = self.interval
        if self.fps:
            interval = max(1, int(round(stream.header.tick_rate / self.fps)))
        frames = reconstruct_frames(stream, interval)
        return to_u8(frames) if self.clamp else frames


@numba.njit(cache=True)
def _recover(pix, t0, val, theta, offset, out_t, out_pix, out_p):
    k = 0
    n = pix.shape[0]
    ref = 0.0
    for i in range(n):
        if i == 0 or pix[i] != pix[i - 1]:
            ref = math.log(offset + val[i])
            continue
        cur = math.log(offset + val[i])
        diff = cur - ref
        if abs(diff) < theta:
            continue
        cnt = int(math.floor(abs(diff) / theta + 1e-9))
        sign = 1 if diff > 0 else -1
        for _ in range(cnt):
            if k < out_t.shape[0]:
                out_t[k] = t0[i]
                out_pix[k] = pix[i]
                out_p[k] = sign
            k += 1
        ref += sign * cnt * theta
    return k


def recover_dvs(stream: AdderStream, theta: float = 0.15, log_space: str = "latent") -> np.ndarray:
    """Re-derive DVS polarity events from a decoded stream.

    Log intensity is tracked per pixel at event boundaries only; a jump of
    ``k * theta`` emits ``k`` events at the boundary tick. ``log_space``
    selects ``ln(1 + I/255)`` ("latent", the transcoder's model) or ``ln I``
    ("log", plain DVS model; zero intensities are floored at 1e-3).
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    stream = check_stream(stream)
    h = stream.header
    if len(stream.events) == 0:
        return np.empty(0, DVS_DTYPE)
    pix = pixel_index(stream)
    t0 = event_times(stream)
    val = frame_intensity(stream)
    if log_space == "latent":
        val = val / 255.0
        offset = 1.0
    elif log_space == "log":
        val = np.maximum(val, 1e-3)
        offset = 0.0
    else:
        raise ValueError(f"unknown log_space {log_space!r}")
    order = np.lexsort((t0, pix))
    pix, t0, val = pix[order], t0[order], val[order]
    size = len(pix) * 4 + 16
    while True:
        out_t = np.empty(size, np.int64)
        out_pix = np.empty(size, np.int64)
        out_p = np.empty(size, np.int8)
        k = _recover(pix, t0, val, float(theta), offset, out_t, out_pix, out_p)
        if k <= size:
            break
        size = k
    ev = np.empty(k, DVS_DTYPE)
    plane = out_pix[:k] // h.channels
    ev["t"] = out_t[:k]
    ev["x"] = plane % h.width
    ev["y"] = plane // h.width
    ev["p"] = out_p[:k]
    return ev[np.argsort(ev["t"], kind="stable")]


class DvsRecovery(TransformerMixin, BaseEstimator):
    def __init__(self, theta=0.15, log_space="latent"):
        self.theta = theta
        self.log_space = log_space

    def fit(self, X=None, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        return recover_dvs(X, self.theta, self.log_space)


@dataclass(frozen=True)
class Precision:
    bits: float
    distinct_levels: int
    max_dt: int


def measure_precision(stream: AdderStream) -> Precision:
    """Effective intensity precision of the events actually emitted.

    The finest relative step an event ``<d, dt>`` can express is ``1/dt``
    (its neighbour ``<d, dt+1>``), so the effective bit depth is
    ``log2(max dt)`` over non-zero events.
    """
    ev = check_stream(stream).events
    nz = ev[ev["d"] != D_ZERO]
    if len(nz) == 0:
        return Precision(0.0, 0, 0)
    max_dt = int(nz["dt"].max())
    levels = np.unique(np.ldexp(1.0, nz["d"].astype(np.int32)) / nz["dt"])
    return Precision(math.log2(max_dt) if max_dt > 1 else 0.0, len(levels), max_dt)
