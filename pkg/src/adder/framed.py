"""Framed video -> intensity-event transcoding."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._engine import PlaneState
from ._validation import ConfigError, check_frames, check_is_fitted
from .core import AdderStream, SourceKind, StreamHeader, empty_events
from .pixel import PixelList

log = logging.getLogger(__name__)

U8_MAX = 255


def check_framed_config(dt_ref: int, fps: float, dt_max: int, peak: int = U8_MAX,
                        strict: bool = True) -> None:
    if dt_ref < peak:
        msg = (f"dt_ref={dt_ref} cannot represent peak intensity {peak}: "
               f"need {peak}/dt_ref <= 1 unit per tick")
        if strict:
            raise ConfigError(msg)
        log.warning("%s; bright pixels will decode with error", msg)
    if dt_ref < 1:
        raise ConfigError("dt_ref must be positive")
    if dt_max < dt_ref:
        raise ConfigError(f"dt_max={dt_max} is shorter than dt_ref={dt_ref}")
    if fps <= 0:
        raise ConfigError("fps must be positive")


class FramedTranscoder(TransformerMixin, BaseEstimator):
    """Transcode 8-bit frames into an intensity-event stream.

    Every frame is one integration of ``dt_ref`` ticks per pixel channel. A
    pixel flushes its queued events when its value departs from the baseline
    by more than ``m``; windows never exceed ``dt_max`` ticks.

    Parameters
    ----------
    dt_ref : int
        Ticks per input frame. Must be at least 255 for 8-bit input.
    fps : float
        Source frame rate; the stream runs at ``dt_ref * fps`` ticks/second.
    m : float
        Contrast threshold in 8-bit intensity levels.
    dt_max : int, optional
        Longest event span in ticks (default ``dt_ref * 120``).
    workers : int, optional
        Row-band worker threads (default: logical cores).
    source_kind : SourceKind
        Written to the header; mode-(i) event transcoding reuses this class.
    tick_rate : int, optional
        Overrides ``dt_ref * fps``.
    strict : bool
        Reject ``dt_ref < 255``. With ``False`` such configurations run (with
        a warning) so the resulting loss can be measured.
    """

    def __init__(self, dt_ref=255, fps=30.0, m=0.0, dt_max=None, workers=None,
                 source_kind=SourceKind.FRAMED_U8, tick_rate=None, strict=True):
        self.dt_ref = dt_ref
        self.fps = fps
        self.m = m
        self.dt_max = dt_max
        self.workers = workers
        self.source_kind = source_kind
        self.tick_rate = tick_rate
        self.strict = strict

    def _dt_max(self) -> int:
        return int(self.dt_max) if self.dt_max is not None else int(self.dt_ref) * 120

    def fit(self, X=None, y=None, *, shape=None, channels=None):
        """Validate parameters and prepare state for frames like ``X``.

        ``X`` may be omitted when ``shape=(height, width)`` and ``channels``
        are given.
        """
        if X is not None:
            X = check_frames(X)
            shape, channels = X.shape[1:3], X.shape[3]
        if shape is None:
            raise ValueError("fit needs frames or an explicit shape")
        channels = channels or 1
        check_framed_config(int(self.dt_ref), self.fps, self._dt_max(), strict=self.strict)
        rate = self.tick_rate or int(round(self.dt_ref * self.fps))
        self.header_ = StreamHeader(
            width=int(shape[1]), height=int(shape[0]), channels=int(channels),
            source_kind=self.source_kind, tick_rate=rate,
            ref_interval=int(self.dt_ref), max_interval=self._dt_max(),
        )
        self.state_ = PlaneState(self.header_.n_pixels)
        self.n_frames_ = 0
        n_workers = self.workers or os.cpu_count() or 1
        rows = self.header_.height
        n_bands = max(1, min(n_workers, rows))
        bounds = np.linspace(0, rows, n_bands + 1).astype(int)
        per_row = self.header_.width * self.header_.channels
        self.bands_ = [(int(a) * per_row, int(b) * per_row) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        self._pool = ThreadPoolExecutor(len(self.bands_)) if len(self.bands_) > 1 else None
        return self

    def _collect(self, parts) -> np.ndarray:
        h = self.header_
        p = np.concatenate([x[0] for x in parts]) if parts else np.empty(0, np.int64)
        ev = empty_events(len(p))
        if len(p):
            ch, w = h.channels, h.width
            ev["c"] = p % ch
            ev["x"] = (p // ch) % w
            ev["y"] = p // (ch * w)
            ev["d"] = np.concatenate([x[1] for x in parts])
            ev["dt"] = np.concatenate([x[2] for x in parts])
        return ev

    def _run(self, fn):
        if self._pool is None:
            parts = [part for a, b in self.bands_ for part in fn(a, b)]
        else:
            results = list(self._pool.map(lambda ab: fn(*ab), self.bands_))
            parts = [part for r in results for part in r]
        return self._collect(parts)

    def transcode_frame(self, frame) -> np.ndarray:
        """Integrate one frame; returns the events it released."""
        check_is_fitted(self, "header_")
        h = self.header_
        frame = check_frames(np.asarray(frame)[None], channels=h.channels,
                             shape=(h.height, h.width))[0]
        vals = np.ascontiguousarray(frame).reshape(-1)
        q, dt_max, m = int(self.dt_ref), self._dt_max(), float(self.m)
        ev = self._run(lambda a, b: self.state_.step(vals, a, b, q, dt_max, m))
        self.n_frames_ += 1
        return ev

    def finalize(self) -> np.ndarray:
        """Flush every pixel; the stream is complete afterwards."""
        check_is_fitted(self, "header_")
        q = int(self.dt_ref)
        ev = self._run(lambda a, b: self.state_.flush(a, b, q))
        self.state_ = PlaneState(self.header_.n_pixels)
        return ev

    def transform(self, X) -> AdderStream:
        """Transcode a whole clip from a fresh state."""
        check_is_fitted(self, "header_")
        h = self.header_
        X = check_frames(X, channels=h.channels, shape=(h.height, h.width))
        self.state_ = PlaneState(h.n_pixels)
        parts = [self.transcode_frame(f) for f in X]
        parts.append(self.finalize())
        return AdderStream(h, np.concatenate(parts))

    def transform_iter(self, frames: Iterable) -> Iterable[np.ndarray]:
        """Yield one event batch per frame, then the final flush batch."""
        for f in frames:
            yield self.transcode_frame(f)
        yield self.finalize()

    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("_pool", None)
        return state


def transcode_reference(frames, dt_ref=255, m=0.0, dt_max=None) -> list[list]:
    """Pure-Python framed transcode built on :class:`PixelList`.

    Returns, per pixel channel (row-major, channel-interleaved), the list of
    ``(d, dt)`` events. Slow; used to cross-check the compiled engine.
    """
    X = check_frames(frames)
    dt_max = dt_max or dt_ref * 120
    flat = X.reshape(len(X), -1)
    lists: list[Optional[PixelList]] = [None] * flat.shape[1]
    out: list[list] = [[] for _ in range(flat.shape[1])]
    for row in flat:
        for p, v in enumerate(row.tolist()):
            lst = lists[p]
            if lst is None:
                lst = lists[p] = PixelList(v, dt_max=dt_max, quantum=dt_ref)
            elif lst.should_flush(v, m):
                out[p] += lst.flush()
                lst.reset(v)
            out[p] += lst.integrate(v, dt_ref)
    for p, lst in enumerate(lists):
        if lst is not None:
            out[p] += lst.flush()
    return out
