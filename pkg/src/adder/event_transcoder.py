"""DVS / DAVIS sources to intensity events.

Three pipelines share the pixel model:

``"i"``
    EDI reconstructs latent frames every ``dt_ref`` ticks and the framed
    transcoder consumes them.
``"ii"``
    Deblurred APS frames set each pixel's latent intensity; DVS events
    between exposures step it in log space.
``"iii"``
    DVS events only; the latent plane restarts at mid-gray every
    ``reset_interval`` ticks.

In the event-driven pipelines a pixel integrates ``L * 255 * span / dt_ref``
units over every ``span`` ticks it holds latent value ``L``, and checks the
contrast threshold against ``L * 255`` whenever ``L`` changes.
"""

from __future__ import annotations

import logging
import math
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import ConfigError, check_dvs_events, check_is_fitted
from .core import AdderStream, SourceKind, StreamHeader, empty_events
from .edi import DEFAULT_THETA, ApsFrame, EdiDeblurrer, _window
from .framed import FramedTranscoder
from .pixel import PixelList

log = logging.getLogger(__name__)

TICKS_PER_SECOND = 1_000_000
MID_GRAY = 0.5
MODES = ("i", "ii", "iii")
_KIND = {"i": SourceKind.DAVIS_MODE_I, "ii": SourceKind.DAVIS_MODE_II,
         "iii": SourceKind.DVS_MODE_III}


class OrderingError(ValueError):
    """An event older than its pixel's last update."""


class LatentState:
    """Per-pixel latent intensity ``L`` (1.0 = full scale), its log form
    ``ln(1 + L)`` and the tick of the last update."""

    def __init__(self, n_pixels: int):
        self.linear = [0.0] * n_pixels
        self.log = [0.0] * n_pixels
        self.t = [0] * n_pixels

    def set(self, p: int, level: float) -> None:
        level = max(float(level), 0.0)
        self.linear[p] = level
        self.log[p] = math.log1p(level)

    def step(self, p: int, polarity: int, theta: float) -> None:
        lt = self.log[p] + polarity * theta
        if lt < 0.0:
            # a negative log latent means a negative linear one: clamp both
            lt = 0.0
        self.log[p] = lt
        self.linear[p] = math.expm1(lt)


class EventPlane:
    """Latent state plus one pixel list per pixel, with an event sink."""

    def __init__(self, width: int, height: int, dt_ref: int, m: float, dt_max: int):
        self.width, self.height = width, height
        self.dt_ref, self.m, self.dt_max = dt_ref, float(m), dt_max
        n = width * height
        self.state = LatentState(n)
        self.lists: list[Optional[PixelList]] = [None] * n
        self._p: list[int] = []
        self._d: list[int] = []
        self._dt: list[int] = []

    def _emit(self, p: int, events) -> None:
        for d, dt in events:
            self._p.append(p)
            self._d.append(d)
            self._dt.append(dt)

    def start(self, p: int, level: float, t: int) -> None:
        self.state.set(p, level)
        self.state.t[p] = t
        self.lists[p] = PixelList(self.state.linear[p] * 255.0, dt_max=self.dt_max,
                                  quantum=1, ref_span=self.dt_ref)

    def fill(self, p: int, t: int) -> None:
        """Integrate the pixel's current latent value up to tick ``t``."""
        span = t - self.state.t[p]
        if span < 0:
            raise OrderingError(f"event at t={t} precedes pixel {p}'s last update "
                                f"t={self.state.t[p]}")
        if span:
            units = self.state.linear[p] * 255.0 * span / self.dt_ref
            self._emit(p, self.lists[p].integrate(units, span))
            self.state.t[p] = t

    def integrate_span(self, p: int, value: float, t: int) -> None:
        """Integrate an explicit 8-bit ``value`` up to tick ``t``."""
        span = t - self.state.t[p]
        if span < 0:
            raise OrderingError(f"t={t} precedes pixel {p}'s last update")
        if span:
            self._emit(p, self.lists[p].integrate(value * span / self.dt_ref, span))
            self.state.t[p] = t

    def check(self, p: int, value: Optional[float] = None) -> bool:
        """Flush when ``value`` (default: the latent) leaves the contrast band."""
        v = self.state.linear[p] * 255.0 if value is None else value
        lst = self.lists[p]
        if lst.should_flush(v, self.m):
            self._emit(p, lst.flush())
            lst.reset(v)
            return True
        return False

    def integrate_dvs_event(self, x: int, y: int, t: int, polarity: int, theta: float) -> None:
        p = y * self.width + x
        if self.lists[p] is None:
            return
        self.fill(p, t)
        self.state.step(p, polarity, theta)
        self.check(p)

    def finish(self, t_end: int) -> None:
        for p, lst in enumerate(self.lists):
            if lst is not None:
                self.fill(p, max(t_end, self.state.t[p]))
                self._emit(p, lst.flush())

    def drain(self) -> np.ndarray:
        """Events emitted so far, in emission order; clears the sink."""
        ev = empty_events(len(self._p))
        if len(ev):
            p = np.asarray(self._p, np.int64)
            ev["x"], ev["y"] = p % self.width, p // self.width
            ev["d"] = self._d
            ev["dt"] = self._dt
        self._p, self._d, self._dt = [], [], []
        return ev


def integrate_dvs_event(plane: EventPlane, event, theta: float = DEFAULT_THETA) -> np.ndarray:
    """Apply one DVS event ``(t, x, y, p)``; returns the events it released."""
    t, x, y, pol = (int(v) for v in event)
    plane.integrate_dvs_event(x, y, t, pol, theta)
    return plane.drain()


def ingest_deblurred_frame(plane: EventPlane, blurry: np.ndarray, latent_end: np.ndarray,
                           exposure: tuple[int, int]) -> np.ndarray:
    """Bring every pixel through one APS exposure.

    Before the exposure each pixel holds its previous latent value. Over the
    exposure it integrates the blurry value, which is exactly the exposure
    average, and afterwards it holds the deblurred latent at the exposure end.
    Both values are checked against the contrast threshold.
    """
    s, e = exposure
    h, w = plane.height, plane.width
    if blurry.shape != (h, w) or latent_end.shape != (h, w):
        raise ValueError(f"frame shape {blurry.shape} does not match the plane {(h, w)}")
    b = blurry.astype(np.float64).ravel().tolist()
    lat = (latent_end.ravel() / 255.0).tolist()
    for p in range(h * w):
        if plane.lists[p] is None:
            plane.start(p, b[p] / 255.0, s)
        else:
            plane.fill(p, s)
            plane.check(p, b[p])
        plane.integrate_span(p, b[p], e)
        plane.state.set(p, lat[p])
        plane.check(p)
    return plane.drain()


class EventTranscoder(TransformerMixin, BaseEstimator):
    """Transcode DVS (and optionally APS) input into an intensity-event stream.

    Parameters
    ----------
    mode : {"i", "ii", "iii"}
        Pipeline, see the module docstring.
    dt_ref : int
        Ticks per deblurred frame (modes i, ii) and the intensity scale:
        full-scale latent integrates 255 units per ``dt_ref`` ticks.
        Default ``tick_rate / 500``.
    tick_rate : int
        Ticks per second; DVS timestamps are read in these units.
    m : float
        Contrast threshold in 8-bit levels.
    dt_max : int, optional
        Longest event span; default ``4 * tick_rate``.
    theta : float
        DVS threshold in log units; fixed in mode iii and whenever
        ``optimize`` is off.
    optimize : bool
        Search the threshold per APS frame (modes i, ii). Events after a
        frame use the most recent optimised value.
    reset_interval : int, optional
        Mode iii latent reset period; default half a second.
    """

    def __init__(self, mode="iii", dt_ref=None, tick_rate=TICKS_PER_SECOND, m=0.0,
                 dt_max=None, theta=DEFAULT_THETA, optimize=False, reset_interval=None):
        self.mode = mode
        self.dt_ref = dt_ref
        self.tick_rate = tick_rate
        self.m = m
        self.dt_max = dt_max
        self.theta = theta
        self.optimize = optimize
        self.reset_interval = reset_interval

    def _params(self):
        rate = int(self.tick_rate)
        dt_ref = int(self.dt_ref) if self.dt_ref is not None else rate // 500
        dt_max = int(self.dt_max) if self.dt_max is not None else 4 * rate
        reset = int(self.reset_interval) if self.reset_interval is not None else rate // 2
        return rate, dt_ref, dt_max, reset

    def fit(self, X=None, y=None, *, shape=None):
        """Validate parameters for a sensor of ``shape=(height, width)``."""
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if shape is None:
            raise ValueError("fit needs shape=(height, width)")
        rate, dt_ref, dt_max, reset = self._params()
        if dt_ref <= 0 or dt_max < dt_ref:
            raise ConfigError(f"need 0 < dt_ref <= dt_max, got dt_ref={dt_ref}, dt_max={dt_max}")
        if self.mode == "i" and dt_ref < 255:
            raise ConfigError("mode i needs dt_ref >= 255 to represent 8-bit frames")
        if reset <= 0:
            raise ConfigError("reset_interval must be positive")
        if not self.theta > 0:
            raise ConfigError("theta must be positive")
        self.header_ = StreamHeader(width=int(shape[1]), height=int(shape[0]), channels=1,
                                    source_kind=_KIND[self.mode], tick_rate=rate,
                                    ref_interval=dt_ref, max_interval=dt_max)
        return self

    def transform(self, X, frames: Optional[Sequence[ApsFrame]] = None,
                  start: Optional[int] = None, end: Optional[int] = None) -> AdderStream:
        """Transcode DVS events ``X`` (with APS ``frames`` for modes i and ii).

        The stream timeline begins at ``start``: the first exposure start in
        modes i and ii, tick 0 in mode iii. Earlier events are ignored.
        ``end`` defaults to the last input time.
        """
        check_is_fitted(self, "header_")
        events = check_dvs_events(X, self.header_.width, self.header_.height)
        if self.mode == "iii":
            ev = self._mode_iii(events, start, end)
        else:
            if not frames:
                raise ValueError(f"mode {self.mode} needs APS frames")
            frames = sorted(frames, key=lambda f: f.exposure_start)
            for f in frames:
                if f.shape != (self.header_.height, self.header_.width):
                    raise ValueError(f"APS frame shape {f.shape} does not match the sensor")
            run = self._mode_i if self.mode == "i" else self._mode_ii
            ev = run(events, frames, start, end)
        self.n_events_ = len(ev)
        return AdderStream(self.header_, ev)

    # -- pipelines ---------------------------------------------------------

    def _plane(self):
        _, dt_ref, dt_max, _ = self._params()
        h = self.header_
        return EventPlane(h.width, h.height, dt_ref, self.m, dt_max)

    @staticmethod
    def _bounds(events, start, end, default_start, extra_end=0):
        start = default_start if start is None else int(start)
        last = int(events["t"][-1]) if len(events) else start
        end = max(last, extra_end, start) if end is None else int(end)
        dropped = int((events["t"] < start).sum()) if len(events) else 0
        if dropped:
            log.info("ignoring %d events before the stream start t=%d", dropped, start)
        return start, end

    def _mode_iii(self, events, start, end):
        _, _, _, reset = self._params()
        start, end = self._bounds(events, start, end, 0)
        plane = self._plane()
        n = plane.width * plane.height
        for p in range(n):
            plane.start(p, MID_GRAY, start)
        theta = float(self.theta)
        sel = events[(events["t"] >= start) & (events["t"] <= end)]
        ts = sel["t"].astype(np.int64).tolist()
        xs, ys, ps = sel["x"].tolist(), sel["y"].tolist(), sel["p"].tolist()
        next_reset = start + reset
        for t, x, y, pol in zip(ts, xs, ys, ps):
            while next_reset <= t:
                self._reset_plane(plane, next_reset)
                next_reset += reset
            plane.integrate_dvs_event(x, y, t, pol, theta)
        while next_reset < end:
            self._reset_plane(plane, next_reset)
            next_reset += reset
        plane.finish(end)
        return plane.drain()

    @staticmethod
    def _reset_plane(plane: EventPlane, t: int) -> None:
        for p in range(plane.width * plane.height):
            plane.fill(p, t)
            plane.state.set(p, MID_GRAY)
            plane.check(p)

    def _deblurrer(self, events):
        return EdiDeblurrer(theta=self.theta, optimize=self.optimize).fit(events)

    def _mode_ii(self, events, frames, start, end):
        start, end = self._bounds(events, start, end, frames[0].exposure_start,
                                  frames[-1].exposure_end)
        edi = self._deblurrer(events)
        latents = edi.transform(frames)
        self.thetas_ = edi.thetas_
        self.timings_ = edi.timings_
        plane = self._plane()
        t_all = events["t"]
        theta = float(self.theta)
        cursor = np.searchsorted(t_all, start, side="left")
        parts = []
        for k, frame in enumerate(frames):
            s, e = frame.exposure_start, frame.exposure_end
            if e <= start or s > end:
                continue
            # events between the previous exposure and this one
            stop = np.searchsorted(t_all, s, side="right")
            self._feed(plane, events[cursor:stop], theta)
            theta = float(self.thetas_[k])
            inside = _window(events, s, e)
            lat_end = latents[k] * np.exp(theta * np.bincount(
                inside["y"].astype(np.int64) * plane.width + inside["x"],
                weights=inside["p"], minlength=plane.width * plane.height
            ).reshape(latents[k].shape))
            parts.append(ingest_deblurred_frame(plane, frame.image, lat_end, (s, e)))
            cursor = np.searchsorted(t_all, e, side="right")
        stop = np.searchsorted(t_all, end, side="right")
        self._feed(plane, events[cursor:stop], theta)
        plane.finish(end)
        parts.append(plane.drain())
        return np.concatenate(parts)

    @staticmethod
    def _feed(plane: EventPlane, events, theta: float) -> None:
        for t, x, y, pol in zip(events["t"].astype(np.int64).tolist(), events["x"].tolist(),
                                events["y"].tolist(), events["p"].tolist()):
            plane.integrate_dvs_event(x, y, t, pol, theta)

    def _mode_i(self, events, frames, start, end):
        rate, dt_ref, dt_max, _ = self._params()
        start, end = self._bounds(events, start, end, frames[0].exposure_start,
                                  frames[-1].exposure_end)
        edi = self._deblurrer(events)
        seq = edi.reconstruct(frames, dt_ref, t_start=start, t_end=end)
        self.thetas_ = edi.thetas_
        self.timings_ = edi.timings_
        self.sequence_ = seq
        # latent values exceed the 8-bit range freely until here
        clip = np.clip(np.rint(seq.frames), 0, 255).astype(np.uint8)
        ft = FramedTranscoder(dt_ref=dt_ref, m=self.m, dt_max=dt_max,
                              source_kind=SourceKind.DAVIS_MODE_I, tick_rate=rate)
        h = self.header_
        ft.fit(shape=(h.height, h.width), channels=1)
        if len(clip) == 0:
            return empty_events(0)
        return ft.transform(clip).events
