"""Event-based double-integral deblurring of APS frames.

The DVS model says a pixel's intensity at time ``t`` inside an exposure is the
sharp latent value at the exposure start times ``exp(theta * E(t))``, where
``E`` is the signed count of events since the start. A blurry frame is the
exposure average of that signal, so the latent image is the blurry value
divided by the mean of ``exp(theta * E)``. Because ``E`` is piecewise
constant the mean is a finite sum and is computed exactly.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_dvs_events, check_is_fitted

log = logging.getLogger(__name__)

DEFAULT_THETA = 0.15
SEARCH_RANGE = (0.05, 0.6)


@dataclass(frozen=True)
class ApsFrame:
    """A blurry frame and the tick interval it integrated over."""

    image: np.ndarray
    exposure_start: int
    exposure_end: int

    def __post_init__(self):
        if self.exposure_end <= self.exposure_start:
            raise ValueError(
                f"zero-length exposure [{self.exposure_start}, {self.exposure_end}]")
        img = np.asarray(self.image)
        if img.ndim != 2:
            raise ValueError(f"APS frame must be 2-D, got shape {img.shape}")
        object.__setattr__(self, "image", img)

    @property
    def exposure(self) -> int:
        return self.exposure_end - self.exposure_start

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape


@dataclass(frozen=True)
class EdiConfig:
    theta: float = DEFAULT_THETA
    output_interval: Optional[int] = None
    search_range: tuple[float, float] = SEARCH_RANGE
    tol: float = 1e-3

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        lo, hi = self.search_range
        if not 0 < lo < hi:
            raise ValueError(f"bad search range {self.search_range}")


def _window(events: np.ndarray, t0: int, t1: int) -> np.ndarray:
    """Events with ``t0 < t <= t1``; ``events`` must be time-sorted."""
    t = events["t"]
    lo = np.searchsorted(t, t0, side="right")
    hi = np.searchsorted(t, t1, side="right")
    return events[lo:hi]


def event_sum(events, t0: int, t1: int, shape: tuple[int, int],
              pixel: Optional[tuple[int, int]] = None):
    """Signed event count per pixel over ``(t0, t1]``.

    Returns an ``int64`` plane, or a scalar when ``pixel=(x, y)`` is given.
    """
    ev = _window(check_dvs_events(events), t0, t1)
    h, w = shape
    plane = np.bincount(ev["y"].astype(np.int64) * w + ev["x"],
                        weights=ev["p"], minlength=h * w)
    plane = plane.astype(np.int64).reshape(h, w)
    if pixel is not None:
        return int(plane[pixel[1], pixel[0]])
    return plane


def exposure_integral(events: np.ndarray, t0: int, t1: int, theta: float,
                      shape: tuple[int, int]) -> np.ndarray:
    """Exact per-pixel integral of ``exp(theta * E(t0, t))`` over ``[t0, t1]``."""
    h, w = shape
    total = np.full(h * w, float(t1 - t0))
    ev = _window(events, t0, t1)
    if len(ev) == 0:
        return total.reshape(shape)
    pix = ev["y"].astype(np.int64) * w + ev["x"]
    order = np.argsort(pix, kind="stable")
    pix = pix[order]
    t = ev["t"][order].astype(np.float64)
    p = ev["p"][order].astype(np.int64)

    first = np.ones(len(pix), bool)
    first[1:] = pix[1:] != pix[:-1]
    last = np.ones(len(pix), bool)
    last[:-1] = first[1:]
    start = np.maximum.accumulate(np.where(first, np.arange(len(pix)), 0))
    cs = np.cumsum(p)
    level = cs - cs[start] + p[start]

    nxt = np.empty_like(t)
    nxt[:-1] = t[1:]
    nxt[last] = t1
    pieces = np.exp(theta * level) * (nxt - t)
    n = h * w
    # the span before a pixel's first event sits at level 0 and is already in
    # ``total``; replace the part after it with the event-driven pieces
    total -= np.bincount(pix[first], weights=t1 - t[first], minlength=n)
    total += np.bincount(pix, weights=pieces, minlength=n)
    return total.reshape(shape)


def deblur(frame: ApsFrame, events, theta: float = DEFAULT_THETA) -> np.ndarray:
    """Sharp latent image at ``frame.exposure_start``."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    ev = check_dvs_events(events)
    b = frame.image.astype(np.float64)
    integral = exposure_integral(ev, frame.exposure_start, frame.exposure_end,
                                 theta, frame.shape)
    return np.maximum(b * frame.exposure / integral, 0.0)


def gradient_energy(img: np.ndarray) -> float:
    gx = np.diff(img, axis=1)
    gy = np.diff(img, axis=0)
    return float((gx * gx).sum() + (gy * gy).sum())


def sharpness(img: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """Gradient energy over squared total variation.

    Plain gradient energy keeps growing with theta as the deblur overshoots;
    normalising by the squared L1 norm of the gradient makes the score
    scale-free and rewards gradients concentrated on few true edges, which is
    what over- and under-correction both destroy. With ``mask`` only the
    gradients touching a masked pixel count.
    """
    gx = np.diff(img, axis=1)
    gy = np.diff(img, axis=0)
    if mask is not None:
        gx = gx[mask[:, 1:] | mask[:, :-1]]
        gy = gy[mask[1:] | mask[:-1]]
    l1 = float(np.abs(gx).sum() + np.abs(gy).sum())
    if l1 == 0.0:
        return 0.0
    return float((gx * gx).sum() + (gy * gy).sum()) / (l1 * l1)


class ExposureScore:
    """Sharpness of a frame's deblurred latents across its exposure.

    A wrong threshold can look sharp at the exposure start while smearing the
    other instants (overshoot at one end shows up as undershoot at the
    other), so the score averages ``sharpness`` over ``samples`` evenly
    spaced instants. Latents are clipped to ``[0, peak]`` so that a handful
    of runaway pixels cannot dominate, and only gradients touching a pixel
    with events count, because the rest do not depend on the threshold.
    """

    def __init__(self, frame: ApsFrame, events, samples: int = 5, peak: float = 255.0):
        self.frame = frame
        self.events = _window(check_dvs_events(events), frame.exposure_start, frame.exposure_end)
        self.peak = peak
        h, w = frame.shape
        ts = np.linspace(frame.exposure_start, frame.exposure_end, max(samples, 1)).astype(np.int64)
        self.counts = _cumulative_at(self.events, ts, h * w, w).reshape(len(ts), h, w)
        self.mask = np.zeros((h, w), bool)
        self.mask[self.events["y"], self.events["x"]] = True

    def __call__(self, theta: float) -> float:
        lat = deblur(self.frame, self.events, theta)
        return float(np.mean([
            sharpness(np.clip(lat * np.exp(theta * c), 0.0, self.peak), self.mask)
            for c in self.counts]))


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_max(f: Callable[[float], float], lo: float, hi: float,
                       tol: float = 1e-3) -> tuple[float, float]:
    """Maximise ``f`` on ``[lo, hi]``; returns ``(x, f(x))`` of the best probe."""
    if not lo < hi:
        raise ValueError("empty search range")
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    best = (c, fc) if fc >= fd else (d, fd)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
            if fc > best[1]:
                best = (c, fc)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
            if fd > best[1]:
                best = (d, fd)
    return best


class PairScore:
    """Agreement between two frames' latents once the events between them are applied.

    The latent at ``a``'s exposure start, multiplied by ``exp(theta * E)``
    for the events up to ``b``'s exposure start, must equal ``b``'s own
    latent when ``theta`` is right. The score is minus the mean absolute
    difference of ``log1p`` intensities over pixels with a nonzero event sum
    between the two starts. Unlike a sharpness prior this needs no
    assumption about scene content, only that both frames see the same
    scene.
    """

    def __init__(self, a: ApsFrame, b: ApsFrame, events):
        if b.exposure_start < a.exposure_start:
            a, b = b, a
        ev = check_dvs_events(events)
        self.a, self.b = a, b
        self.events_a = _window(ev, a.exposure_start, a.exposure_end)
        self.events_b = _window(ev, b.exposure_start, b.exposure_end)
        self.delta = event_sum(ev, a.exposure_start, b.exposure_start, a.shape)
        self.mask = self.delta != 0

    @property
    def informative(self) -> bool:
        return bool(self.mask.any())

    def __call__(self, theta: float) -> float:
        if not self.informative:
            return 0.0
        la = deblur(self.a, self.events_a, theta) * np.exp(theta * self.delta)
        lb = deblur(self.b, self.events_b, theta)
        diff = np.log1p(la[self.mask]) - np.log1p(lb[self.mask])
        return -float(np.mean(np.abs(diff)))


def optimize_theta(frame: ApsFrame, events, search_range=SEARCH_RANGE,
                   tol: float = 1e-3, scan: int = 23, samples: int = 5,
                   neighbor: Optional[ApsFrame] = None) -> float:
    """Threshold that best explains ``frame`` and its events.

    With a ``neighbor`` frame whose exposure is separated from ``frame`` by
    events, the objective is ``PairScore``; otherwise it is the single-frame
    ``ExposureScore``. A coarse scan of ``scan`` evenly spaced thresholds
    picks the bracket and golden-section search refines it to ``tol``. When
    neither objective has events to work with every threshold is equally
    good and the midpoint of the range is returned.
    """
    lo, hi = map(float, search_range)
    if not lo < hi:
        raise ValueError("empty search range")
    f = PairScore(frame, neighbor, events) if neighbor is not None else None
    if f is None or not f.informative:
        f = ExposureScore(frame, events, samples)
        if len(f.events) == 0:
            return (lo + hi) / 2.0

    grid = np.linspace(lo, hi, max(scan, 3))
    vals = [f(th) for th in grid]
    k = int(np.argmax(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    th, val = golden_section_max(f, a, b, tol)
    return float(th) if val >= vals[k] else float(grid[k])


@dataclass
class LatentSequence:
    """Latent frames sampled on a regular tick grid."""

    frames: np.ndarray
    times: np.ndarray
    anchors: np.ndarray
    gap_frames: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.gap_frames


def _cumulative_at(events: np.ndarray, times: np.ndarray, n_pix: int, width: int) -> np.ndarray:
    """Per-pixel signed event count for ``t <= time`` at each (sorted) time."""
    out = np.zeros((len(times), n_pix), np.int64)
    idx = np.searchsorted(events["t"], times, side="right")
    pix = events["y"].astype(np.int64) * width + events["x"]
    p = events["p"].astype(np.int64)
    run = np.zeros(n_pix, np.int64)
    prev = 0
    for j, i in enumerate(idx):
        if i > prev:
            run += np.bincount(pix[prev:i], weights=p[prev:i], minlength=n_pix).astype(np.int64)
            prev = i
        out[j] = run
    return out


def reconstruct_sequence(frames: Sequence[ApsFrame], events,
                         theta: Union[float, Sequence[float]] = DEFAULT_THETA,
                         output_interval: int = 1000, t_start: Optional[int] = None,
                         t_end: Optional[int] = None, max_gap: Optional[int] = None,
                         anchors: Optional[Sequence[np.ndarray]] = None) -> LatentSequence:
    """Latent frames every ``output_interval`` ticks.

    Each output time is served by the latest frame whose exposure started at
    or before it (the first frame serves earlier times), scaled by the events
    between that exposure start and the output time. Outputs farther than
    ``max_gap`` ticks past their anchor's exposure end are flagged in
    ``gap_frames`` and a warning is issued. Values are not clamped.
    """
    if not frames:
        raise ValueError("need at least one APS frame")
    if output_interval <= 0:
        raise ValueError("output_interval must be positive")
    ev = check_dvs_events(events)
    frames = sorted(frames, key=lambda f: f.exposure_start)
    shape = frames[0].shape
    h, w = shape
    thetas = np.broadcast_to(np.asarray(theta, np.float64), (len(frames),))
    if anchors is None:
        anchors = [deblur(f, ev, th) for f, th in zip(frames, thetas)]
    starts = np.array([f.exposure_start for f in frames], np.int64)
    t_start = int(starts[0] if t_start is None else t_start)
    t_end = int(frames[-1].exposure_end if t_end is None else t_end)
    n = max(0, -(-(t_end - t_start) // output_interval))
    times = t_start + output_interval * np.arange(n, dtype=np.int64)
    if max_gap is None:
        max_gap = 2 * int(np.median(np.diff(starts))) if len(starts) > 1 else None

    which = np.maximum(np.searchsorted(starts, times, side="right") - 1, 0)
    query = np.concatenate([starts, times])
    order = np.argsort(query, kind="stable")
    cum = np.empty((len(query), h * w), np.int64)
    cum[order] = _cumulative_at(ev, query[order], h * w, w)
    c_anchor, c_time = cum[:len(starts)], cum[len(starts):]

    out = np.empty((n, h, w), np.float64)
    gaps = []
    for j in range(n):
        k = which[j]
        delta = (c_time[j] - c_anchor[k]).reshape(shape)
        out[j] = anchors[k] * np.exp(thetas[k] * delta)
        if max_gap is not None and times[j] - frames[k].exposure_end > max_gap:
            gaps.append(j)
    if gaps:
        warnings.warn(f"{len(gaps)} output frames propagated more than {max_gap} "
                      "ticks past their anchor frame", RuntimeWarning, stacklevel=2)
    return LatentSequence(out, times, which, gaps)


def paced_packets(events, packet_ticks: int, tick_rate: int = 1_000_000,
                  realtime: bool = False) -> Iterator[np.ndarray]:
    """Split events into fixed-duration packets, optionally at wall-clock pace."""
    ev = check_dvs_events(events)
    if len(ev) == 0:
        return
    t0 = int(ev["t"][0])
    edges = np.arange(t0, int(ev["t"][-1]) + packet_ticks + 1, packet_ticks)
    cuts = np.searchsorted(ev["t"], edges[1:], side="left")
    wall0 = time.perf_counter()
    prev = 0
    for edge, cut in zip(edges[1:], cuts):
        if realtime:
            delay = (edge - t0) / tick_rate - (time.perf_counter() - wall0)
            if delay > 0:
                time.sleep(delay)
        yield ev[prev:cut]
        prev = cut


class EdiDeblurrer(TransformerMixin, BaseEstimator):
    """Deblur APS frames with the DVS events passed to ``fit``.

    Parameters
    ----------
    theta : float
        DVS contrast threshold in log-intensity units; used directly, or as
        the fallback for frames without in-exposure events when optimising.
    optimize : bool
        Search ``search_range`` per frame for the sharpest latent.
    search_range : (float, float)
    tol : float
        Golden-section stopping width.
    """

    def __init__(self, theta=DEFAULT_THETA, optimize=False, search_range=SEARCH_RANGE, tol=1e-3):
        self.theta = theta
        self.optimize = optimize
        self.search_range = search_range
        self.tol = tol

    def fit(self, X, y=None):
        EdiConfig(self.theta, None, tuple(self.search_range), self.tol)
        t = time.perf_counter()
        self.events_ = check_dvs_events(X)
        self.timings_ = {"decode": time.perf_counter() - t, "optimize": 0.0, "deblur": 0.0}
        return self

    def _theta_for(self, frame: ApsFrame, fallback: float,
                   neighbor: Optional[ApsFrame] = None) -> float:
        if not self.optimize:
            return float(self.theta)
        if neighbor is not None and PairScore(frame, neighbor, self.events_).informative:
            return optimize_theta(frame, self.events_, self.search_range, self.tol,
                                  neighbor=neighbor)
        if len(_window(self.events_, frame.exposure_start, frame.exposure_end)) == 0:
            return fallback
        return optimize_theta(frame, self.events_, self.search_range, self.tol)

    def transform(self, X) -> np.ndarray:
        """Latent frames, one per APS frame in ``X``.

        When optimising, each frame is paired with the next one in time (the
        last with the one before) so the threshold can be checked against
        the events between them.
        """
        check_is_fitted(self, "events_")
        X = list(X)
        order = sorted(range(len(X)), key=lambda i: X[i].exposure_start)
        partner = {}
        for j, i in enumerate(order):
            if len(order) > 1:
                partner[i] = X[order[j + 1] if j + 1 < len(order) else order[j - 1]]
        out, thetas, lat = [], [], []
        th = float(self.theta)
        for i, frame in enumerate(X):
            t0 = time.perf_counter()
            th = self._theta_for(frame, th, partner.get(i))
            t1 = time.perf_counter()
            out.append(deblur(frame, self.events_, th))
            t2 = time.perf_counter()
            self.timings_["optimize"] += t1 - t0
            self.timings_["deblur"] += t2 - t1
            thetas.append(th)
            lat.append(t2 - t0)
        self.thetas_ = np.array(thetas)
        self.latencies_ = np.array(lat)
        if out:
            return np.stack(out)
        return np.empty((0, 0, 0))

    def reconstruct(self, frames, output_interval, **kw) -> LatentSequence:
        """Deblur ``frames`` and propagate them onto an output grid."""
        frames = sorted(frames, key=lambda f: f.exposure_start)
        anchors = list(self.transform(frames))
        t = time.perf_counter()
        seq = reconstruct_sequence(frames, self.events_, self.thetas_, output_interval,
                                   anchors=anchors, **kw)
        self.timings_["propagate"] = time.perf_counter() - t
        return seq

    @property
    def median_latency(self) -> float:
        check_is_fitted(self, "latencies_")
        return float(np.median(self.latencies_)) if len(self.latencies_) else 0.0
