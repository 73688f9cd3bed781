"""Seedable synthetic sources with evaluable ground truth.

``SyntheticScene`` renders 8-bit framed video from an analytic intensity
function. ``DavisScene`` produces a DVS event stream and APS frames from one
per-pixel log-intensity lattice, so the exact intensity at any tick is known.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._validation import DVS_DTYPE
from .edi import ApsFrame, _cumulative_at, exposure_integral

SCENE_KINDS = ("constant", "step", "moving_edge", "sinusoid", "noise")


def _blocks(rng, shape, block, lo, hi):
    """Random piecewise-constant field of ``block``-sized tiles."""
    h, w = shape
    coarse = rng.integers(lo, hi + 1, size=(-(-h // block), -(-w // block)))
    return np.repeat(np.repeat(coarse, block, 0), block, 1)[:h, :w]


@dataclass(frozen=True)
class SyntheticScene:
    """Framed test clip defined by an intensity function of ``(x, y, t)``.

    ``t`` is in frames. ``level`` and ``amplitude`` are 8-bit values; the
    ``noise`` kind adds zero-mean Gaussian noise of std ``noise`` per frame to
    a static texture.
    """

    kind: str = "constant"
    width: int = 64
    height: int = 48
    n_frames: int = 60
    channels: int = 1
    level: float = 128.0
    amplitude: float = 64.0
    period: float = 30.0
    noise: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}; expected one of {SCENE_KINDS}")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")

    @cached_property
    def _texture(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        tex = _blocks(rng, (self.height, self.width * self.channels), 4, -1, 1)
        return tex.reshape(self.height, self.width, self.channels) * (self.amplitude / 2)

    def intensity(self, x, y, t, c=0) -> np.ndarray:
        """Ground-truth intensity (float, unclipped) at frame time ``t``."""
        x, y, t, c = np.broadcast_arrays(*map(np.asarray, (x, y, t, c)))
        base = self.level + 8.0 * c
        if self.kind == "constant":
            val = base + 0.0 * t
        elif self.kind == "step":
            val = base + np.where(t >= self.n_frames // 2, self.amplitude, 0.0)
        elif self.kind == "moving_edge":
            edge = t * self.width / max(self.n_frames, 1)
            val = base + np.where(x < edge, self.amplitude, -self.amplitude)
        elif self.kind == "sinusoid":
            val = base + self.amplitude * np.sin(2 * np.pi * (t / self.period + x / self.width))
        else:
            val = base + self._texture[y, x, c] + self._noise_at(x, y, t, c)
        return val.astype(np.float64)

    def _noise_at(self, x, y, t, c):
        out = np.empty(x.shape, np.float64)
        frame = np.floor(t).astype(np.int64)
        for f in np.unique(frame):
            sel = frame == f
            plane = np.random.default_rng([self.seed, int(f)]).normal(
                0.0, self.noise, (self.height, self.width, self.channels))
            out[sel] = plane[y[sel], x[sel], c[sel]]
        return out

    def frames(self) -> np.ndarray:
        """Rendered clip, ``(n_frames, height, width, channels)`` uint8."""
        t, y, x, c = np.meshgrid(np.arange(self.n_frames), np.arange(self.height),
                                 np.arange(self.width), np.arange(self.channels),
                                 indexing="ij")
        return np.clip(np.rint(self.intensity(x, y, t, c)), 0, 255).astype(np.uint8)


def corpus(width: int = 64, height: int = 48, n_frames: int = 60, seed: int = 0) -> dict:
    """The bundled evaluation clips, keyed by name."""
    common = dict(width=width, height=height, n_frames=n_frames, seed=seed)
    return {
        "constant": SyntheticScene("constant", level=90.0, **common),
        "step": SyntheticScene("step", level=70.0, amplitude=90.0, **common),
        "moving_edge": SyntheticScene("moving_edge", level=128.0, amplitude=80.0, **common),
        "sinusoid": SyntheticScene("sinusoid", level=128.0, amplitude=60.0, **common),
        "noisy_static": SyntheticScene("noise", level=128.0, amplitude=60.0, noise=4.0, **common),
        "color_edge": SyntheticScene("moving_edge", channels=3, level=110.0, amplitude=70.0, **common),
    }


@dataclass(frozen=True)
class DavisScene:
    """DVS events plus APS frames from a shared log-intensity lattice.

    A pixel's intensity is ``base * exp(theta * (k + C(t)))`` where ``k`` is
    its texture level and ``C(t)`` the signed count of its events up to
    ``t``, so events are exact threshold crossings. Three sources of events
    are mixed:

    * a texture of ``levels`` steps scrolling left at ``speed`` px/s
      (``texture="bar"`` gives a single bright stripe);
    * pulses: short excursions of one threshold up or down and back, of
      ``pulse_len`` microseconds, ``pulse_rate`` per pixel per second;
    * unpaired noise events at ``noise_rate`` per pixel per second.

    APS frames get Gaussian read noise of std ``aps_noise`` 8-bit levels,
    drawn independently per frame. Times are microsecond ticks.
    """

    width: int = 32
    height: int = 24
    duration: int = 200_000
    theta: float = 0.15
    base: tuple = (40.0, 120.0)
    texture: str = "bar"
    levels: int = 3
    block: int = 4
    speed: float = 100.0
    pulse_rate: float = 0.0
    pulse_len: tuple = (50, 200)
    noise_rate: float = 0.0
    frame_period: int = 20_000
    exposure: int = 5_000
    aps_noise: float = 0.0
    seed: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @cached_property
    def _fields(self):
        rng = np.random.default_rng(self.seed)
        lo, hi = self.base
        base = lo + (hi - lo) * _blocks(rng, self.shape, 8, 0, 8) / 8.0
        travel = int(np.ceil(self.speed * self.duration / 1e6)) + 1
        wide = self.width + travel
        if self.texture == "bar":
            tex = np.zeros((self.height, wide), np.int64)
            stripe = max(self.block, 1)
            tex[:, self.width // 2:self.width // 2 + stripe] = self.levels
        elif self.texture == "blocks":
            tex = _blocks(rng, (self.height, wide), self.block, 0, self.levels)
        elif self.texture == "none":
            tex = np.zeros((self.height, wide), np.int64)
        else:
            raise ValueError(f"unknown texture {self.texture!r}")
        return base, tex, rng

    @cached_property
    def events(self) -> np.ndarray:
        """Time-sorted DVS events."""
        base, tex, rng = self._fields
        h, w = self.shape
        ts, xs, ys, ps = [], [], [], []

        def add(t, x, y, p):
            for acc, v in zip((ts, xs, ys, ps), np.broadcast_arrays(t, x, y, p)):
                acc.append(np.asarray(v, np.int64).ravel())

        if self.speed > 0:
            step_us = 1e6 / self.speed
            shift = 0
            while True:
                t_step = int(round((shift + 1) * step_us))
                if t_step >= self.duration or shift + 1 + w > tex.shape[1]:
                    break
                delta = tex[:, shift + 1:shift + 1 + w] - tex[:, shift:shift + w]
                yy, xx = np.nonzero(delta)
                n = np.abs(delta[yy, xx])
                for j in range(int(n.max()) if len(n) else 0):
                    sel = n > j
                    add(t_step + j, xx[sel], yy[sel], np.sign(delta[yy[sel], xx[sel]]))
                shift += 1

        n_pulse = rng.poisson(self.pulse_rate * self.duration / 1e6 * h * w)
        if n_pulse:
            lo, hi = self.pulse_len
            start = rng.integers(1, self.duration - hi - 1, n_pulse)
            length = rng.integers(lo, hi + 1, n_pulse)
            px, py = rng.integers(0, w, n_pulse), rng.integers(0, h, n_pulse)
            sign = rng.choice((-1, 1), n_pulse)
            add(start, px, py, sign)
            add(start + length, px, py, -sign)

        n_noise = rng.poisson(self.noise_rate * self.duration / 1e6 * h * w)
        if n_noise:
            add(rng.integers(1, self.duration, n_noise), rng.integers(0, w, n_noise),
                rng.integers(0, h, n_noise), rng.choice((-1, 1), n_noise))

        out = np.empty(sum(len(t) for t in ts), DVS_DTYPE)
        if len(out):
            out["t"], out["x"] = np.concatenate(ts), np.concatenate(xs)
            out["y"], out["p"] = np.concatenate(ys), np.concatenate(ps)
            out = out[np.argsort(out["t"], kind="stable")]
        return out

    def _start_level(self) -> np.ndarray:
        base, tex, _ = self._fields
        return base * np.exp(self.theta * tex[:, :self.width])

    def intensity_at(self, t) -> np.ndarray:
        """Exact intensity planes at tick(s) ``t``; shape ``(h, w)`` or ``(n, h, w)``."""
        times = np.atleast_1d(np.asarray(t, np.int64))
        order = np.argsort(times, kind="stable")
        cum = np.empty((len(times), self.height * self.width), np.int64)
        cum[order] = _cumulative_at(self.events, times[order], cum.shape[1], self.width)
        out = self._start_level()[None] * np.exp(self.theta * cum.reshape(-1, *self.shape))
        return out[0] if np.ndim(t) == 0 else out

    def exposures(self) -> list[tuple[int, int]]:
        out = []
        s = 0
        while s + self.exposure <= self.duration:
            out.append((s, s + self.exposure))
            s += self.frame_period
        return out

    def aps_frames(self, quantize: bool = True) -> list[ApsFrame]:
        """Blurry frames: the exact exposure average of the intensity plus read noise."""
        frames = []
        for k, (s, e) in enumerate(self.exposures()):
            integral = exposure_integral(self.events, s, e, self.theta, self.shape)
            img = self.intensity_at(s) * integral / (e - s)
            if self.aps_noise:
                rng = np.random.default_rng([self.seed, 1, k])
                img = img + rng.normal(0.0, self.aps_noise, img.shape)
            if quantize:
                img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
            frames.append(ApsFrame(img, s, e))
        return frames


def davis_corpus(width: int = 32, height: int = 24, duration: int = 200_000,
                 seed: int = 0) -> dict:
    """Bundled DAVIS-style scenes with mild APS read noise, keyed by name."""
    common = dict(width=width, height=height, duration=duration, frame_period=20_000,
                  exposure=5_000, aps_noise=2.0)
    return {
        "bar": DavisScene(texture="bar", levels=3, speed=100, base=(60, 140), seed=seed,
                          **common),
        "blocks": DavisScene(texture="blocks", levels=3, speed=200, base=(40, 120),
                             seed=seed + 1, **common),
        "static": DavisScene(texture="none", speed=0, noise_rate=2, base=(40, 160),
                             seed=seed + 2, **common),
    }
