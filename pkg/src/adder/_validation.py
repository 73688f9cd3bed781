"""Input checking shared by the estimators."""

from __future__ import annotations

import numpy as np

from .core import EVENT_DTYPE, AdderStream

DVS_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])


class ConfigError(ValueError):
    """Parameter combination the transcoders cannot honour."""


class NotFittedError(RuntimeError):
    pass


def check_frames(X, *, channels=None, shape=None) -> np.ndarray:
    """Return frames as a ``(n, h, w, c)`` uint8 array."""
    X = np.asarray(X)
    if X.dtype != np.uint8:
        if not np.issubdtype(X.dtype, np.integer) or X.size and (X.min() < 0 or X.max() > 255):
            raise ValueError("frames must hold 8-bit samples")
        X = X.astype(np.uint8)
    if X.ndim == 3:
        X = X[..., None]
    if X.ndim != 4 or X.shape[-1] not in (1, 3):
        raise ValueError(f"frames must be (n, h, w[, c]) with c in (1, 3), got {X.shape}")
    if channels is not None and X.shape[-1] != channels:
        raise ValueError(f"expected {channels} channels, got {X.shape[-1]}")
    if shape is not None and X.shape[1:3] != tuple(shape):
        raise ValueError(f"frame size {X.shape[1:3]} does not match {tuple(shape)}")
    return X


def check_dvs_events(events, width=None, height=None) -> np.ndarray:
    """Return DVS events as a time-sorted structured array."""
    ev = np.asarray(events)
    if ev.dtype.names is None:
        ev = np.asarray(events, dtype=np.int64).reshape(-1, 4)
        out = np.empty(len(ev), DVS_DTYPE)
        out["t"], out["x"], out["y"], out["p"] = ev[:, 0], ev[:, 1], ev[:, 2], ev[:, 3]
        ev = out
    elif ev.dtype != DVS_DTYPE:
        out = np.empty(len(ev), DVS_DTYPE)
        for name in DVS_DTYPE.names:
            out[name] = ev[name]
        ev = out
    if len(ev) and not np.isin(ev["p"], (-1, 1)).all():
        raise ValueError("polarity must be -1 or +1")
    if width is not None and len(ev) and (ev["x"].max() >= width or ev["y"].max() >= height):
        raise ValueError("event address outside the plane")
    if len(ev) > 1 and (np.diff(ev["t"].astype(np.int64)) < 0).any():
        ev = ev[np.argsort(ev["t"], kind="stable")]
    return ev


def check_stream(stream) -> AdderStream:
    if not isinstance(stream, AdderStream):
        raise TypeError(f"expected AdderStream, got {type(stream).__name__}")
    if stream.events.dtype != EVENT_DTYPE:
        raise TypeError("stream events have the wrong dtype")
    return stream


def check_is_fitted(est, attr: str) -> None:
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")
