"""File interchange: pixmap sequences, raw video, DVS records, APS manifests, configs."""

from __future__ import annotations

import os
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np
from PIL import Image

from ._validation import DVS_DTYPE, ConfigError, check_dvs_events
from .edi import ApsFrame

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PathLike = Union[str, os.PathLike]
PNM_SUFFIXES = (".pgm", ".ppm", ".pnm")
# packed, so the in-memory layout is the 13-byte wire record
DVS_RECORD = DVS_DTYPE


@contextmanager
def atomic_path(path: PathLike) -> Iterator[Path]:
    """Yield a temporary sibling of ``path``; rename it into place on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    os.close(fd)
    try:
        yield Path(tmp)
        # mkstemp creates 0600; give the result the mode a plain open() would
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


# -- pixmaps ---------------------------------------------------------------

def read_pnm(path: PathLike) -> np.ndarray:
    """One P5/P6 pixmap as ``(h, w, c)`` uint8."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            raise ValueError(f"{path}: unsupported pixmap mode {im.mode}")
        arr = np.asarray(im, dtype=np.uint8)
    return arr[..., None] if arr.ndim == 2 else arr


def write_pnm(path: PathLike, frame: np.ndarray) -> None:
    frame = np.asarray(frame, np.uint8)
    if frame.ndim == 3 and frame.shape[-1] == 1:
        frame = frame[..., 0]
    Image.fromarray(frame).save(path, format="PPM")


def list_pnm(directory: PathLike) -> list[Path]:
    files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in PNM_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no .pgm/.ppm files in {directory}")
    return files


def iter_pnm_sequence(directory: PathLike) -> Iterator[np.ndarray]:
    for f in list_pnm(directory):
        yield read_pnm(f)


def write_pnm_sequence(directory: PathLike, frames, start: int = 0) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, f in enumerate(frames, start):
        f = np.asarray(f)
        ext = "ppm" if f.ndim == 3 and f.shape[-1] == 3 else "pgm"
        p = out / f"frame_{i:06d}.{ext}"
        write_pnm(p, f)
        paths.append(p)
    return paths


# -- raw planar video ------------------------------------------------------

def read_sidecar(path: PathLike) -> dict:
    """``key = value`` metadata next to a raw file or DVS record stream."""
    meta = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, sep, value = line.partition(" ")
        meta[key.strip()] = value.strip()
    return meta


def _sidecar_path(path: PathLike) -> Path:
    return Path(str(path) + ".meta")


def iter_raw_frames(path: PathLike, width: int, height: int, channels: int = 1) -> Iterator[np.ndarray]:
    """Frames from a raw file of back-to-back planar 8-bit frames.

    Each frame stores its channels as consecutive ``height x width`` planes.
    """
    size = width * height * channels
    with open(path, "rb") as fp:
        while True:
            buf = fp.read(size)
            if not buf:
                return
            if len(buf) != size:
                raise ValueError(f"{path}: trailing partial frame ({len(buf)} of {size} bytes)")
            planes = np.frombuffer(buf, np.uint8).reshape(channels, height, width)
            yield np.ascontiguousarray(planes.transpose(1, 2, 0))


def write_raw_frames(path: PathLike, frames, fps: Optional[float] = None) -> None:
    frames = np.asarray(frames, np.uint8)
    if frames.ndim == 3:
        frames = frames[..., None]
    n, h, w, c = frames.shape
    with open(path, "wb") as fp:
        fp.write(np.ascontiguousarray(frames.transpose(0, 3, 1, 2)).tobytes())
    lines = [f"width = {w}", f"height = {h}", f"channels = {c}"]
    if fps:
        lines.append(f"fps = {fps}")
    _sidecar_path(path).write_text("\n".join(lines) + "\n")


def open_frames(path: PathLike, width: Optional[int] = None, height: Optional[int] = None,
                channels: Optional[int] = None) -> tuple[Iterator[np.ndarray], dict]:
    """Frame iterator plus known metadata for a pixmap directory or raw file."""
    path = Path(path)
    if path.is_dir():
        files = list_pnm(path)
        first = read_pnm(files[0])
        meta = {"height": first.shape[0], "width": first.shape[1], "channels": first.shape[2]}
        return (read_pnm(f) for f in files), meta
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix.lower() in PNM_SUFFIXES:
        frame = read_pnm(path)
        return iter([frame]), {"height": frame.shape[0], "width": frame.shape[1],
                               "channels": frame.shape[2]}
    side = _sidecar_path(path)
    meta = {k: float(v) if k == "fps" else int(v)
            for k, v in read_sidecar(side).items()} if side.exists() else {}
    width = width or meta.get("width")
    height = height or meta.get("height")
    channels = channels or meta.get("channels", 1)
    if not width or not height:
        raise ConfigError(f"{path}: raw input needs --width/--height or a {side.name} sidecar")
    meta.update(width=int(width), height=int(height), channels=int(channels))
    return iter_raw_frames(path, meta["width"], meta["height"], meta["channels"]), meta


# -- DVS events ------------------------------------------------------------

def write_dvs(path: PathLike, events, width: int, height: int,
              tick_rate: int = 1_000_000) -> None:
    """Little-endian ``t:u64 x:u16 y:u16 p:i8`` records plus a ``.meta`` manifest."""
    ev = check_dvs_events(events, width, height)
    Path(path).write_bytes(ev.tobytes())
    _sidecar_path(path).write_text(
        f"width = {width}\nheight = {height}\ntick_rate = {tick_rate}\ncount = {len(ev)}\n")


def read_dvs(path: PathLike) -> tuple[np.ndarray, dict]:
    path = Path(path)
    data = path.read_bytes()
    if len(data) % DVS_RECORD.itemsize:
        raise ValueError(f"{path}: size is not a whole number of "
                         f"{DVS_RECORD.itemsize}-byte records")
    rec = np.frombuffer(data, DVS_RECORD)
    side = _sidecar_path(path)
    meta = {k: int(v) for k, v in read_sidecar(side).items()} if side.exists() else {}
    if "count" in meta and meta["count"] != len(rec):
        raise ValueError(f"{path}: manifest promises {meta['count']} events, found {len(rec)}")
    return check_dvs_events(rec.copy(), meta.get("width"), meta.get("height")), meta


# -- APS manifests ---------------------------------------------------------

def read_aps_manifest(path: PathLike) -> tuple[list[ApsFrame], dict]:
    """Frames listed as ``frame <pixmap> <exposure_start> <exposure_end>`` lines.

    Other ``key = value`` lines are metadata; pixmap paths are relative to the
    manifest.
    """
    path = Path(path)
    frames, meta = [], {}
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("frame "):
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{n}: expected 'frame <file> <start> <end>'")
            img = read_pnm(path.parent / parts[1])
            if img.shape[-1] != 1:
                raise ValueError(f"{path}:{n}: APS frames must be grayscale")
            frames.append(ApsFrame(img[..., 0], int(parts[2]), int(parts[3])))
        else:
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    if not frames:
        raise ValueError(f"{path}: no frames listed")
    return frames, meta


def write_aps_manifest(path: PathLike, frames, image_dir: str = "aps") -> None:
    path = Path(path)
    folder = path.parent / image_dir
    folder.mkdir(parents=True, exist_ok=True)
    h, w = frames[0].shape
    lines = [f"width = {w}", f"height = {h}"]
    for i, f in enumerate(frames):
        name = f"{image_dir}/aps_{i:06d}.pgm"
        write_pnm(path.parent / name, np.clip(np.rint(f.image), 0, 255).astype(np.uint8))
        lines.append(f"frame {name} {f.exposure_start} {f.exposure_end}")
    path.write_text("\n".join(lines) + "\n")


# -- configuration ---------------------------------------------------------

def read_config(path: PathLike) -> dict:
    """Settings from a TOML file; keys inside tables are lifted to the top level."""
    with open(path, "rb") as fp:
        try:
            data = tomllib.load(fp)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    flat = {}
    for key, value in data.items():
        if isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    return flat
