"""Rate and quality measurement."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from itertools import product
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ._validation import check_dvs_events, check_frames, check_stream
from .core import HEADER_SIZE, AdderStream
from .framed import FramedTranscoder
from .reconstruct import event_times, reconstruct_frames, to_u8

PSNR_IDENTICAL = math.inf


def stream_duration(stream: AdderStream) -> int:
    """Longest per-pixel decoded timeline, in ticks."""
    stream = check_stream(stream)
    if len(stream.events) == 0:
        return 0
    h = stream.header
    dt = stream.events["dt"].astype(np.int64)
    if h.source_kind.framed:
        dt = -(-dt // h.ref_interval) * h.ref_interval
    return int((event_times(stream) + dt).max())


@dataclass(frozen=True)
class RateReport:
    events: int
    pixel_channels: int
    duration_ticks: int
    tick_rate: int
    bytes: int

    @property
    def events_per_pixel(self) -> float:
        return self.events / self.pixel_channels if self.pixel_channels else 0.0

    @property
    def events_per_second(self) -> float:
        if not self.duration_ticks:
            return 0.0
        return self.events * self.tick_rate / self.duration_ticks

    def proportion(self, baseline: "RateReport") -> float:
        """Event count relative to ``baseline`` (1.0 when both are empty)."""
        if baseline.events == 0:
            return 1.0 if self.events == 0 else math.inf
        return self.events / baseline.events

    def as_dict(self) -> dict:
        out = asdict(self)
        out["events_per_pixel"] = self.events_per_pixel
        out["events_per_second"] = self.events_per_second
        return out


def event_rate(stream: AdderStream, duration: Optional[int] = None) -> RateReport:
    stream = check_stream(stream)
    h = stream.header
    n = len(stream.events)
    return RateReport(
        events=n,
        pixel_channels=h.n_pixels,
        duration_ticks=stream_duration(stream) if duration is None else int(duration),
        tick_rate=h.tick_rate,
        bytes=HEADER_SIZE + n * h.event_size,
    )


def psnr(a, b, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2)) if a.size else 0.0
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(peak * peak / mse)


def roundtrip(frames, dt_ref: int = 255, m: float = 0.0, dt_max: Optional[int] = None,
              workers: Optional[int] = None, strict: bool = True):
    """Transcode then decode; returns ``(stream, decoded_uint8)``."""
    frames = check_frames(frames)
    ft = FramedTranscoder(dt_ref=dt_ref, m=m, dt_max=dt_max, workers=workers, strict=strict)
    stream = ft.fit(frames).transform(frames)
    decoded = to_u8(reconstruct_frames(stream, n_frames=len(frames)))
    return stream, decoded


SWEEP_FIELDS = ("input", "mode", "m", "dt_ref", "dt_max", "events", "events_per_pixel",
                "bytes", "psnr", "seconds")


def sweep(inputs: Mapping[str, object], m_values: Sequence[float] = (0, 10, 20, 30, 40),
          dt_refs: Sequence[int] = (255,), dt_maxes: Sequence[Optional[int]] = (None,),
          workers: int = 1, strict: bool = True) -> list[dict]:
    """Rate/distortion table over every ``(input, M, dt_ref, dt_max)`` cell.

    ``inputs`` maps names to frame arrays or objects with a ``frames()``
    method. Cells run concurrently on ``workers`` threads; rows come back in
    grid order.
    """
    clips = {k: check_frames(v.frames() if hasattr(v, "frames") else v) for k, v in inputs.items()}
    cells = list(product(clips, m_values, dt_refs, dt_maxes))

    def run(cell):
        name, m, dt_ref, dt_max = cell
        t = time.perf_counter()
        stream, decoded = roundtrip(clips[name], dt_ref, m, dt_max, workers=1, strict=strict)
        seconds = time.perf_counter() - t
        rep = event_rate(stream)
        return {
            "input": name, "mode": "framed", "m": m, "dt_ref": dt_ref,
            "dt_max": stream.header.max_interval, "events": rep.events,
            "events_per_pixel": rep.events_per_pixel, "bytes": rep.bytes,
            "psnr": psnr(clips[name], decoded), "seconds": seconds,
        }

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, cells))
    return [run(c) for c in cells]


def write_csv(rows: Iterable[Mapping], fp, fields: Sequence[str] = SWEEP_FIELDS) -> None:
    w = csv.DictWriter(fp, fieldnames=list(fields), extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)


def write_jsonl(rows: Iterable[Mapping], fp) -> None:
    for r in rows:
        # json has no infinity literal; keep the sentinel as a string
        clean = {k: ("inf" if isinstance(v, float) and math.isinf(v) else v) for k, v in r.items()}
        fp.write(json.dumps(clean) + "\n")


def export_vmaf_pairs(reference, distorted, out_dir) -> list[tuple[Path, Path]]:
    """Write matching reference/distorted pixmaps for an external scorer."""
    from .io import write_pnm

    ref, dist = check_frames(reference), check_frames(distorted)
    if ref.shape != dist.shape:
        raise ValueError("reference and distorted clips differ in shape")
    out = Path(out_dir)
    (out / "ref").mkdir(parents=True, exist_ok=True)
    (out / "dist").mkdir(parents=True, exist_ok=True)
    ext = "pgm" if ref.shape[-1] == 1 else "ppm"
    pairs = []
    for i, (a, b) in enumerate(zip(ref, dist)):
        pa, pb = out / "ref" / f"{i:06d}.{ext}", out / "dist" / f"{i:06d}.{ext}"
        write_pnm(pa, a)
        write_pnm(pb, b)
        pairs.append((pa, pb))
    return pairs


def read_external_scores(path) -> dict[str, float]:
    """``name value`` (or ``name,value``) lines from an external quality tool."""
    scores = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, value = line.replace(",", " ").split()[:2]
        scores[name] = float(value)
    return scores


def latency_report(latencies: Sequence[float], stages: Optional[Mapping[str, float]] = None) -> dict:
    """Median/percentile per-packet latency in seconds plus stage totals."""
    lat = np.asarray(latencies, np.float64)
    rep = {"packets": int(lat.size)}
    if lat.size:
        rep.update(median=float(np.median(lat)), p90=float(np.percentile(lat, 90)),
                   max=float(lat.max()))
    if stages:
        rep["stages"] = dict(stages)
    return rep


def recovered_fraction(reference, recovered) -> float:
    """Share of ``reference`` DVS events matched by ``recovered`` ones.

    Events match on pixel and polarity only; each reference event can be
    claimed once, so a pixel contributes ``min(n_ref, n_rec)`` per polarity.
    """
    ref = check_dvs_events(reference)
    rec = check_dvs_events(recovered)
    if len(ref) == 0:
        return 1.0

    def keyed(ev):
        k = (ev["y"].astype(np.int64) << 17 | ev["x"].astype(np.int64)) << 1 | (ev["p"] > 0)
        return np.unique(k, return_counts=True)

    ka, na = keyed(ref)
    kb, nb = keyed(rec)
    _, ia, ib = np.intersect1d(ka, kb, assume_unique=True, return_indices=True)
    return float(np.minimum(na[ia], nb[ib]).sum()) / len(ref)
