"""Command-line entry point: one subcommand per pipeline."""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._validation import ConfigError
from .core import FormatError, StreamWriter, load
from .edi import EdiDeblurrer
from .event_transcoder import EventTranscoder
from .framed import FramedTranscoder
from .io import (atomic_path, open_frames, read_aps_manifest, read_config, read_dvs,
                 write_aps_manifest, write_dvs, write_pnm_sequence, write_raw_frames)
from .reconstruct import measure_precision, reconstruct_frames, recover_dvs, to_u8
from .stats import event_rate, sweep, write_csv, write_jsonl
from .synthetic import SCENE_KINDS, DavisScene, SyntheticScene, corpus

log = logging.getLogger("adder")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_FORMAT = 4


@contextmanager
def atomic_dir(path: Path):
    """Build a directory under a temporary name and swap it in on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        yield tmp
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _csv_list(kind):
    def parse(text):
        return [kind(v) for v in text.split(",") if v.strip()]
    return parse


# -- subcommands -----------------------------------------------------------

def cmd_transcode_framed(a) -> int:
    frames, meta = open_frames(a.input, a.width, a.height, a.channels)
    fps = a.fps or meta.get("fps") or 30.0
    ft = FramedTranscoder(dt_ref=a.dtref, fps=fps, m=a.m, dt_max=a.dtmax, workers=a.workers)
    ft.fit(shape=(meta["height"], meta["width"]), channels=meta["channels"])
    n = 0
    with atomic_path(a.out) as tmp, open(tmp, "wb") as fp:
        writer = StreamWriter(fp, ft.header_)
        for batch in ft.transform_iter(frames):
            writer.write(batch)
            n += len(batch)
    log.info("wrote %d events to %s", n, a.out)
    return EXIT_OK


def cmd_edi(a) -> int:
    aps, _ = read_aps_manifest(a.frames)
    events, meta = read_dvs(a.events)
    est = EdiDeblurrer(theta=a.theta, optimize=a.optimize).fit(events)
    with atomic_dir(a.out) as tmp:
        if a.fps_out:
            rate = meta.get("tick_rate", 1_000_000)
            seq = est.reconstruct(aps, max(1, round(rate / a.fps_out)))
            latents = seq.frames
        else:
            latents = est.transform(aps)
        write_pnm_sequence(tmp, np.clip(np.rint(latents), 0, 255).astype(np.uint8))
    report = {"frames": len(latents), "thetas": est.thetas_.tolist(),
              "median_latency_s": est.median_latency, "stages_s": est.timings_}
    print(json.dumps(report))
    return EXIT_OK


def cmd_transcode_events(a) -> int:
    events, meta = read_dvs(a.events)
    width, height = a.width or meta.get("width"), a.height or meta.get("height")
    if not width or not height:
        raise ConfigError("sensor size unknown: pass --width/--height or a .meta manifest")
    frames = None
    if a.mode in ("i", "ii"):
        if not a.frames:
            raise ConfigError(f"mode {a.mode} needs --frames")
        frames, _ = read_aps_manifest(a.frames)
    est = EventTranscoder(mode=a.mode, dt_ref=a.dtref, tick_rate=meta.get("tick_rate", 1_000_000),
                          m=a.m, dt_max=a.dtmax, theta=a.theta, optimize=a.optimize,
                          reset_interval=a.reset_interval)
    est.fit(shape=(height, width))
    stream = est.transform(events, frames=frames)
    with atomic_path(a.out) as tmp, open(tmp, "wb") as fp:
        StreamWriter(fp, stream.header).write(stream.events)
    log.info("wrote %d events to %s", len(stream.events), a.out)
    return EXIT_OK


def _interval(header, fps_out: Optional[float]) -> int:
    if fps_out:
        return max(1, round(header.tick_rate / fps_out))
    return header.ref_interval


def cmd_reconstruct(a) -> int:
    stream = load(a.input)
    frames = to_u8(reconstruct_frames(stream, _interval(stream.header, a.fps_out)))
    with atomic_dir(a.out) as tmp:
        write_pnm_sequence(tmp, frames)
    log.info("wrote %d frames to %s", len(frames), a.out)
    return EXIT_OK


def cmd_to_dvs(a) -> int:
    stream = load(a.input)
    dvs = recover_dvs(stream, a.theta, a.log_space)
    h = stream.header
    with atomic_path(a.out) as tmp:
        write_dvs(tmp, dvs, h.width, h.height, h.tick_rate)
        os.replace(str(tmp) + ".meta", str(a.out) + ".meta")
    log.info("recovered %d DVS events", len(dvs))
    return EXIT_OK


def cmd_play(a) -> int:
    stream = load(a.input)
    interval = _interval(stream.header, a.fps_out)
    frames = to_u8(reconstruct_frames(stream, interval))
    period = interval / stream.header.tick_rate
    out = sys.stdout.buffer
    t0 = time.perf_counter()
    for i, f in enumerate(frames):
        if not a.no_pace:
            delay = i * period - (time.perf_counter() - t0)
            if delay > 0:
                time.sleep(delay)
        out.write(f.tobytes())
    out.flush()
    h = stream.header
    log.info("played %d frames of %dx%dx%d at %.3f fps", len(frames), h.width, h.height,
             h.channels, 1 / period)
    return EXIT_OK


def _emit_rows(rows, fmt: str, out: Optional[str]) -> None:
    def dump(fp):
        if fmt == "csv":
            write_csv(rows, fp, fields=list(rows[0]) if rows else ())
        else:
            write_jsonl(rows, fp)
    if out:
        with atomic_path(out) as tmp, open(tmp, "w", newline="") as fp:
            dump(fp)
    else:
        dump(sys.stdout)


def cmd_stats(a) -> int:
    rows = []
    baseline = event_rate(load(a.baseline)) if a.baseline else None
    for path in a.input:
        stream = load(path)
        rep = event_rate(stream)
        prec = measure_precision(stream)
        row = {"input": str(path), **rep.as_dict(), "precision_bits": prec.bits,
               "distinct_levels": prec.distinct_levels}
        if baseline is not None:
            row["proportion"] = rep.proportion(baseline)
        rows.append(row)
    _emit_rows(rows, a.format, a.out)
    return EXIT_OK


def cmd_sweep(a) -> int:
    if a.input == "corpus":
        inputs = corpus(a.width or 64, a.height or 48, a.frames, a.seed)
    else:
        frames, _ = open_frames(a.input, a.width, a.height, a.channels)
        inputs = {Path(a.input).name: np.stack(list(frames))}
    rows = sweep(inputs, a.m, a.dtref, a.dtmax or [None], workers=a.workers or 1,
                 strict=not a.allow_low_dtref)
    _emit_rows(rows, a.format, a.out)
    return EXIT_OK


def cmd_gen_scene(a) -> int:
    if a.kind == "davis":
        scene = DavisScene(width=a.width, height=a.height, duration=a.duration, seed=a.seed,
                           pulse_rate=a.pulse_rate, texture=a.texture, speed=a.speed)
        with atomic_dir(a.out) as tmp:
            write_dvs(tmp / "events.bin", scene.events, a.width, a.height)
            write_aps_manifest(tmp / "aps.txt", scene.aps_frames())
        return EXIT_OK
    scene = SyntheticScene(a.kind, width=a.width, height=a.height, n_frames=a.frames,
                           channels=a.channels or 1, seed=a.seed)
    frames = scene.frames()
    if a.raw:
        with atomic_path(a.out) as tmp:
            write_raw_frames(tmp, frames, fps=a.fps)
            os.replace(str(tmp) + ".meta", str(a.out) + ".meta")
    else:
        with atomic_dir(a.out) as tmp:
            write_pnm_sequence(tmp, frames)
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def _framed_opts(p):
    p.add_argument("--dtref", type=int, default=255,
                   help="ticks per input frame, the reference integration interval "
                        "(default 255; must be >= 255 for 8-bit input)")
    p.add_argument("--dtmax", type=int, default=None,
                   help="longest span one event may cover, in ticks (default 120 frames)")
    p.add_argument("--m", type=float, default=0.0,
                   help="contrast threshold: flush a pixel once its input departs from "
                        "its baseline by more than this many 8-bit levels (default 0)")


def _event_opts(p):
    p.add_argument("--dtref", type=int, default=None,
                   help="ticks per deblurred frame and intensity scale "
                        "(default tick rate / 500)")
    p.add_argument("--dtmax", type=int, default=None,
                   help="longest event span in ticks (default 4 s of ticks)")
    p.add_argument("--m", type=float, default=0.0,
                   help="contrast threshold in 8-bit levels (default 0)")
    p.add_argument("--theta", type=float, default=0.15,
                   help="DVS contrast threshold in log-intensity units (default 0.15)")
    p.add_argument("--optimize", action="store_true",
                   help="search the DVS threshold per APS frame for the sharpest deblur")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="adder", description="Asynchronous intensity-event transcoding tools.",
        epilog="Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 format error. "
               "Set ADDER_LOG_LEVEL to change log verbosity.")
    ap.add_argument("--config", help="TOML file of option defaults (keys are option names "
                                     "with underscores)")
    ap.add_argument("--workers", type=int, default=None,
                    help="worker threads (default: logical cores)")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("transcode-framed", help="framed video to an event stream")
    p.add_argument("--input", required=True,
                   help="directory of .pgm/.ppm frames, one pixmap, or a raw planar file")
    p.add_argument("--width", type=int, help="frame width (raw input)")
    p.add_argument("--height", type=int, help="frame height (raw input)")
    p.add_argument("--channels", type=int, choices=(1, 3), help="channels (raw input)")
    p.add_argument("--fps", type=float, help="source frames per second (default: sidecar or 30)")
    _framed_opts(p)
    p.add_argument("--out", required=True, help="output .adder file")
    p.set_defaults(func=cmd_transcode_framed)

    p = sub.add_parser("edi", help="deblur APS frames with DVS events")
    p.add_argument("--frames", required=True, help="APS frame manifest")
    p.add_argument("--events", required=True, help="DVS record file")
    p.add_argument("--theta", type=float, default=0.15,
                   help="DVS contrast threshold in log-intensity units (default 0.15)")
    p.add_argument("--optimize", action="store_true",
                   help="search the threshold per frame instead of using --theta")
    p.add_argument("--fps-out", type=float,
                   help="emit latent frames at this rate instead of one per APS frame")
    p.add_argument("--out", required=True, help="output directory of .pgm frames")
    p.set_defaults(func=cmd_edi)

    p = sub.add_parser("transcode-events", help="DVS/DAVIS input to an event stream")
    p.add_argument("--mode", choices=("i", "ii", "iii"), required=True,
                   help="i: EDI frames through the framed transcoder; ii: deblurred frames "
                        "plus DVS events; iii: DVS events only")
    p.add_argument("--events", required=True, help="DVS record file")
    p.add_argument("--frames", help="APS frame manifest (modes i and ii)")
    p.add_argument("--width", type=int, help="sensor width (default: events manifest)")
    p.add_argument("--height", type=int, help="sensor height (default: events manifest)")
    p.add_argument("--reset-interval", type=int, default=None,
                   help="mode iii: ticks between latent resets to mid-gray (default 0.5 s)")
    _event_opts(p)
    p.add_argument("--out", required=True, help="output .adder file")
    p.set_defaults(func=cmd_transcode_events)

    p = sub.add_parser("reconstruct", help="decode a stream to pixmap frames")
    p.add_argument("--in", dest="input", required=True, help="input .adder file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--fps-out", type=float,
                   help="output frame rate (default: one frame per reference interval)")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("to-dvs", help="recover DVS polarity events from a stream")
    p.add_argument("--in", dest="input", required=True, help="input .adder file")
    p.add_argument("--theta", type=float, default=0.15,
                   help="log-intensity step per recovered event (default 0.15)")
    p.add_argument("--log-space", choices=("latent", "log"), default="latent",
                   help="latent: ln(1 + I/255); log: ln I")
    p.add_argument("--out", required=True, help="output DVS record file")
    p.set_defaults(func=cmd_to_dvs)

    p = sub.add_parser("play", help="write decoded raw frames to stdout at playback pace")
    p.add_argument("--in", dest="input", required=True, help="input .adder file")
    p.add_argument("--fps-out", type=float, help="playback frame rate")
    p.add_argument("--no-pace", action="store_true", help="dump as fast as possible")
    p.set_defaults(func=cmd_play)

    p = sub.add_parser("stats", help="event-rate and precision report")
    p.add_argument("--in", dest="input", nargs="+", required=True, help="input .adder file(s)")
    p.add_argument("--baseline", help="stream whose event count is the proportion baseline")
    p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    p.add_argument("--out", help="report file (default stdout)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("sweep", help="rate/distortion table for framed transcoding")
    p.add_argument("--input", default="corpus",
                   help="frames as for transcode-framed, or 'corpus' for the bundled clips")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--channels", type=int, choices=(1, 3))
    p.add_argument("--frames", type=int, default=60, help="corpus clip length")
    p.add_argument("--seed", type=int, default=0, help="corpus seed")
    p.add_argument("--m", type=_csv_list(float), default=[0, 10, 20, 30, 40],
                   help="comma-separated contrast thresholds")
    p.add_argument("--dtref", type=_csv_list(int), default=[255],
                   help="comma-separated ticks-per-frame values")
    p.add_argument("--dtmax", type=_csv_list(int), default=None,
                   help="comma-separated maximum event spans (default 120 frames)")
    p.add_argument("--allow-low-dtref", action="store_true",
                   help="run ticks-per-frame values below 255 instead of rejecting them")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--out", help="report file (default stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-scene", help="write a synthetic test source")
    p.add_argument("--kind", choices=SCENE_KINDS + ("davis",), required=True,
                   help="framed scene kind, or 'davis' for DVS events plus APS frames")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--channels", type=int, choices=(1, 3), default=1)
    p.add_argument("--frames", type=int, default=60, help="framed clip length")
    p.add_argument("--fps", type=float, default=30.0, help="recorded in the raw sidecar")
    p.add_argument("--duration", type=int, default=200_000, help="davis: length in ticks")
    p.add_argument("--pulse-rate", type=float, default=60.0,
                   help="davis: flicker pulses per pixel per second")
    p.add_argument("--texture", choices=("bar", "blocks", "none"), default="bar",
                   help="davis: moving pattern")
    p.add_argument("--speed", type=float, default=100.0, help="davis: pattern speed in px/s")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--raw", action="store_true", help="write a raw planar file, not pixmaps")
    p.add_argument("--out", required=True, help="output directory (or raw file)")
    p.set_defaults(func=cmd_gen_scene)
    return ap


def _apply_config(ap: argparse.ArgumentParser, path: str) -> None:
    settings = {k.replace("-", "_"): v for k, v in read_config(path).items()}
    known = set()
    subparsers = [a for a in ap._actions if isinstance(a, argparse._SubParsersAction)]
    for parser in [ap] + [p for s in subparsers for p in s.choices.values()]:
        dests = {a.dest for a in parser._actions}
        parser.set_defaults(**{k: v for k, v in settings.items() if k in dests})
        known |= dests
    unknown = sorted(set(settings) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown settings {', '.join(unknown)}")


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Execute one command line; returns the process exit code."""
    logging.basicConfig(level=os.environ.get("ADDER_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    ap = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg = argparse.ArgumentParser(add_help=False)
        cfg.add_argument("--config")
        pre, _ = cfg.parse_known_args(argv)
        if pre.config:
            _apply_config(ap, pre.config)
        try:
            args = ap.parse_args(argv)
        except SystemExit as exc:
            return EXIT_OK if exc.code == 0 else EXIT_CONFIG
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (FormatError, UnicodeDecodeError) as exc:
        log.error("format error: %s", exc)
        return EXIT_FORMAT
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except ValueError as exc:
        log.error("invalid input: %s", exc)
        return EXIT_FORMAT


def main() -> None:
    sys.exit(run())
