import os

import numpy as np
import pytest

from adder import ApsFrame, ConfigError
from adder._validation import DVS_DTYPE
from adder.io import (atomic_path, iter_raw_frames, list_pnm, open_frames, read_aps_manifest,
                      read_config, read_dvs, read_pnm, write_aps_manifest, write_dvs, write_pnm,
                      write_pnm_sequence, write_raw_frames)


def test_pnm_round_trip(tmp_path):
    gray = np.arange(12, dtype=np.uint8).reshape(3, 4)
    rgb = np.arange(36, dtype=np.uint8).reshape(3, 4, 3)
    write_pnm(tmp_path / "g.pgm", gray)
    write_pnm(tmp_path / "c.ppm", rgb)
    np.testing.assert_array_equal(read_pnm(tmp_path / "g.pgm")[..., 0], gray)
    np.testing.assert_array_equal(read_pnm(tmp_path / "c.ppm"), rgb)
    assert (tmp_path / "g.pgm").read_bytes().startswith(b"P5")


def test_sequence_and_open_frames(tmp_path):
    frames = np.random.default_rng(0).integers(0, 256, (3, 4, 5, 1), dtype=np.uint8)
    paths = write_pnm_sequence(tmp_path / "seq", frames)
    assert [p.name for p in paths] == ["frame_000000.pgm", "frame_000001.pgm",
                                       "frame_000002.pgm"]
    it, meta = open_frames(tmp_path / "seq")
    assert meta == {"height": 4, "width": 5, "channels": 1}
    np.testing.assert_array_equal(np.stack(list(it)), frames)
    with pytest.raises(FileNotFoundError):
        list_pnm(tmp_path)


def test_raw_frames(tmp_path):
    frames = np.random.default_rng(1).integers(0, 256, (2, 3, 4, 3), dtype=np.uint8)
    raw = tmp_path / "clip.raw"
    write_raw_frames(raw, frames, fps=25)
    # planar: the first plane is channel 0 of frame 0
    np.testing.assert_array_equal(np.frombuffer(raw.read_bytes()[:12], np.uint8),
                                  frames[0, ..., 0].ravel())
    it, meta = open_frames(raw)
    assert meta["fps"] == 25.0 and meta["channels"] == 3
    np.testing.assert_array_equal(np.stack(list(it)), frames)
    raw.write_bytes(raw.read_bytes()[:-1])
    with pytest.raises(ValueError):
        list(iter_raw_frames(raw, 4, 3, 3))


def test_raw_needs_size(tmp_path):
    raw = tmp_path / "x.raw"
    raw.write_bytes(b"\0" * 12)
    with pytest.raises(ConfigError):
        open_frames(raw)
    it, meta = open_frames(raw, width=4, height=3)
    assert len(list(it)) == 1
    with pytest.raises(FileNotFoundError):
        open_frames(tmp_path / "missing.raw")


def test_dvs_records(tmp_path):
    ev = np.zeros(3, DVS_DTYPE)
    ev["t"] = [5, 9, 2**40]
    ev["x"], ev["y"], ev["p"] = [1, 2, 3], [0, 1, 2], [1, -1, 1]
    path = tmp_path / "ev.bin"
    write_dvs(path, ev, 4, 3)
    assert path.stat().st_size == 3 * 13
    back, meta = read_dvs(path)
    np.testing.assert_array_equal(back, ev)
    assert meta == {"width": 4, "height": 3, "tick_rate": 1_000_000, "count": 3}
    path.write_bytes(path.read_bytes()[:-13])
    with pytest.raises(ValueError):
        read_dvs(path)
    path.write_bytes(b"\0" * 5)
    with pytest.raises(ValueError):
        read_dvs(path)


def test_aps_manifest(tmp_path):
    frames = [ApsFrame(np.full((3, 4), 10.4), 0, 500), ApsFrame(np.full((3, 4), 200.0), 900, 1400)]
    write_aps_manifest(tmp_path / "aps.txt", frames)
    back, meta = read_aps_manifest(tmp_path / "aps.txt")
    assert meta == {"width": "4", "height": "3"}
    assert [(f.exposure_start, f.exposure_end) for f in back] == [(0, 500), (900, 1400)]
    assert back[0].image.max() == 10 and back[1].image.min() == 200
    (tmp_path / "bad.txt").write_text("frame only-two 5\n")
    with pytest.raises(ValueError):
        read_aps_manifest(tmp_path / "bad.txt")
    (tmp_path / "empty.txt").write_text("width = 3\n")
    with pytest.raises(ValueError):
        read_aps_manifest(tmp_path / "empty.txt")


def test_config(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('m = 10\n[framed]\ndtmax = 3060\n')
    assert read_config(cfg) == {"m": 10, "dtmax": 3060}
    cfg.write_text("m = = 3")
    with pytest.raises(ConfigError):
        read_config(cfg)


def test_atomic_path(tmp_path):
    target = tmp_path / "out.bin"
    with atomic_path(target) as tmp:
        tmp.write_bytes(b"ok")
    assert target.read_bytes() == b"ok"
    umask = os.umask(0)
    os.umask(umask)
    assert target.stat().st_mode & 0o777 == 0o666 & ~umask
    with pytest.raises(RuntimeError):
        with atomic_path(tmp_path / "never.bin") as tmp:
            tmp.write_bytes(b"partial")
            raise RuntimeError
    assert sorted(p.name for p in tmp_path.iterdir()) == ["out.bin"]
