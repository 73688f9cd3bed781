import math

import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from adder import FramedTranscoder
from adder.core import EVENT_DTYPE, AdderStream, SourceKind, StreamHeader
from adder.framed import transcode_reference
from adder.reconstruct import (DvsRecovery, FrameReconstructor, event_times, frame_intensity,
                               measure_precision, reconstruct_frames, recover_dvs, to_u8)
from oracles import precision_bits, scalar_decode


def framed_stream(rows, width=1, height=1, max_interval=255 * 120):
    h = StreamHeader(width, height, 1, SourceKind.FRAMED_U8, 7650, 255, max_interval)
    return AdderStream(h, np.array(rows, EVENT_DTYPE).reshape(-1))


def event_stream(rows, width=1, height=1, ref=2000):
    h = StreamHeader(width, height, 1, SourceKind.DVS_MODE_III, 1_000_000, ref, 4_000_000)
    return AdderStream(h, np.array(rows, EVENT_DTYPE).reshape(-1))


def test_full_scale_and_zero_symbols():
    s = framed_stream([(0, 0, 0, 7, 128), (0, 0, 0, 254, 255)])
    np.testing.assert_array_equal(frame_intensity(s), [255.0, 0.0])
    frames = reconstruct_frames(s)
    assert frames.shape == (2, 1, 1, 1)
    assert frames.ravel().tolist() == [255.0, 0.0]


def test_framed_timeline_rounds_to_frames():
    s = framed_stream([(0, 0, 0, 6, 212), (0, 0, 0, 5, 100), (1, 0, 0, 3, 9)], width=2)
    assert event_times(s).tolist() == [0, 255, 0]


def test_event_timeline_is_exact():
    s = event_stream([(0, 0, 0, 6, 212), (0, 0, 0, 5, 100), (0, 0, 0, 5, 7)])
    assert event_times(s).tolist() == [0, 212, 312]


@pytest.mark.parametrize("v", [0, 1, 2, 77, 128, 200, 254, 255])
def test_decode_agrees_with_fine_sampling(v):
    frames = np.full((40, 1, 1, 1), v, np.uint8)
    events = transcode_reference(frames, dt_max=255 * 10)[0]
    got = reconstruct_frames(FramedTranscoder(dt_max=255 * 10).fit(frames).transform(frames),
                             n_frames=40).ravel()
    want = scalar_decode(events, 255, 40, substeps=50)
    np.testing.assert_allclose(got, want, atol=1e-9)
    assert np.abs(got - v).max() <= 1.0


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 127), st.integers(1, 2000)),
                min_size=1, max_size=40), st.randoms(use_true_random=False))
def test_order_between_pixels_is_irrelevant(rows, rnd):
    ev = [(p, 0, 0, d, dt) for p, d, dt in rows]
    a = reconstruct_frames(event_stream(ev, width=4), interval=500)
    # shuffle while keeping each pixel's own order
    queues = {p: [e for e in ev if e[0] == p] for p in range(4)}
    tags = [e[0] for e in ev]
    rnd.shuffle(tags)
    shuffled = [queues[p].pop(0) for p in tags]
    b = reconstruct_frames(event_stream(shuffled, width=4), interval=500)
    np.testing.assert_array_equal(a, b)


@example(values=[92, 72, 112], m=20)
@given(st.lists(st.integers(0, 255), min_size=1, max_size=30), st.integers(0, 20))
def test_framed_decode_covers_clip(values, m):
    frames = np.array(values, np.uint8).reshape(-1, 1, 1, 1)
    s = FramedTranscoder(m=m, dt_max=255 * 8).fit(frames).transform(frames)
    out = reconstruct_frames(s)
    assert out.shape[0] == len(values)
    # frames sharing an event all lie within m of its first frame and decode
    # to their average, so any one of them is at most 2m (plus rounding) off
    assert np.abs(to_u8(out).ravel().astype(int) - values).max() <= 2 * m + 1


def test_reconstructor_estimator():
    s = framed_stream([(0, 0, 0, 7, 128)] * 2)
    assert FrameReconstructor().fit(s).transform(s).dtype == np.uint8
    raw = FrameReconstructor(clamp=False).transform(s)
    assert raw.dtype == np.float64 and raw.max() == 255.0
    halves = FrameReconstructor(fps=60).transform(s)
    assert halves.shape[0] == 4


def test_to_u8_clamps():
    np.testing.assert_array_equal(to_u8(np.array([-3.0, 0.4, 0.6, 300.0])), [0, 0, 1, 255])


class TestRecoverDvs:
    def step_stream(self):
        # 128 for 2000 ticks, then 256 * 2000 / 2963 = 172.8 = 128 * e^0.30
        return event_stream([(0, 0, 0, 7, 2000), (0, 0, 0, 8, 2963)])

    def test_log_step_yields_two_events(self):
        rec = recover_dvs(self.step_stream(), 0.15, log_space="log")
        assert rec["t"].tolist() == [2000, 2000]
        assert rec["p"].tolist() == [1, 1]

    def test_latent_space_compresses(self):
        rec = recover_dvs(self.step_stream(), 0.15)
        expected = math.floor(math.log((1 + 172.8 / 255) / (1 + 128 / 255)) / 0.15)
        assert len(rec) == expected == 0

    def test_negative_steps(self):
        s = event_stream([(0, 0, 0, 8, 2000), (0, 0, 0, 7, 2000)])
        rec = DvsRecovery(theta=0.3, log_space="log").fit(s).transform(s)
        assert rec["p"].tolist() == [-1, -1]

    def test_errors(self):
        with pytest.raises(ValueError):
            recover_dvs(self.step_stream(), 0.0)
        with pytest.raises(ValueError):
            recover_dvs(self.step_stream(), 0.1, log_space="ln")

    def test_empty(self):
        assert len(recover_dvs(event_stream([]))) == 0


@pytest.mark.parametrize("v", [3, 100, 200])
def test_precision_matches_enumeration(v):
    frames = np.full((240, 1, 1, 1), v, np.uint8)
    s = FramedTranscoder(dt_max=255 * 120).fit(frames).transform(frames)
    p = measure_precision(s)
    assert p.bits > 8
    assert p.bits == pytest.approx(precision_bits(v, 255, 255 * 120), abs=0.01)


def test_precision_short_window_is_coarse():
    frames = np.full((10, 1, 1, 1), 100, np.uint8)
    s = FramedTranscoder(dt_max=255).fit(frames).transform(frames)
    assert measure_precision(s).bits <= 8


def test_precision_empty():
    assert measure_precision(framed_stream([])).bits == 0.0
