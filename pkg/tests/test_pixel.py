import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from adder.core import D_MAX, D_ZERO
from adder.pixel import IntegrationInput, PixelList, initial_d, residual_events
from oracles import static_window_frames


def states(p):
    return [(n.d, n.accum, n.elapsed, n.event) for n in p.nodes]


class TestWalkthrough:
    """Three integrations into a pixel first seeded with 101."""

    def test_init(self):
        p = PixelList(101)
        assert p.head.d == 6 and p.queued() == []

    def test_trace(self):
        p = PixelList(101)
        assert p.integrate(101, 20) == []
        head, child = p.nodes
        assert head.event == (6, 12) and head.d == 7
        assert child.d == 6
        assert child.accum == pytest.approx(37, abs=1e-6)
        assert child.elapsed == pytest.approx(37 / 101 * 20, abs=1e-6)
        assert child.elapsed == pytest.approx(7.33, abs=5e-3)

        p.integrate(40, 30)
        head, child = p.nodes
        assert head.event == (7, 40) and head.d == 8
        assert child.d == 5
        assert child.accum == pytest.approx(13, abs=1e-6)
        assert child.elapsed == pytest.approx(9.75, abs=1e-6)

        p.integrate(25, 30)
        head, child, grand = p.nodes
        assert head.event == (7, 40)
        assert child.event == (5, 32)
        assert grand.accum == pytest.approx(6, abs=1e-6)
        assert grand.elapsed == pytest.approx(7.2, abs=1e-6)
        assert p.queued() == [(7, 40), (5, 32)]

    def test_flush_dequeues_head_first(self):
        p = PixelList(101)
        for i, s in ((101, 20), (40, 30), (25, 30)):
            p.integrate(i, s)
        assert p.flush() == [(7, 40), (5, 32)]
        assert len(p.nodes) == 1 and p.queued() == []


@pytest.mark.parametrize("v, d", [(0, 0), (0.5, 0), (1, 0), (2, 1), (101, 6), (255, 7), (256, 8),
                                  (2.0**200, D_MAX)])
def test_initial_d(v, d):
    assert initial_d(v) == d


def test_input_validation():
    with pytest.raises(ValueError):
        IntegrationInput(-1, 5)
    with pytest.raises(ValueError):
        IntegrationInput(1, 0)
    with pytest.raises(ValueError):
        PixelList(5).integrate(-1, 3)


def test_contrast_threshold():
    p = PixelList(100)
    assert not p.should_flush(110, 10)
    assert p.should_flush(111, 10)
    assert p.should_flush(89, 10)


def test_zero_intensity_flush():
    p = PixelList(0, quantum=1)
    p.integrate(0, 500)
    assert p.flush() == [(D_ZERO, 500)]


class TestResidual:
    def test_exact_power(self):
        assert residual_events(64, 100) == [(6, 100)]

    def test_split(self):
        # 96 units: 64 then 32, time shared in proportion
        assert residual_events(96, 90) == [(6, 60), (5, 30)]

    def test_nothing_to_cover(self):
        assert residual_events(10, 0) == []

    @given(st.floats(0, 1e6), st.integers(1, 10**6))
    def test_tick_exact_covers_time(self, accum, ticks):
        ev = residual_events(accum, ticks, 1)
        assert sum(dt for _, dt in ev) == ticks
        nz = [d for d, _ in ev if d != D_ZERO]
        assert sum(2.0**d for d in nz) <= accum + 1e-9
        ds = [d for d, _ in ev]
        assert ds == sorted(ds, reverse=True) or ds == [D_ZERO]

    @given(st.floats(0, 1e5), st.integers(1, 200), st.sampled_from([255, 1000]))
    def test_frame_aligned_covers_frames(self, accum, frames, q):
        ev = residual_events(accum, frames * q, q)
        assert sum(-(-dt // q) * q for _, dt in ev) <= frames * q
        assert all(dt >= 1 for _, dt in ev)


class TestCap:
    def test_d_never_exceeds_limit(self):
        p = PixelList(2.0**120, quantum=1)
        out = []
        for _ in range(300):
            out += p.integrate(2.0**126, 1)
        assert out and all(d <= D_MAX for d, _ in out)

    def test_tick_exact_window(self):
        # one unit per tick and a 1024-tick limit: one <10, 1024> per window
        p = PixelList(1, dt_max=1024, quantum=1)
        out = []
        for _ in range(10 * 1024):
            out += p.integrate(1, 1)
        out += p.flush()
        assert out == [(10, 1024)] * 10

    @pytest.mark.parametrize("v", [1, 3, 37, 100, 128, 200, 255])
    def test_frame_window_matches_oracle(self, v):
        q, dt_max = 255, 255 * 16
        w = static_window_frames(v, q, dt_max)
        p = PixelList(v, dt_max=dt_max, quantum=q)
        out = []
        for _ in range(3 * w):
            out += p.integrate(v, q)
        out += p.flush()
        assert len(out) == 3
        assert all(-(-dt // q) == w for _, dt in out)

    @given(st.integers(1, 255), st.integers(1, 64))
    def test_spans_bounded(self, v, k):
        dt_max = 255 * k
        p = PixelList(v, dt_max=dt_max, quantum=255)
        out = []
        for _ in range(2 * k + 3):
            out += p.integrate(v, 255)
        out += p.flush()
        assert all(1 <= dt <= dt_max for _, dt in out)


@given(st.lists(st.tuples(st.floats(0, 500), st.integers(1, 400)), min_size=1, max_size=30),
       st.one_of(st.none(), st.integers(50, 3000)))
def test_tick_exact_timeline(inputs, dt_max):
    p = PixelList(inputs[0][0], dt_max=dt_max, quantum=1)
    out = []
    for i, s in inputs:
        out += p.integrate(i, s)
    out += p.flush()
    assert sum(dt for _, dt in out) == sum(s for _, s in inputs)
    if dt_max is not None:
        assert all(dt <= dt_max for _, dt in out)


@given(st.lists(st.integers(0, 255), min_size=1, max_size=40), st.integers(1, 40),
       st.floats(0, 60))
def test_frame_aligned_timeline(values, k, m):
    q = 255
    p = PixelList(values[0], dt_max=q * k, quantum=q)
    out = []
    for v in values:
        if p.should_flush(v, m):
            out += p.flush()
            p.reset(v)
        out += p.integrate(v, q)
    out += p.flush()
    assert sum(-(-dt // q) * q for _, dt in out) == len(values) * q


@given(st.floats(1, 1e4), st.floats(1, 1e3))
def test_continuous_event_rate(i, s):
    # a single saturation event reproduces the input rate up to dt truncation
    p = PixelList(i)
    p.integrate(i, s)
    d, dt = p.head.event
    assume(dt > 10)
    rate = 2.0**d / dt
    assert rate >= i / s
    assert rate <= i / s * (dt + 1) / dt + 1e-9
    assert math.isclose(2.0**d, 2.0 ** math.floor(math.log2(i)))
