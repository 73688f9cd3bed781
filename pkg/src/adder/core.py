"""Event types, the event/intensity mapping and the packed ``.adder`` format.

File layout (all integers in the byte order named by the endianness byte)::

    offset  size  field
    0       4     magic b"ADDE"
    4       1     version (1)
    5       1     endianness (0 = little, 1 = big)
    6       2     width
    8       2     height
    10      1     channels (1 or 3)
    11      1     source kind
    12      4     tick rate (ticks per second)
    16      4     reference interval (ticks)
    20      4     maximum interval (ticks)
    24      ...   events

Each event is ``x:u16 y:u16 [c:u8] d:u8 dt:u32``; 9 bytes for monochrome
streams, 10 bytes when the colour channel byte is present.
"""

from __future__ import annotations

import enum
import io
import os
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, NamedTuple, Optional, Union

import numpy as np

MAGIC = b"ADDE"
VERSION = 1
HEADER_SIZE = 24

D_MAX = 127
D_ZERO = 254
DT_LIMIT = 2**32 - 1

LITTLE = 0
BIG = 1

_BYTE_ORDER = {LITTLE: "<", BIG: ">"}
_HEADER_BODY = "HHBBIII"  # after magic + version + endianness


class FormatError(ValueError):
    """Malformed or unsupported ``.adder`` data."""


class TruncatedError(FormatError):
    pass


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class InvalidEventError(FormatError):
    pass


class SourceKind(enum.IntEnum):
    FRAMED_U8 = 0
    DAVIS_MODE_I = 1
    DAVIS_MODE_II = 2
    DVS_MODE_III = 3

    @property
    def framed(self) -> bool:
        """Streams whose events start on reference-interval boundaries."""
        return self in (SourceKind.FRAMED_U8, SourceKind.DAVIS_MODE_I)


class AdderEvent(NamedTuple):
    x: int
    y: int
    c: Optional[int]
    d: int
    delta_t: int


def valid_d(d: int) -> bool:
    return 0 <= d <= D_MAX or d == D_ZERO


def event_intensity(e: AdderEvent) -> float:
    """Intensity units per tick carried by one event, ``2**d / delta_t``."""
    if e.d == D_ZERO:
        return 0.0
    return 2.0 ** e.d / e.delta_t


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    channels: int = 1
    source_kind: SourceKind = SourceKind.FRAMED_U8
    tick_rate: int = 255 * 30
    ref_interval: int = 255
    max_interval: int = 255 * 120
    version: int = VERSION
    endianness: int = LITTLE

    def __post_init__(self):
        object.__setattr__(self, "source_kind", SourceKind(self.source_kind))
        self.validate()

    def validate(self) -> None:
        if self.channels not in (1, 3):
            raise FormatError(f"channels must be 1 or 3, got {self.channels}")
        if not (0 < self.width <= 0xFFFF and 0 < self.height <= 0xFFFF):
            raise FormatError(f"bad plane size {self.width}x{self.height}")
        if self.endianness not in _BYTE_ORDER:
            raise FormatError(f"bad endianness flag {self.endianness}")
        if self.version != VERSION:
            raise UnsupportedVersionError(f"unsupported version {self.version}")
        for name in ("tick_rate", "ref_interval", "max_interval"):
            v = getattr(self, name)
            if not 1 <= v <= DT_LIMIT:
                raise FormatError(f"{name}={v} out of u32 range")
        if self.ref_interval > self.max_interval:
            raise FormatError(
                f"ref_interval {self.ref_interval} exceeds max_interval {self.max_interval}"
            )
        if self.ref_interval > self.tick_rate:
            raise FormatError(
                f"ref_interval {self.ref_interval} exceeds tick_rate {self.tick_rate}"
            )

    @property
    def byte_order(self) -> str:
        return _BYTE_ORDER[self.endianness]

    @property
    def event_size(self) -> int:
        return event_size(self.channels)

    @property
    def n_pixels(self) -> int:
        return self.width * self.height * self.channels

    def pack(self) -> bytes:
        return (
            MAGIC
            + bytes([self.version, self.endianness])
            + struct.pack(
                self.byte_order + _HEADER_BODY,
                self.width,
                self.height,
                self.channels,
                int(self.source_kind),
                self.tick_rate,
                self.ref_interval,
                self.max_interval,
            )
        )

    @classmethod
    def unpack(cls, data: bytes) -> "StreamHeader":
        if len(data) < HEADER_SIZE:
            raise TruncatedError(f"header needs {HEADER_SIZE} bytes, got {len(data)}")
        if data[:4] != MAGIC:
            raise BadMagicError(f"bad magic {bytes(data[:4])!r}")
        version, endianness = data[4], data[5]
        if version != VERSION:
            raise UnsupportedVersionError(f"unsupported version {version}")
        if endianness not in _BYTE_ORDER:
            raise FormatError(f"bad endianness flag {endianness}")
        w, h, ch, kind, rate, ref, mx = struct.unpack(
            _BYTE_ORDER[endianness] + _HEADER_BODY, data[6:HEADER_SIZE]
        )
        try:
            kind = SourceKind(kind)
        except ValueError:
            raise FormatError(f"unknown source kind {kind}") from None
        return cls(w, h, ch, kind, rate, ref, mx, version, endianness)


def event_size(channels: int) -> int:
    if channels not in (1, 3):
        raise ValueError(f"channels must be 1 or 3, got {channels}")
    return 9 if channels == 1 else 10


# In-memory event arrays always carry ``c`` (0 for monochrome streams).
EVENT_DTYPE = np.dtype([("x", "u2"), ("y", "u2"), ("c", "u1"), ("d", "u1"), ("dt", "u4")])


def wire_dtype(channels: int, byte_order: str = "<") -> np.dtype:
    fields = [("x", byte_order + "u2"), ("y", byte_order + "u2")]
    if channels == 3:
        fields.append(("c", "u1"))
    fields += [("d", "u1"), ("dt", byte_order + "u4")]
    dt = np.dtype(fields)
    assert dt.itemsize == event_size(channels)
    return dt


def empty_events(n: int = 0) -> np.ndarray:
    return np.zeros(n, dtype=EVENT_DTYPE)


def events_to_array(events: Iterable[AdderEvent]) -> np.ndarray:
    rows = [(e.x, e.y, e.c or 0, e.d, e.delta_t) for e in events]
    return np.array(rows, dtype=EVENT_DTYPE) if rows else empty_events()


def _struct_for(channels: int, byte_order: str) -> struct.Struct:
    return struct.Struct(byte_order + ("HHBI" if channels == 1 else "HHBBI"))


def encode_event(e: AdderEvent, channels: int, byte_order: str = "<") -> bytes:
    st = _struct_for(channels, byte_order)
    if not 1 <= e.delta_t <= DT_LIMIT:
        raise InvalidEventError(f"delta_t {e.delta_t} outside u32 range")
    if not valid_d(e.d):
        raise InvalidEventError(f"invalid decimation {e.d}")
    if channels == 1:
        return st.pack(e.x, e.y, e.d, e.delta_t)
    if e.c is None:
        raise InvalidEventError("colour stream event without channel index")
    return st.pack(e.x, e.y, e.c, e.d, e.delta_t)


def decode_event(data: bytes, channels: int, byte_order: str = "<") -> AdderEvent:
    st = _struct_for(channels, byte_order)
    if len(data) < st.size:
        raise TruncatedError(f"event needs {st.size} bytes, got {len(data)}")
    fields = st.unpack_from(data)
    if channels == 1:
        x, y, d, dt = fields
        c = None
    else:
        x, y, c, d, dt = fields
        if c >= 3:
            raise InvalidEventError(f"channel {c} out of range")
    if not valid_d(d):
        raise InvalidEventError(f"invalid decimation {d}")
    if dt == 0:
        raise InvalidEventError("delta_t must be positive")
    return AdderEvent(x, y, c, d, dt)


def check_events(header: StreamHeader, ev: np.ndarray) -> None:
    """Raise InvalidEventError if any event breaks the stream's invariants."""
    if len(ev) == 0:
        return
    d = ev["d"]
    bad = ~((d <= D_MAX) | (d == D_ZERO))
    if bad.any():
        raise InvalidEventError(f"invalid decimation {int(d[bad][0])}")
    if (ev["dt"] == 0).any():
        raise InvalidEventError("delta_t must be positive")
    if (ev["dt"] > header.max_interval).any():
        raise InvalidEventError("delta_t exceeds the stream's max_interval")
    if (ev["x"] >= header.width).any() or (ev["y"] >= header.height).any():
        raise InvalidEventError("event address outside the plane")
    if (ev["c"] >= header.channels).any():
        raise InvalidEventError("channel index out of range")


def encode_events(header: StreamHeader, ev: np.ndarray) -> bytes:
    wire = np.empty(len(ev), dtype=wire_dtype(header.channels, header.byte_order))
    for name in wire.dtype.names:
        wire[name] = ev[name]
    return wire.tobytes()


def decode_events(header: StreamHeader, data: bytes) -> np.ndarray:
    size = header.event_size
    if len(data) % size:
        raise TruncatedError(f"{len(data)} bytes is not a whole number of {size}-byte events")
    wire = np.frombuffer(data, dtype=wire_dtype(header.channels, header.byte_order))
    ev = empty_events(len(wire))
    for name in wire.dtype.names:
        ev[name] = wire[name]
    check_events(header, ev)
    return ev


@dataclass
class AdderStream:
    """A decoded stream held in memory."""

    header: StreamHeader
    events: np.ndarray

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[AdderEvent]:
        mono = self.header.channels == 1
        for x, y, c, d, dt in self.events.tolist():
            yield AdderEvent(x, y, None if mono else c, d, dt)

    @property
    def nbytes(self) -> int:
        return HEADER_SIZE + len(self.events) * self.header.event_size


class StreamWriter:
    """Incremental writer; events are appended in batches as they are produced."""

    def __init__(self, fp: BinaryIO, header: StreamHeader):
        self.fp = fp
        self.header = header
        self.count = 0
        fp.write(header.pack())

    def write(self, events: Union[np.ndarray, Iterable[AdderEvent]]) -> None:
        if not isinstance(events, np.ndarray):
            events = events_to_array(events)
        check_events(self.header, events)
        self.fp.write(encode_events(self.header, events))
        self.count += len(events)


class StreamReader:
    """Streaming reader; memory use is bounded by ``chunk`` events."""

    def __init__(self, fp: BinaryIO, chunk: int = 1 << 16):
        self.fp = fp
        self.chunk = chunk
        self.header = StreamHeader.unpack(_read_exact(fp, HEADER_SIZE))

    def chunks(self) -> Iterator[np.ndarray]:
        size = self.header.event_size
        while True:
            data = self.fp.read(size * self.chunk)
            if not data:
                return
            yield decode_events(self.header, data)

    def __iter__(self) -> Iterator[AdderEvent]:
        mono = self.header.channels == 1
        for ev in self.chunks():
            for x, y, c, d, dt in ev.tolist():
                yield AdderEvent(x, y, None if mono else c, d, dt)

    def read_all(self) -> AdderStream:
        parts = list(self.chunks())
        ev = np.concatenate(parts) if parts else empty_events()
        return AdderStream(self.header, ev)


def _read_exact(fp: BinaryIO, n: int) -> bytes:
    data = fp.read(n)
    if len(data) < n:
        raise TruncatedError(f"expected {n} bytes, got {len(data)}")
    return data


def write_stream(header: StreamHeader, events) -> bytes:
    buf = io.BytesIO()
    StreamWriter(buf, header).write(events)
    return buf.getvalue()


def read_stream(data: bytes) -> tuple[StreamHeader, Iterator[AdderEvent]]:
    reader = StreamReader(io.BytesIO(data))
    return reader.header, iter(reader)


def load(path: Union[str, os.PathLike]) -> AdderStream:
    with open(path, "rb") as fp:
        return StreamReader(fp).read_all()


def loads(data: bytes) -> AdderStream:
    return StreamReader(io.BytesIO(data)).read_all()


def dumps(stream: AdderStream) -> bytes:
    return write_stream(stream.header, stream.events)
