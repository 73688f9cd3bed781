"""Per-pixel asynchronous integration engine.

A pixel is a chain of nodes. Every node integrates the intensity it receives
until it holds ``2**d`` units; at that point it (re)writes its outgoing event
``(d, dt)``, drops its descendants, doubles its threshold and spawns a child
that integrates whatever arrives after the saturation point. Flushing the
pixel dequeues the outgoing events head-most first.

Three timing regimes are supported through ``quantum``:

``None``
    continuous real-valued bookkeeping, events truncate ``dt`` to an integer;
``1``
    tick-exact: every node window starts on an integer tick, so the decoded
    timeline of a flushed pixel equals the true elapsed ticks;
``q > 1``
    frame-aligned: every node window starts on a multiple of ``q``; the part of
    an input that follows a saturation is ignored by the new child.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .core import D_MAX, D_ZERO

Event = tuple[int, int]


def initial_d(intensity: float) -> int:
    if intensity < 1:
        return 0
    return min(D_MAX, int(math.floor(math.log2(intensity))))


@dataclass
class PixelNode:
    d: int
    accum: float = 0.0
    elapsed: float = 0.0
    event: Optional[Event] = None


@dataclass(frozen=True)
class IntegrationInput:
    intensity: float
    span: float

    def __post_init__(self):
        if self.intensity < 0:
            raise ValueError("intensity must be non-negative")
        if self.span <= 0:
            raise ValueError("span must be positive")


def residual_events(accum: float, ticks: float, quantum: float = 1) -> list[Event]:
    """Cover ``ticks`` of unsaturated integration with best-fit events.

    Greedy binary split: each event carries the largest power of two not
    above the remaining accumulation, over the share of time that preserves
    the mean rate. A sub-unit remainder is folded into the last event.
    """
    out: list[Event] = []
    q = quantum
    ticks = int(math.floor(ticks + 0.5))
    while ticks >= max(q, 1):
        if accum < 1:
            if out:
                d, dt = out[-1]
                out[-1] = (d, dt + ticks)
            else:
                out.append((D_ZERO, ticks))
            break
        d = min(D_MAX, int(math.floor(math.log2(accum))))
        dt = max(1, int(math.floor(ticks * 2.0**d / accum)))
        covered = dt if q <= 1 else int(math.ceil(dt / q) * q)
        ticks -= covered
        accum -= 2.0**d
        out.append((d, dt))
    return out


class PixelList:
    """Integration state of one pixel channel.

    Parameters
    ----------
    intensity : float
        First intensity to integrate; sets the head threshold and the baseline.
    dt_max : int, optional
        Longest span any emitted event may cover.
    quantum : int, optional
        Timing regime, see module docstring.
    ref_span : float, optional
        When given, spawned nodes size their threshold from the input rate
        normalised to this span instead of the raw input intensity.
    """

    def __init__(self, intensity: float, *, dt_max: Optional[int] = None,
                 quantum: Optional[int] = None, ref_span: Optional[float] = None):
        self.dt_max = dt_max
        self.quantum = quantum
        self.ref_span = ref_span
        self.reset(intensity)

    def reset(self, intensity: float) -> None:
        self.nodes = [PixelNode(initial_d(intensity))]
        self.baseline = intensity

    @property
    def head(self) -> PixelNode:
        return self.nodes[0]

    def queued(self) -> list[Event]:
        return [n.event for n in self.nodes if n.event is not None]

    def should_flush(self, incoming: float, m: float) -> bool:
        # the slack absorbs round-off from latent <-> 8-bit rescaling
        return abs(incoming - self.baseline) > m + 1e-9

    # -- integration -------------------------------------------------------

    def integrate(self, intensity: float, span: float) -> list[Event]:
        """Absorb ``intensity`` units spread over ``span`` ticks.

        Returns events forced out by the maximum-interval limit (either the
        window reaching ``dt_max`` or a node whose next threshold cannot be
        reached inside it).
        """
        if intensity < 0 or span <= 0:
            raise ValueError("need intensity >= 0 and span > 0")
        out: list[Event] = []
        q = self.quantum or 0
        while span > 0:
            part_i, part_s = intensity, span
            boundary = False
            if self.dt_max is not None:
                room = self.dt_max - self.head.elapsed
                if q > 1:
                    room = math.floor(room / q + 1e-9) * q
                if room <= 1e-9:
                    out += self.flush()
                    continue
                if room < span:
                    part_s = room
                    part_i = intensity * room / span
                    boundary = True
            rest = self._absorb(part_i, part_s)
            if rest is not None:
                out += self._fire(intensity, span)
                if q > 1:
                    return out
                span_left, int_left = rest
                # input beyond the capped saturation
                span = span_left + (span - part_s)
                intensity = int_left + (intensity - part_i)
                continue
            span -= part_s
            intensity -= part_i
            if boundary:
                out += self.flush()
        return out

    def _spawn_d(self, intensity: float, span: float) -> int:
        if self.ref_span is None:
            return initial_d(intensity)
        return initial_d(intensity / span * self.ref_span)

    def _event_dt(self, e: float) -> int:
        q = self.quantum or 0
        # frame-aligned timing is recovered by the decoder, so dt only carries
        # intensity there and nearest rounding halves the error
        dt = int(math.floor(e + 0.5)) if q > 1 else int(math.floor(e))
        if q > 1 and dt % q == 0 and dt < e:
            dt += 1
        return max(1, dt)

    def _capped(self, node: PixelNode, e: float, intensity: float, span: float) -> bool:
        if node.d >= D_MAX:
            return True
        if self.dt_max is None:
            return False
        return e + 2.0**node.d * span / intensity > self.dt_max

    def _absorb(self, intensity: float, span: float):
        """Feed one input through the chain, head first.

        Returns None normally, or ``(span_left, intensity_left)`` of the input
        remaining after a node saturated at its capped threshold.
        """
        q = self.quantum
        slice_i, slice_s = intensity, span
        i = 0
        while i < len(self.nodes):
            node = self.nodes[i]
            a0, e0 = node.accum, node.elapsed
            used = None
            while intensity > 0 and a0 + slice_i >= 2.0**node.d:
                used = 2.0**node.d - a0
                e = e0 + span * used / intensity
                dt = self._event_dt(e)
                node.event = (node.d, dt)
                del self.nodes[i + 1:]
                if self._capped(node, e, intensity, span):
                    node.accum, node.elapsed = a0 + used, e
                    self._carry = e - dt
                    return slice_s - span * used / intensity, slice_i - used
                node.d += 1
                carry = e - dt if q == 1 else 0.0
                spawned = PixelNode(self._spawn_d(intensity, span), elapsed=carry)
            node.accum = a0 + slice_i
            node.elapsed = e0 + slice_s
            if used is not None:
                self.nodes.append(spawned)
                if q is not None and q > 1:
                    return None
                slice_i -= used
                slice_s -= span * used / intensity
            i += 1
        return None

    def _fire(self, intensity: float, span: float) -> list[Event]:
        events = self.queued()
        self.nodes = [PixelNode(self._spawn_d(intensity, span))]
        if self.quantum == 1:
            # the new window opens on the integer tick the event ended on
            self.head.elapsed = self._carry
        return events

    # -- flushing ----------------------------------------------------------

    def flush(self) -> list[Event]:
        """Dequeue all pending events and restart integration.

        In tick-exact and frame-aligned regimes the tail's unsaturated
        integration is emitted as best-fit events so the decoded timeline
        stays exact; in the continuous regime it is discarded unless the
        queue is empty.
        """
        events = self.queued()
        tail = self.nodes[-1]
        if self.quantum is None:
            if not events:
                if tail.accum >= 1:
                    d = min(D_MAX, int(math.floor(math.log2(tail.accum))))
                    dt = max(1, int(round(tail.elapsed * 2.0**d / tail.accum)))
                    if self.dt_max is not None:
                        dt = min(dt, self.dt_max)
                    events.append((d, dt))
                elif tail.elapsed >= 1:
                    events.append((D_ZERO, int(math.floor(tail.elapsed))))
        elif tail.event is None:
            events += residual_events(tail.accum, tail.elapsed, self.quantum)
        self.nodes = [PixelNode(tail.d)]
        return events
