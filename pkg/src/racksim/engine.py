"""Deterministic discrete-event core.

Time is an integer count of nanoseconds. Events with equal fire times are
dispatched in the order they were scheduled. Randomness comes from named
streams derived from one master seed, so adding a consumer of a new stream
never perturbs the draws seen by existing ones.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from enum import Enum
from typing import Any, Callable

NS = 1
US = 1_000
MS = 1_000_000
SEC = 1_000_000_000


class EventKind(str, Enum):
    PACKET_ARRIVAL = "packet-arrival"
    GC_START = "gc-start"
    GC_FINISH = "gc-finish"
    PERIODIC_GC_CHECK = "periodic-gc-check"
    WEAR_CHECK = "wear-check"
    REQUEST_COMPLETE = "request-complete"
    CACHE_FLUSH = "cache-flush"
    IDLE_CHECK = "idle-check"
    GENERIC = "generic"


class Event:
    """Handle for a scheduled event; `cancel()` prevents dispatch."""

    __slots__ = ("fire_at", "seq", "kind", "fn", "arg")

    def __init__(self, fire_at: int, seq: int, kind, fn, arg):
        self.fire_at = fire_at
        self.seq = seq
        self.kind = kind
        self.fn = fn
        self.arg = arg

    def __lt__(self, other: "Event") -> bool:
        if self.fire_at != other.fire_at:
            return self.fire_at < other.fire_at
        return self.seq < other.seq

    @property
    def cancelled(self) -> bool:
        return self.fn is None

    def cancel(self) -> None:
        self.fn = None
        self.arg = None

    def __repr__(self) -> str:
        return f"Event(t={self.fire_at}, seq={self.seq}, kind={self.kind})"


def _stream_seed(master: int, name: str) -> int:
    digest = hashlib.sha256(f"{master}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class Engine:
    """Single-threaded event loop with a virtual nanosecond clock.

    The heap holds `(fire_at, seq, event)` tuples; `seq` is unique so the
    event objects themselves are never compared.
    """

    def __init__(self, seed: int = 0, trace: bool = False):
        self.seed = int(seed)
        self.now = 0
        self._seq = 0
        self._heap: list = []
        self._streams: dict[str, random.Random] = {}
        self.dispatched = 0
        self.trace: list[tuple[int, int, Any]] | None = [] if trace else None

    # -- scheduling ---------------------------------------------------------

    def schedule(self, delay: int, kind=EventKind.GENERIC, fn: Callable | None = None, arg: Any = None) -> Event:
        if delay < 0:
            raise ValueError(f"negative delay {delay}")
        return self.schedule_at(self.now + delay, kind, fn, arg)

    def schedule_at(self, when: int, kind=EventKind.GENERIC, fn: Callable | None = None, arg: Any = None) -> Event:
        if when < self.now:
            raise ValueError(f"cannot schedule in the past ({when} < {self.now})")
        seq = self._seq
        self._seq = seq + 1
        ev = Event(when, seq, kind, fn if fn is not None else _noop, arg)
        heapq.heappush(self._heap, (when, seq, ev))
        return ev

    def call_at(self, when: int, fn: Callable, arg: Any = None) -> None:
        """Fast path for internal callbacks that never need cancelling."""
        seq = self._seq
        self._seq = seq + 1
        heapq.heappush(self._heap, (when, seq, fn, arg))

    # -- dispatch -----------------------------------------------------------

    def pending(self) -> int:
        return len(self._heap)

    def peek_time(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def step(self) -> bool:
        """Dispatch exactly one live event. Returns False when the queue is empty."""
        heap = self._heap
        while heap:
            item = heapq.heappop(heap)
            if self._dispatch(item):
                return True
        return False

    def _dispatch(self, item) -> bool:
        self.now = item[0]
        if len(item) == 3:
            ev = item[2]
            fn = ev.fn
            if fn is None:
                return False
            if self.trace is not None:
                self.trace.append((item[0], item[1], ev.kind))
            self.dispatched += 1
            fn(ev.arg)
            return True
        if self.trace is not None:
            self.trace.append((item[0], item[1], getattr(item[2], "__name__", "call")))
        self.dispatched += 1
        item[2](item[3])
        return True

    def run_until(self, end: int) -> int:
        """Dispatch every event with fire_at <= end; leave the clock at `end`."""
        if end < self.now:
            raise ValueError(f"end {end} is before now {self.now}")
        heap = self._heap
        pop = heapq.heappop
        count = 0
        tracing = self.trace is not None
        while heap and heap[0][0] <= end:
            item = pop(heap)
            self.now = item[0]
            if len(item) == 4:
                if tracing:
                    self.trace.append((item[0], item[1], getattr(item[2], "__name__", "call")))
                item[2](item[3])
                count += 1
                continue
            ev = item[2]
            fn = ev.fn
            if fn is None:
                continue
            if tracing:
                self.trace.append((item[0], item[1], ev.kind))
            fn(ev.arg)
            count += 1
        self.now = end
        self.dispatched += count
        return count

    # -- randomness ---------------------------------------------------------

    def register_stream(self, name: str) -> random.Random:
        rng = self._streams.get(name)
        if rng is None:
            rng = random.Random(_stream_seed(self.seed, name))
            self._streams[name] = rng
        return rng

    def rng(self, name: str) -> random.Random:
        try:
            return self._streams[name]
        except KeyError:
            raise KeyError(f"unknown rng stream {name!r}") from None

    def rng_draw(self, name: str) -> float:
        return self.rng(name).random()


def _noop(_arg) -> None:
    return None
