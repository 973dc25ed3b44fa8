"""Server-side I/O scheduling.

Baselines are FIFO, a Deadline-like two-queue scheduler and a Kyber-like
budget throttler. Each has a coordinated twin that keeps the baseline's
choice of direction but, inside that direction, dispatches the request
with the largest Prio_sched = net_time + storage_time + predict_time.

Because every queued request ages at the same rate, the request with the
largest Prio_sched at any instant is the one with the largest
``net_time + predict_time - enqueue_time``; that static key lets a heap
stand in for a rescan at every dispatch.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from enum import Enum

from .engine import MS, US

READ = 0
WRITE = 1
WINDOW = 100
DEFAULT_PRIOR_NS = 100 * US


class Request:
    """An in-flight I/O as seen by one storage server."""

    __slots__ = (
        "rid", "op", "vssd", "orig_vssd", "lba", "length", "net_ns", "enqueue",
        "predict", "client", "born", "seq", "taken", "dispatch", "version",
        "redirected", "gc_wait", "parent", "server", "saw_idle_replica", "extra_ns",
    )

    def __init__(self, rid, op, vssd, lba=0, length=4096, net_ns=0, enqueue=0, predict=0, client=0, born=0):
        self.rid = rid
        self.op = op
        self.vssd = vssd
        self.orig_vssd = vssd
        self.lba = lba
        self.length = length
        self.net_ns = net_ns
        self.enqueue = enqueue
        self.predict = predict
        self.client = client
        self.born = born
        self.seq = 0
        self.taken = False
        self.dispatch = -1
        self.version = 0
        self.redirected = False
        self.gc_wait = 0
        self.parent = None
        self.server = -1
        self.saw_idle_replica = False
        self.extra_ns = 0

    @property
    def direction(self) -> int:
        return self.op


def priority(r: Request, now: int) -> int:
    """Prio_sched of a queued request at time `now`."""
    return r.net_ns + (now - r.enqueue) + r.predict


class SlidingWindow:
    """Mean of the last `size` samples, kept as an exact integer sum."""

    __slots__ = ("size", "buf", "total")

    def __init__(self, size: int = WINDOW):
        self.size = size
        self.buf: deque[int] = deque()
        self.total = 0

    def push(self, sample: int) -> float:
        if sample < 0:
            raise ValueError("negative latency sample")
        buf = self.buf
        buf.append(sample)
        self.total += sample
        if len(buf) > self.size:
            self.total -= buf.popleft()
        return self.total / len(buf)

    def mean(self, prior: float) -> float:
        return self.total / len(self.buf) if self.buf else prior

    def __len__(self) -> int:
        return len(self.buf)


class ReturnPredictor:
    """Per-(vSSD, direction) windows over incoming network latencies."""

    def __init__(self, size: int = WINDOW, prior_ns: int = DEFAULT_PRIOR_NS):
        self.size = size
        self.prior = prior_ns
        self.windows: dict[tuple[int, int], SlidingWindow] = {}

    def window_update(self, vid: int, direction: int, sample: int) -> float:
        w = self.windows.get((vid, direction))
        if w is None:
            w = self.windows[(vid, direction)] = SlidingWindow(self.size)
        return w.push(sample)

    def predict(self, vid: int, direction: int) -> float:
        w = self.windows.get((vid, direction))
        return self.prior if w is None else w.mean(self.prior)


# -- policies ------------------------------------------------------------------


class Variant(str, Enum):
    FIFO = "FIFO"
    DEADLINE = "DEADLINE"
    KYBER = "KYBER"


_BASE = {
    Variant.FIFO: (None, None),
    Variant.DEADLINE: (0.5 * MS, 1.75 * MS),
    Variant.KYBER: (0.75 * MS, 3 * MS),
}
_COORD = {
    Variant.FIFO: (None, None),
    Variant.DEADLINE: (1.5 * MS, 2.75 * MS),
    Variant.KYBER: (1.75 * MS, 4 * MS),
}


@dataclass(frozen=True)
class SchedulerPolicy:
    variant: Variant
    coordinated: bool
    read_target: int | None = None
    write_target: int | None = None
    epoch: int = 1000
    max_depth: int = 64


def configure_policy(variant, coordinated: bool, read_target=None, write_target=None, **kw) -> SchedulerPolicy:
    try:
        v = variant if isinstance(variant, Variant) else Variant(str(variant).upper())
    except ValueError:
        raise ValueError(f"unknown scheduler variant {variant!r}") from None
    r, w = (_COORD if coordinated else _BASE)[v]
    if read_target is not None:
        r = read_target
    if write_target is not None:
        w = write_target
    return SchedulerPolicy(
        v, bool(coordinated), None if r is None else int(r), None if w is None else int(w), **kw
    )


class _Lane:
    """One direction's queue: FIFO order plus an optional priority heap.

    Both views share the same request objects; whichever view hands a
    request out marks it taken and the other skips it lazily.
    """

    __slots__ = ("fifo", "heap", "n", "by_prio")

    def __init__(self, by_prio: bool):
        self.fifo: deque[Request] = deque()
        self.heap: list = []
        self.n = 0
        self.by_prio = by_prio

    def push(self, r: Request) -> None:
        r.taken = False
        self.fifo.append(r)
        if self.by_prio:
            heapq.heappush(self.heap, (r.enqueue - r.net_ns - r.predict, r.seq, r))
        self.n += 1

    def head(self) -> Request | None:
        f = self.fifo
        while f and f[0].taken:
            f.popleft()
        return f[0] if f else None

    def pop_fifo(self) -> Request:
        r = self.head()
        self.fifo.popleft()
        r.taken = True
        self.n -= 1
        return r

    def pop_prio(self) -> Request:
        h = self.heap
        while h[0][2].taken:
            heapq.heappop(h)
        r = heapq.heappop(h)[2]
        r.taken = True
        self.n -= 1
        return r

    def pop(self) -> Request:
        return self.pop_prio() if self.by_prio else self.pop_fifo()


class Scheduler:
    """Queue for one vSSD's device slots.

    `pop(now)` returns the next request to hand to the device, or None if
    the queue is empty or the policy chooses to hold back (Kyber budgets).
    """

    def __init__(self, policy: SchedulerPolicy):
        self.policy = policy
        self.variant = policy.variant
        self.coord = policy.coordinated
        self._seq = 0
        if self.variant is Variant.FIFO:
            self.lanes = [_Lane(self.coord)]
        else:
            self.lanes = [_Lane(self.coord), _Lane(self.coord)]
        self.inflight = [0, 0]
        self.budget = [policy.max_depth, policy.max_depth]
        self._epoch_lat: list[list[int]] = [[], []]
        self.held_back = 0

    def __len__(self) -> int:
        return sum(l.n for l in self.lanes)

    def queued(self, direction: int) -> int:
        if self.variant is Variant.FIFO:
            return sum(1 for r in self.lanes[0].fifo if not r.taken and r.op == direction)
        return self.lanes[direction].n

    def push(self, r: Request) -> None:
        r.seq = self._seq
        self._seq += 1
        self.lanes[0 if self.variant is Variant.FIFO else r.op].push(r)

    def choose_direction(self, now: int) -> int | None:
        """Direction the baseline would serve next; None if nothing may go."""
        lanes = self.lanes
        if self.variant is Variant.DEADLINE:
            rh = lanes[READ].head()
            wh = lanes[WRITE].head()
            if rh is None and wh is None:
                return None
            if rh is None:
                return WRITE
            if wh is None:
                return READ
            r_over = now - rh.enqueue - self.policy.read_target
            w_over = now - wh.enqueue - self.policy.write_target
            if w_over > 0 and w_over > r_over:
                return WRITE
            return READ
        # Kyber-like: reads first within their budget
        for d in (READ, WRITE):
            if lanes[d].n and self.inflight[d] < self.budget[d]:
                return d
        if lanes[READ].n or lanes[WRITE].n:
            self.held_back += 1
        return None

    def pop(self, now: int) -> Request | None:
        if self.variant is Variant.FIFO:
            lane = self.lanes[0]
            if not lane.n:
                return None
            r = lane.pop()
        else:
            d = self.choose_direction(now)
            if d is None:
                return None
            r = self.lanes[d].pop()
        self.inflight[r.op] += 1
        return r

    def reads_queued(self) -> bool:
        if self.variant is Variant.FIFO:
            return any(not r.taken and r.op == READ for r in self.lanes[0].fifo)
        return self.lanes[READ].n > 0

    def pop_reads(self) -> list[Request]:
        """Remove and return every queued read (FIFO order)."""
        out = []
        for lane in self.lanes:
            keep = deque()
            for r in lane.fifo:
                if r.taken:
                    continue
                if r.op == READ:
                    r.taken = True
                    lane.n -= 1
                    out.append(r)
                else:
                    keep.append(r)
            lane.fifo = keep
        out.sort(key=lambda r: r.seq)
        return out

    def pop_writes(self) -> list[Request]:
        out = []
        for lane in self.lanes:
            keep = deque()
            for r in lane.fifo:
                if r.taken:
                    continue
                if r.op == WRITE:
                    r.taken = True
                    lane.n -= 1
                    out.append(r)
                else:
                    keep.append(r)
            lane.fifo = keep
        out.sort(key=lambda r: r.seq)
        return out

    def complete(self, r: Request, now: int) -> None:
        d = r.op
        self.inflight[d] -= 1
        if self.variant is not Variant.KYBER:
            return
        lat = self._epoch_lat[d]
        lat.append(now - r.enqueue)
        if len(lat) >= self.policy.epoch:
            lat.sort()
            p95 = lat[int(0.95 * (len(lat) - 1))]
            target = self.policy.read_target if d == READ else self.policy.write_target
            other = WRITE if d == READ else READ
            if p95 > target:
                self.budget[other] = max(1, self.budget[other] // 2)
            else:
                self.budget[other] = min(self.policy.max_depth, self.budget[other] * 2)
            lat.clear()


def make_scheduler(policy: SchedulerPolicy) -> Scheduler:
    return Scheduler(policy)
