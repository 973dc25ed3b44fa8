"""Workload generation and network latency modelling.

Workloads are YCSB-style key/value mixes plus write-ratio presets for the
BenchBase profiles. Network latency comes from lognormal classes or a
replayed trace, with optional congestion episodes. Switch egress queueing
is modelled by token bucket, strict priority and deficit-round-robin fair
queueing.
"""

from __future__ import annotations

import csv
import heapq
import math
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .engine import MS, SEC, US

READ = 0
WRITE = 1


# -- key distributions -----------------------------------------------------------


def zeta(n: int, theta: float) -> float:
    return math.fsum(1.0 / (i ** theta) for i in range(1, n + 1))


class Zipfian:
    """Ranks 0..n-1 with P(rank k) proportional to 1/(k+1)^theta.

    Uses the rejection-free inversion of Gray et al. (the YCSB generator).
    """

    def __init__(self, n: int, theta: float = 0.99):
        if n < 1:
            raise ValueError("need at least one key")
        if not 0.0 < theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        self.n = n
        self.theta = theta
        self.zetan = zeta(n, theta)
        zeta2 = zeta(2, theta)
        self.alpha = 1.0 / (1.0 - theta)
        denom = 1.0 - zeta2 / self.zetan
        # with n <= 2 the first two branches of sample() cover every draw
        self.eta = (1.0 - (2.0 / n) ** (1.0 - theta)) / denom if n > 2 else 0.0
        self.half_pow = 1.0 + 0.5 ** theta

    def mass(self, rank: int) -> float:
        return 1.0 / ((rank + 1) ** self.theta) / self.zetan

    def sample(self, u: float) -> int:
        uz = u * self.zetan
        if uz < 1.0:
            return 0
        if uz < self.half_pow:
            return 1
        k = int(self.n * (self.eta * u - self.eta + 1.0) ** self.alpha)
        return min(k, self.n - 1)


class Distribution(str, Enum):
    ZIPFIAN = "zipfian"
    UNIFORM = "uniform"
    SEQUENTIAL = "sequential"


class Pattern(str, Enum):
    MIXED = "mixed"
    PHASED = "phased"


@dataclass(frozen=True)
class WorkloadSpec:
    write_ratio: float = 0.5
    request_size: int = 4096
    key_space: int = 100_000
    distribution: Distribution = Distribution.ZIPFIAN
    theta: float = 0.99
    arrival: str = "open"  # "open" (Poisson, rate per second) or "closed"
    rate: float = 1000.0
    clients: int = 32
    think_ns: int = 0
    pattern: Pattern = Pattern.MIXED
    phase_len: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.write_ratio <= 1.0:
            raise ValueError("write_ratio must lie in [0, 1]")
        if self.distribution is Distribution.ZIPFIAN and not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if self.key_space < 1 or self.request_size < 1:
            raise ValueError("key_space and request_size must be positive")
        if self.arrival not in ("open", "closed"):
            raise ValueError("arrival must be 'open' or 'closed'")
        if self.arrival == "open" and self.rate <= 0:
            raise ValueError("open-loop rate must be positive")


PRESETS: dict[str, WorkloadSpec] = {
    "ycsb-a": WorkloadSpec(write_ratio=0.50),
    "ycsb-b": WorkloadSpec(write_ratio=0.05),
    "ycsb-c": WorkloadSpec(write_ratio=0.0),
    "ycsb-w": WorkloadSpec(write_ratio=1.0),
    "tpch": WorkloadSpec(write_ratio=0.0227),
    "seats": WorkloadSpec(write_ratio=0.1034),
    "auctionmark": WorkloadSpec(write_ratio=0.5376, pattern=Pattern.PHASED),
    "tpcc": WorkloadSpec(write_ratio=0.5995),
    "twitter": WorkloadSpec(write_ratio=0.9786),
}

TABLE2 = ("tpch", "seats", "auctionmark", "tpcc", "twitter")


def preset(name: str, **overrides) -> WorkloadSpec:
    try:
        base = PRESETS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown workload preset {name!r}") from None
    if not overrides:
        return base
    d = {k: getattr(base, k) for k in base.__dataclass_fields__}
    d.update(overrides)
    return WorkloadSpec(**d)


class WorkloadGen:
    """Draws (op, key) pairs for one workload from one RNG stream."""

    def __init__(self, spec: WorkloadSpec, rng: random.Random):
        self.spec = spec
        self.rng = rng
        self.zipf = Zipfian(spec.key_space, spec.theta) if spec.distribution is Distribution.ZIPFIAN else None
        self._seq = 0
        self._n = 0
        # a fixed odd stride scatters hot ranks over the key space
        stride = 2654435761 % spec.key_space or 1
        while math.gcd(stride, spec.key_space) != 1:
            stride += 1
        self._stride = stride
        self._writes_per_phase = round(spec.write_ratio * spec.phase_len)

    def next_op(self) -> int:
        s = self.spec
        if s.pattern is Pattern.PHASED:
            pos = self._n % s.phase_len
            self._n += 1
            return WRITE if pos < self._writes_per_phase else READ
        self._n += 1
        w = s.write_ratio
        if w <= 0.0:
            return READ
        if w >= 1.0:
            return WRITE
        return WRITE if self.rng.random() < w else READ

    def next_rank(self) -> int:
        s = self.spec
        if self.zipf is not None:
            return self.zipf.sample(self.rng.random())
        if s.distribution is Distribution.UNIFORM:
            return self.rng.randrange(s.key_space)
        k = self._seq
        self._seq = (k + 1) % s.key_space
        return k

    def next_key(self) -> int:
        r = self.next_rank()
        if self.zipf is None:
            return r
        return (r * self._stride) % self.spec.key_space

    def next_request(self) -> tuple[int, int]:
        return self.next_op(), self.next_key()


def next_request(spec: WorkloadSpec, rng: random.Random) -> tuple[int, int]:
    """One-shot helper; prefer a long-lived WorkloadGen for streams."""
    return WorkloadGen(spec, rng).next_request()


# -- network latency ---------------------------------------------------------------

# sigma such that P99 is five times the median
SIGMA_P99_5X = math.log(5.0) / 2.3263478740408408

NET_CLASSES = {
    "FAST": 40 * US,
    "MEDIUM": 200 * US,
    "SLOW": 1 * MS,
}


@dataclass(frozen=True)
class Congestion:
    start: int
    duration: int
    add_low: int
    add_high: int | None = None  # None: constant add_low

    def active(self, now: int) -> bool:
        return self.start <= now < self.start + self.duration


class TraceError(ValueError):
    pass


def load_trace(path) -> dict[int, list[int]]:
    """CSV with columns arrival_offset_ns, direction, latency_ns."""
    out: dict[int, list[int]] = {READ: [], WRITE: []}
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        need = {"arrival_offset_ns", "direction", "latency_ns"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise TraceError(f"trace header must contain {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                off = int(row["arrival_offset_ns"])
                lat = int(row["latency_ns"])
            except (TypeError, ValueError):
                raise TraceError(f"line {lineno}: non-integer field") from None
            d = str(row["direction"]).strip().lower()
            if d in ("in", "inbound", "read", "r", "0"):
                di = READ
            elif d in ("out", "outbound", "write", "w", "1"):
                di = WRITE
            else:
                raise TraceError(f"line {lineno}: unknown direction {row['direction']!r}")
            if lat < 0 or off < 0:
                raise TraceError(f"line {lineno}: negative value")
            rows.append((off, lineno, di, lat))
    rows.sort()
    for _off, _ln, di, lat in rows:
        out[di].append(lat)
    if not out[READ] and not out[WRITE]:
        raise TraceError("empty trace")
    return out


class NetProfile:
    """Per-direction path latency: lognormal class or trace replay, plus congestion.

    Direction 0 is client-to-rack, 1 is rack-to-client.
    """

    def __init__(
        self,
        cls: str = "MEDIUM",
        median_ns: int | None = None,
        sigma: float = SIGMA_P99_5X,
        trace: dict[int, list[int]] | None = None,
        congestion: list[Congestion] | None = None,
    ):
        self.cls = cls.upper() if trace is None else "TRACE"
        if trace is None:
            if median_ns is None:
                try:
                    median_ns = NET_CLASSES[self.cls]
                except KeyError:
                    raise ValueError(f"unknown network class {cls!r}") from None
            if median_ns <= 0 or sigma < 0:
                raise ValueError("median must be positive and sigma non-negative")
        self.median = median_ns
        self.mu = math.log(median_ns) if median_ns else 0.0
        self.sigma = sigma
        self.trace = trace
        self._pos = [0, 0]
        self.congestion = sorted(congestion or [], key=lambda c: c.start)

    @classmethod
    def from_trace_file(cls, path, congestion=None) -> "NetProfile":
        return cls(trace=load_trace(path), congestion=congestion)

    def base(self, direction: int, rng: random.Random) -> int:
        if self.trace is not None:
            seq = self.trace[direction] or self.trace[1 - direction]
            i = self._pos[direction]
            self._pos[direction] = i + 1
            return seq[i % len(seq)]
        return int(rng.lognormvariate(self.mu, self.sigma))

    def extra(self, now: int, rng: random.Random) -> int:
        add = 0
        for c in self.congestion:
            if c.start > now:
                break
            if c.active(now):
                add += c.add_low if c.add_high is None else rng.randint(c.add_low, c.add_high)
        return add

    def sample_path_latency(self, direction: int, now: int, rng: random.Random) -> int:
        v = self.base(direction, rng)
        if self.congestion:
            v += self.extra(now, rng)
        return v if v > 0 else 0


# -- switch queueing ---------------------------------------------------------------


class QueuePolicy(str, Enum):
    FIFO = "FIFO"
    TOKEN_BUCKET = "TOKEN_BUCKET"
    FAIR_QUEUE = "FAIR_QUEUE"
    PRIORITY = "PRIORITY"


class TokenBucket:
    """Closed-form token bucket: each packet departs once a token is available."""

    def __init__(self, rate_per_sec: float, burst: int = 1):
        if rate_per_sec <= 0 or burst < 1:
            raise ValueError("rate must be positive and burst >= 1")
        self.interval = SEC / rate_per_sec
        self.burst = burst
        # virtual time at which the bucket would be full again
        self.tat = 0.0

    def delay(self, now: int) -> int:
        # GCRA form: the packet conforms at max(now, tat - (burst-1)*interval)
        allow = self.tat - (self.burst - 1) * self.interval
        depart = now if allow <= now else allow
        self.tat = max(self.tat, float(now)) + self.interval
        return int(math.ceil(depart - now))


class FifoPort:
    def __init__(self, tx_ns: int = 0):
        self.tx = tx_ns
        self.busy = 0

    def delay(self, now: int, *_key) -> int:
        start = self.busy if self.busy > now else now
        self.busy = start + self.tx
        return self.busy - now


class PriorityPort:
    """Strict priority: class 0 is served first; lower classes wait behind it."""

    def __init__(self, tx_ns: int, classes: int = 2):
        self.tx = tx_ns
        self.busy = [0] * classes

    def delay(self, now: int, cls: int = 0) -> int:
        start = now
        for c in range(cls + 1):
            if self.busy[c] > start:
                start = self.busy[c]
        done = start + self.tx
        self.busy[cls] = done
        return done - now


class FairPort:
    """Virtual-clock approximation of per-flow fair queueing."""

    def __init__(self, tx_ns: int):
        self.tx = tx_ns
        self.finish: dict[int, int] = {}
        self.busy = 0

    def delay(self, now: int, flow: int = 0) -> int:
        f = self.finish.get(flow, 0)
        start = max(now, f)
        active = 1 + sum(1 for k, v in self.finish.items() if v > now and k != flow)
        done = start + self.tx * active
        self.finish[flow] = done
        return done - now


class StrictPriorityQueue:
    """Packet-level strict-priority queue with fixed service time (exact)."""

    def __init__(self, service_ns: int):
        self.service = service_ns
        self.q: list = []
        self._seq = 0

    def enqueue(self, pkt, cls: int) -> None:
        heapq.heappush(self.q, (cls, self._seq, pkt))
        self._seq += 1

    def drain(self, start: int = 0) -> list[tuple[int, object]]:
        t = start
        out = []
        while self.q:
            _c, _s, pkt = heapq.heappop(self.q)
            t += self.service
            out.append((t, pkt))
        return out


class DrrFairQueue:
    """Deficit round robin over per-flow FIFOs (exact, packet level)."""

    def __init__(self, quantum: int = 1500):
        self.quantum = quantum
        self.flows: dict[int, deque] = {}
        self.deficit: dict[int, int] = {}
        self.active: deque[int] = deque()

    def enqueue(self, flow: int, size: int, pkt=None) -> None:
        q = self.flows.get(flow)
        if q is None:
            q = self.flows[flow] = deque()
            self.deficit[flow] = 0
        if not q:
            self.active.append(flow)
        q.append((size, pkt))

    def __len__(self) -> int:
        return sum(len(q) for q in self.flows.values())

    def dequeue(self):
        """Next (flow, size, pkt) in DRR order, or None when empty."""
        while self.active:
            flow = self.active[0]
            q = self.flows[flow]
            size = q[0][0]
            if self.deficit[flow] >= size:
                self.deficit[flow] -= size
                _s, pkt = q.popleft()
                if not q:
                    self.deficit[flow] = 0
                    self.active.popleft()
                return flow, size, pkt
            self.deficit[flow] += self.quantum
            self.active.rotate(-1)
        return None


def make_port(policy: QueuePolicy, tx_ns: int):
    if policy is QueuePolicy.PRIORITY:
        return PriorityPort(tx_ns)
    if policy is QueuePolicy.FAIR_QUEUE:
        return FairPort(tx_ns)
    return FifoPort(tx_ns)


def enqueue_at_switch(port, now: int, key: int = 0) -> int:
    """Queueing delay a packet sees at an egress port (class or flow in `key`)."""
    d = port.delay(now, key)
    return d if d > 0 else 0
