"""Server-side coordinated GC.

Every vSSD (or channel group) is checked periodically. Below the hard
threshold it asks the switch for an undeniable REGULAR GC, below the soft
threshold for a SOFT GC the switch may delay, and when the idle predictor
expects a long quiet spell it asks for background GC. The switch answers
ACCEPT or DELAY; on ACCEPT the unit drains its queued reads, runs GC and
reports FINISH.

The coordinator is transport-agnostic: it talks to its server through a
small host object (see `GcHost`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from .engine import MS, SEC
from .packet import GcCode


@dataclass(frozen=True)
class GcMonitorConfig:
    check_period: int = 30 * SEC
    soft_threshold: float = 0.35
    gc_threshold: float = 0.25
    retries: int = 3
    retry_timeout: int = 10 * MS
    bg_idle_threshold: int = 30 * MS
    alpha: float = 0.5
    restore_margin: float = 0.10
    soft_enabled: bool = True
    bg_enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gc_threshold < self.soft_threshold <= 1.0:
            raise ValueError("need 0 <= gc_threshold < soft_threshold <= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.check_period <= 0 or self.retries < 0:
            raise ValueError("check_period must be positive and retries non-negative")

    @property
    def restore_target(self) -> float:
        return min(1.0, self.soft_threshold + self.restore_margin)


class IdlePredictor:
    """Exponential smoothing of inter-arrival gaps, in integer nanoseconds."""

    def __init__(self, alpha: float = 0.5, initial: int = 0):
        self.alpha = alpha
        self.prediction: dict[int, int] = {}
        self.last_gap: dict[int, int] = {}
        self.initial = initial

    def idle_update(self, vid: int, gap: int) -> int:
        if gap < 0:
            raise ValueError("negative gap")
        prev = self.prediction.get(vid, self.initial)
        pred = round(self.alpha * gap + (1.0 - self.alpha) * prev)
        self.prediction[vid] = pred
        self.last_gap[vid] = gap
        return pred

    def predict(self, vid: int) -> int:
        return self.prediction.get(vid, self.initial)


def trigger_gc(cfg: GcMonitorConfig, free_ratio: float, idle_prediction: int) -> GcCode | None:
    """Which GC request (if any) a periodic check should emit."""
    if free_ratio < cfg.gc_threshold:
        return GcCode.REGULAR
    if free_ratio < cfg.soft_threshold:
        return GcCode.SOFT if cfg.soft_enabled else None
    if cfg.bg_enabled and idle_prediction > cfg.bg_idle_threshold and free_ratio < cfg.restore_target:
        return GcCode.BG
    return None


class GcHost(Protocol):
    now: int

    def send_gc(self, vid: int, code: GcCode) -> None: ...

    def begin_gc(self, unit: "GcUnit") -> None: ...

    def call_later(self, delay: int, fn, arg) -> object: ...

    def free_ratio(self, unit: "GcUnit") -> float: ...


IDLE = "idle"
PENDING = "pending"
ACTIVE = "active"


class GcUnit:
    """Members that GC together: one vSSD, or a whole channel group."""

    __slots__ = ("uid", "members", "state", "kind", "attempt", "replies", "timer", "grants", "log")

    def __init__(self, uid: int, members: list[int]):
        self.uid = uid
        self.members = list(members)
        self.state = IDLE
        self.kind: GcCode | None = None
        self.attempt = 0
        self.replies: dict[int, GcCode] = {}
        self.timer = None
        self.grants: list[GcCode] = []
        self.log: list[tuple[int, str, int]] = []


class GcCoordinator:
    """Request/grant state machine for one storage server's GC units."""

    def __init__(self, cfg: GcMonitorConfig, host: GcHost, coordinated: bool = True):
        self.cfg = cfg
        self.host = host
        self.coordinated = coordinated
        self.units: dict[int, GcUnit] = {}
        self.unit_of: dict[int, GcUnit] = {}
        self.idle = IdlePredictor(cfg.alpha)
        self.requests = {code: 0 for code in GcCode}
        self.delays = 0
        self.forced = 0
        self.retries_sent = 0

    def add_unit(self, uid: int, members: list[int]) -> GcUnit:
        u = GcUnit(uid, members)
        self.units[uid] = u
        for m in members:
            self.unit_of[m] = u
        return u

    # -- monitoring -----------------------------------------------------------

    def on_arrival(self, vid: int, gap: int) -> int:
        return self.idle.idle_update(vid, gap)

    def idle_prediction(self, unit: GcUnit) -> int:
        return min(self.idle.predict(m) for m in unit.members)

    def periodic_check(self, unit: GcUnit) -> GcCode | None:
        if unit.state != IDLE:
            return None
        ratio = self.host.free_ratio(unit)
        code = trigger_gc(self.cfg, ratio, self.idle_prediction(unit))
        if code is None:
            return None
        if not self.coordinated:
            # no switch in the loop: only the hard threshold fires GC
            if code is GcCode.REGULAR:
                unit.kind = code
                unit.grants = [code]
                unit.state = ACTIVE
                self.host.begin_gc(unit)
                return code
            return None
        if code is GcCode.BG:
            # background GC informs the switch but does not wait for approval
            unit.kind = code
            for m in unit.members:
                self.host.send_gc(m, code)
                self.requests[code] += 1
            unit.grants = [code] * len(unit.members)
            self._start(unit)
            return code
        self.request(unit, code)
        return code

    def emergency(self, unit: GcUnit) -> None:
        """Out of host-writable space: ask for undeniable GC right away."""
        if unit.state != IDLE:
            return
        if not self.coordinated:
            unit.kind = GcCode.REGULAR
            unit.grants = [GcCode.REGULAR]
            unit.state = ACTIVE
            self.host.begin_gc(unit)
            return
        self.request(unit, GcCode.REGULAR)

    # -- request / reply --------------------------------------------------------

    def request(self, unit: GcUnit, code: GcCode) -> None:
        unit.state = PENDING
        unit.kind = code
        unit.attempt = 0
        unit.replies = {}
        self._send(unit)

    def _send(self, unit: GcUnit) -> None:
        for m in unit.members:
            if m not in unit.replies:
                self.host.send_gc(m, unit.kind)
                self.requests[unit.kind] += 1
        unit.log.append((self.host.now, "request", int(unit.kind)))
        unit.timer = self.host.call_later(self.cfg.retry_timeout, self._timeout, (unit, unit.attempt))

    def _timeout(self, arg) -> None:
        unit, attempt = arg
        if unit.state != PENDING or unit.attempt != attempt:
            return
        if unit.attempt >= self.cfg.retries:
            if unit.kind is GcCode.REGULAR:
                # the switch never answered: collect anyway
                self.forced += 1
                unit.grants = [GcCode.REGULAR] * len(unit.members)
                self._start(unit)
            else:
                unit.state = IDLE
            return
        unit.attempt += 1
        self.retries_sent += 1
        self._send(unit)

    def on_reply(self, vid: int, code: GcCode) -> None:
        unit = self.unit_of[vid]
        if unit.state != PENDING or vid in unit.replies:
            return
        unit.replies[vid] = code
        if len(unit.replies) < len(unit.members):
            return
        if any(c is GcCode.DELAY for c in unit.replies.values()):
            self.delays += 1
            unit.log.append((self.host.now, "delay", int(unit.kind)))
            # release the members that were granted so the switch state stays clean
            for m, c in unit.replies.items():
                if c is GcCode.ACCEPT:
                    self.host.send_gc(m, GcCode.FINISH)
            unit.state = IDLE
            unit.replies = {}
            return
        unit.grants = [unit.kind] * len(unit.members)
        self._start(unit)

    def _start(self, unit: GcUnit) -> None:
        unit.state = ACTIVE
        unit.log.append((self.host.now, "start", int(unit.kind)))
        self.host.begin_gc(unit)

    def finished(self, unit: GcUnit) -> None:
        """The host finished the GC episode for every member."""
        unit.log.append((self.host.now, "finish", int(unit.kind) if unit.kind is not None else -1))
        if self.coordinated:
            for m in unit.members:
                self.host.send_gc(m, GcCode.FINISH)
        unit.state = IDLE
        unit.kind = None
        unit.replies = {}


def group_gc_request(members: list[int], code: GcCode = GcCode.SOFT) -> list[tuple[int, GcCode]]:
    """One GC_OP per member of a channel group."""
    return [(m, code) for m in members]
