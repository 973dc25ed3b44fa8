"""One simulated rack: clients, ToR switch, storage servers, replicated vSSDs.

A request is born at a client, crosses the inbound network, traverses the
switch (which may redirect a read or fan a write out to both copies),
queues at a storage server, is served by the device or the DRAM write
cache, and returns over the outbound network. Every phase boundary is
timestamped, and the end-to-end latency is the sum of the phases.

Modes:

* ``VDC-like``: token-bucket isolation per vSSD at the switch, GC fired
  locally at the hard threshold, baseline scheduler, no redirection.
* ``SOFTWARE-COORD``: GC requests and redirect lookups go to a controller
  server across the network; a read arriving at a vSSD in GC asks the
  controller where to go.
* ``RACKBLOX``: GC requests and read redirection handled by the switch.
* ``COORD-IO-ONLY``: coordinated scheduling, local uncoordinated GC.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque

from .config import RackConfig
from .engine import MS, SEC, US, Engine
from .flash import MB, DeviceProfile, Isolation, Ssd, SsdGeometry
from .flash import profile as device_profile
from .gc import ACTIVE, GcCoordinator, GcMonitorConfig, GcUnit
from .metrics import LatencyHistogram
from .packet import GcCode, OpCode, Packet, ip
from .sched import READ, WRITE, Request, ReturnPredictor, Scheduler, configure_policy
from .switch import SwitchPlane
from .traffic import (
    SIGMA_P99_5X,
    Congestion,
    Distribution,
    NetProfile,
    Pattern,
    QueuePolicy,
    TokenBucket,
    WorkloadGen,
    WorkloadSpec,
    load_trace,
    make_port,
)
from .traffic import preset as workload_preset
from .wear import imbalance

VDC = "VDC-like"
SOFTWARE = "SOFTWARE-COORD"
RACKBLOX = "RACKBLOX"
IO_ONLY = "COORD-IO-ONLY"

TICK = 1 * MS
HEADER_BYTES = 64
URGENT_FLUSH = 0.8


class RackRequest(Request):
    __slots__ = (
        "t_switch", "t_arrive", "t_done", "out_ns", "client_done", "remaining",
        "slow", "blocked", "consulted", "on_done", "breakdown", "key",
    )

    def __init__(self, rid, op, vssd, lba, length, born, client=-1):
        Request.__init__(self, rid, op, vssd, lba, length, born=born, client=client)
        self.t_switch = 0
        self.t_arrive = 0
        self.t_done = 0
        self.out_ns = 0
        self.client_done = 0
        self.remaining = 0
        self.slow = None
        self.blocked = False
        self.consulted = False
        self.on_done = None
        self.breakdown = None
        self.key = 0


class Slot:
    """Server-side state of one vSSD: queue, device slots, GC progress."""

    __slots__ = (
        "vid", "server", "vssd", "sched", "busy", "k", "gc_active", "gc_started",
        "stepping", "stalled", "unit", "last_arrival", "ep_start", "ep_kind",
        "ep_blocks", "ep_moved", "replica", "flushes",
    )

    def __init__(self, vid, server, vssd, sched):
        self.vid = vid
        self.server = server
        self.vssd = vssd
        self.sched = sched
        self.busy = 0
        self.k = vssd.parallelism
        self.gc_active = False
        self.gc_started = False
        self.stepping = False
        self.stalled: deque = deque()
        self.unit = None
        self.last_arrival = 0
        self.ep_start = 0
        self.ep_kind = None
        self.ep_blocks = 0
        self.ep_moved = 0
        self.replica = -1
        self.flushes = 0


class Server:
    def __init__(self, sid: int):
        self.id = sid
        self.ip = ip(10, 0, sid // 256, sid % 256 + 1)
        self.ssds: list[Ssd] = []
        self.slots: list[Slot] = []
        self.coord: GcCoordinator | None = None


class _GcHost:
    """Adapter between one server's GC coordinator and the rack."""

    def __init__(self, rack: "Rack", server: Server):
        self.rack = rack
        self.server = server

    @property
    def now(self) -> int:
        return self.rack.engine.now

    def send_gc(self, vid: int, code: GcCode) -> None:
        self.rack._send_gc(self.server, vid, code)

    def begin_gc(self, unit: GcUnit) -> None:
        self.rack._begin_gc(unit)

    def call_later(self, delay: int, fn, arg):
        eng = self.rack.engine
        eng.call_at(eng.now + delay, fn, arg)

    def free_ratio(self, unit: GcUnit) -> float:
        return self.rack._unit_free_ratio(unit)


def build_profile(cfg: RackConfig) -> DeviceProfile:
    d = cfg.device
    base = device_profile(d.profile)
    p = DeviceProfile(
        base.name,
        int(d.read_us * US) if d.read_us is not None else base.read_ns,
        int(d.program_us * US) if d.program_us is not None else base.program_ns,
        int(d.erase_us * US) if d.erase_us is not None else base.erase_ns,
        base.cache_ns,
    )
    p.validate()
    return p


def build_network(cfg: RackConfig) -> NetProfile:
    n = cfg.network
    cong = [
        Congestion(
            int(c["start_s"] * SEC),
            int(c["duration_s"] * SEC),
            int(c["add_us"] * US),
            int(c["add_max_us"] * US) if c.get("add_max_us") is not None else None,
        )
        for c in n.congestion
    ]
    if n.trace:
        return NetProfile(trace=load_trace(n.trace), congestion=cong)
    return NetProfile(
        str(n.net_class),
        median_ns=int(n.median_us * US) if n.median_us is not None else None,
        sigma=n.sigma if n.sigma is not None else SIGMA_P99_5X,
        congestion=cong,
    )


def build_workload(cfg: RackConfig, key_space: int) -> WorkloadSpec:
    w = cfg.workload
    fields = dict(
        write_ratio=float(w.write_ratio),
        request_size=int(w.request_size),
        key_space=key_space,
        distribution=Distribution(w.distribution),
        theta=float(w.theta),
        arrival=w.arrival,
        rate=float(w.rate),
        clients=int(w.clients_per_vssd),
        think_ns=int(w.think_us * US),
        pattern=Pattern(w.pattern),
        phase_len=int(w.phase_len),
    )
    if w.preset:
        # a preset fixes the mix; size, rate and key space still come from the config
        base = workload_preset(w.preset)
        fields["write_ratio"] = base.write_ratio
        fields["pattern"] = base.pattern
    return WorkloadSpec(**fields)


def workload_identity(cfg: RackConfig) -> str:
    """Hash of everything that defines the offered load, but not the system under test."""
    d = cfg.to_dict()
    ident = {k: d[k] for k in ("seed", "duration_s", "topology", "device", "network", "workload")}
    blob = json.dumps(ident, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class Rack:
    def __init__(self, cfg: RackConfig, packet_trace=None):
        self.cfg = cfg
        self.mode = cfg.mode
        self.engine = Engine(cfg.seed)
        eng = self.engine
        self._arr_rng = eng.register_stream("arrivals")
        self._key_rng = eng.register_stream("workload")
        self._in_rng = eng.register_stream("net-in")
        self._out_rng = eng.register_stream("net-out")
        self._ctrl_rng = eng.register_stream("controller")
        self._jit_rng = eng.register_stream("gc-jitter")
        self.end = int(cfg.duration_s * SEC)

        mode = cfg.mode
        self.switch_gc = mode == RACKBLOX
        self.ctrl_gc = mode == SOFTWARE
        self.gc_coordinated = mode in (RACKBLOX, SOFTWARE)
        sc = cfg.scheduler.coordinated
        self.sched_coordinated = (mode != VDC) if sc == "auto" else bool(sc)

        self.profile = build_profile(cfg)
        d = cfg.device
        t = cfg.topology
        self.geometry = SsdGeometry(
            d.channels, d.chips_per_channel, d.blocks_per_chip, d.pages_per_block, d.page_size, self.profile
        )
        self.net = build_network(cfg)
        self.pipeline = int(cfg.network.pipeline_ns)
        self.hop = int(cfg.network.hop_ns)
        self.ctrl_overhead = int(cfg.network.host_overhead_us * US)
        self.gbps = float(cfg.network.link_gbps)

        g = cfg.gc
        self.gc_cfg = GcMonitorConfig(
            check_period=int(g.check_period_ms * MS),
            soft_threshold=g.soft_threshold,
            gc_threshold=g.gc_threshold,
            retries=g.retries,
            retry_timeout=int(g.retry_timeout_ms * MS),
            bg_idle_threshold=int(g.bg_idle_threshold_ms * MS),
            alpha=g.alpha,
            restore_margin=g.restore_margin,
            soft_enabled=g.soft_enabled,
            bg_enabled=g.bg_enabled,
        )
        self.restore = self.gc_cfg.restore_target

        s = cfg.scheduler
        self.policy = configure_policy(
            s.variant,
            self.sched_coordinated,
            int(s.read_target_ms * MS) if s.read_target_ms is not None else None,
            int(s.write_target_ms * MS) if s.write_target_ms is not None else None,
            epoch=int(s.kyber_epoch),
        )
        self.predictor = ReturnPredictor()

        self._build_servers(cfg)
        self.switch = SwitchPlane(cfg.switch.capacity, self.pipeline, trace=packet_trace)
        self.controller = SwitchPlane(cfg.switch.capacity, 0) if self.ctrl_gc else None
        self._register_all()
        self._rt = self.switch.state.replica_table
        self._dt = self.switch.state.dest_table
        self._build_ports(cfg)

        key_space = self.slots[0].vssd.n_logical
        self.wspec = build_workload(cfg, key_space)
        self.wgen = WorkloadGen(self.wspec, self._key_rng)
        self.req_size = self.wspec.request_size
        self.page_size = d.page_size

        # counters
        self.rid = 0
        self.version = 0
        self.hist = {"read": LatencyHistogram(), "write": LatencyHistogram()}
        self.reads = {"redirected": 0, "direct": 0, "blocked": 0}
        self.completed = 0
        self.issued = 0
        self.violations = 0
        self.additivity_errors = 0
        self.dropped_copies = 0
        self.writes_seen = 0
        self.gc_packets = 0
        self.ctrl_lookups = 0
        self.emergencies = 0
        self.borrows = 0
        self.gc_log: list[tuple[int, int, int, str, str]] = []
        self.intervals: dict[int, list[tuple[int, int, str]]] = {v: [] for v in range(len(self.slots))}
        self.unit_left: dict[tuple[int, int], int] = {}
        self.samples: list[dict] = []
        self._sample_every = 997
        self._inflight_reads = [0] * len(self.slots)
        self._ran = False

    # -- construction -------------------------------------------------------------

    def _build_servers(self, cfg: RackConfig) -> None:
        t = cfg.topology
        d = cfg.device
        g = self.geometry
        iso = Isolation(t.isolation)
        V = t.vssds_per_ssd
        if iso is Isolation.HARDWARE:
            cpv = d.channels // V
            n_blocks = cpv * d.chips_per_channel * d.blocks_per_chip
        else:
            n_blocks = d.channels * d.blocks_per_chip
        pages = int(n_blocks * d.pages_per_block * d.logical_fraction)
        capacity = pages * d.page_size
        spare = d.borrow_unit_blocks if iso is Isolation.SOFTWARE else 0
        cache = int(d.cache_mb * MB)

        self.servers: list[Server] = []
        self.slots: list[Slot] = []
        self.server_of: list[int] = []
        for s in range(t.servers):
            srv = Server(s)
            for di in range(t.ssds_per_server):
                ssd = Ssd(s * t.ssds_per_server + di, g)
                srv.ssds.append(ssd)
                for k in range(V):
                    vid = len(self.slots)
                    if iso is Isolation.HARDWARE:
                        units = list(range(k * cpv, (k + 1) * cpv))
                    else:
                        units = [(ch, k) for ch in range(d.channels)]
                    v = ssd.create_vssd(
                        vid, iso, units, capacity,
                        reserve_blocks=d.reserve_blocks, spare_blocks=spare, cache_bytes=cache,
                    )
                    if d.prefill and not self.profile.gc_free:
                        v.ftl.prefill(v.n_logical)
                    st = Slot(vid, s, v, Scheduler(self.policy))
                    self.slots.append(st)
                    srv.slots.append(st)
                    self.server_of.append(s)
            self.servers.append(srv)

        n = len(self.slots)
        per_server = t.ssds_per_server * V
        rep = [-1] * n
        if t.placement:
            for a, b in t.placement:
                rep[a] = b
                rep[b] = a
        else:
            half = t.servers // 2
            for v in range(n):
                s, off = divmod(v, per_server)
                rep[v] = ((s + half) % t.servers) * per_server + off
        for v, r in enumerate(rep):
            self.slots[v].replica = r
        self.replica_of = rep

        # GC units: one per vSSD, or one per channel group under software isolation
        uid = 0
        for srv in self.servers:
            srv.coord = GcCoordinator(self.gc_cfg, _GcHost(self, srv), coordinated=self.gc_coordinated)
            if iso is Isolation.HARDWARE:
                for st in srv.slots:
                    st.unit = srv.coord.add_unit(uid, [st.vid])
                    uid += 1
            else:
                for ssd in srv.ssds:
                    for grp in ssd.groups.values():
                        u = srv.coord.add_unit(uid, [m.id for m in grp.members])
                        uid += 1
                        for m in grp.members:
                            self.slots[m.id].unit = u

    def _register_all(self) -> None:
        for st in self.slots:
            srv = self.servers[st.server]
            rsrv = self.servers[self.server_of[st.replica]]
            pkt = Packet(
                OpCode.CREATE_VSSD, st.vid, server_ip=srv.ip, replica_id=st.replica,
                replica_ip=rsrv.ip, src=srv.ip,
            )
            self.switch.process_packet(pkt)
            if self.controller is not None:
                self.controller.process_packet(pkt.copy())

    def _build_ports(self, cfg: RackConfig) -> None:
        pol = cfg.switch.policy
        if pol == "auto":
            pol = "TOKEN_BUCKET" if self.mode == VDC else "PRIORITY"
        self.port_policy = pol
        qp = QueuePolicy(pol)
        # transmission time of a header-only packet; data bytes added per packet
        self.ports = [make_port(qp, 0) for _ in self.servers]
        self.buckets = None
        if qp is QueuePolicy.TOKEN_BUCKET:
            w = cfg.workload
            n = len(self.slots)
            wr = w.write_ratio
            if w.preset:
                wr = workload_preset(w.preset).write_ratio
            if w.arrival == "open":
                per_vssd = w.rate * ((1.0 - wr) + 2.0 * wr) / n
            else:
                per_vssd = 1000.0
            rate = max(1.0, cfg.switch.tb_rate_factor * per_vssd)
            self.buckets = [TokenBucket(rate, int(cfg.switch.tb_burst)) for _ in range(n)]

    # -- port model ------------------------------------------------------------

    def _egress_delay(self, vid: int, nbytes: int, now: int) -> int:
        port = self.ports[self.server_of[vid]]
        port.tx = int((nbytes + HEADER_BYTES) * 8 / self.gbps)
        q = port.delay(now, 0)
        if self.buckets is not None:
            q += self.buckets[vid].delay(now)
        return q

    # -- traffic generation --------------------------------------------------------

    def _new_request(self, born: int, client: int = -1, vid: int | None = None, op=None, key=None) -> RackRequest:
        if vid is None:
            vid = self._key_rng.randrange(len(self.slots))
        if op is None:
            op, key = self.wgen.next_request()
        self.rid += 1
        r = RackRequest(self.rid, op, vid, key * self.page_size, self.req_size, born, client)
        r.key = key
        return r

    def _launch(self, r: RackRequest) -> None:
        n_in = self.net.sample_path_latency(0, r.born, self._in_rng)
        self.issued += 1
        self.engine.call_at(r.born + n_in, self._at_switch, r)

    def _tick(self, t: int) -> None:
        end = t + TICK
        if end > self.end:
            end = self.end
        nxt = self._next_arrival
        rate = self.wspec.rate
        exp = self._arr_rng.expovariate
        while nxt < end:
            self._launch(self._new_request(nxt))
            nxt += int(exp(rate) * SEC) + 1
        self._next_arrival = nxt
        if end < self.end:
            self.engine.call_at(end, self._tick, end)

    def _client_issue(self, client: int) -> None:
        now = self.engine.now
        if now >= self.end:
            return
        vid = client // self.wspec.clients
        self._launch(self._new_request(now, client, vid))

    def submit(self, op: int, vid: int, key: int, at: int | None = None, on_done=None) -> RackRequest:
        """Inject one request; `on_done(r)` fires with `r.breakdown` filled in."""
        born = self.engine.now if at is None else at
        r = self._new_request(born, -1, vid, op, key)
        r.on_done = on_done
        self._launch(r)
        return r

    # -- switch --------------------------------------------------------------------

    def _at_switch(self, r: RackRequest) -> None:
        now = self.engine.now
        r.t_switch = now
        if r.op == READ:
            target = r.vssd
            if self.switch_gc:
                ent = self._rt[target]
                rep = ent.replica_id
                if ent.gc_status == 1 and self._dt[rep].gc_status == 0:
                    target = rep
                    r.redirected = True
                    self.switch.redirected += 1
                r.saw_idle_replica = self._dt[self.replica_of[target]].gc_status == 0 and (
                    r.redirected or ent.gc_status == 1
                )
                r.vssd = target
            self._inflight_reads[target] += 1
            delay = self.pipeline + self._egress_delay(target, 0, now)
            self.engine.call_at(now + delay, self._at_server, r)
            return
        self.version += 1
        r.version = self.version
        self.writes_seen += 1
        drop = self.cfg.faults.drop_fanout_every
        for v in (r.vssd, self.replica_of[r.vssd]):
            if drop and v != r.vssd and self.writes_seen % drop == 0:
                self.dropped_copies += 1
                continue
            c = RackRequest(r.rid, WRITE, v, r.lba, r.length, r.born, r.client)
            c.parent = r
            c.version = r.version
            c.t_switch = now
            r.remaining += 1
            delay = self.pipeline + self._egress_delay(v, r.length, now)
            self.engine.call_at(now + delay, self._at_server, c)

    # -- server ----------------------------------------------------------------------

    def _at_server(self, r: RackRequest) -> None:
        now = self.engine.now
        v = r.vssd
        st = self.slots[v]
        if r.op == READ:
            self._inflight_reads[v] -= 1
            if self.ctrl_gc and st.gc_active and not r.consulted:
                # ask the controller where this read should go
                r.consulted = True
                self.ctrl_lookups += 1
                rtt = (
                    self.net.sample_path_latency(1, now, self._ctrl_rng)
                    + self.net.sample_path_latency(0, now, self._ctrl_rng)
                    + self.ctrl_overhead
                )
                self.engine.call_at(now + rtt, self._ctrl_decide, r)
                return
        self._accept(r, st, now)

    def _ctrl_decide(self, r: RackRequest) -> None:
        now = self.engine.now
        target, redirected = self.controller.read_target(r.vssd)
        ctab = self.controller.state.dest_table
        r.saw_idle_replica = ctab[self.replica_of[target]].gc_status == 0
        if redirected:
            self.controller.redirected += 1
            r.redirected = True
            r.vssd = target
            self._inflight_reads[target] += 1
            self.engine.call_at(now + self.hop + self.pipeline, self._at_server, r)
            return
        self._accept(r, self.slots[r.vssd], now)


    def _accept(self, r: RackRequest, st: Slot, now: int) -> None:
        """Request reached the server that will serve it: predict, then queue or cache."""
        v = st.vid
        op = r.op
        r.t_arrive = now
        r.enqueue = now
        r.server = st.server
        self.servers[st.server].coord.on_arrival(v, now - st.last_arrival)
        st.last_arrival = now
        net = now - r.born
        r.net_ns = net
        pred = self.predictor
        pred.window_update(v, op, net)
        r.predict = int(pred.predict(v, op))
        if op == WRITE:
            vs = st.vssd
            vs.apply_write(r.lba, r.length, r.version)
            if st.gc_active:
                if vs.cache.absorb(r.lba, r.length):
                    self._server_done(r, now + self.profile.cache_ns)
                else:
                    vs.gc_blocked_writes += 1
                    r.blocked = True
                    st.stalled.append(r)
                return
            if st.stalled:
                st.stalled.append(r)
                return
        elif st.gc_active:
            r.blocked = True
        st.sched.push(r)
        self._dispatch(st)

    def _dispatch(self, st: Slot) -> None:
        if st.stepping:
            return
        now = self.engine.now
        vs = st.vssd
        sched = st.sched
        cache = vs.cache
        while st.busy < st.k:
            if cache.pending and not st.gc_active and (not len(sched) or cache.fill() > URGENT_FLUSH):
                if not self._start_flush(st, now):
                    break
                continue
            r = sched.pop(now)
            if r is None:
                break
            if r.op == WRITE:
                if vs.host_room() < vs.pages(r.length):
                    # no room for host data: park the write and ask for GC
                    sched.inflight[WRITE] -= 1
                    st.stalled.appendleft(r)
                    self._need_space(st)
                    break
                dur = vs.program(r.lba, r.length)
            else:
                if st.gc_started and r.saw_idle_replica:
                    self.violations += 1
                dur = vs.read_cost(r.length)
            r.dispatch = now
            st.busy += 1
            self.engine.call_at(now + dur, self._done, r)
        if st.busy == 0 and st.gc_active:
            self._try_step(st)

    def _start_flush(self, st: Slot, now: int) -> bool:
        vs = st.vssd
        lba, nbytes = vs.cache.pending[0]
        if vs.host_room() < vs.pages(nbytes):
            self._need_space(st)
            return False
        vs.cache.pop()
        dur = vs.program(lba, nbytes)
        st.busy += 1
        st.flushes += 1
        self.engine.call_at(now + dur, self._flush_done, st)
        return True

    def _flush_done(self, st: Slot) -> None:
        st.busy -= 1
        self._drain_stalled(st)
        self._dispatch(st)

    def _done(self, r: RackRequest) -> None:
        now = self.engine.now
        st = self.slots[r.vssd]
        st.busy -= 1
        st.sched.complete(r, now)
        self._server_done(r, now)
        self._dispatch(st)

    def _drain_stalled(self, st: Slot) -> None:
        # parked writes go back to the device queue once GC is over and there is room
        if st.gc_active or not st.stalled:
            return
        vs = st.vssd
        while st.stalled and vs.host_room() >= vs.pages(st.stalled[0].length):
            st.sched.push(st.stalled.popleft())

    # -- completion ----------------------------------------------------------------------

    def _server_done(self, r: RackRequest, t: int) -> None:
        r.t_done = t
        out = self.net.sample_path_latency(1, t, self._out_rng) + self.pipeline
        r.out_ns = out
        done = t + out
        p = r.parent
        if p is None:
            r.client_done = done
            self._client_done(r, r)
            return
        if p.slow is None or done > p.client_done:
            p.client_done = done
            p.slow = r
        p.remaining -= 1
        if p.remaining == 0:
            self._client_done(p, p.slow)

    def _client_done(self, r: RackRequest, c: RackRequest) -> None:
        inbound = c.t_switch - r.born
        fabric = c.t_arrive - c.t_switch
        start = c.dispatch if c.dispatch >= 0 else c.t_arrive
        queue = start - c.t_arrive
        service = c.t_done - start
        outbound = c.out_ns
        lat = inbound + fabric + queue + service + outbound
        if lat != r.client_done - r.born:
            self.additivity_errors += 1
        self.completed += 1
        if r.op == READ:
            self.hist["read"].add(lat)
            if r.redirected:
                self.reads["redirected"] += 1
            elif r.blocked:
                self.reads["blocked"] += 1
            else:
                self.reads["direct"] += 1
        else:
            self.hist["write"].add(lat)
        if r.on_done is not None or self.completed % self._sample_every == 0:
            bd = {
                "rid": r.rid,
                "op": "read" if r.op == READ else "write",
                "born": r.born,
                "addressed": r.orig_vssd,
                "served_by": c.vssd,
                "server": self.server_of[c.vssd],
                "redirected": bool(r.redirected),
                "blocked": bool(c.blocked),
                "phases": {
                    "inbound": inbound,
                    "fabric": fabric,
                    "queue": queue,
                    "service": service,
                    "outbound": outbound,
                },
                "latency": lat,
            }
            if r.on_done is not None:
                r.breakdown = bd
                r.on_done(r)
            else:
                self.samples.append(bd)
        if r.client >= 0:
            self.engine.call_at(r.client_done + self.wspec.think_ns, self._client_issue, r.client)

    # -- GC --------------------------------------------------------------------------

    def _unit_free_ratio(self, unit: GcUnit) -> float:
        if len(unit.members) == 1:
            return self.slots[unit.members[0]].vssd.free_block_ratio()
        grp = self.slots[unit.members[0]].vssd.group
        return grp.free_ratio()

    def _periodic(self, unit: GcUnit) -> None:
        now = self.engine.now
        if now >= self.end:
            return
        coord = self.servers[self.slots[unit.members[0]].server].coord
        code = coord.periodic_check(unit)
        if code is not None:
            self.gc_log.append((now, unit.uid, unit.members[0], "check", code.name))
        self.engine.call_at(now + self.gc_cfg.check_period, self._periodic, unit)

    def _need_space(self, st: Slot) -> None:
        vs = st.vssd
        if vs.group is not None and not st.gc_active and vs.group.borrow_blocks(vs):
            self.borrows += 1
            self.engine.call_at(self.engine.now, self._kick, st)
            return
        unit = st.unit
        if unit.state != "idle":
            # GC already requested or running
            return
        self.emergencies += 1
        self.gc_log.append((self.engine.now, unit.uid, st.vid, "emergency", "REGULAR"))
        self.servers[st.server].coord.emergency(unit)

    def _send_gc(self, server: Server, vid: int, code: GcCode) -> None:
        now = self.engine.now
        self.gc_packets += 1
        pkt = Packet(OpCode.GC_OP, vid, gc=code, server_ip=server.ip, src=server.ip)
        if code is not GcCode.FINISH:
            self.gc_log.append((now, self.slots[vid].unit.uid, vid, "request", code.name))
        if self.ctrl_gc:
            d = self.net.sample_path_latency(1, now, self._ctrl_rng) + self.ctrl_overhead
            self.engine.call_at(now + d, self._gc_at_controller, pkt)
        else:
            self.engine.call_at(now + self.hop, self._gc_at_switch, pkt)

    def _gc_at_switch(self, pkt: Packet) -> None:
        now = self.engine.now
        for fw in self.switch.process_packet(pkt):
            reply = self.switch.traverse(fw.packet, 0, fw.passes)
            if reply.gc in (GcCode.ACCEPT, GcCode.DELAY):
                self.engine.call_at(now + self.pipeline * fw.passes + self.hop, self._gc_reply, reply)

    def _gc_at_controller(self, pkt: Packet) -> None:
        now = self.engine.now
        for fw in self.controller.process_packet(pkt):
            reply = fw.packet
            if reply.gc in (GcCode.ACCEPT, GcCode.DELAY):
                d = self.net.sample_path_latency(0, now, self._ctrl_rng)
                self.engine.call_at(now + d, self._gc_reply, reply)

    def _gc_reply(self, pkt: Packet) -> None:
        vid = pkt.vssd_id
        if pkt.gc is GcCode.DELAY:
            self.gc_log.append((self.engine.now, self.slots[vid].unit.uid, vid, "delay", "DELAY"))
        self.servers[self.server_of[vid]].coord.on_reply(vid, GcCode(pkt.gc))
        st = self.slots[vid]
        if st.unit.state == "idle" and any(self.slots[m].stalled for m in st.unit.members):
            # delayed while writes are parked for lack of space: escalate
            self._need_space(st)

    def _begin_gc(self, unit: GcUnit) -> None:
        now = self.engine.now
        kinds = unit.grants or [unit.kind]
        kind = kinds[0].name if kinds[0] is not None else "REGULAR"
        self.unit_left[(self.slots[unit.members[0]].server, unit.uid)] = len(unit.members)
        for m in unit.members:
            st = self.slots[m]
            st.gc_active = True
            st.gc_started = False
            st.ep_start = now
            st.ep_kind = kind
            st.ep_blocks = 0
            st.ep_moved = 0
            self.gc_log.append((now, unit.uid, m, "begin", kind))
            vs = st.vssd
            cache = vs.cache
            # queued and parked writes move into the DRAM cache
            for r in st.sched.pop_writes():
                if cache.absorb(r.lba, r.length):
                    self._server_done(r, now + self.profile.cache_ns)
                else:
                    vs.gc_blocked_writes += 1
                    r.blocked = True
                    st.stalled.append(r)
            while st.stalled and cache.has_room(st.stalled[0].length):
                r = st.stalled.popleft()
                cache.absorb(r.lba, r.length)
                self._server_done(r, now + self.profile.cache_ns)
            self.engine.call_at(now, self._kick, st)

    def _kick(self, st: Slot) -> None:
        self._dispatch(st)

    def _try_step(self, st: Slot) -> None:
        if st.stepping or st.busy or not st.gc_active:
            return
        if st.sched.reads_queued():
            return
        if self.gc_coordinated and self._inflight_reads[st.vid]:
            return
        vs = st.vssd
        if vs.free_block_ratio() >= self.restore:
            self._end_member(st)
            return
        res = vs.gc_step()
        if res is None:
            self._end_member(st)
            return
        dur, moved = res
        st.gc_started = True
        st.stepping = True
        st.ep_blocks += 1
        st.ep_moved += moved
        self.engine.call_at(self.engine.now + dur, self._step_done, st)

    def _step_done(self, st: Slot) -> None:
        st.stepping = False
        self._dispatch(st)

    def _end_member(self, st: Slot) -> None:
        now = self.engine.now
        st.gc_active = False
        st.gc_started = False
        self.intervals[st.vid].append((st.ep_start, now, st.ep_kind))
        self.gc_log.append((now, st.unit.uid, st.vid, "end", f"{st.ep_kind}:{st.ep_blocks}:{st.ep_moved}"))
        key = (st.server, st.unit.uid)
        self.unit_left[key] -= 1
        if self.unit_left[key] == 0:
            unit = st.unit
            if st.vssd.group is not None:
                st.vssd.group.return_borrowed()
            self.servers[st.server].coord.finished(unit)
            for m in unit.members:
                other = self.slots[m]
                if other is not st:
                    self.engine.call_at(now, self._kick, other)
        self._drain_stalled(st)
        self._dispatch(st)

    # -- run -----------------------------------------------------------------------

    def start(self) -> None:
        eng = self.engine
        w = self.wspec
        if w.arrival == "open":
            self._next_arrival = int(self._arr_rng.expovariate(w.rate) * SEC)
            eng.call_at(0, self._tick, 0)
        else:
            for c in range(len(self.slots) * w.clients):
                eng.call_at(int(self._arr_rng.random() * w.think_ns) if w.think_ns else 0, self._client_issue, c)
        period = self.gc_cfg.check_period
        if not self.profile.gc_free:
            for srv in self.servers:
                for unit in srv.coord.units.values():
                    eng.call_at(int(self._jit_rng.random() * period), self._periodic, unit)

    def run(self) -> dict:
        if self._ran:
            raise RuntimeError("a rack runs once")
        self._ran = True
        self.start()
        eng = self.engine
        eng.run_until(self.end)
        # generation has stopped; let in-flight work and GC episodes finish
        horizon = self.end
        while eng.pending():
            horizon += 10 * SEC
            eng.run_until(horizon)
        self.quiesced_at = horizon
        return self.report()

    # -- checks ---------------------------------------------------------------------

    def consistency_check(self) -> list[dict]:
        """Replica pairs whose logical contents differ (empty when consistent)."""
        out = []
        for v, st in enumerate(self.slots):
            r = st.replica
            if v < r:
                a = st.vssd.content
                b = self.slots[r].vssd.content
                if a != b:
                    diff = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
                    out.append({"vssd": v, "replica": r, "pages": len(diff), "first_page": diff[0]})
        out.extend(
            {"vssd": v, "switch_bits_disagree": True}
            for v in self.switch.check_consistency()
        )
        return out

    def overlap_audit(self) -> dict:
        """Simultaneous-GC time for every replica pair, split by grant kind."""
        total = 0
        unexcused = 0
        pairs = 0
        undeniable = ("REGULAR", "BG")
        for v, st in enumerate(self.slots):
            r = st.replica
            if v > r:
                continue
            a = self.intervals[v]
            b = self.intervals[r]
            for s1, e1, k1 in a:
                for s2, e2, k2 in b:
                    ov = min(e1, e2) - max(s1, s2)
                    if ov > 0:
                        total += ov
                        pairs += 1
                        if k1 not in undeniable and k2 not in undeniable:
                            unexcused += ov
        return {"overlap_ns": total, "overlapping_episode_pairs": pairs, "overlap_without_undeniable_ns": unexcused}

    # -- report ----------------------------------------------------------------------

    def wear_rows(self) -> list[dict]:
        rows = []
        secs = max(self.end / SEC, 1e-9)
        lam_rack = imbalance([sum(ssd.wear() for ssd in srv.ssds) / len(srv.ssds) for srv in self.servers])
        for srv in self.servers:
            phis = [ssd.wear() for ssd in srv.ssds]
            lam = imbalance(phis)
            for i, phi in enumerate(phis):
                rows.append({
                    "time_ns": self.end, "server": srv.id, "ssd": i, "phi": round(phi, 6),
                    "rate": round(phi / secs, 6), "lambda_local": round(lam, 6), "lambda_rack": round(lam_rack, 6),
                })
        return rows

    def report(self) -> dict:
        episodes = sum(len(x) for x in self.intervals.values())
        blocked_ns = sum(e - s for x in self.intervals.values() for s, e, _k in x)
        coords = [srv.coord for srv in self.servers]
        requests = {c.name: sum(co.requests[c] for co in coords) for c in (GcCode.SOFT, GcCode.REGULAR, GcCode.BG)}
        caches = [st.vssd.cache for st in self.slots]
        reads_total = len(self.hist["read"])
        return {
            "name": self.cfg.name,
            "mode": self.mode,
            "seed": self.cfg.seed,
            "workload_id": workload_identity(self.cfg),
            "duration_ns": self.end,
            "config": self.cfg.to_dict(),
            "latency": {k: h.summary() for k, h in self.hist.items()},
            "throughput": {
                "completed": self.completed,
                "issued": self.issued,
                "iops": round(self.completed / (self.end / SEC), 3),
            },
            "reads": dict(self.reads, total=reads_total),
            "gc": {
                "episodes": episodes,
                "blocked_ns": blocked_ns,
                "requests": requests,
                "gc_op_packets": self.gc_packets,
                "delays": sum(co.delays for co in coords),
                "forced": sum(co.forced for co in coords),
                "emergencies": self.emergencies,
                "borrows": self.borrows,
                "audit": self.overlap_audit(),
                "redirected_reads": self.reads["redirected"],
            },
            "write_cache": {
                "absorbed": sum(c.absorbed for c in caches),
                "peak_bytes": max(c.peak for c in caches),
                "gc_blocked_writes": sum(st.vssd.gc_blocked_writes for st in self.slots),
                "flushes": sum(st.flushes for st in self.slots),
            },
            "switch": {
                "redirected": self.switch.redirected,
                "recirculated": self.switch.recirculated,
                "dropped": self.switch.dropped,
                "controller_lookups": self.ctrl_lookups,
                "port_policy": self.port_policy,
                "table_bytes": self.switch.state.table_bytes(),
            },
            "checks": {
                "redirect_violations": self.violations,
                "additivity_errors": self.additivity_errors,
                "consistency_mismatches": len(self.consistency_check()),
                "dropped_fanout_copies": self.dropped_copies,
            },
            "events": self.engine.dispatched,
            "wear": self.wear_rows(),
            "samples": self.samples[:50],
        }


def run_config(cfg: RackConfig) -> tuple[Rack, dict]:
    rack = Rack(cfg)
    return rack, rack.run()
