"""ToR switch data plane: replica table, destination table, GC state.

Both tables are keyed by vSSD id. The replica table holds ``(gc_status,
replica_id)`` and the destination table holds ``(server_ip,
dst_gc_status)``. Reads to a vSSD in GC are rewritten toward its replica
when the replica is idle; writes fan out to both in-rack copies; GC_OP
requests are accepted or delayed so that a replica pair never collects
garbage at the same time on soft requests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import BinaryIO, Callable, NamedTuple

from .packet import (
    GcCode,
    OpCode,
    Packet,
    add_hop_latency,
    encode_frame,
    ip_str,
    ns_to_ticks,
)

DEFAULT_CAPACITY = 65536
DEFAULT_PIPELINE_NS = 800

# key (4) + entry fields (5) + fixed per-entry overhead (11)
ENTRY_BYTES = 4 + 5 + 11
TABLE_LIMIT_BYTES = int(1.3 * 1024 * 1024)


class SwitchError(Exception):
    pass


class DuplicateVssd(SwitchError):
    pass


class TableFull(SwitchError):
    pass


class UnknownVssd(SwitchError):
    pass


class Forward(NamedTuple):
    packet: Packet
    egress: int
    passes: int = 1


@dataclass(slots=True)
class ReplicaEntry:
    gc_status: int
    replica_id: int


@dataclass(slots=True)
class DestEntry:
    server_ip: int
    gc_status: int


class SwitchState:
    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        self.capacity = capacity
        self.replica_table: dict[int, ReplicaEntry] = {}
        self.dest_table: dict[int, DestEntry] = {}

    def __len__(self) -> int:
        return len(self.replica_table)

    def __contains__(self, vid: int) -> bool:
        return vid in self.replica_table

    def gc_bits(self, vid: int) -> tuple[int, int]:
        return self.replica_table[vid].gc_status, self.dest_table[vid].gc_status

    def table_bytes(self, entries: int | None = None) -> int:
        n = len(self) if entries is None else entries
        return n * ENTRY_BYTES

    def dump(self) -> list[dict]:
        rows = []
        for vid in sorted(self.replica_table):
            r = self.replica_table[vid]
            d = self.dest_table[vid]
            rows.append(
                {
                    "vssd_id": vid,
                    "gc_status": r.gc_status,
                    "replica_id": r.replica_id,
                    "server_ip": ip_str(d.server_ip),
                    "dst_gc_status": d.gc_status,
                }
            )
        return rows

    def dump_json(self) -> str:
        return json.dumps(self.dump(), indent=2)


class SwitchPlane:
    """Packet processing for the rack's ToR switch.

    `process_packet` is the single entry point; it returns the list of
    packets to emit with their egress address and the number of pipeline
    passes they took (2 for recirculated soft GC requests).
    """

    def __init__(
        self,
        capacity: int = DEFAULT_CAPACITY,
        pipeline_ns: int = DEFAULT_PIPELINE_NS,
        trace: BinaryIO | None = None,
    ):
        self.state = SwitchState(capacity)
        self.pipeline_ns = pipeline_ns
        self.dropped = 0
        self.redirected = 0
        self.recirculated = 0
        self._trace = trace
        self.on_packet: Callable[[Packet], None] | None = None

    # -- control packets ----------------------------------------------------

    def register_vssd(self, pkt: Packet) -> Packet:
        st = self.state
        vid = pkt.vssd_id
        if vid in st.replica_table:
            raise DuplicateVssd(f"vSSD {vid} already registered")
        if len(st.replica_table) >= st.capacity:
            raise TableFull(f"switch tables full ({st.capacity} entries)")
        st.replica_table[vid] = ReplicaEntry(0, pkt.replica_id)
        st.dest_table[vid] = DestEntry(pkt.server_ip, 0)
        return pkt.copy(dst=pkt.src, src=0)

    def deregister_vssd(self, pkt: Packet) -> Packet:
        st = self.state
        vid = pkt.vssd_id
        if vid not in st.replica_table:
            raise UnknownVssd(f"vSSD {vid} is not registered")
        del st.replica_table[vid]
        del st.dest_table[vid]
        return pkt.copy(dst=pkt.src, src=0)

    # -- data plane ---------------------------------------------------------

    def read_target(self, vid: int) -> tuple[int, bool]:
        """Return (vssd that should serve a read of `vid`, redirected?)."""
        entry = self.state.replica_table[vid]
        if entry.gc_status == 1:
            rep = entry.replica_id
            rep_dest = self.state.dest_table.get(rep)
            if rep_dest is not None and rep_dest.gc_status == 0:
                return rep, True
        return vid, False

    def handle_gc_request(self, pkt: Packet) -> tuple[Packet, int]:
        """Apply a GC_OP request; returns (reply, pipeline passes)."""
        st = self.state
        vid = pkt.vssd_id
        rentry = st.replica_table.get(vid)
        if rentry is None:
            raise UnknownVssd(f"vSSD {vid} is not registered")
        dentry = st.dest_table[vid]
        gc = pkt.gc
        passes = 1
        rentry.gc_status = 1
        if gc == GcCode.SOFT:
            # second pass: read the replica's state in the destination table
            passes = 2
            self.recirculated += 1
            rep = st.dest_table.get(rentry.replica_id)
            if rep is not None and rep.gc_status == 1:
                gc = GcCode.DELAY
                rentry.gc_status = 0
            else:
                gc = GcCode.ACCEPT
                dentry.gc_status = 1
        elif gc == GcCode.FINISH:
            rentry.gc_status = 0
            dentry.gc_status = 0
        elif gc in (GcCode.REGULAR, GcCode.BG):
            dentry.gc_status = 1
            gc = GcCode.ACCEPT
        else:
            raise SwitchError(f"unexpected gc code in request: {gc!r}")
        return pkt.copy(gc=gc, dst=pkt.src, src=0), passes

    def process_packet(self, pkt: Packet) -> list[Forward]:
        if self._trace is not None:
            self._trace.write(encode_frame(pkt))
        op = pkt.op
        st = self.state
        if op == OpCode.CREATE_VSSD:
            return [Forward(self.register_vssd(pkt), pkt.src)]
        if op == OpCode.DEL_VSSD:
            return [Forward(self.deregister_vssd(pkt), pkt.src)]
        entry = st.replica_table.get(pkt.vssd_id)
        if entry is None:
            self.dropped += 1
            return []
        if op == OpCode.WRITE:
            out = [Forward(pkt, st.dest_table[pkt.vssd_id].server_ip)]
            rep = st.dest_table.get(entry.replica_id)
            if rep is not None:
                out.append(Forward(pkt.copy(vssd_id=entry.replica_id, dst=rep.server_ip), rep.server_ip))
            return out
        if op == OpCode.READ:
            target, redirected = self.read_target(pkt.vssd_id)
            if redirected:
                self.redirected += 1
                ip = st.dest_table[target].server_ip
                return [Forward(pkt.copy(vssd_id=target, dst=ip), ip)]
            ip = st.dest_table[pkt.vssd_id].server_ip
            return [Forward(pkt, ip)]
        if op == OpCode.GC_OP:
            reply, passes = self.handle_gc_request(pkt)
            return [Forward(reply, reply.dst, passes)]
        self.dropped += 1
        return []

    def traverse(self, pkt: Packet, queue_delay_ns: int = 0, passes: int = 1) -> Packet:
        """Accumulate per-hop INT latency for `passes` pipeline traversals."""
        if queue_delay_ns < 0:
            raise ValueError("negative queue delay")
        return add_hop_latency(pkt, ns_to_ticks(self.pipeline_ns * passes + queue_delay_ns))

    def check_consistency(self) -> list[int]:
        """vSSDs whose two GC bits disagree (empty at quiescence)."""
        st = self.state
        return [v for v, r in st.replica_table.items() if r.gc_status != st.dest_table[v].gc_status]
