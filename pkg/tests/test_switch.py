import io
import random

import pytest
from hypothesis import given, settings, strategies as st

from racksim.packet import GcCode, OpCode, Packet, ip, read_trace
from racksim.switch import (
    ENTRY_BYTES,
    TABLE_LIMIT_BYTES,
    DuplicateVssd,
    SwitchPlane,
    TableFull,
    UnknownVssd,
)


class ReferenceSwitch:
    """Direct transcription of the ToR workflow on plain dicts.

    gc_status / replica form the replica table; dst / dst_gc_status form the
    destination table. Replica-state lookups read the destination table,
    which is where the second (recirculated) pass finds them.
    """

    def __init__(self):
        self.gc_status = {}
        self.replica = {}
        self.dst = {}
        self.dst_gc_status = {}

    def state(self):
        return {v: (self.gc_status[v], self.replica[v], self.dst[v], self.dst_gc_status[v]) for v in self.gc_status}

    def process_packet(self, pkt):
        # returns [(op, vssd_id, gc, dst, egress, passes)]
        v = pkt.vssd_id
        if pkt.op == OpCode.CREATE_VSSD:
            self.gc_status[v] = 0
            self.replica[v] = pkt.replica_id
            self.dst[v] = pkt.server_ip
            self.dst_gc_status[v] = 0
            return [(pkt.op, v, None, pkt.src, pkt.src, 1)]
        if pkt.op == OpCode.DEL_VSSD:
            for t in (self.gc_status, self.replica, self.dst, self.dst_gc_status):
                del t[v]
            return [(pkt.op, v, None, pkt.src, pkt.src, 1)]
        if v not in self.gc_status:
            return []
        replica = self.replica[v]
        if pkt.op == OpCode.WRITE:
            out = [(pkt.op, v, None, pkt.dst, self.dst[v], 1)]
            # writes are issued to every replica
            if replica in self.dst:
                out.append((pkt.op, replica, None, self.dst[replica], self.dst[replica], 1))
            return out
        if pkt.op == OpCode.READ:
            vid = v
            if self.gc_status[v] == 1:
                if replica in self.dst_gc_status and self.dst_gc_status[replica] == 0:
                    vid = replica
                    return [(pkt.op, vid, None, self.dst[replica], self.dst[replica], 1)]
            return [(pkt.op, vid, None, pkt.dst, self.dst[v], 1)]
        if pkt.op == OpCode.GC_OP:
            gc = pkt.gc
            passes = 1
            self.gc_status[v] = 1
            if gc == GcCode.SOFT:
                passes = 2
                if self.dst_gc_status.get(replica, 0) == 1:
                    gc = GcCode.DELAY
                    self.gc_status[v] = 0
                else:
                    gc = GcCode.ACCEPT
                    self.dst_gc_status[v] = 1
            elif gc == GcCode.FINISH:
                self.gc_status[v] = 0
                self.dst_gc_status[v] = 0
            else:
                self.dst_gc_status[v] = 1
                gc = GcCode.ACCEPT
            return [(pkt.op, v, gc, pkt.src, pkt.src, passes)]
        raise AssertionError(pkt.op)


def plane_state(sw: SwitchPlane):
    st_ = sw.state
    return {
        v: (r.gc_status, r.replica_id, st_.dest_table[v].server_ip, st_.dest_table[v].gc_status)
        for v, r in st_.replica_table.items()
    }


def flatten(forwards):
    return [(f.packet.op, f.packet.vssd_id, f.packet.gc, f.packet.dst, f.egress, f.passes) for f in forwards]


def server_ip(s):
    return ip(10, 0, 0, s + 1)


def creates(n_vssd: int, n_servers: int = 8):
    half = n_vssd // 2
    out = []
    for v in range(n_vssd):
        rep = (v + half) % n_vssd
        out.append(Packet(OpCode.CREATE_VSSD, v, server_ip=server_ip(v % n_servers),
                          replica_id=rep, replica_ip=server_ip(rep % n_servers), src=ip(10, 1, 0, 1)))
    return out


def random_sequence(rng: random.Random, n_vssd: int, length: int):
    seq = creates(n_vssd)
    rng.shuffle(seq)
    live = set(range(n_vssd))
    gc_codes = [GcCode.SOFT, GcCode.SOFT, GcCode.REGULAR, GcCode.BG, GcCode.FINISH, GcCode.FINISH]
    for _ in range(length):
        x = rng.random()
        v = rng.randrange(n_vssd + 2)  # a few ids are never registered
        src = server_ip(rng.randrange(8))
        if x < 0.3:
            seq.append(Packet(OpCode.READ, v, lba=rng.randrange(1 << 20), length=4096, src=ip(10, 2, 0, 1), dst=server_ip(v % 8)))
        elif x < 0.45:
            seq.append(Packet(OpCode.WRITE, v, lba=rng.randrange(1 << 20), length=4096, src=ip(10, 2, 0, 1), dst=server_ip(v % 8)))
        elif x < 0.97:
            seq.append(Packet(OpCode.GC_OP, v, gc=rng.choice(gc_codes), src=src))
        elif v in live:
            seq.append(Packet(OpCode.DEL_VSSD, v, src=ip(10, 1, 0, 1)))
            live.discard(v)
        elif v < n_vssd:
            seq.append(creates(n_vssd)[v])
            live.add(v)
    return seq


def test_matches_reference_on_ten_thousand_sequences():
    rng = random.Random(77)
    n_vssd = 64
    steps = 0
    for _ in range(10_000):
        sw = SwitchPlane()
        ref = ReferenceSwitch()
        for pkt in random_sequence(rng, n_vssd, 24):
            got = flatten(sw.process_packet(pkt))
            want = ref.process_packet(pkt)
            assert got == want, pkt
            steps += 1
            assert plane_state(sw) == ref.state()
    assert steps >= 10_000 * (n_vssd + 24) * 0.9


def test_soft_requests_are_mutually_exclusive():
    sw = SwitchPlane()
    for p in creates(4, 4):
        sw.process_packet(p)
    # 0 and 2 are replicas
    r0 = sw.process_packet(Packet(OpCode.GC_OP, 0, gc=GcCode.SOFT, src=1))[0]
    assert r0.packet.gc == GcCode.ACCEPT and r0.passes == 2
    r2 = sw.process_packet(Packet(OpCode.GC_OP, 2, gc=GcCode.SOFT, src=3))[0]
    assert r2.packet.gc == GcCode.DELAY
    assert sw.state.gc_bits(2) == (0, 0)
    # undeniable requests are accepted regardless
    r2 = sw.process_packet(Packet(OpCode.GC_OP, 2, gc=GcCode.REGULAR, src=3))[0]
    assert r2.packet.gc == GcCode.ACCEPT and r2.packet.dst == 3
    sw.process_packet(Packet(OpCode.GC_OP, 0, gc=GcCode.FINISH, src=1))
    sw.process_packet(Packet(OpCode.GC_OP, 2, gc=GcCode.FINISH, src=3))
    assert sw.check_consistency() == []
    assert sw.state.gc_bits(0) == (0, 0)


def test_read_redirection():
    sw = SwitchPlane()
    for p in creates(4, 4):
        sw.process_packet(p)
    sw.process_packet(Packet(OpCode.GC_OP, 1, gc=GcCode.BG, src=server_ip(1)))
    f = sw.process_packet(Packet(OpCode.READ, 1, lba=5, length=4096, dst=server_ip(1)))
    assert [(x.packet.vssd_id, x.egress) for x in f] == [(3, server_ip(3))]
    # both replicas in GC: forward unchanged
    sw.process_packet(Packet(OpCode.GC_OP, 3, gc=GcCode.REGULAR, src=server_ip(3)))
    f = sw.process_packet(Packet(OpCode.READ, 1, lba=5, length=4096, dst=server_ip(1)))
    assert [(x.packet.vssd_id, x.egress) for x in f] == [(1, server_ip(1))]
    assert sw.redirected == 1
    # writes fan out, never redirected
    f = sw.process_packet(Packet(OpCode.WRITE, 1, lba=5, length=4096, dst=server_ip(1)))
    assert sorted(x.packet.vssd_id for x in f) == [1, 3]


def test_table_errors_and_capacity():
    sw = SwitchPlane(capacity=2)
    a, b, c = creates(3, 3)
    sw.process_packet(a)
    with pytest.raises(DuplicateVssd):
        sw.process_packet(a)
    sw.process_packet(b)
    with pytest.raises(TableFull):
        sw.process_packet(c)
    with pytest.raises(UnknownVssd):
        sw.process_packet(Packet(OpCode.DEL_VSSD, 9))
    assert sw.process_packet(Packet(OpCode.READ, 9)) == []
    assert sw.dropped == 1


def test_table_footprint_fits_switch_memory():
    assert ENTRY_BYTES * 65536 <= TABLE_LIMIT_BYTES
    sw = SwitchPlane()
    for p in creates(64):
        sw.process_packet(p)
    assert sw.state.table_bytes() == 64 * ENTRY_BYTES
    rows = sw.state.dump()
    assert rows[0]["vssd_id"] == 0 and rows[0]["server_ip"] == "10.0.0.1"


def test_traverse_accumulates_ticks():
    sw = SwitchPlane(pipeline_ns=800)
    p = Packet(OpCode.GC_OP, 1, gc=GcCode.SOFT)
    q = sw.traverse(p, queue_delay_ns=0, passes=2)
    assert q.lat == 25  # 1600 ns / 64
    with pytest.raises(ValueError):
        sw.traverse(p, -1)


def test_packet_trace_file():
    buf = io.BytesIO()
    sw = SwitchPlane(trace=buf)
    pkts = creates(4, 4) + [Packet(OpCode.READ, 0, lba=1, length=4096)]
    for p in pkts:
        sw.process_packet(p)
    buf.seek(0)
    assert list(read_trace(buf)) == pkts


@settings(max_examples=300)
@given(st.lists(st.tuples(st.integers(0, 15), st.sampled_from([GcCode.SOFT, GcCode.REGULAR, GcCode.BG, GcCode.FINISH])), max_size=60))
def test_soft_grants_never_overlap(ops):
    # With only SOFT requests, no replica pair is ever granted together.
    sw = SwitchPlane()
    for p in creates(16, 4):
        sw.process_packet(p)
    granted = set()
    for v, code in ops:
        if code in (GcCode.REGULAR, GcCode.BG):
            continue
        r = sw.process_packet(Packet(OpCode.GC_OP, v, gc=code))[0].packet.gc
        if code == GcCode.FINISH:
            granted.discard(v)
        elif r == GcCode.ACCEPT:
            granted.add(v)
        assert not (v in granted and (v + 8) % 16 in granted)
    assert all(sw.state.gc_bits(v)[0] == sw.state.gc_bits(v)[1] for v in range(16))
