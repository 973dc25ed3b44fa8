import io
import random

import pytest
from hypothesis import given, settings, strategies as st

from racksim.packet import (
    HEADER_LEN,
    LAT_TICK_NS,
    FieldOverflow,
    GcCode,
    OpCode,
    Packet,
    PacketError,
    TruncatedPacket,
    UnknownGcCode,
    UnknownOpCode,
    add_hop_latency,
    decode,
    encode,
    ip,
    ip_str,
    ns_to_ticks,
    read_trace,
    write_trace,
)

U32 = 2**32 - 1
U64 = 2**64 - 1


def random_packet(rng: random.Random) -> Packet:
    op = OpCode(rng.randrange(5))
    p = Packet(op, rng.randint(0, U32), rng.randint(0, U32))
    if op is OpCode.GC_OP:
        p.gc = GcCode(rng.randrange(6))
    elif op is OpCode.CREATE_VSSD:
        p.server_ip = rng.randint(0, U32)
        p.replica_id = rng.randint(0, U32)
        p.replica_ip = rng.randint(0, U32)
    elif op in (OpCode.READ, OpCode.WRITE):
        p.lba = rng.randint(0, U64)
        p.length = rng.randint(0, U32)
    return p


def test_gc_code_numerals():
    assert [(c.name, int(c)) for c in GcCode] == [
        ("SOFT", 0), ("REGULAR", 1), ("BG", 2), ("ACCEPT", 3), ("DELAY", 4), ("FINISH", 5),
    ]


def test_opcode_numerals():
    assert [int(o) for o in OpCode] == [0, 1, 2, 3, 4]


def test_round_trip_hundred_thousand():
    rng = random.Random(20240611)
    failures = 0
    for _ in range(100_000):
        p = random_packet(rng)
        if decode(encode(p)) != p:
            failures += 1
    assert failures == 0


packets = st.one_of(
    st.builds(Packet, op=st.just(OpCode.GC_OP), vssd_id=st.integers(0, U32), lat=st.integers(0, U32),
              gc=st.sampled_from(list(GcCode))),
    st.builds(Packet, op=st.sampled_from([OpCode.READ, OpCode.WRITE]), vssd_id=st.integers(0, U32),
              lat=st.integers(0, U32), lba=st.integers(0, U64), length=st.integers(0, U32)),
    st.builds(Packet, op=st.just(OpCode.CREATE_VSSD), vssd_id=st.integers(0, U32), lat=st.integers(0, U32),
              server_ip=st.integers(0, U32), replica_id=st.integers(0, U32), replica_ip=st.integers(0, U32)),
    st.builds(Packet, op=st.just(OpCode.DEL_VSSD), vssd_id=st.integers(0, U32), lat=st.integers(0, U32)),
)


@settings(max_examples=2000)
@given(packets)
def test_round_trip_property(p):
    buf = encode(p)
    assert decode(buf) == p
    assert encode(decode(buf)) == buf


def test_wire_layout():
    p = Packet(OpCode.GC_OP, 0x01020304, 7, gc=GcCode.FINISH)
    assert encode(p) == bytes([4, 1, 2, 3, 4, 0, 0, 0, 7, 5])
    w = Packet(OpCode.WRITE, 1, 0, lba=2, length=4096)
    assert len(encode(w)) == HEADER_LEN + 12


def test_decode_errors():
    with pytest.raises(TruncatedPacket):
        decode(b"\x03\x00")
    with pytest.raises(TruncatedPacket):
        decode(encode(Packet(OpCode.READ, 1, lba=1, length=1))[:-1])
    with pytest.raises(UnknownOpCode):
        decode(bytes([9]) + bytes(8))
    with pytest.raises(UnknownGcCode):
        decode(bytes([4]) + bytes(8) + bytes([6]))
    with pytest.raises(PacketError):
        decode(encode(Packet(OpCode.DEL_VSSD, 1)) + b"x")


def test_encode_overflow():
    with pytest.raises(FieldOverflow):
        encode(Packet(OpCode.READ, U32 + 1))
    with pytest.raises(FieldOverflow):
        encode(Packet(OpCode.READ, 1, lba=U64 + 1))
    with pytest.raises(PacketError):
        encode(Packet(OpCode.GC_OP, 1))


def test_latency_ticks():
    assert LAT_TICK_NS == 64
    assert ns_to_ticks(0) == 0
    assert ns_to_ticks(31) == 0
    assert ns_to_ticks(32) == 1
    assert ns_to_ticks(800) == 13
    p = add_hop_latency(Packet(OpCode.READ, 1, lat=U32 - 1), 5)
    assert p.lat == U32
    with pytest.raises(ValueError):
        add_hop_latency(p, -1)


def test_trace_round_trip():
    rng = random.Random(5)
    pkts = []
    for _ in range(200):
        p = random_packet(rng)
        p.src, p.dst = rng.randint(0, U32), rng.randint(0, U32)
        pkts.append(p)
    buf = io.BytesIO()
    assert write_trace(buf, pkts) == 200
    buf.seek(0)
    assert list(read_trace(buf)) == pkts
    with pytest.raises(TruncatedPacket):
        list(read_trace(io.BytesIO(buf.getvalue()[:-1])))


def test_ip_helpers():
    assert ip_str(ip(10, 0, 3, 255)) == "10.0.3.255"
