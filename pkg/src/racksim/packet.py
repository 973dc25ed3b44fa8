"""Wire format for rack control and data packets.

Layout (big-endian)::

    OP (1) | VSSD_ID (4) | LAT (4) | payload

Payload by op:

    CREATE_VSSD  server_ip (4) | replica_vssd_id (4) | replica_server_ip (4)
    DEL_VSSD     (empty)
    WRITE/READ   lba (8) | length (4)
    GC_OP        gc code (1)

LAT counts 64 ns ticks. Source and destination addresses belong to the
L3 envelope and are not part of these bytes; trace records carry them
in a small frame around the packet.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import BinaryIO, Iterator

LAT_TICK_NS = 64
U32_MAX = 0xFFFF_FFFF
U64_MAX = 0xFFFF_FFFF_FFFF_FFFF
HEADER_LEN = 9

_HEADER = struct.Struct(">BII")
_CREATE = struct.Struct(">III")
_IO = struct.Struct(">QI")
_FRAME = struct.Struct(">HII")


class OpCode(IntEnum):
    CREATE_VSSD = 0
    DEL_VSSD = 1
    WRITE = 2
    READ = 3
    GC_OP = 4


class GcCode(IntEnum):
    SOFT = 0
    REGULAR = 1
    BG = 2
    ACCEPT = 3
    DELAY = 4
    FINISH = 5


class PacketError(ValueError):
    pass


class TruncatedPacket(PacketError):
    pass


class UnknownOpCode(PacketError):
    pass


class UnknownGcCode(PacketError):
    pass


class FieldOverflow(PacketError):
    pass


@dataclass(slots=True)
class Packet:
    op: OpCode
    vssd_id: int
    lat: int = 0
    gc: GcCode | None = None
    server_ip: int = 0
    replica_id: int = 0
    replica_ip: int = 0
    lba: int = 0
    length: int = 0
    src: int = 0
    dst: int = 0

    def copy(self, **changes) -> "Packet":
        return replace(self, **changes)


def ns_to_ticks(ns: int) -> int:
    """Round a nanosecond duration to the nearest LAT tick (half up)."""
    if ns < 0:
        raise ValueError("negative duration")
    return (ns + LAT_TICK_NS // 2) // LAT_TICK_NS


def ticks_to_ns(ticks: int) -> int:
    return ticks * LAT_TICK_NS


def _check_u32(name: str, value: int) -> None:
    if not 0 <= value <= U32_MAX:
        raise FieldOverflow(f"{name}={value} does not fit in 32 bits")


def encode(p: Packet) -> bytes:
    _check_u32("vssd_id", p.vssd_id)
    _check_u32("lat", p.lat)
    op = OpCode(p.op)
    head = _HEADER.pack(op, p.vssd_id, p.lat)
    if op is OpCode.GC_OP:
        if p.gc is None:
            raise PacketError("GC_OP packet without gc code")
        return head + bytes((GcCode(p.gc),))
    if op is OpCode.CREATE_VSSD:
        _check_u32("server_ip", p.server_ip)
        _check_u32("replica_id", p.replica_id)
        _check_u32("replica_ip", p.replica_ip)
        return head + _CREATE.pack(p.server_ip, p.replica_id, p.replica_ip)
    if op is OpCode.READ or op is OpCode.WRITE:
        if not 0 <= p.lba <= U64_MAX:
            raise FieldOverflow(f"lba={p.lba} does not fit in 64 bits")
        _check_u32("length", p.length)
        return head + _IO.pack(p.lba, p.length)
    return head


_PAYLOAD_LEN = {
    OpCode.CREATE_VSSD: _CREATE.size,
    OpCode.DEL_VSSD: 0,
    OpCode.WRITE: _IO.size,
    OpCode.READ: _IO.size,
    OpCode.GC_OP: 1,
}


def decode(buf: bytes, src: int = 0, dst: int = 0) -> Packet:
    if len(buf) < HEADER_LEN:
        raise TruncatedPacket(f"need {HEADER_LEN} header bytes, got {len(buf)}")
    raw_op, vssd_id, lat = _HEADER.unpack_from(buf, 0)
    try:
        op = OpCode(raw_op)
    except ValueError:
        raise UnknownOpCode(f"unknown op byte 0x{raw_op:02x}") from None
    need = HEADER_LEN + _PAYLOAD_LEN[op]
    if len(buf) < need:
        raise TruncatedPacket(f"{op.name} needs {need} bytes, got {len(buf)}")
    if len(buf) > need:
        raise PacketError(f"{len(buf) - need} trailing bytes after {op.name}")
    p = Packet(op, vssd_id, lat, src=src, dst=dst)
    if op is OpCode.GC_OP:
        try:
            p.gc = GcCode(buf[HEADER_LEN])
        except ValueError:
            raise UnknownGcCode(f"unknown gc code {buf[HEADER_LEN]}") from None
    elif op is OpCode.CREATE_VSSD:
        p.server_ip, p.replica_id, p.replica_ip = _CREATE.unpack_from(buf, HEADER_LEN)
    elif op is OpCode.READ or op is OpCode.WRITE:
        p.lba, p.length = _IO.unpack_from(buf, HEADER_LEN)
    return p


def add_hop_latency(p: Packet, hop_ticks: int) -> Packet:
    """Return a copy with `hop_ticks` added to LAT, saturating at 2**32-1."""
    if hop_ticks < 0:
        raise ValueError("negative hop latency")
    if hop_ticks == 0:
        return p
    return replace(p, lat=min(U32_MAX, p.lat + hop_ticks))


# -- trace files -------------------------------------------------------------
# Each record: u16 length | u32 src | u32 dst | packet bytes (length bytes).


def encode_frame(p: Packet) -> bytes:
    body = encode(p)
    return _FRAME.pack(len(body), p.src, p.dst) + body


def write_trace(f: BinaryIO, packets) -> int:
    n = 0
    for p in packets:
        f.write(encode_frame(p))
        n += 1
    return n


def read_trace(f: BinaryIO) -> Iterator[Packet]:
    while True:
        head = f.read(_FRAME.size)
        if not head:
            return
        if len(head) < _FRAME.size:
            raise TruncatedPacket("truncated trace record header")
        length, src, dst = _FRAME.unpack(head)
        body = f.read(length)
        if len(body) < length:
            raise TruncatedPacket("truncated trace record body")
        yield decode(body, src, dst)


def ip(a: int, b: int, c: int, d: int) -> int:
    return (a << 24) | (b << 16) | (c << 8) | d


def ip_str(addr: int) -> str:
    return ".".join(str((addr >> s) & 0xFF) for s in (24, 16, 8, 0))
