"""Fixed-size network packets and their wire encoding.

Every packet is exactly 32 bytes: a 4-byte header followed by a 28-byte
payload.  The header layout is

    byte 0: source rank
    byte 1: destination rank
    byte 2: port
    byte 3: high 3 bits operation code, low 5 bits valid element count

Ranks, ports and counts wider than their field are rejected rather than
silently truncated.  Payload elements are packed little-endian.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, replace

from .errors import MalformedPacketError

HEADER_BYTES = 4
PAYLOAD_BYTES = 28
PACKET_BYTES = HEADER_BYTES + PAYLOAD_BYTES

_OP_SHIFT = 5
_COUNT_MASK = 0x1F


class OpType(enum.IntEnum):
    """Packet operation codes.  Values 3..7 are reserved and never valid."""

    DATA = 0
    SYNC_READY = 1
    CREDIT = 2


class DataType(enum.Enum):
    """Channel element types with their struct format and on-wire size."""

    CHAR = ("b", 1)
    SHORT = ("h", 2)
    INT = ("i", 4)
    FLOAT = ("f", 4)
    DOUBLE = ("d", 8)

    def __init__(self, fmt: str, size: int):
        self.fmt = fmt
        self.size_bytes = size

    @property
    def max_elems(self) -> int:
        """Elements of this type that fit in one payload: floor(28 / size)."""
        return PAYLOAD_BYTES // self.size_bytes

    @classmethod
    def parse(cls, name: str) -> "DataType":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown data type {name!r}") from None


def max_elems_per_packet(dtype: DataType) -> int:
    return dtype.max_elems


@dataclass(frozen=True, slots=True)
class PacketHeader:
    src_rank: int
    dst_rank: int
    port: int
    op: OpType
    valid_count: int

    def __post_init__(self):
        for name in ("src_rank", "dst_rank", "port"):
            v = getattr(self, name)
            if not 0 <= v <= 255:
                raise ValueError(f"{name}={v} outside [0, 255]")
        if not 0 <= self.valid_count < 32:
            raise ValueError(f"valid_count={self.valid_count} outside [0, 31]")
        if not isinstance(self.op, OpType):
            object.__setattr__(self, "op", OpType(self.op))


@dataclass(frozen=True, slots=True)
class NetworkPacket:
    header: PacketHeader
    payload: bytes = b"\x00" * PAYLOAD_BYTES

    def __post_init__(self):
        if len(self.payload) != PAYLOAD_BYTES:
            raise ValueError(f"payload must be {PAYLOAD_BYTES} bytes, got {len(self.payload)}")


def encode_header(h: PacketHeader) -> bytes:
    return bytes((h.src_rank, h.dst_rank, h.port, (h.op << _OP_SHIFT) | h.valid_count))


def decode_header(raw: bytes) -> PacketHeader:
    if len(raw) != HEADER_BYTES:
        raise MalformedPacketError(f"header must be {HEADER_BYTES} bytes, got {len(raw)}")
    op_code = raw[3] >> _OP_SHIFT
    try:
        op = OpType(op_code)
    except ValueError:
        raise MalformedPacketError(f"unknown op bit-pattern 0b{op_code:03b}") from None
    return PacketHeader(raw[0], raw[1], raw[2], op, raw[3] & _COUNT_MASK)


def encode_packet(pkt: NetworkPacket) -> bytes:
    return encode_header(pkt.header) + pkt.payload


def decode_packet(raw: bytes) -> NetworkPacket:
    if len(raw) != PACKET_BYTES:
        raise MalformedPacketError(f"packet must be {PACKET_BYTES} bytes, got {len(raw)}")
    return NetworkPacket(decode_header(raw[:HEADER_BYTES]), raw[HEADER_BYTES:])


def pack_elements(dtype: DataType, elems, header_proto: PacketHeader) -> NetworkPacket:
    """Pack 1..max_elems elements into a payload, little-endian.

    The prototype header supplies addressing; valid_count is overwritten
    with the element count.  Unused payload bytes are zero.
    """
    n = len(elems)
    if not 1 <= n <= dtype.max_elems:
        raise ValueError(f"{n} elements outside [1, {dtype.max_elems}] for {dtype.name}")
    payload = struct.pack(f"<{n}{dtype.fmt}", *elems).ljust(PAYLOAD_BYTES, b"\x00")
    return NetworkPacket(replace(header_proto, valid_count=n), payload)


def unpack_elements(dtype: DataType, pkt: NetworkPacket) -> tuple:
    """Recover the valid elements of a DATA packet in push order."""
    n = pkt.header.valid_count
    if n > dtype.max_elems:
        raise MalformedPacketError(
            f"valid_count={n} exceeds {dtype.max_elems} for {dtype.name}"
        )
    return struct.unpack_from(f"<{n}{dtype.fmt}", pkt.payload)


def control_packet(op: OpType, src_rank: int, dst_rank: int, port: int) -> NetworkPacket:
    """A zero-payload SYNC_READY or CREDIT packet."""
    return NetworkPacket(PacketHeader(src_rank, dst_rank, port, op, 0))
