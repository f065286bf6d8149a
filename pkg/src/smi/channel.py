"""Transient point-to-point channels over the packet fabric.

A rank procedure talks to the network through a RankApi.  Opening a
channel is pure bookkeeping and emits nothing; data moves in push/pop,
which are generators so the engine can suspend a procedure whenever the
fabric cannot make progress yet (``yield`` means "try again next cycle").

Protocol selection follows the asynchronicity degree k of the port: a
message of count elements streams eagerly when k >= count, otherwise the
sender may keep at most ceil(k / max_elems) packets un-acknowledged and
the receiver returns one CREDIT packet per consumed DATA packet.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass
from math import ceil

from .errors import (
    ChannelError,
    ChannelMismatchError,
    ContractViolationError,
    PortInUseError,
    ProtocolViolationError,
)
from .packet import DataType, OpType, PacketHeader, pack_elements, unpack_elements

EAGER = "EAGER"
CREDIT = "CREDIT"

_PENDING_LIMIT = 65536  # stashed foreign packets per port before giving up


@dataclass(frozen=True)
class Communicator:
    """An ordered group of world ranks; positions are communicator ranks."""

    world_ranks: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.world_ranks)) != len(self.world_ranks):
            raise ChannelError("communicator ranks must be distinct")
        if not self.world_ranks:
            raise ChannelError("communicator cannot be empty")

    @property
    def size(self) -> int:
        return len(self.world_ranks)

    def world_of(self, comm_rank: int) -> int:
        if not 0 <= comm_rank < self.size:
            raise ChannelError(f"rank {comm_rank} outside communicator of size {self.size}")
        return self.world_ranks[comm_rank]

    def rank_of(self, world_rank: int) -> int:
        try:
            return self.world_ranks.index(world_rank)
        except ValueError:
            raise ChannelError(f"world rank {world_rank} not in communicator") from None


def comm_rank(comm: Communicator, world_rank: int) -> int:
    return comm.rank_of(world_rank)


def comm_size(comm: Communicator) -> int:
    return comm.size


class SendChannel:
    """Open transmit descriptor; implicitly closed after ``count`` pushes."""

    __slots__ = ("api", "port", "count", "dtype", "dst_world", "comm", "protocol",
                 "window", "progress", "buf", "packets_emitted")

    def __init__(self, api, port, count, dtype, dst_world, comm, protocol, window):
        self.api = api
        self.port = port
        self.count = count
        self.dtype = dtype
        self.dst_world = dst_world
        self.comm = comm
        self.protocol = protocol
        self.window = window
        self.progress = 0
        self.buf = []
        self.packets_emitted = 0

    @property
    def closed(self) -> bool:
        return self.progress >= self.count


class RecvChannel:
    """Open receive descriptor; implicitly closed after ``count`` pops."""

    __slots__ = ("api", "port", "count", "dtype", "src_world", "comm", "protocol",
                 "progress", "pktbuf", "pktidx", "packets_consumed")

    def __init__(self, api, port, count, dtype, src_world, comm, protocol):
        self.api = api
        self.port = port
        self.count = count
        self.dtype = dtype
        self.src_world = src_world
        self.comm = comm
        self.protocol = protocol
        self.progress = 0
        self.pktbuf = ()
        self.pktidx = 0
        self.packets_consumed = 0

    @property
    def closed(self) -> bool:
        return self.progress >= self.count


class RankApi:
    """Per-rank runtime state: endpoints, port registry, credit windows."""

    def __init__(self, fabric, rank: int, config, decls):
        self.fabric = fabric
        self.rank = rank
        self.config = config
        self.decls = {d.port: d for d in decls}
        self.world = Communicator(tuple(range(fabric.topo.num_ranks)))
        self.pending: dict[int, deque] = {}
        self.in_flight: dict[int, int] = {}   # port -> un-credited DATA packets
        self._open: set[tuple[int, str]] = set()
        self.counters: Counter = Counter()

    @property
    def now(self):
        return self.fabric.now

    def comm(self, world_ranks) -> Communicator:
        comm = Communicator(tuple(int(r) for r in world_ranks))
        for r in comm.world_ranks:
            if not 0 <= r < self.fabric.topo.num_ranks:
                raise ChannelError(f"communicator rank {r} outside the world")
        return comm

    # -- declaration and registry plumbing ---------------------------------

    def decl_for(self, port: int, kind: str, dtype: DataType):
        decl = self.decls.get(port)
        if decl is None:
            raise ChannelError(f"port {port} is not declared for this run")
        if decl.kind != kind:
            raise ChannelError(f"port {port} is declared {decl.kind!r}, not {kind!r}")
        if decl.dtype is not dtype:
            raise ChannelError(
                f"port {port} is declared {decl.dtype.name}, channel wants {dtype.name}"
            )
        if self.rank not in decl.ranks:
            raise ChannelError(f"rank {self.rank} is not an endpoint of port {port}")
        return decl

    def acquire(self, port: int, direction: str) -> None:
        key = (port, direction)
        if key in self._open:
            raise PortInUseError(
                f"rank {self.rank} port {port}: a {direction} channel is already open"
            )
        self._open.add(key)

    def release(self, port: int, direction: str) -> None:
        self._open.discard((port, direction))

    def protocol_for(self, port: int, count: int, dtype: DataType):
        """Both endpoints derive the same protocol from the shared port k."""
        k = self.config.k_for(port, dtype)
        if k >= count:
            return EAGER, 0
        return CREDIT, ceil(k / dtype.max_elems)

    # -- raw packet motion --------------------------------------------------

    def emit(self, port: int, pkt):
        """Generator: blocking push of one packet into the port's egress FIFO."""
        out = self.fabric.endpoint(self.rank, port).out_link
        while not out.can_push():
            yield
        out.push(pkt)
        self.counters["packets_emitted"] += 1

    def emit_control(self, op: OpType, dst_world: int, port: int):
        yield from self.emit(port, _control(op, self.rank, dst_world, port))

    def _poll_port(self, port: int):
        in_q = self.fabric.endpoint(self.rank, port).in_q
        if in_q.ready():
            return in_q.pop()
        return None

    def recv_match(self, port: int, match):
        """Generator: next packet on ``port`` satisfying ``match(header)``.

        Non-matching packets are stashed and re-offered to later calls, so
        control and data traffic for different consumers can interleave on
        one delivery queue without loss.
        """
        stash = self.pending.setdefault(port, deque())
        for i, pkt in enumerate(stash):
            if match(pkt.header):
                del stash[i]
                return pkt
        decl = self.decls[port]
        while True:
            pkt = self._poll_port(port)
            if pkt is None:
                yield
                continue
            h = pkt.header
            if h.src_rank not in decl.ranks:
                raise ChannelMismatchError(
                    f"rank {self.rank} port {port}: packet from undeclared rank {h.src_rank}"
                )
            if match(h):
                return pkt
            stash.append(pkt)
            if len(stash) > _PENDING_LIMIT:
                raise ProtocolViolationError(
                    f"rank {self.rank} port {port}: {len(stash)} unclaimed packets"
                )

    def try_take(self, port: int, match):
        """Non-blocking recv_match; returns a packet or None."""
        stash = self.pending.setdefault(port, deque())
        for i, pkt in enumerate(stash):
            if match(pkt.header):
                del stash[i]
                return pkt
        decl = self.decls[port]
        while True:
            pkt = self._poll_port(port)
            if pkt is None:
                return None
            h = pkt.header
            if h.src_rank not in decl.ranks:
                raise ChannelMismatchError(
                    f"rank {self.rank} port {port}: packet from undeclared rank {h.src_rank}"
                )
            if match(h):
                return pkt
            stash.append(pkt)

    # -- point-to-point channels -------------------------------------------

    def open_send_channel(self, count: int, dtype: DataType, destination: int,
                          port: int, comm: Communicator | None = None) -> SendChannel:
        """Start a transmit stream of ``count`` elements; emits no packets."""
        comm = comm or self.world
        if count < 0:
            raise ChannelError("count must be >= 0")
        self.decl_for(port, "p2p", dtype)
        dst_world = comm.world_of(destination)
        if dst_world not in self.decls[port].ranks:
            raise ChannelError(f"rank {dst_world} is not an endpoint of port {port}")
        self.acquire(port, "send")
        protocol, window = self.protocol_for(port, count, dtype)
        ch = SendChannel(self, port, count, dtype, dst_world, comm, protocol, window)
        self.in_flight.setdefault(port, 0)
        if count == 0:
            self.release(port, "send")
        return ch

    def open_recv_channel(self, count: int, dtype: DataType, source: int,
                          port: int, comm: Communicator | None = None) -> RecvChannel:
        comm = comm or self.world
        if count < 0:
            raise ChannelError("count must be >= 0")
        self.decl_for(port, "p2p", dtype)
        src_world = comm.world_of(source)
        if src_world not in self.decls[port].ranks:
            raise ChannelError(f"rank {src_world} is not an endpoint of port {port}")
        self.acquire(port, "recv")
        protocol, _ = self.protocol_for(port, count, dtype)
        ch = RecvChannel(self, port, count, dtype, src_world, comm, protocol)
        if count == 0:
            self.release(port, "recv")
        return ch

    def push(self, ch: SendChannel, elem):
        """Generator: append one element; returns once it is on the network."""
        if ch.closed:
            raise ContractViolationError(
                f"push past count={ch.count} on port {ch.port}"
            )
        ch.buf.append(elem)
        ch.progress += 1
        if len(ch.buf) == ch.dtype.max_elems or ch.progress == ch.count:
            yield from self._flush(ch)
        if ch.progress == ch.count:
            if ch.protocol == CREDIT:
                yield from self._drain_credits(ch)
            self.release(ch.port, "send")

    def push_all(self, ch: SendChannel, elems):
        for e in elems:
            yield from self.push(ch, e)

    def _flush(self, ch: SendChannel):
        port = ch.port
        if ch.protocol == CREDIT:
            credit = _credit_match(ch.dst_world)
            while True:
                while self.try_take(port, credit) is not None:
                    self._credit_in(port)
                if self.in_flight[port] < ch.window:
                    break
                yield
        proto = PacketHeader(self.rank, ch.dst_world, port, OpType.DATA, 0)
        pkt = pack_elements(ch.dtype, ch.buf, proto)
        ch.buf.clear()
        yield from self.emit(port, pkt)
        ch.packets_emitted += 1
        self.counters["data_packets_emitted"] += 1
        if ch.protocol == CREDIT:
            self.in_flight[port] += 1
            if self.in_flight[port] > ch.window:
                raise ProtocolViolationError(
                    f"port {port}: {self.in_flight[port]} packets in flight, window {ch.window}"
                )

    def _credit_in(self, port: int) -> None:
        if self.in_flight.get(port, 0) <= 0:
            raise ProtocolViolationError(f"port {port}: CREDIT with nothing in flight")
        self.in_flight[port] -= 1

    def _drain_credits(self, ch: SendChannel):
        """Close-time drain: a channel ends only once fully acknowledged,
        so a later channel on the same port starts with a clean window."""
        credit = _credit_match(ch.dst_world)
        while self.in_flight[ch.port] > 0:
            pkt = self.try_take(ch.port, credit)
            if pkt is None:
                yield
                continue
            self._credit_in(ch.port)

    def pop(self, ch: RecvChannel):
        """Generator: next element in send order (behaves like a coroutine
        returning the value)."""
        if ch.closed:
            raise ContractViolationError(
                f"pop past count={ch.count} on port {ch.port}"
            )
        if ch.pktidx >= len(ch.pktbuf):
            expected = min(ch.dtype.max_elems, ch.count - ch.progress)
            pkt = yield from self.recv_match(ch.port, _data_match(ch.src_world))
            if pkt.header.valid_count != expected:
                raise ChannelMismatchError(
                    f"port {ch.port}: expected {expected} elements from rank "
                    f"{ch.src_world}, packet carries {pkt.header.valid_count}"
                )
            ch.pktbuf = unpack_elements(ch.dtype, pkt)
            ch.pktidx = 0
            ch.packets_consumed += 1
            self.counters["data_packets_consumed"] += 1
            if ch.protocol == CREDIT:
                yield from self.emit_control(OpType.CREDIT, ch.src_world, ch.port)
        val = ch.pktbuf[ch.pktidx]
        ch.pktidx += 1
        ch.progress += 1
        if ch.progress == ch.count:
            self.release(ch.port, "recv")
        return val

    def pop_all(self, ch: RecvChannel, n: int | None = None):
        out = []
        for _ in range(ch.count - ch.progress if n is None else n):
            out.append((yield from self.pop(ch)))
        return out


def _control(op: OpType, src: int, dst: int, port: int):
    from .packet import control_packet

    return control_packet(op, src, dst, port)


def _data_match(src_world: int):
    return lambda h: h.op is OpType.DATA and h.src_rank == src_world


def _credit_match(src_world: int):
    return lambda h: h.op is OpType.CREDIT and h.src_rank == src_world
