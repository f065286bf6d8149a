"""Streaming collectives: broadcast, scatter, gather, reduce.

All four use a flat scheme coordinated by the root over a single declared
port.  Control packets carry the coordination:

* broadcast and scatter receivers announce themselves with SYNC_READY,
  then the root streams data (broadcast replicates each packet to every
  non-root in ascending communicator order);
* gather contributors wait for a SYNC_READY grant from the root, which
  admits one block at a time in ascending order;
* reduce contributors wait for a CREDIT grant per tile of C elements, so
  the root folds rank-major with one C-element accumulator no matter how
  large the communicator or the message is.

The root's own contribution never touches the network; it is staged
locally but rounded through the wire format first, so results are
identical to an all-remote exchange.  Opening a channel is a generator
(it performs the rendezvous); a zero-length collective still performs one
handshake per member so every kind synchronizes uniformly.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import replace

from .channel import Communicator, RankApi
from .errors import ChannelError, ChannelMismatchError, ContractViolationError
from .packet import DataType, OpType, PacketHeader, pack_elements, unpack_elements

REDUCE_IDENTITY = object()  # sentinel: slot not yet folded


def wire_round(dtype: DataType, x):
    """Value ``x`` as it would arrive after packing and unpacking."""
    fmt = "<" + dtype.fmt
    return struct.unpack(fmt, struct.pack(fmt, x))[0]


def fold(op: str, dtype: DataType, a, b):
    """One reduction step, quantized to the wire type at every fold."""
    if op == "MAX":
        return max(a, b)
    if op == "MIN":
        return min(a, b)
    s = a + b
    if dtype is DataType.FLOAT:
        s = wire_round(dtype, s)
    return s


def _ready_from(src_world: int):
    return lambda h: h.op is OpType.SYNC_READY and h.src_rank == src_world

def _credit_from(src_world: int):
    return lambda h: h.op is OpType.CREDIT and h.src_rank == src_world

def _data_from(src_world: int):
    return lambda h: h.op is OpType.DATA and h.src_rank == src_world


class _CollectiveChannel:
    """State shared by every kind: membership, progress, packet staging."""

    kind = ""

    def __init__(self, api: RankApi, port: int, count: int, dtype: DataType,
                 root: int, comm: Communicator | None):
        if count < 0:
            raise ChannelError("count must be >= 0")
        comm = comm or api.world
        decl = api.decl_for(port, self.kind, dtype)
        missing = [r for r in comm.world_ranks if r not in decl.ranks]
        if missing:
            raise ChannelError(
                f"port {port}: communicator ranks {missing} are not declared endpoints"
            )
        self.api = api
        self.port = port
        self.count = count
        self.dtype = dtype
        self.comm = comm
        self.root = root
        self.root_world = comm.world_of(root)
        self.me = comm.rank_of(api.rank)
        self.is_root = self.me == root
        self.op = decl.op
        self.sent = 0
        self.buf: list = []
        self.closed = False
        api.acquire(port, "coll")

    # Non-root members in ascending communicator order, as world ranks.
    def _others(self):
        return [self.comm.world_of(r) for r in range(self.comm.size) if r != self.root]

    def _close(self):
        if not self.closed:
            self.closed = True
            self.api.release(self.port, "coll")

    def _mismatch(self, pkt, expected, src_world):
        if pkt.header.valid_count != expected:
            raise ChannelMismatchError(
                f"port {self.port}: expected {expected} elements from rank "
                f"{src_world}, packet carries {pkt.header.valid_count}"
            )

    def _recv_block(self, src_world: int, n: int):
        """Generator: receive ``n`` elements sent as one packet run."""
        out = []
        while len(out) < n:
            expected = min(self.dtype.max_elems, n - len(out))
            pkt = yield from self.api.recv_match(self.port, _data_from(src_world))
            self._mismatch(pkt, expected, src_world)
            out.extend(unpack_elements(self.dtype, pkt))
        return out

    def _emit_block(self, dst_world: int, elems):
        """Generator: stream ``elems`` to one destination, max-sized packets."""
        proto = PacketHeader(self.api.rank, dst_world, self.port, OpType.DATA, 0)
        for i in range(0, len(elems), self.dtype.max_elems):
            pkt = pack_elements(self.dtype, elems[i:i + self.dtype.max_elems], proto)
            yield from self.api.emit(self.port, pkt)


class BcastChannel(_CollectiveChannel):
    kind = "bcast"

    def _open(self):
        if self.is_root:
            for src in self._others():
                yield from self.api.recv_match(self.port, _ready_from(src))
        else:
            yield from self.api.emit_control(OpType.SYNC_READY, self.root_world, self.port)
        if self.count == 0:
            self._close()
        return self

    def send(self, elem):
        """Root only: feed one element; replicated on packet boundaries."""
        if not self.is_root:
            raise ContractViolationError("only the broadcast root sends")
        if self.sent >= self.count:
            raise ContractViolationError(f"send past count={self.count}")
        self.buf.append(elem)
        self.sent += 1
        if len(self.buf) == self.dtype.max_elems or self.sent == self.count:
            proto = PacketHeader(self.api.rank, 0, self.port, OpType.DATA, 0)
            pkt = pack_elements(self.dtype, self.buf, proto)
            self.buf.clear()
            for dst in self._others():
                clone = replace(pkt, header=replace(pkt.header, dst_rank=dst))
                yield from self.api.emit(self.port, clone)
        if self.sent == self.count:
            self._close()

    def recv(self):
        """Non-root: next broadcast element in root's send order."""
        if self.is_root:
            raise ContractViolationError("the broadcast root already holds the data")
        if self.sent >= self.count:
            raise ContractViolationError(f"recv past count={self.count}")
        if not self.buf:
            expected = min(self.dtype.max_elems, self.count - self.sent)
            pkt = yield from self.api.recv_match(self.port, _data_from(self.root_world))
            self._mismatch(pkt, expected, self.root_world)
            self.buf.extend(unpack_elements(self.dtype, pkt))
        self.sent += 1
        val = self.buf.pop(0)
        if self.sent == self.count:
            self._close()
        return val


class ScatterChannel(_CollectiveChannel):
    kind = "scatter"

    def __init__(self, api, port, count, dtype, root, comm):
        super().__init__(api, port, count, dtype, root, comm)
        self.stash: deque = deque()   # root's own block, wire-rounded
        self.recvd = 0
        self.rbuf: list = []
        self._ready_seen: set = set()

    def _open(self):
        if not self.is_root:
            yield from self.api.emit_control(OpType.SYNC_READY, self.root_world, self.port)
        elif self.count == 0:
            for src in self._others():
                yield from self.api.recv_match(self.port, _ready_from(src))
        if self.count == 0:
            self._close()
        return self

    def send(self, elem):
        """Root only: elements in communicator-rank-major block order."""
        if not self.is_root:
            raise ContractViolationError("only the scatter root sends")
        total = self.count * self.comm.size
        if self.sent >= total:
            raise ContractViolationError(f"send past {total} elements")
        dst = self.sent // self.count
        self.sent += 1
        if dst == self.root:
            self.stash.append(wire_round(self.dtype, elem))
            return
        self.buf.append(elem)
        within = (self.sent - 1) % self.count + 1
        if len(self.buf) == self.dtype.max_elems or within == self.count:
            dst_world = self.comm.world_of(dst)
            if dst_world not in self._ready_seen:
                yield from self.api.recv_match(self.port, _ready_from(dst_world))
                self._ready_seen.add(dst_world)
            yield from self._emit_block(dst_world, self.buf)
            self.buf.clear()
        if self.sent == total:
            self._close()

    def recv(self):
        """Every member: next element of this rank's own block."""
        if self.recvd >= self.count:
            raise ContractViolationError(f"recv past count={self.count}")
        if self.is_root:
            if not self.stash:
                raise ContractViolationError(
                    "scatter root must send its own block before receiving it"
                )
            self.recvd += 1
            return self.stash.popleft()
        if not self.rbuf:
            expected = min(self.dtype.max_elems, self.count - self.recvd)
            pkt = yield from self.api.recv_match(self.port, _data_from(self.root_world))
            self._mismatch(pkt, expected, self.root_world)
            self.rbuf.extend(unpack_elements(self.dtype, pkt))
        self.recvd += 1
        val = self.rbuf.pop(0)
        if self.recvd == self.count and self.sent == 0:
            self._close()
        return val


class GatherChannel(_CollectiveChannel):
    kind = "gather"

    def __init__(self, api, port, count, dtype, root, comm):
        super().__init__(api, port, count, dtype, root, comm)
        self.stash: deque = deque()
        self.granted = False
        self.collected = 0
        self._cbuf: list = []
        self._csrc = 0  # next communicator rank to collect from

    def _open(self):
        if self.count == 0:
            if self.is_root:
                for dst in self._others():
                    yield from self.api.emit_control(OpType.SYNC_READY, dst, self.port)
            else:
                yield from self.api.recv_match(self.port, _ready_from(self.root_world))
            self._close()
        return self

    def send(self, elem):
        """Every member feeds its own ``count`` elements."""
        if self.sent >= self.count:
            raise ContractViolationError(f"send past count={self.count}")
        self.sent += 1
        if self.is_root:
            self.stash.append(wire_round(self.dtype, elem))
            return
        self.buf.append(elem)
        if len(self.buf) == self.dtype.max_elems or self.sent == self.count:
            if not self.granted:
                yield from self.api.recv_match(self.port, _ready_from(self.root_world))
                self.granted = True
            yield from self._emit_block(self.root_world, self.buf)
            self.buf.clear()
        if self.sent == self.count and not self.is_root:
            self._close()

    def collect(self):
        """Root only: next element, blocks in communicator-rank order."""
        if not self.is_root:
            raise ContractViolationError("only the gather root collects")
        total = self.count * self.comm.size
        if self.collected >= total:
            raise ContractViolationError(f"collect past {total} elements")
        while not self._cbuf:
            src = self._csrc
            self._csrc += 1
            if src == self.root:
                if len(self.stash) < self.count:
                    raise ContractViolationError(
                        "gather root must send its block before collecting it"
                    )
                self._cbuf = [self.stash.popleft() for _ in range(self.count)]
            else:
                src_world = self.comm.world_of(src)
                yield from self.api.emit_control(OpType.SYNC_READY, src_world, self.port)
                self._cbuf = yield from self._recv_block(src_world, self.count)
        self.collected += 1
        val = self._cbuf.pop(0)
        if self.collected == total:
            self._close()
        return val


class ReduceChannel(_CollectiveChannel):
    kind = "reduce"

    def __init__(self, api, port, count, dtype, root, comm):
        super().__init__(api, port, count, dtype, root, comm)
        self.tile = api.config.reduce_tile
        self.stash: deque = deque()
        self.next_tile = 0
        self.rbuf: list = []       # finished tile awaiting result() calls
        self.resulted = 0
        self.max_acc_len = 0

    def _open(self):
        if self.count == 0:
            if self.is_root:
                for dst in self._others():
                    yield from self.api.emit_control(OpType.CREDIT, dst, self.port)
            else:
                yield from self.api.recv_match(self.port, _credit_from(self.root_world))
            self._close()
        return self

    def _tile_len(self, tile_idx: int) -> int:
        start = tile_idx * self.tile
        return min(self.tile, self.count - start)

    def send(self, elem):
        """Every member contributes ``count`` elements in order."""
        if self.sent >= self.count:
            raise ContractViolationError(f"send past count={self.count}")
        self.sent += 1
        if self.is_root:
            self.stash.append(wire_round(self.dtype, elem))
            return
        self.buf.append(elem)
        boundary = len(self.buf) == self.tile or self.sent == self.count
        if boundary:
            # One CREDIT grant admits one whole tile.
            yield from self.api.recv_match(self.port, _credit_from(self.root_world))
            yield from self._emit_block(self.root_world, self.buf)
            self.buf.clear()
        if self.sent == self.count and not self.is_root:
            self._close()

    def _fold_tile(self):
        """Generator: grant, receive and fold one tile, rank-major."""
        n = self._tile_len(self.next_tile)
        acc = [REDUCE_IDENTITY] * n
        for src in range(self.comm.size):
            if src == self.root:
                if len(self.stash) < n:
                    raise ContractViolationError(
                        "reduce root must send a tile before collecting its result"
                    )
                contrib = [self.stash.popleft() for _ in range(n)]
            else:
                src_world = self.comm.world_of(src)
                yield from self.api.emit_control(OpType.CREDIT, src_world, self.port)
                contrib = yield from self._recv_block(src_world, n)
            for j, x in enumerate(contrib):
                acc[j] = x if acc[j] is REDUCE_IDENTITY else fold(self.op, self.dtype, acc[j], x)
            self.max_acc_len = max(self.max_acc_len, len(acc))
        self.next_tile += 1
        self.rbuf = acc

    def result(self):
        """Root only: next reduced element; drives tile folding on demand."""
        if not self.is_root:
            raise ContractViolationError("only the reduce root holds the result")
        if self.resulted >= self.count:
            raise ContractViolationError(f"result past count={self.count}")
        if not self.rbuf:
            yield from self._fold_tile()
        self.resulted += 1
        val = self.rbuf.pop(0)
        if self.resulted == self.count:
            self._close()
        return val


def open_bcast_channel(api, count, dtype, root, port, comm=None):
    return (yield from BcastChannel(api, port, count, dtype, root, comm)._open())


def open_scatter_channel(api, count, dtype, root, port, comm=None):
    return (yield from ScatterChannel(api, port, count, dtype, root, comm)._open())


def open_gather_channel(api, count, dtype, root, port, comm=None):
    return (yield from GatherChannel(api, port, count, dtype, root, comm)._open())


def open_reduce_channel(api, count, dtype, root, port, comm=None):
    return (yield from ReduceChannel(api, port, count, dtype, root, comm)._open())


# One-shot message-level wrappers; every member calls the same function.

def bcast(api, port, dtype, root, count, vals=None, comm=None):
    """Generator: returns the broadcast values on every member."""
    ch = yield from open_bcast_channel(api, count, dtype, root, port, comm)
    if ch.is_root:
        if vals is None or len(vals) != count:
            raise ContractViolationError("broadcast root must supply count values")
        for v in vals:
            yield from ch.send(v)
        return [wire_round(dtype, v) for v in vals]
    out = []
    for _ in range(count):
        out.append((yield from ch.recv()))
    return out


def scatter(api, port, dtype, root, count, vals=None, comm=None):
    """Generator: returns this member's block of ``count`` values."""
    ch = yield from open_scatter_channel(api, count, dtype, root, port, comm)
    if ch.is_root:
        if vals is None or len(vals) != count * ch.comm.size:
            raise ContractViolationError(
                "scatter root must supply size*count values in rank-major order"
            )
        for v in vals:
            yield from ch.send(v)
    out = []
    for _ in range(count):
        out.append((yield from ch.recv()))
    return out


def gather(api, port, dtype, root, count, vals, comm=None):
    """Generator: root returns all blocks rank-major, others return None."""
    ch = yield from open_gather_channel(api, count, dtype, root, port, comm)
    if vals is None or len(vals) != count:
        raise ContractViolationError("every gather member supplies count values")
    for v in vals:
        yield from ch.send(v)
    if not ch.is_root:
        return None
    out = []
    for _ in range(count * ch.comm.size):
        out.append((yield from ch.collect()))
    return out


def reduce(api, port, dtype, root, count, vals, comm=None):
    """Generator: root returns the elementwise reduction, others None."""
    ch = yield from open_reduce_channel(api, count, dtype, root, port, comm)
    if vals is None or len(vals) != count:
        raise ContractViolationError("every reduce member supplies count values")
    for v in vals:
        yield from ch.send(v)
    if not ch.is_root:
        return None
    out = []
    for _ in range(count):
        out.append((yield from ch.result()))
    return out
