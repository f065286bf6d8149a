"""Packet transport fabric: bounded FIFO links and forwarding units.

Each rank instantiates one CK_S (send-side) and one CK_R (receive-side)
unit per network interface.  Units poll their inputs one per cycle with a
repeat budget R: after a successful read they keep reading the same input
while data is available, up to R times in a row, then move on.  An empty
probe costs a cycle; when no input holds a ready packet the poll pointer
parks where it is.

Local links (app FIFOs, paired and sibling unit links) have a one cycle
latency; wires between ranks use the configured link latency.  Capacity
is never exceeded: a unit whose output is full holds the packet and
stalls, which is what propagates backpressure.
"""

from __future__ import annotations

import threading
from collections import deque
from math import ceil

from .errors import FatalRouteError, RoutingError
from .packet import NetworkPacket
from .routing import CkrAction, CksAction, RoutingTables
from .topology import Endpoint, TopologySpec

SENDER = "S"
RECEIVER = "R"


class FifoLink:
    """Bounded in-order packet queue with a delivery latency in cycles."""

    __slots__ = ("name", "kind", "capacity", "latency", "_q", "fabric", "consumer")

    def __init__(self, fabric: "Fabric", name: str, kind: str, capacity: int, latency: int = 1):
        self.fabric = fabric
        self.name = name
        self.kind = kind  # "app", "pair", "sib", "wire", "deliver"
        self.capacity = capacity
        self.latency = latency
        self._q: deque = deque()
        self.consumer = None  # CkUnit polling this link, if any

    def can_push(self) -> bool:
        return len(self._q) < self.capacity

    def push(self, pkt: NetworkPacket) -> None:
        if len(self._q) >= self.capacity:
            raise AssertionError(f"push to full link {self.name}")
        fab = self.fabric
        now = fab.now
        self._q.append((0 if now is None else now + self.latency, pkt))
        fab.progress += 1
        if self.consumer is not None:
            self.consumer.kick = True
        if fab.packet_log is not None:
            fab.packet_log.append((now, self.name, pkt.header))

    def ready(self) -> bool:
        q = self._q
        if not q:
            return False
        now = self.fabric.now
        return now is None or q[0][0] <= now

    def pop(self) -> NetworkPacket:
        self.fabric.progress += 1
        return self._q.popleft()[1]

    def __len__(self):
        return len(self._q)


class CkUnit:
    """One communication kernel: polls inputs, consults its table, forwards."""

    __slots__ = (
        "fabric", "rank", "iface", "kind", "name", "inputs", "ptr", "budget",
        "held", "kick", "accepts", "stalls", "accept_log", "_dest_links",
        "_port_links", "_pair_link", "_table_desc",
    )

    def __init__(self, fabric, rank, iface, kind):
        self.fabric = fabric
        self.rank = rank
        self.iface = iface
        self.kind = kind
        self.name = f"r{rank}.{'cks' if kind == SENDER else 'ckr'}{iface}"
        self.inputs: list[FifoLink] = []
        self.ptr = 0
        self.budget = 0
        self.held = None  # (packet, target link)
        self.kick = False  # cleared once every input is verified empty
        self.accepts = 0
        self.stalls = 0
        self.accept_log = None  # list of (cycle, input kind) when enabled
        self._dest_links: list = []      # CK_S: destination rank -> link
        self._port_links: dict = {}      # CK_R: port -> link
        self._pair_link: FifoLink | None = None
        self._table_desc = ""

    def _route(self, pkt: NetworkPacket) -> FifoLink:
        h = pkt.header
        if self.kind == SENDER:
            if 0 <= h.dst_rank < len(self._dest_links):
                link = self._dest_links[h.dst_rank]
                if link is not None:
                    return link
            raise FatalRouteError(
                f"{self.name}: no route for destination rank {h.dst_rank} "
                f"(src={h.src_rank} port={h.port} op={h.op.name})"
            )
        if h.dst_rank != self.rank:
            return self._pair_link
        link = self._port_links.get(h.port)
        if link is None:
            raise FatalRouteError(
                f"{self.name}: no entry for port {h.port} "
                f"(src={h.src_rank} op={h.op.name})"
            )
        return link

    def step(self) -> None:
        trace = self.fabric.trace
        if self.held is not None:
            pkt, target = self.held
            if not target.can_push():
                self.stalls += 1
                if trace is not None:
                    trace.append((self.fabric.now, self.name, "stall"))
                return
            target.push(pkt)
            self.held = None
        if not self.kick:
            # Every input known empty: park with the run budget forfeited,
            # exactly as the full scan below would conclude.
            self.budget = 0
            return
        inputs = self.inputs
        if not inputs:
            return
        link = inputs[self.ptr]
        if link.ready():
            pkt = link.pop()
            self.accepts += 1
            if self.accept_log is not None:
                self.accept_log.append((self.fabric.now, link.kind))
            if trace is not None:
                trace.append((self.fabric.now, self.name, f"accept:{link.kind}"))
            if self.budget <= 0:
                self.budget = self.fabric.R
            self.budget -= 1
            if self.budget == 0:
                self.ptr = (self.ptr + 1) % len(inputs)
            target = self._route(pkt)
            if target.can_push():
                target.push(pkt)
            else:
                self.held = (pkt, target)
        else:
            # Empty probe: the consecutive-read budget is forfeited.  The
            # pointer advances only when some other input has data; with
            # nothing ready anywhere it parks where it is.
            self.budget = 0
            for other in inputs:
                if other.ready():
                    self.ptr = (self.ptr + 1) % len(inputs)
                    return
            if all(len(l) == 0 for l in inputs):
                self.kick = False


class AppEndpoint:
    """The FIFO attachment point of one application port at one rank."""

    __slots__ = ("rank", "port", "out_link", "in_q")

    def __init__(self, rank, port, out_link, in_q):
        self.rank = rank
        self.port = port
        self.out_link = out_link
        self.in_q = in_q


class Fabric:
    """All units, links and app endpoints of a simulated deployment."""

    def __init__(self, topo: TopologySpec, tables: RoutingTables, R: int):
        self.topo = topo
        self.tables = tables
        self.R = R
        self.now: int | None = 0
        self.progress = 0
        self.packet_log: list | None = None
        self.trace: list | None = None
        self.lock = threading.RLock()
        self.units: list[CkUnit] = []
        self.unit_map: dict[tuple, CkUnit] = {}
        self.endpoints: dict[tuple, AppEndpoint] = {}
        self.wires: dict[tuple, FifoLink] = {}
        self._all_links: list[FifoLink] = []

    def unit(self, rank: int, kind: str, iface: int) -> CkUnit:
        return self.unit_map[(rank, kind, iface)]

    def endpoint(self, rank: int, port: int) -> AppEndpoint:
        try:
            return self.endpoints[(rank, port)]
        except KeyError:
            raise FatalRouteError(f"no app endpoint for port {port} at rank {rank}") from None

    def step_units(self) -> None:
        for u in self.units:
            u.step()

    def drained(self) -> bool:
        return all(len(l) == 0 for l in self._all_links) and all(
            u.held is None for u in self.units
        )

    def occupancy_dump(self) -> str:
        lines = []
        for link in self._all_links:
            if len(link):
                lines.append(f"  link {link.name}: {len(link)} packet(s)")
        for u in self.units:
            if u.held is not None:
                lines.append(f"  unit {u.name}: holding packet for {u.held[1].name}")
        return "\n".join(lines) if lines else "  (fabric drained)"


def _in_q_capacity(decl, k_elems: int, base: int) -> int:
    """Port delivery queues must absorb a full flow-control window."""
    packets = ceil(k_elems / decl.dtype.max_elems)
    cap = max(base, packets + 2)
    if decl.kind != "p2p":
        cap = max(cap, len(decl.ranks) + 2)
    return cap


def build_fabric(topo: TopologySpec, tables: RoutingTables, decls, run_config) -> Fabric:
    """Instantiate units and wire every link the tables can name."""
    if tables.num_ranks != topo.num_ranks or tables.num_ifaces != topo.ifaces_per_rank:
        raise RoutingError(
            f"tables built for {tables.num_ranks} ranks x {tables.num_ifaces} ifaces, "
            f"topology has {topo.num_ranks} x {topo.ifaces_per_rank}"
        )
    fab = Fabric(topo, tables, run_config.R)
    cap = run_config.fifo_capacity
    nif = topo.ifaces_per_rank

    for rank in range(topo.num_ranks):
        for iface in range(nif):
            for kind in (RECEIVER, SENDER):
                u = CkUnit(fab, rank, iface, kind)
                fab.unit_map[(rank, kind, iface)] = u

    def link(name, kind, capacity=cap, latency=1):
        l = FifoLink(fab, name, kind, capacity, latency)
        fab._all_links.append(l)
        return l

    # Wires: one directed link per direction of each connection.
    for a, b in topo.connections:
        for src, dst in ((a, b), (b, a)):
            w = link(
                f"wire:r{src.rank}i{src.iface}->r{dst.rank}i{dst.iface}",
                "wire", latency=run_config.link_latency,
            )
            fab.wires[(src, dst)] = w

    pair_to_cks: dict[tuple, FifoLink] = {}
    pair_to_ckr: dict[tuple, FifoLink] = {}
    sib_cks: dict[tuple, FifoLink] = {}
    sib_ckr: dict[tuple, FifoLink] = {}
    for rank in range(topo.num_ranks):
        for iface in range(nif):
            pair_to_cks[(rank, iface)] = link(f"r{rank}.ckr{iface}->cks{iface}", "pair")
            pair_to_ckr[(rank, iface)] = link(f"r{rank}.cks{iface}->ckr{iface}", "pair")
            for other in range(nif):
                if other != iface:
                    sib_cks[(rank, iface, other)] = link(f"r{rank}.cks{iface}->cks{other}", "sib")
                    sib_ckr[(rank, iface, other)] = link(f"r{rank}.ckr{iface}->ckr{other}", "sib")

    # App endpoints, one per (rank, port) named by the declarations.
    decls = tuple(decls)
    for decl in decls:
        for rank in decl.ranks:
            if not 0 <= rank < topo.num_ranks:
                raise RoutingError(f"port {decl.port} declared at out-of-range rank {rank}")
            pair = tables.app_pair(rank, decl.port)
            if pair is None:
                raise RoutingError(f"tables have no TO_APP entry for port {decl.port} at rank {rank}")
            k = run_config.k_for(decl.port, decl.dtype)
            out = link(f"app:r{rank}p{decl.port}->cks{pair}", "app")
            in_q = link(
                f"deliver:r{rank}p{decl.port}", "deliver",
                capacity=_in_q_capacity(decl, k, base=max(4, cap // 2)),
            )
            fab.endpoints[(rank, decl.port)] = AppEndpoint(rank, decl.port, out, in_q)

    # Input lists in fixed polling order and routing link resolution.
    for rank in range(topo.num_ranks):
        for iface in range(nif):
            cks = fab.unit_map[(rank, SENDER, iface)]
            app_inputs = [
                fab.endpoints[(rank, d.port)].out_link
                for d in decls
                if rank in d.ranks and tables.app_pair(rank, d.port) == iface
            ]
            cks.inputs = app_inputs + [pair_to_cks[(rank, iface)]] + [
                sib_cks[(rank, other, iface)] for other in range(nif) if other != iface
            ]
            for l in cks.inputs:
                l.consumer = cks
            ckr = fab.unit_map[(rank, RECEIVER, iface)]
            peer = topo.peer(Endpoint(rank, iface))
            wire_inputs = [fab.wires[(peer, Endpoint(rank, iface))]] if peer else []
            ckr.inputs = wire_inputs + [pair_to_ckr[(rank, iface)]] + [
                sib_ckr[(rank, other, iface)] for other in range(nif) if other != iface
            ]
            for l in ckr.inputs:
                l.consumer = ckr

            # CK_S routing: destination rank -> link.
            dest_links = []
            for d in range(topo.num_ranks):
                entry = tables.cks[rank][iface].lookup(d)
                if entry is None:
                    dest_links.append(None)
                    continue
                action, arg = entry
                if action is CksAction.DELIVER_LOCAL:
                    dest_links.append(pair_to_ckr[(rank, iface)])
                elif action is CksAction.EMIT_IFACE:
                    if peer is None:
                        raise RoutingError(
                            f"rank {rank} iface {iface}: EMIT_IFACE on unwired iface"
                        )
                    dest_links.append(fab.wires[(Endpoint(rank, iface), peer)])
                else:
                    if not 0 <= arg < nif or arg == iface:
                        raise RoutingError(
                            f"rank {rank} iface {iface}: bad forward target {arg}"
                        )
                    dest_links.append(sib_cks[(rank, iface, arg)])
            cks._dest_links = dest_links
            cks._pair_link = pair_to_ckr[(rank, iface)]

            # CK_R routing: port -> link, transit via the paired CK_S.
            port_links = {}
            for p, (action, arg) in tables.ckr[rank][iface].entries.items():
                if action is CkrAction.TO_APP:
                    ep = fab.endpoints.get((rank, p))
                    if ep is not None:
                        port_links[p] = ep.in_q
                else:
                    if not 0 <= arg < nif or arg == iface:
                        raise RoutingError(
                            f"rank {rank} iface {iface}: bad CKR forward target {arg}"
                        )
                    port_links[p] = sib_ckr[(rank, iface, arg)]
            ckr._port_links = port_links
            ckr._pair_link = pair_to_cks[(rank, iface)]

    # Deterministic step order: rank, then CK_R before CK_S, then iface.
    for rank in range(topo.num_ranks):
        for iface in range(nif):
            fab.units.append(fab.unit_map[(rank, RECEIVER, iface)])
        for iface in range(nif):
            fab.units.append(fab.unit_map[(rank, SENDER, iface)])
    return fab
