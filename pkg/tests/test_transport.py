"""Forwarding fabric: polling order, budgets, latency, backpressure."""

import pytest

from smi.config import PortDecl, RunConfig
from smi.errors import FatalRouteError
from smi.packet import DataType, NetworkPacket, OpType, PacketHeader, pack_elements
from smi.routing import assign_ports, generate_routes
from smi.topology import make_bus, make_torus
from smi.transport import RECEIVER, SENDER, build_fabric


def fabric_for(topo, decls, run=None):
    run = run or RunConfig()
    ports = assign_ports({d.port: list(d.ranks) for d in decls}, topo.ifaces_per_rank)
    rt = generate_routes(topo, ports)
    return build_fabric(topo, rt, tuple(decls), run)


def tick(fab, cycles=1):
    for _ in range(cycles):
        fab.step_units()
        fab.now += 1


def data_packet(src, dst, port=0, value=1):
    proto = PacketHeader(src, dst, port, OpType.DATA, 0)
    return pack_elements(DataType.INT, [value], proto)


def loopback_decl():
    return [PortDecl(port=0, kind="p2p", dtype=DataType.INT, ranks=(0,))]


class TestStructure:
    def test_unit_inventory_and_step_order(self):
        fab = fabric_for(make_bus(2), [PortDecl(port=0, kind="p2p",
                                                dtype=DataType.INT, ranks=(0, 1))])
        assert len(fab.units) == 2 * 4 * 2
        names = [u.name for u in fab.units[:8]]
        assert names == [f"r0.ckr{i}" for i in range(4)] + [f"r0.cks{i}" for i in range(4)]

    def test_polling_input_order(self):
        decls = [PortDecl(port=0, kind="p2p", dtype=DataType.INT, ranks=(0, 1))]
        fab = fabric_for(make_bus(2), decls)
        cks0 = fab.unit(0, SENDER, 0)
        assert [l.kind for l in cks0.inputs] == ["app", "pair", "sib", "sib", "sib"]
        ckr0 = fab.unit(0, RECEIVER, 0)
        assert [l.kind for l in ckr0.inputs] == ["wire", "pair", "sib", "sib", "sib"]
        # Unwired interface: no wire input, everything else unchanged.
        ckr3 = fab.unit(0, RECEIVER, 3)
        assert [l.kind for l in ckr3.inputs] == ["pair", "sib", "sib", "sib"]

    def test_endpoints_only_for_declared_ranks(self):
        decls = [PortDecl(port=0, kind="p2p", dtype=DataType.INT, ranks=(0, 2))]
        fab = fabric_for(make_bus(3), decls)
        fab.endpoint(0, 0)
        fab.endpoint(2, 0)
        with pytest.raises(FatalRouteError):
            fab.endpoint(1, 0)

    def test_wire_links_per_connection(self):
        topo = make_torus(2, 2)
        fab = fabric_for(topo, [PortDecl(port=0, kind="p2p",
                                         dtype=DataType.INT, ranks=(0, 3))])
        assert len(fab.wires) == 2 * len(topo.connections)

    def test_in_q_capacity_covers_flow_window(self):
        decls = [PortDecl(port=0, kind="p2p", dtype=DataType.FLOAT, ranks=(0, 1))]
        fab = fabric_for(make_bus(2), decls, RunConfig(k_elements={0: 70}))
        # 70 floats = 10 packets; the queue holds the window plus slack.
        assert fab.endpoint(1, 0).in_q.capacity == 12

    def test_in_q_capacity_covers_collectives(self):
        decls = [PortDecl(port=0, kind="bcast", dtype=DataType.FLOAT,
                          ranks=tuple(range(8)))]
        fab = fabric_for(make_bus(8), decls, RunConfig(fifo_capacity=4))
        assert fab.endpoint(0, 0).in_q.capacity >= 10


class TestPolling:
    @pytest.mark.parametrize("R", [1, 4, 8])
    def test_accept_pattern_is_R_then_idle_walk(self, R):
        """A lone busy input yields R back-to-back accepts, then a 5-gap."""
        fab = fabric_for(make_bus(1), loopback_decl(), RunConfig(R=R))
        cks = fab.unit(0, SENDER, 0)
        cks.accept_log = []
        out = fab.endpoint(0, 0).out_link
        in_q = fab.endpoint(0, 0).in_q
        pushed = 0
        for _ in range(200):
            while out.can_push() and pushed < 150:
                out.push(data_packet(0, 0, value=pushed % 100))
                pushed += 1
            if in_q.ready():
                in_q.pop()
            tick(fab)
        cycles = [c for c, _ in cks.accept_log]
        diffs = [b - a for a, b in zip(cycles, cycles[1:])]
        steady = diffs[2 * (R + 4):8 * (R + 4)]
        period = ([1] * (R - 1)) + [5]
        for i in range(0, len(steady) - R, R):
            assert steady[i:i + R] == period

    def test_idle_unit_parks(self):
        fab = fabric_for(make_bus(1), loopback_decl())
        cks = fab.unit(0, SENDER, 0)
        out = fab.endpoint(0, 0).out_link
        in_q = fab.endpoint(0, 0).in_q
        out.push(data_packet(0, 0))
        for _ in range(30):
            if in_q.ready():
                in_q.pop()
            tick(fab)
        assert fab.drained()
        settled = cks.accepts
        tick(fab, 50)
        assert cks.accepts == settled
        assert not cks.kick
        # A new packet wakes the unit back up.
        out.push(data_packet(0, 0, value=2))
        assert cks.kick
        tick(fab, 10)
        assert cks.accepts == settled + 1

    def test_trace_records_accepts(self):
        fab = fabric_for(make_bus(1), loopback_decl())
        fab.trace = []
        out = fab.endpoint(0, 0).out_link
        out.push(data_packet(0, 0))
        tick(fab, 8)
        kinds = [ev for (_, name, ev) in fab.trace if name == "r0.cks0"]
        assert "accept:app" in kinds


class TestLatency:
    def one_way_cycles(self, num_ranks, dst, link_latency):
        decls = [PortDecl(port=0, kind="p2p", dtype=DataType.INT, ranks=(0, dst))]
        fab = fabric_for(make_bus(num_ranks), decls,
                         RunConfig(link_latency=link_latency))
        fab.endpoint(0, 0).out_link.push(data_packet(0, dst))
        in_q = fab.endpoint(dst, 0).in_q
        for _ in range(600):
            if in_q.ready():
                return fab.now
            tick(fab)
        raise AssertionError("packet never delivered")

    def test_wire_latency_scales_per_hop(self):
        base1 = self.one_way_cycles(2, 1, link_latency=1)
        slow1 = self.one_way_cycles(2, 1, link_latency=5)
        assert slow1 - base1 == 4
        base2 = self.one_way_cycles(3, 2, link_latency=1)
        slow2 = self.one_way_cycles(3, 2, link_latency=5)
        assert slow2 - base2 == 8

    def test_each_hop_costs_the_same(self):
        times = [self.one_way_cycles(8, d, 1) for d in (1, 2, 3, 4)]
        gaps = [b - a for a, b in zip(times, times[1:])]
        assert len(set(gaps)) == 1

    def test_thread_mode_links_ready_immediately(self):
        fab = fabric_for(make_bus(1), loopback_decl())
        fab.now = None
        out = fab.endpoint(0, 0).out_link
        out.push(data_packet(0, 0))
        assert out.ready()


class TestBackpressure:
    def test_full_queue_stalls_upstream(self):
        decls = [PortDecl(port=0, kind="p2p", dtype=DataType.INT, ranks=(0, 1))]
        fab = fabric_for(make_bus(2), decls, RunConfig(fifo_capacity=8))
        out = fab.endpoint(0, 0).out_link
        in_q = fab.endpoint(1, 0).in_q
        assert in_q.capacity == 4
        pushed = 0
        for _ in range(120):
            while out.can_push() and pushed < 12:
                out.push(data_packet(0, 1, value=pushed))
                pushed += 1
            tick(fab)
        # Receiver never drains: the fabric jams but loses nothing.
        assert pushed == 12
        assert not fab.drained()
        assert len(in_q) == 4
        ckr1 = fab.unit(1, RECEIVER, 0)
        assert ckr1.held is not None
        assert ckr1.stalls > 0
        assert "deliver:r1p0" in fab.occupancy_dump()
        # Draining releases everything in order.
        got = []
        for _ in range(200):
            if in_q.ready():
                got.append(in_q.pop())
            tick(fab)
        assert [p.header.valid_count for p in got] == [1] * 12
        assert fab.drained()
        assert fab.occupancy_dump() == "  (fabric drained)"

    def test_packets_deliver_in_order(self):
        decls = [PortDecl(port=0, kind="p2p", dtype=DataType.INT, ranks=(0, 3))]
        fab = fabric_for(make_bus(4), decls)
        out = fab.endpoint(0, 0).out_link
        in_q = fab.endpoint(3, 0).in_q
        sent = 0
        seen = []
        for _ in range(300):
            while out.can_push() and sent < 40:
                proto = PacketHeader(0, 3, 0, OpType.DATA, 0)
                out.push(pack_elements(DataType.INT, [sent], proto))
                sent += 1
            if in_q.ready():
                seen.append(in_q.pop())
            tick(fab)
        from smi.packet import unpack_elements
        assert [unpack_elements(DataType.INT, p)[0] for p in seen] == list(range(40))


class TestRoutingErrors:
    def test_unknown_destination_is_fatal(self):
        decls = [PortDecl(port=0, kind="p2p", dtype=DataType.INT, ranks=(0, 1))]
        fab = fabric_for(make_bus(2), decls)
        fab.endpoint(0, 0).out_link.push(data_packet(0, 7))
        with pytest.raises(FatalRouteError, match="destination rank 7"):
            tick(fab, 5)

    def test_undeclared_port_is_fatal(self):
        decls = [PortDecl(port=0, kind="p2p", dtype=DataType.INT, ranks=(0, 1))]
        fab = fabric_for(make_bus(2), decls)
        bad = NetworkPacket(PacketHeader(0, 1, 9, OpType.DATA, 1),
                            b"\x01" + b"\x00" * 27)
        fab.endpoint(0, 0).out_link.push(bad)
        with pytest.raises(FatalRouteError, match="port 9"):
            tick(fab, 30)

    def test_table_shape_mismatch_rejected(self):
        decls = [PortDecl(port=0, kind="p2p", dtype=DataType.INT, ranks=(0, 1))]
        ports = assign_ports({0: [0, 1]}, 4)
        rt = generate_routes(make_bus(2), ports)
        from smi.errors import RoutingError
        with pytest.raises(RoutingError):
            build_fabric(make_bus(3), rt, tuple(decls), RunConfig())
