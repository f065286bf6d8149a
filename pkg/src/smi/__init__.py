"""Streaming message interface: a software runtime and cycle simulator
for transient channel communication over a packet-switched interconnect.

The layers, bottom up:

* ``packet``: 32-byte packets, header codec, payload packing.
* ``topology``: interface-level network descriptions, bus and torus makers.
* ``routing``: table generation, binary table files, deadlock checking.
* ``transport``: FIFO links and polling forwarding units (the fabric).
* ``channel``: transient point-to-point channels with eager and
  credit-based flow control.
* ``collectives``: broadcast, scatter, gather and reduce over one port.
* ``engine``: cycle-accurate and free-running simulation drivers.
* ``harness``: microbenchmarks and small applications.
"""

from .channel import Communicator, RankApi, RecvChannel, SendChannel
from .config import PortDecl, RunConfig, dump_ports, load_ports, load_run_config, parse_ports
from .engine import SimResult, Simulation, run_programs
from .errors import (
    ChannelError,
    ChannelMismatchError,
    ConfigError,
    ContractViolationError,
    DeadlockError,
    FatalRouteError,
    MalformedPacketError,
    PortInUseError,
    ProtocolViolationError,
    RoutingError,
    SmiError,
    TopologyError,
    UnreachableRankError,
)
from .packet import (
    DataType,
    NetworkPacket,
    OpType,
    PacketHeader,
    decode_header,
    decode_packet,
    encode_header,
    encode_packet,
    max_elems_per_packet,
    pack_elements,
    unpack_elements,
)
from .routing import (
    RoutingTables,
    assign_ports,
    check_deadlock_free,
    emit_tables,
    generate_routes,
    load_tables,
    route_hops,
)
from .topology import TopologySpec, load_topology, make_bus, make_torus, parse_topology, save_topology
from .collectives import (
    bcast,
    gather,
    open_bcast_channel,
    open_gather_channel,
    open_reduce_channel,
    open_scatter_channel,
    reduce,
    scatter,
)

__version__ = "1.0.0"

__all__ = [
    "ChannelError",
    "ChannelMismatchError",
    "Communicator",
    "ConfigError",
    "ContractViolationError",
    "DataType",
    "DeadlockError",
    "FatalRouteError",
    "MalformedPacketError",
    "NetworkPacket",
    "OpType",
    "PacketHeader",
    "PortDecl",
    "PortInUseError",
    "ProtocolViolationError",
    "RankApi",
    "RecvChannel",
    "RoutingError",
    "RoutingTables",
    "RunConfig",
    "SendChannel",
    "SimResult",
    "Simulation",
    "SmiError",
    "TopologyError",
    "TopologySpec",
    "UnreachableRankError",
    "assign_ports",
    "bcast",
    "check_deadlock_free",
    "decode_header",
    "decode_packet",
    "dump_ports",
    "emit_tables",
    "encode_header",
    "encode_packet",
    "gather",
    "generate_routes",
    "load_ports",
    "load_run_config",
    "load_tables",
    "load_topology",
    "make_bus",
    "make_torus",
    "max_elems_per_packet",
    "open_bcast_channel",
    "open_gather_channel",
    "open_reduce_channel",
    "open_scatter_channel",
    "pack_elements",
    "parse_ports",
    "parse_topology",
    "reduce",
    "route_hops",
    "run_programs",
    "save_topology",
    "scatter",
    "unpack_elements",
    "__version__",
]
