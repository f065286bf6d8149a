"""Forwarding table generation, validation and binary emission.

Each rank runs one send-side and one receive-side communication kernel
(CK_S / CK_R) per network interface.  CK_S tables are indexed by
destination rank; CK_R tables by port:

    CK_S: DELIVER_LOCAL | FORWARD_LOCAL_CKS(j) | EMIT_IFACE
    CK_R: TO_APP | FORWARD_LOCAL_CKR(j)

Routes follow an up*/down* discipline on a BFS spanning tree rooted at
rank 0 (ties broken by lowest (rank, iface)).  Because the tables are
indexed by destination only, the chosen paths are destination-consistent:
a rank may take a descending link toward a neighbour only when that
neighbour's own chosen path is entirely descending.  Every table walk is
then a legal up*...down* path, which is what makes the channel dependency
graph acyclic.
"""

from __future__ import annotations

import enum
import heapq
import struct
from dataclasses import dataclass
from pathlib import Path

from .errors import RoutingError, UnreachableRankError
from .topology import Endpoint, TopologySpec

TABLE_MAGIC = b"SMITBL01"
_FILE_HEADER = struct.Struct("<BBHHH")


class CksAction(enum.IntEnum):
    DELIVER_LOCAL = 0
    FORWARD_LOCAL_CKS = 1
    EMIT_IFACE = 2


class CkrAction(enum.IntEnum):
    TO_APP = 0
    FORWARD_LOCAL_CKR = 1


@dataclass(frozen=True)
class CksTable:
    """Destination rank -> (action, arg).  arg is the target pair index."""

    entries: tuple[tuple[CksAction, int], ...]

    def lookup(self, dst: int):
        if not 0 <= dst < len(self.entries):
            return None
        return self.entries[dst]


@dataclass
class CkrTable:
    """Port -> (action, arg).  Ports not declared at this rank are absent."""

    entries: dict[int, tuple[CkrAction, int]]

    def lookup(self, port: int):
        return self.entries.get(port)


@dataclass(frozen=True)
class RoutingTables:
    num_ranks: int
    num_ifaces: int
    cks: tuple[tuple[CksTable, ...], ...]   # [rank][iface]
    ckr: tuple[tuple[CkrTable, ...], ...]   # [rank][iface]

    def out_iface(self, rank: int, dst: int) -> int | None:
        """Emitting iface used by ``rank`` toward ``dst`` (None for local)."""
        entry = self.cks[rank][0].lookup(dst)
        if entry is None:
            raise RoutingError(f"no table entry at rank {rank} for dst {dst}")
        action, arg = entry
        if action is CksAction.DELIVER_LOCAL:
            return None
        return 0 if action is CksAction.EMIT_IFACE else arg

    def app_pair(self, rank: int, port: int) -> int | None:
        """The CK pair index that owns a port at a rank, from the CK_R tables."""
        for iface in range(self.num_ifaces):
            entry = self.ckr[rank][iface].lookup(port)
            if entry is None:
                return None
            action, arg = entry
            if action is CkrAction.TO_APP:
                return iface
        return None


def assign_ports(port_ranks: dict[int, list[int]], num_ifaces: int) -> dict[int, dict[int, int]]:
    """Port -> {rank: pair index}; a port is served by pair (port mod pairs)."""
    out = {}
    for port, ranks in sorted(port_ranks.items()):
        if not 0 <= port <= 255:
            raise RoutingError(f"port {port} outside [0, 255]")
        out[port] = {rank: port % num_ifaces for rank in sorted(set(ranks))}
    return out


def _bfs_tree(topo: TopologySpec):
    """Levels and deterministic parent links of the tree rooted at rank 0."""
    levels = {0: 0}
    parent: dict[int, tuple[int, int, int]] = {}  # rank -> (parent, my_iface, parent_iface)
    queue = [0]
    while queue:
        nxt = []
        for r in queue:
            for my_if, nbr, nbr_if in topo.neighbors(r):
                if nbr not in levels:
                    levels[nbr] = levels[r] + 1
                    parent[nbr] = (r, nbr_if, my_if)
                    nxt.append(nbr)
        nxt.sort()
        queue = nxt
    if len(levels) != topo.num_ranks:
        missing = sorted(set(range(topo.num_ranks)) - set(levels))
        pairs = [(s, d) for s in range(topo.num_ranks) for d in missing if s != d]
        raise UnreachableRankError(pairs)
    return levels, parent


def _dest_next_hops(topo, levels, parent, dest):
    """next-hop iface per rank toward ``dest`` along shortest legal paths.

    Greedy Dijkstra over the up*/down* orientation.  A candidate using a
    descending link into x is legal only when x's chosen path is all-down;
    ties prefer descending candidates, then lowest (peer rank, iface).
    Falls back to pure spanning-tree routing if the greedy pass strands a
    rank, which keeps the destination complete and consistent.
    """
    n = topo.num_ranks
    dist = {dest: 0}
    all_down = {dest: True}
    hop = {}
    # heap entries: (dist, prefer_up, peer_rank, my_iface, rank)
    heap = []

    def push_candidates(x):
        # edges r -> x for every neighbour r of x
        for x_if, r, r_if in topo.neighbors(x):
            if r in dist:
                continue
            goes_up = (levels[x], x) < (levels[r], r)
            if not goes_up and not all_down[x]:
                continue  # descending into a rank that will climb: illegal
            heapq.heappush(heap, (dist[x] + 1, 0 if not goes_up else 1, x, r_if, r))

    push_candidates(dest)
    while heap:
        d, pref_up, via, my_if, r = heapq.heappop(heap)
        if r in dist:
            continue
        dist[r] = d
        all_down[r] = pref_up == 0
        hop[r] = my_if
        push_candidates(r)

    if len(dist) == n:
        return hop

    # Tree fallback for the whole destination: ascend to the root-path of
    # dest, then descend along it.
    chain = [dest]
    while chain[-1] != 0:
        chain.append(parent[chain[-1]][0])
    chain.reverse()  # root .. dest
    pos = {rank: i for i, rank in enumerate(chain)}
    hop = {}
    for r in range(n):
        if r == dest:
            continue
        if r in pos:
            child = chain[pos[r] + 1]
            hop[r] = parent[child][2]  # my side of the tree edge down to child
        else:
            hop[r] = parent[r][1]      # my side of the tree edge up to parent
    return hop


def generate_routes(topo: TopologySpec, ports: dict[int, dict[int, int]]) -> RoutingTables:
    """Build all CK_S/CK_R tables for a topology and port assignment.

    ``ports`` maps port -> {rank: pair index}, e.g. from assign_ports().
    Raises UnreachableRankError when the topology is disconnected.
    """
    n, nif = topo.num_ranks, topo.ifaces_per_rank
    levels, parent = _bfs_tree(topo)

    next_hops = {d: _dest_next_hops(topo, levels, parent, d) for d in range(n)}

    cks_all = []
    for r in range(n):
        per_iface = []
        for iface in range(nif):
            entries = []
            for d in range(n):
                if d == r:
                    entries.append((CksAction.DELIVER_LOCAL, 0))
                else:
                    out = next_hops[d][r]
                    if out == iface:
                        entries.append((CksAction.EMIT_IFACE, 0))
                    else:
                        entries.append((CksAction.FORWARD_LOCAL_CKS, out))
            per_iface.append(CksTable(tuple(entries)))
        cks_all.append(tuple(per_iface))

    ckr_all = []
    for r in range(n):
        local_ports = {p: pairs[r] for p, pairs in ports.items() if r in pairs}
        per_iface = []
        for iface in range(nif):
            entries = {}
            for p, pair in sorted(local_ports.items()):
                if pair == iface:
                    entries[p] = (CkrAction.TO_APP, 0)
                else:
                    entries[p] = (CkrAction.FORWARD_LOCAL_CKR, pair)
            per_iface.append(CkrTable(entries))
        ckr_all.append(tuple(per_iface))

    rt = RoutingTables(n, nif, tuple(cks_all), tuple(ckr_all))
    _validate_emits(topo, rt)
    return rt


def _validate_emits(topo: TopologySpec, rt: RoutingTables) -> None:
    for r in range(rt.num_ranks):
        for iface in range(rt.num_ifaces):
            for d in range(rt.num_ranks):
                action, _ = rt.cks[r][iface].lookup(d)
                if action is CksAction.EMIT_IFACE and topo.peer(Endpoint(r, iface)) is None:
                    raise RoutingError(f"rank {r} iface {iface}: EMIT_IFACE on unwired iface")


def route_hops(topo: TopologySpec, rt: RoutingTables, src: int, dst: int):
    """Walk the tables from src to dst; returns the traversed directed wires.

    Mirrors the forwarding units: within a rank the walk starts at the
    arrival iface (iface 0 at the source) and follows FORWARD_LOCAL_CKS
    chains until an emitting iface.  Each hop is
    ((rank, iface), (peer_rank, peer_iface)).  Raises RoutingError on
    unroutable packets or forwarding loops.
    """
    if not (0 <= src < rt.num_ranks and 0 <= dst < rt.num_ranks):
        raise RoutingError(
            f"rank pair {src}->{dst} outside the table set (ranks 0..{rt.num_ranks - 1})"
        )
    hops = []
    rank, iface = src, 0
    while rank != dst:
        if len(hops) > topo.num_ranks:
            raise RoutingError(f"forwarding loop routing {src}->{dst}")
        seen = set()
        while True:
            entry = rt.cks[rank][iface].lookup(dst)
            if entry is None:
                raise RoutingError(f"no table entry at rank {rank} for dst {dst}")
            action, arg = entry
            if action is CksAction.EMIT_IFACE:
                break
            if action is CksAction.DELIVER_LOCAL:
                raise RoutingError(f"rank {rank} delivers locally for dst {dst}")
            if arg in seen or not 0 <= arg < rt.num_ifaces:
                raise RoutingError(f"local forward loop at rank {rank} for dst {dst}")
            seen.add(iface)
            iface = arg
        peer = topo.peer(Endpoint(rank, iface))
        if peer is None:
            raise RoutingError(f"rank {rank} iface {iface} is unwired")
        hops.append(((rank, iface), (peer.rank, peer.iface)))
        rank, iface = peer.rank, peer.iface
    return hops


@dataclass(frozen=True)
class DeadlockCheck:
    """Result of the channel-dependency-graph analysis.

    acyclic      -- verdict
    order        -- a topological order of the used directed wires (certificate)
    cycle        -- a violating dependency cycle when not acyclic
    """

    acyclic: bool
    order: tuple = ()
    cycle: tuple = ()


def check_deadlock_free(topo: TopologySpec, rt: RoutingTables) -> DeadlockCheck:
    """Build the channel dependency graph from table walks and test acyclicity."""
    deps: dict[tuple, set] = {}
    nodes: set[tuple] = set()
    for s in range(topo.num_ranks):
        for d in range(topo.num_ranks):
            if s == d:
                continue
            hops = route_hops(topo, rt, s, d)
            for wire in hops:
                nodes.add(wire)
            for a, b in zip(hops, hops[1:]):
                deps.setdefault(a, set()).add(b)

    indeg = {w: 0 for w in nodes}
    for a, succs in deps.items():
        for b in succs:
            indeg[b] += 1
    ready = sorted(w for w, k in indeg.items() if k == 0)
    order = []
    while ready:
        w = ready.pop(0)
        order.append(w)
        for b in sorted(deps.get(w, ())):
            indeg[b] -= 1
            if indeg[b] == 0:
                ready.append(b)
        ready.sort()
    if len(order) == len(nodes):
        return DeadlockCheck(True, order=tuple(order))

    remaining = {w for w in nodes if indeg[w] > 0}
    start = sorted(remaining)[0]
    path, seen = [start], {start}
    while True:
        nxt = sorted(b for b in deps.get(path[-1], ()) if b in remaining)[0]
        if nxt in seen:
            cycle = path[path.index(nxt):] + [nxt]
            return DeadlockCheck(False, cycle=tuple(cycle))
        path.append(nxt)
        seen.add(nxt)


def emit_tables(rt: RoutingTables, directory) -> list[Path]:
    """Write one deterministic binary table file per rank; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for r in range(rt.num_ranks):
        ports = sorted(rt.ckr[r][0].entries)
        buf = bytearray(TABLE_MAGIC)
        buf += _FILE_HEADER.pack(r, rt.num_ifaces, rt.num_ranks, len(ports), 0)
        for iface in range(rt.num_ifaces):
            for action, arg in rt.cks[r][iface].entries:
                buf += bytes((action, arg))
        for iface in range(rt.num_ifaces):
            table = rt.ckr[r][iface].entries
            for p in ports:
                action, arg = table[p]
                buf += bytes((p, action, arg))
        path = directory / f"rank{r:03d}.tbl"
        path.write_bytes(bytes(buf))
        paths.append(path)
    return paths


def load_tables(directory) -> RoutingTables:
    """Read the per-rank binary files back into RoutingTables."""
    directory = Path(directory)
    files = sorted(directory.glob("rank*.tbl"))
    if not files:
        raise RoutingError(f"no table files found in {directory}")
    cks_all, ckr_all = {}, {}
    num_ranks = num_ifaces = None
    for path in files:
        raw = path.read_bytes()
        if raw[: len(TABLE_MAGIC)] != TABLE_MAGIC:
            raise RoutingError(f"{path.name}: bad magic")
        rank, nif, n, nports, _ = _FILE_HEADER.unpack_from(raw, len(TABLE_MAGIC))
        if num_ranks is None:
            num_ranks, num_ifaces = n, nif
        elif (n, nif) != (num_ranks, num_ifaces):
            raise RoutingError(f"{path.name}: inconsistent header")
        off = len(TABLE_MAGIC) + _FILE_HEADER.size
        per_iface_cks = []
        for _ in range(nif):
            entries = []
            for _ in range(n):
                entries.append((CksAction(raw[off]), raw[off + 1]))
                off += 2
            per_iface_cks.append(CksTable(tuple(entries)))
        per_iface_ckr = []
        for _ in range(nif):
            entries = {}
            for _ in range(nports):
                entries[raw[off]] = (CkrAction(raw[off + 1]), raw[off + 2])
                off += 3
            per_iface_ckr.append(CkrTable(entries))
        if off != len(raw):
            raise RoutingError(f"{path.name}: trailing bytes")
        cks_all[rank] = tuple(per_iface_cks)
        ckr_all[rank] = tuple(per_iface_ckr)
    if sorted(cks_all) != list(range(num_ranks)):
        raise RoutingError(f"table files cover ranks {sorted(cks_all)}, expected 0..{num_ranks - 1}")
    return RoutingTables(
        num_ranks,
        num_ifaces,
        tuple(cks_all[r] for r in range(num_ranks)),
        tuple(ckr_all[r] for r in range(num_ranks)),
    )
