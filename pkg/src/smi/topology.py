"""Physical topology descriptions: ranks, network interfaces and cables.

A topology is a set of duplex connections between (rank, iface) endpoints.
Each endpoint is used by at most one connection.  Documents are plain JSON:

    {"num_ranks": 2, "ifaces_per_rank": 1,
     "connections": [[[0, 0], [1, 0]]]}
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

from .errors import TopologyError

MAX_RANKS = 256


class Endpoint(NamedTuple):
    rank: int
    iface: int


def _canonical(a: Endpoint, b: Endpoint) -> tuple[Endpoint, Endpoint]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class TopologySpec:
    num_ranks: int
    ifaces_per_rank: int
    connections: tuple[tuple[Endpoint, Endpoint], ...]
    _peers: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not 1 <= self.num_ranks <= MAX_RANKS:
            raise TopologyError(f"num_ranks={self.num_ranks} outside [1, {MAX_RANKS}]")
        if self.ifaces_per_rank < 1:
            raise TopologyError("ifaces_per_rank must be >= 1")
        conns = []
        for pair in self.connections:
            (a, b) = pair
            a, b = Endpoint(*a), Endpoint(*b)
            for ep in (a, b):
                if not 0 <= ep.rank < self.num_ranks:
                    raise TopologyError(f"endpoint rank {ep.rank} out of range")
                if not 0 <= ep.iface < self.ifaces_per_rank:
                    raise TopologyError(f"endpoint iface {ep.iface} out of range")
            if a == b:
                raise TopologyError(f"self-loop on endpoint {a}")
            conns.append(_canonical(a, b))
        conns.sort()
        used = Counter(ep for pair in conns for ep in pair)
        dup = [ep for ep, n in used.items() if n > 1]
        if dup:
            raise TopologyError(f"endpoint used by more than one connection: {sorted(dup)}")
        object.__setattr__(self, "connections", tuple(conns))
        peers = {}
        for a, b in conns:
            peers[a] = b
            peers[b] = a
        object.__setattr__(self, "_peers", peers)

    def peer(self, ep: Endpoint) -> Endpoint | None:
        """The endpoint wired to ``ep``, or None if the iface is unused."""
        return self._peers.get(Endpoint(*ep))

    def degree(self, rank: int) -> int:
        return sum(1 for ep in self._peers if ep.rank == rank)

    def neighbors(self, rank: int) -> list[tuple[int, int, int]]:
        """Wired links of a rank as (my_iface, peer_rank, peer_iface), iface order."""
        out = []
        for iface in range(self.ifaces_per_rank):
            p = self._peers.get(Endpoint(rank, iface))
            if p is not None:
                out.append((iface, p.rank, p.iface))
        return out

    def is_connected(self) -> bool:
        if self.num_ranks == 1:
            return True
        seen = {0}
        frontier = [0]
        while frontier:
            r = frontier.pop()
            for _, nbr, _ in self.neighbors(r):
                if nbr not in seen:
                    seen.add(nbr)
                    frontier.append(nbr)
        return len(seen) == self.num_ranks

    def to_json(self) -> str:
        doc = {
            "num_ranks": self.num_ranks,
            "ifaces_per_rank": self.ifaces_per_rank,
            "connections": [[[a.rank, a.iface], [b.rank, b.iface]] for a, b in self.connections],
        }
        return json.dumps(doc, indent=2) + "\n"


def parse_topology(text: str) -> TopologySpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TopologyError(f"invalid JSON: {exc}") from None
    try:
        num_ranks = doc["num_ranks"]
        ifaces = doc["ifaces_per_rank"]
        conns = doc["connections"]
    except (KeyError, TypeError) as exc:
        raise TopologyError(f"missing topology field: {exc}") from None
    pairs = []
    for item in conns:
        try:
            (ar, ai), (br, bi) = item
            pairs.append((Endpoint(int(ar), int(ai)), Endpoint(int(br), int(bi))))
        except (ValueError, TypeError):
            raise TopologyError(f"malformed connection entry {item!r}") from None
    return TopologySpec(int(num_ranks), int(ifaces), tuple(pairs))


def load_topology(path) -> TopologySpec:
    return parse_topology(Path(path).read_text())


def save_topology(spec: TopologySpec, path) -> None:
    Path(path).write_text(spec.to_json())


class _IfaceAllocator:
    """Hands out the lowest unused iface index per rank, or fails."""

    def __init__(self, num_ranks: int, ifaces_per_rank: int, what: str):
        self.next_free = [0] * num_ranks
        self.limit = ifaces_per_rank
        self.what = what

    def take(self, rank: int) -> int:
        iface = self.next_free[rank]
        if iface >= self.limit:
            raise TopologyError(
                f"{self.what}: rank {rank} needs more than "
                f"{self.limit} ifaces for its connections"
            )
        self.next_free[rank] = iface + 1
        return iface


def make_bus(num_ranks: int, ifaces_per_rank: int = 4) -> TopologySpec:
    """A linear bus: rank i wired to rank i+1, no wraparound."""
    alloc = _IfaceAllocator(num_ranks, ifaces_per_rank, f"bus({num_ranks})")
    conns = []
    for r in range(num_ranks - 1):
        conns.append((Endpoint(r, alloc.take(r)), Endpoint(r + 1, alloc.take(r + 1))))
    return TopologySpec(num_ranks, ifaces_per_rank, tuple(conns))


def make_torus(rows: int, cols: int, ifaces_per_rank: int = 4) -> TopologySpec:
    """A 2D torus on rows x cols ranks, rank = row * cols + col.

    Every rank is wired to its four grid neighbours with wraparound.  A
    dimension of size 2 therefore yields doubled (parallel) cables, and a
    dimension of size 1 contributes no cables at all.
    """
    if rows < 1 or cols < 1:
        raise TopologyError("torus dimensions must be >= 1")
    n = rows * cols
    alloc = _IfaceAllocator(n, ifaces_per_rank, f"torus({rows},{cols})")
    conns = []

    def rank(r, c):
        return r * cols + c

    for r in range(rows):
        for c in range(cols):
            if cols > 1:
                east = rank(r, (c + 1) % cols)
                conns.append((Endpoint(rank(r, c), alloc.take(rank(r, c))),
                              Endpoint(east, alloc.take(east))))
            if rows > 1:
                south = rank((r + 1) % rows, c)
                conns.append((Endpoint(rank(r, c), alloc.take(rank(r, c))),
                              Endpoint(south, alloc.take(south))))
    return TopologySpec(n, ifaces_per_rank, tuple(conns))
