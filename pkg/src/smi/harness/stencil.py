"""Distributed 4-point stencil with halo exchange, plus the hiding check.

The grid is split into contiguous blocks over an R_x x R_y rank grid;
rank = r_x * R_y + r_y.  Every timestep each rank trades one halo line
with each existing neighbor, then updates its block as the 4-point
average of the neighboring cells (the cell itself is excluded).  At the
global domain edge the missing neighbor is replaced by the edge value
itself (replicate boundary); ranks without a neighbor in some direction
simply leave that channel unused.

Each flow direction has its own port, shared by every adjacent pair and
named for the neighbor a rank receives from:

    port 1: receive from the west neighbor  (data moving east)
    port 2: receive from the east neighbor  (data moving west)
    port 3: receive from the north neighbor (data moving south)
    port 4: receive from the south neighbor (data moving north)
    port 5: block gather to rank 0 after the last timestep

All arithmetic is float32 with a fixed evaluation order
((north + south) + west) + east, times 0.25, so a distributed run is
bit-identical to the single-rank reference regardless of the rank grid
or the network topology underneath.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ..config import PortDecl, RunConfig
from ..engine import Simulation
from ..errors import ConfigError
from ..packet import DataType
from ..topology import make_torus

PORT_FROM_WEST, PORT_FROM_EAST, PORT_FROM_NORTH, PORT_FROM_SOUTH, PORT_GATHER = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class StencilConfig:
    """Problem geometry, decomposition and modeled bandwidths."""

    nx: int
    ny: int
    hx: int = 1
    hy: int = 1
    timesteps: int = 1
    rx: int = 1
    ry: int = 1
    b_mem: Fraction = Fraction(1)
    b_comm: Fraction = Fraction(1)

    def __post_init__(self):
        if self.nx <= 0 or self.ny <= 0:
            raise ConfigError("grid dimensions must be positive")
        if self.hx < 0 or self.hy < 0:
            raise ConfigError("halo widths must be >= 0")
        if self.rx <= 0 or self.ry <= 0:
            raise ConfigError("rank grid dimensions must be positive")
        if self.nx % self.rx or self.ny % self.ry:
            raise ConfigError(
                f"{self.nx}x{self.ny} grid does not divide onto {self.rx}x{self.ry} ranks"
            )
        if self.timesteps < 0:
            raise ConfigError("timesteps must be >= 0")
        if self.b_mem <= 0 or self.b_comm <= 0:
            raise ConfigError("bandwidths must be positive")

    @property
    def num_ranks(self) -> int:
        return self.rx * self.ry

    @property
    def block_nx(self) -> int:
        return self.nx // self.rx

    @property
    def block_ny(self) -> int:
        return self.ny // self.ry


def stencil_reference(grid: np.ndarray, timesteps: int) -> np.ndarray:
    """Single-rank oracle with replicate boundaries; float32 throughout."""
    g = np.array(grid, dtype=np.float32)
    quarter = np.float32(0.25)
    for _ in range(timesteps):
        p = np.pad(g, 1, mode="edge")
        north = p[:-2, 1:-1]
        south = p[2:, 1:-1]
        west = p[1:-1, :-2]
        east = p[1:-1, 2:]
        g = ((north + south) + west + east) * quarter
    return g


def stencil_hiding_check(nx, ny, hx, hy, b_mem, b_comm):
    """Whether halo communication can hide behind interior compute.

    Compares (nx - 2 hx)(ny - 2 hy) / b_mem against
    4 (nx hy + ny hx) / b_comm with exact rational arithmetic.
    Returns (hidden, lhs, rhs).
    """
    if b_mem <= 0 or b_comm <= 0:
        raise ConfigError("bandwidths must be positive")
    if hx < 0 or hy < 0:
        raise ConfigError("halo widths must be >= 0")
    lhs = Fraction((nx - 2 * hx) * (ny - 2 * hy), 1) / Fraction(b_mem)
    rhs = 4 * Fraction(nx * hy + ny * hx, 1) / Fraction(b_comm)
    return lhs >= rhs, lhs, rhs


def hiding_check_config(cfg: StencilConfig):
    return stencil_hiding_check(cfg.nx, cfg.ny, cfg.hx, cfg.hy, cfg.b_mem, cfg.b_comm)


def stencil_ports(cfg: StencilConfig) -> list[PortDecl]:
    """Port declarations for the halo exchange and the final gather."""
    everyone = tuple(range(cfg.num_ranks))
    return [
        PortDecl(port=PORT_FROM_WEST, kind="p2p", dtype=DataType.FLOAT, ranks=everyone),
        PortDecl(port=PORT_FROM_EAST, kind="p2p", dtype=DataType.FLOAT, ranks=everyone),
        PortDecl(port=PORT_FROM_NORTH, kind="p2p", dtype=DataType.FLOAT, ranks=everyone),
        PortDecl(port=PORT_FROM_SOUTH, kind="p2p", dtype=DataType.FLOAT, ranks=everyone),
        PortDecl(port=PORT_GATHER, kind="p2p", dtype=DataType.FLOAT, ranks=everyone),
    ]


def stencil_run_config(cfg: StencilConfig, run: RunConfig | None = None) -> RunConfig:
    """Size the per-port asynchronicity so halo lines stream eagerly."""
    run = run or RunConfig()
    k = dict(run.k_elements)
    k.setdefault(PORT_FROM_WEST, cfg.block_nx)
    k.setdefault(PORT_FROM_EAST, cfg.block_nx)
    k.setdefault(PORT_FROM_NORTH, cfg.block_ny)
    k.setdefault(PORT_FROM_SOUTH, cfg.block_ny)
    k.setdefault(PORT_GATHER, 2 * DataType.FLOAT.max_elems)
    return run.with_overrides(k_elements=k)


def _stencil_rank_program(cfg: StencilConfig, blocks: dict[int, np.ndarray], out: dict):
    """One SPMD program; behavior depends only on api.rank."""
    bx, by = cfg.block_nx, cfg.block_ny
    fdt = DataType.FLOAT
    quarter = np.float32(0.25)

    def program(api):
        rank = api.rank
        r_x, r_y = divmod(rank, cfg.ry)
        g = blocks[rank].astype(np.float32, copy=True)
        north = (r_x - 1) * cfg.ry + r_y if r_x > 0 else None
        south = (r_x + 1) * cfg.ry + r_y if r_x < cfg.rx - 1 else None
        west = rank - 1 if r_y > 0 else None
        east = rank + 1 if r_y < cfg.ry - 1 else None

        for _ in range(cfg.timesteps):
            # Send first, receive second: every line fits its port's k, so
            # the sends stream eagerly and cannot block on a busy peer.
            sends = []
            if east is not None:
                sends.append((PORT_FROM_WEST, east, g[:, -1]))
            if west is not None:
                sends.append((PORT_FROM_EAST, west, g[:, 0]))
            if south is not None:
                sends.append((PORT_FROM_NORTH, south, g[-1, :]))
            if north is not None:
                sends.append((PORT_FROM_SOUTH, north, g[0, :]))
            for port, dst, line in sends:
                ch = api.open_send_channel(len(line), fdt, dst, port)
                yield from api.push_all(ch, [float(v) for v in line])

            p = np.pad(g, 1, mode="edge")
            # A halo line arriving from a neighbor overwrites the padding;
            # at the domain edge the replicated pad stays in place.
            recvs = [
                (PORT_FROM_WEST, west, lambda a, v: a.__setitem__((slice(1, -1), 0), v)),
                (PORT_FROM_EAST, east, lambda a, v: a.__setitem__((slice(1, -1), -1), v)),
                (PORT_FROM_NORTH, north, lambda a, v: a.__setitem__((0, slice(1, -1)), v)),
                (PORT_FROM_SOUTH, south, lambda a, v: a.__setitem__((-1, slice(1, -1)), v)),
            ]
            for port, src, put in recvs:
                if src is None:
                    continue
                n = bx if port in (PORT_FROM_WEST, PORT_FROM_EAST) else by
                ch = api.open_recv_channel(n, fdt, src, port)
                vals = yield from api.pop_all(ch)
                put(p, np.asarray(vals, dtype=np.float32))

            g = ((p[:-2, 1:-1] + p[2:, 1:-1]) + p[1:-1, :-2] + p[1:-1, 2:]) * quarter

        if rank == 0:
            full = np.empty((cfg.nx, cfg.ny), dtype=np.float32)
            full[:bx, :by] = g
            for src in range(1, cfg.num_ranks):
                ch = api.open_recv_channel(bx * by, fdt, src, PORT_GATHER)
                vals = yield from api.pop_all(ch)
                sx, sy = divmod(src, cfg.ry)
                full[sx * bx:(sx + 1) * bx, sy * by:(sy + 1) * by] = (
                    np.asarray(vals, dtype=np.float32).reshape(bx, by)
                )
            out["grid"] = full
        else:
            ch = api.open_send_channel(bx * by, fdt, 0, PORT_GATHER)
            yield from api.push_all(ch, [float(v) for v in g.reshape(-1)])
        return rank

    return program


def app_stencil(cfg: StencilConfig, run: RunConfig | None = None, grid=None,
                topo=None, tables=None, seed=7):
    """Run the distributed stencil; returns (final grid, SimResult).

    The gathered result at rank 0 is checked against the single-rank
    reference before returning.  ``topo``/``tables`` default to a torus
    shaped like the rank grid.
    """
    if cfg.hx != 1 or cfg.hy != 1:
        raise ConfigError("the 4-point stencil kernel uses hx = hy = 1")
    if grid is None:
        rng = np.random.default_rng(seed)
        grid = rng.uniform(-1.0, 1.0, size=(cfg.nx, cfg.ny)).astype(np.float32)
    grid = np.asarray(grid, dtype=np.float32)
    if grid.shape != (cfg.nx, cfg.ny):
        raise ConfigError(f"initial grid shape {grid.shape} != ({cfg.nx}, {cfg.ny})")
    if topo is None:
        topo = make_torus(cfg.rx, cfg.ry) if cfg.num_ranks > 1 else make_torus(1, 1)
    if topo.num_ranks != cfg.num_ranks:
        raise ConfigError(
            f"topology has {topo.num_ranks} ranks, decomposition needs {cfg.num_ranks}"
        )
    bx, by = cfg.block_nx, cfg.block_ny
    blocks = {
        r_x * cfg.ry + r_y: grid[r_x * bx:(r_x + 1) * bx, r_y * by:(r_y + 1) * by]
        for r_x in range(cfg.rx) for r_y in range(cfg.ry)
    }
    out: dict = {}
    sim = Simulation(topo, stencil_ports(cfg), stencil_run_config(cfg, run), tables=tables)
    program = _stencil_rank_program(cfg, blocks, out)
    for r in range(cfg.num_ranks):
        sim.add_program(r, program)
    res = sim.run()
    final = out["grid"]
    want = stencil_reference(grid, cfg.timesteps)
    if not np.array_equal(final, want):
        raise RuntimeError("distributed stencil diverged from the reference")
    return final, res
