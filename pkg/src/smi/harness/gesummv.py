"""Two-rank GESUMMV: y = alpha*A*x + beta*B*x, split across the wire.

Rank 0 owns A and streams s = A*x elementwise over a point-to-point
channel; rank 1 owns B, computes t = B*x locally and combines
y[i] = alpha*s[i] + beta*t[i] as elements arrive.  Dot products run
left to right in double precision, the wire carries doubles, and the
reference follows the identical evaluation order, so results match to
the last bit.
"""

from __future__ import annotations

from ..config import PortDecl, RunConfig
from ..engine import Simulation
from ..errors import ConfigError
from ..packet import DataType, OpType
from ..topology import make_bus

PORT_Y = 0


def _dot(row, x):
    """Fixed-order dot product: strictly left to right."""
    acc = 0.0
    for a, b in zip(row, x):
        acc += float(a) * float(b)
    return acc


def gesummv_reference(alpha, beta, A, B, x):
    """Sequential oracle with the same evaluation order as the app."""
    n = len(x)
    y = []
    for i in range(n):
        s = _dot(A[i], x)
        t = _dot(B[i], x)
        y.append(alpha * s + beta * t)
    return y


def app_gesummv(alpha, beta, A, B, x, run: RunConfig | None = None,
                topo=None, tables=None):
    """Run the two-rank decomposition; returns (y, SimResult).

    The number of payload elements crossing the channel is counted from
    the packet log and must be exactly N.
    """
    n = len(x)
    if n == 0:
        raise ConfigError("empty input vector")
    for name, m in (("A", A), ("B", B)):
        if len(m) != n or any(len(row) != n for row in m):
            raise ConfigError(f"matrix {name} is not {n}x{n}")
    alpha = float(alpha)
    beta = float(beta)
    if topo is None:
        topo = make_bus(2)
    if topo.num_ranks < 2:
        raise ConfigError("GESUMMV needs two ranks")
    decls = [PortDecl(port=PORT_Y, kind="p2p", dtype=DataType.DOUBLE, ranks=(0, 1))]
    run = (run or RunConfig()).with_overrides(collect_packet_log=True)
    sim = Simulation(topo, decls, run, tables=tables)

    def rank0(api):
        ch = api.open_send_channel(n, DataType.DOUBLE, 1, PORT_Y)
        for i in range(n):
            yield from api.push(ch, _dot(A[i], x))

    def rank1(api):
        ch = api.open_recv_channel(n, DataType.DOUBLE, 0, PORT_Y)
        y = []
        for i in range(n):
            s = yield from api.pop(ch)
            t = _dot(B[i], x)
            y.append(alpha * s + beta * t)
        return y

    sim.add_program(0, rank0)
    sim.add_program(1, rank1)
    res = sim.run()
    y = res.returns["r1.prog0"]
    moved = sum(hd.valid_count for (_, name, hd) in res.fabric.packet_log
                if name == f"deliver:r1p{PORT_Y}" and hd.op is OpType.DATA)
    if moved != n:
        raise RuntimeError(f"channel moved {moved} elements, expected exactly {n}")
    return y, res
