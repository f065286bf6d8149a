"""Collectives on a torus: broadcast to all, reduce back to a root.

Every member calls the same helper; the root supplies (or receives) the
full vector.  Float folding happens in wire precision with a fixed
rank-major order, so the result is reproducible bit for bit.
"""

from smi import DataType, PortDecl, RunConfig, Simulation, bcast, reduce, make_torus


def main():
    n, count = 8, 12
    topo = make_torus(2, 4)
    decls = [
        PortDecl(port=1, kind="bcast", dtype=DataType.FLOAT, ranks=tuple(range(n))),
        PortDecl(port=2, kind="reduce", dtype=DataType.FLOAT,
                 ranks=tuple(range(n)), op="ADD"),
    ]
    sim = Simulation(topo, decls, RunConfig())
    coeffs = [round(0.5 + 0.25 * i, 2) for i in range(count)]
    outs = {}

    def member(api):
        got = yield from bcast(api, 1, DataType.FLOAT, 0, count,
                               coeffs if api.rank == 0 else None)
        scaled = [v * (api.rank + 1) for v in got]
        total = yield from reduce(api, 2, DataType.FLOAT, 0, count, scaled)
        if total is not None:
            outs["sum"] = total

    for r in range(n):
        sim.add_program(r, member)
    res = sim.run()

    # Every rank scaled the broadcast by (rank+1); the reduction root
    # therefore holds coeffs * (1 + 2 + ... + 8).
    scale = sum(range(1, n + 1))
    print(f"broadcast {count} floats to {n} ranks, reduce their scaled copies:")
    print(f"  cycles: {res.cycles}")
    print(f"  root sum head: {[round(v, 2) for v in outs['sum'][:4]]}")
    print(f"  expected head: {[round(c * scale, 2) for c in coeffs[:4]]}")


if __name__ == "__main__":
    main()
