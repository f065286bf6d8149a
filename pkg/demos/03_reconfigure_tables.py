"""Re-deploy the same program on a new network by swapping table files.

Programs address ranks and ports only; all topology knowledge lives in
binary routing tables generated ahead of time.  Moving a deployment from
a bus to a torus regenerates the tables and changes nothing else.
"""

import tempfile
from pathlib import Path

from smi import (
    DataType,
    PortDecl,
    RunConfig,
    Simulation,
    assign_ports,
    emit_tables,
    generate_routes,
    load_tables,
    load_topology,
    make_bus,
    make_torus,
    save_topology,
)

DECLS = [PortDecl(port=0, kind="p2p", dtype=DataType.SHORT, ranks=(0, 7))]


def prepare(topo, directory):
    """What `smi routes gen` does: tables + a topology snapshot on disk."""
    ports = assign_ports({0: [0, 7]}, topo.ifaces_per_rank)
    emit_tables(generate_routes(topo, ports), directory)
    save_topology(topo, Path(directory) / "topology.json")


def run_from(directory, payload):
    topo = load_topology(Path(directory) / "topology.json")
    tables = load_tables(directory)
    sim = Simulation(topo, DECLS, RunConfig(), tables=tables)

    def sender(api):
        ch = api.open_send_channel(len(payload), DataType.SHORT, 7, 0)
        yield from api.push_all(ch, payload)

    def receiver(api):
        ch = api.open_recv_channel(len(payload), DataType.SHORT, 0, 0)
        return (yield from api.pop_all(ch))

    sim.add_program(0, sender)
    sim.add_program(7, receiver)
    res = sim.run()
    assert res.returns["r7.prog0"] == payload
    return res.cycles


def main():
    payload = [3, 1, 4, 1, 5, 9, 2, 6] * 5
    with tempfile.TemporaryDirectory() as tmp:
        for name, topo in (("bus(8)", make_bus(8)), ("torus(2,4)", make_torus(2, 4))):
            directory = Path(tmp) / name.translate(str.maketrans("(),", "__x"))
            prepare(topo, directory)
            cycles = run_from(directory, payload)
            print(f"  {name:<10} rank 0 -> 7: {cycles:>4} cycles "
                  f"(tables from {directory.name}/)")
    print("identical programs and run config; only the table files changed")


if __name__ == "__main__":
    main()
