"""Stream a message between two ranks and watch the protocol choice.

A channel is opened for a fixed element count.  When the receiver-side
buffering (the asynchronicity degree k) covers the whole message the
sender streams eagerly; otherwise it keeps at most a credit window of
packets in flight and waits for credits returned by the receiver.
"""

from smi import DataType, PortDecl, RunConfig, Simulation, make_bus


def run_once(k_elements, count=40):
    topo = make_bus(4)
    decls = [PortDecl(port=0, kind="p2p", dtype=DataType.INT, ranks=(0, 3))]
    run = RunConfig(k_elements={0: k_elements}, collect_packet_log=True)
    sim = Simulation(topo, decls, run)
    data = list(range(count))

    def sender(api):
        ch = api.open_send_channel(count, DataType.INT, 3, 0)
        yield from api.push_all(ch, data)

    def receiver(api):
        ch = api.open_recv_channel(count, DataType.INT, 0, 0)
        return (yield from api.pop_all(ch))

    sim.add_program(0, sender)
    sim.add_program(3, receiver)
    res = sim.run()
    assert res.returns["r3.prog0"] == data

    credits = sum(1 for _, name, h in res.fabric.packet_log
                  if name == "deliver:r0p0" and h.op.name == "CREDIT")
    mode = "eager (no handshake)" if credits == 0 else f"credit ({credits} grants)"
    print(f"  k={k_elements:>3}: {res.cycles:>4} cycles, protocol {mode}")


def main():
    print("40 INT elements over 3 hops, varying the asynchronicity degree k:")
    for k in (40, 14, 7):
        run_once(k)
    print("smaller k bounds receiver memory; the credit handshakes cost cycles")


if __name__ == "__main__":
    main()
