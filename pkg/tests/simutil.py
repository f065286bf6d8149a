"""Shared helpers for driving simulations inside tests."""

from smi import DataType, PortDecl, RunConfig, Simulation

import reference


def dtype_values(dtype: DataType, n, seed=0):
    """Wire-exact sample values for a dtype (push == pop literally)."""
    return reference.sample_elems(dtype.name, n, seed)


def p2p_exchange(topo, src, dst, count, dtype, run=None, port=0, data=None,
                 recv_count=None, tables=None):
    """One send/recv pair; returns (received list, SimResult)."""
    run = run or RunConfig()
    decls = [PortDecl(port=port, kind="p2p", dtype=dtype, ranks=(src, dst))]
    sim = Simulation(topo, decls, run, tables=tables)
    if data is None:
        data = dtype_values(dtype, count)
    rc = count if recv_count is None else recv_count

    def sender(api):
        ch = api.open_send_channel(count, dtype, dst, port)
        yield from api.push_all(ch, data)

    def receiver(api):
        ch = api.open_recv_channel(rc, dtype, src, port)
        return (yield from api.pop_all(ch))

    sim.add_program(src, sender, label="tx")
    sim.add_program(dst, receiver, label="rx")
    res = sim.run()
    return res.returns["rx"], res


def run_collective(topo, kind, comm_ranks, root, count, dtype, op=None,
                   vals=None, run=None, port=3, tables=None):
    """Every member runs the one-shot helper; returns (outs dict, SimResult).

    ``root`` is in communicator coordinates; ``vals`` maps comm rank to
    that member's input (root's full vector for bcast/scatter).
    """
    from smi import collectives as coll

    run = run or RunConfig()
    decls = [PortDecl(port=port, kind=kind, dtype=dtype,
                      ranks=tuple(comm_ranks), op=op)]
    sim = Simulation(topo, decls, run, tables=tables)
    outs = {}

    def member(api, cr):
        comm = api.comm(comm_ranks)
        if kind == "bcast":
            v = vals if cr == root else None
            outs[cr] = yield from coll.bcast(api, port, dtype, root, count, v, comm)
        elif kind == "scatter":
            v = vals if cr == root else None
            outs[cr] = yield from coll.scatter(api, port, dtype, root, count, v, comm)
        elif kind == "gather":
            outs[cr] = yield from coll.gather(api, port, dtype, root, count,
                                              vals[cr], comm)
        else:
            outs[cr] = yield from coll.reduce(api, port, dtype, root, count,
                                              vals[cr], comm)

    for cr, world in enumerate(comm_ranks):
        sim.add_program(world, lambda api, cr=cr: member(api, cr))
    res = sim.run()
    return outs, res
