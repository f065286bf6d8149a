"""Command line front end.

Subcommands mirror the artifact flow: describe a topology, generate and
check routing tables, then run benchmarks or applications against those
tables.  Reconfiguring a deployment means regenerating tables and
pointing the same run configuration at the new directory; nothing is
recompiled.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig, load_ports, load_run_config
from .errors import SmiError
from .routing import (
    assign_ports,
    check_deadlock_free,
    emit_tables,
    generate_routes,
    load_tables,
    route_hops,
)
from .topology import load_topology, make_bus, make_torus, save_topology


def _load_run(args) -> RunConfig:
    run = load_run_config(args.config) if args.config else RunConfig()
    if getattr(args, "tables", None):
        run = run.with_overrides(tables=str(args.tables))
    return run


def _resolve_network(run: RunConfig):
    """Topology and tables named by a run config.

    A tables directory carries its own topology.json, so switching
    deployments only means switching the tables path.
    """
    topo = tables = None
    if run.tables:
        tdir = Path(run.tables)
        tables = load_tables(tdir)
        snapshot = tdir / "topology.json"
        if snapshot.exists():
            topo = load_topology(snapshot)
    if topo is None and run.topology:
        topo = load_topology(run.topology)
    return topo, tables


def cmd_topo_gen(args) -> int:
    if args.shape == "bus":
        topo = make_bus(args.ranks, args.ifaces)
    else:
        topo = make_torus(args.rows, args.cols, args.ifaces)
    save_topology(topo, args.output)
    print(f"wrote {args.output}: {topo.num_ranks} ranks, "
          f"{len(topo.connections)} connections")
    return 0


def cmd_topo_validate(args) -> int:
    topo = load_topology(args.file)
    degs = [topo.degree(r) for r in range(topo.num_ranks)]
    print(f"{args.file}: valid; {topo.num_ranks} ranks x {topo.ifaces_per_rank} ifaces, "
          f"{len(topo.connections)} connections, degree min/max {min(degs)}/{max(degs)}")
    return 0


def cmd_routes_gen(args) -> int:
    topo = load_topology(args.topology)
    decls = load_ports(args.ports)
    ports = assign_ports({d.port: list(d.ranks) for d in decls}, topo.ifaces_per_rank)
    rt = generate_routes(topo, ports)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    paths = emit_tables(rt, out)
    save_topology(topo, out / "topology.json")
    check = check_deadlock_free(topo, rt)
    if not check.acyclic:
        print(f"error: generated tables have a channel-dependency cycle: {check.cycle}",
              file=sys.stderr)
        return 1
    print(f"wrote {len(paths)} table files + topology.json to {out} "
          f"(dependency graph acyclic, {len(check.order)} channels)")
    return 0


def cmd_routes_check(args) -> int:
    tdir = Path(args.tables)
    rt = load_tables(tdir)
    snapshot = tdir / "topology.json"
    if args.topology:
        topo = load_topology(args.topology)
    elif snapshot.exists():
        topo = load_topology(snapshot)
    else:
        print("error: no topology given and none stored beside the tables",
              file=sys.stderr)
        return 2
    if (rt.num_ranks, rt.num_ifaces) != (topo.num_ranks, topo.ifaces_per_rank):
        print(f"error: tables cover {rt.num_ranks} ranks x {rt.num_ifaces} ifaces "
              f"but the topology has {topo.num_ranks} x {topo.ifaces_per_rank}",
              file=sys.stderr)
        return 1
    unreachable = []
    for src in range(topo.num_ranks):
        for dst in range(topo.num_ranks):
            try:
                route_hops(topo, rt, src, dst)
            except SmiError:
                unreachable.append((src, dst))
    check = check_deadlock_free(topo, rt)
    ok = not unreachable and check.acyclic
    print(f"reachability: {topo.num_ranks * topo.num_ranks - len(unreachable)}"
          f"/{topo.num_ranks * topo.num_ranks} pairs")
    if unreachable:
        print(f"  unreachable: {unreachable[:10]}{' ...' if len(unreachable) > 10 else ''}")
    if check.acyclic:
        print(f"dependency graph: acyclic ({len(check.order)} channels ordered)")
    else:
        print(f"dependency graph: CYCLE {check.cycle}")
    return 0 if ok else 1


def cmd_bench(args) -> int:
    from .harness import (
        BANDWIDTH_HEADER,
        COLLECTIVE_HEADER,
        INJECTION_HEADER,
        LATENCY_HEADER,
        bench_bandwidth,
        bench_collectives,
        bench_injection,
        bench_latency,
        write_csv,
    )

    run = _load_run(args)
    name = args.name
    if name == "bandwidth":
        rows, header = bench_bandwidth(run), BANDWIDTH_HEADER
    elif name == "latency":
        rows, header = bench_latency(run), LATENCY_HEADER
    elif name == "injection":
        rows, header = bench_injection(run), INJECTION_HEADER
    elif name == "collectives":
        rows, header = bench_collectives(run), COLLECTIVE_HEADER
    else:
        print(f"error: unknown benchmark {name!r}", file=sys.stderr)
        return 2
    write_csv(args.output, header, (r.csv() for r in rows))
    print(f"wrote {len(rows)} rows to {args.output}")
    return 0


def cmd_app_stencil(args) -> int:
    from .harness import StencilConfig, app_stencil

    run = _load_run(args)
    topo, tables = _resolve_network(run)
    cfg = StencilConfig(nx=args.nx, ny=args.ny, rx=args.rx, ry=args.ry,
                        timesteps=args.timesteps)
    grid, res = app_stencil(cfg, run, topo=topo, tables=tables, seed=args.seed)
    print(f"stencil {cfg.nx}x{cfg.ny} on {cfg.rx}x{cfg.ry} ranks, T={cfg.timesteps}: "
          f"verified against reference, cycles={res.cycles}")
    if args.output:
        import numpy as np

        np.save(args.output, grid)
        print(f"wrote final grid to {args.output}")
    return 0


def cmd_app_gesummv(args) -> int:
    import random

    from .harness import app_gesummv, write_csv

    run = _load_run(args)
    topo, tables = _resolve_network(run)
    rng = random.Random(args.seed)
    n = args.n
    A = [[rng.uniform(-1, 1) for _ in range(n)] for _ in range(n)]
    B = [[rng.uniform(-1, 1) for _ in range(n)] for _ in range(n)]
    x = [rng.uniform(-1, 1) for _ in range(n)]
    y, res = app_gesummv(args.alpha, args.beta, A, B, x, run, topo=topo, tables=tables)
    print(f"gesummv N={n}: exact element count verified, cycles={res.cycles}")
    if args.output:
        write_csv(args.output, ["i", "y"], ([i, v] for i, v in enumerate(y)))
        print(f"wrote result vector to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smi", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    topo = sub.add_parser("topo", help="describe and validate topologies")
    topo_sub = topo.add_subparsers(dest="subcommand", required=True)
    g = topo_sub.add_parser("gen", help="generate a topology file")
    g.add_argument("shape", choices=["bus", "torus"])
    g.add_argument("--ranks", type=int, default=8, help="bus length")
    g.add_argument("--rows", type=int, default=2)
    g.add_argument("--cols", type=int, default=4)
    g.add_argument("--ifaces", type=int, default=4)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_topo_gen)
    v = topo_sub.add_parser("validate", help="parse and sanity-check a topology file")
    v.add_argument("file")
    v.set_defaults(func=cmd_topo_validate)

    routes = sub.add_parser("routes", help="generate and check routing tables")
    routes_sub = routes.add_subparsers(dest="subcommand", required=True)
    rg = routes_sub.add_parser("gen", help="generate binary tables for a deployment")
    rg.add_argument("--topology", required=True)
    rg.add_argument("--ports", required=True, help="port declaration JSON")
    rg.add_argument("-o", "--output", required=True, help="tables directory")
    rg.set_defaults(func=cmd_routes_gen)
    rc = routes_sub.add_parser("check", help="reachability and deadlock check")
    rc.add_argument("--topology", default=None)
    rc.add_argument("--tables", required=True)
    rc.set_defaults(func=cmd_routes_check)

    bench = sub.add_parser("bench", help="run a microbenchmark, emit CSV")
    bench.add_argument("name", choices=["bandwidth", "latency", "injection", "collectives"])
    bench.add_argument("--config", default=None, help="run configuration JSON")
    bench.add_argument("--tables", default=None, help="override tables directory")
    bench.add_argument("-o", "--output", required=True)
    bench.set_defaults(func=cmd_bench)

    app = sub.add_parser("app", help="run an application")
    app_sub = app.add_subparsers(dest="subcommand", required=True)
    st = app_sub.add_parser("stencil", help="distributed 4-point stencil")
    st.add_argument("--config", default=None)
    st.add_argument("--tables", default=None)
    st.add_argument("--nx", type=int, default=16)
    st.add_argument("--ny", type=int, default=16)
    st.add_argument("--rx", type=int, default=2)
    st.add_argument("--ry", type=int, default=2)
    st.add_argument("--timesteps", type=int, default=4)
    st.add_argument("--seed", type=int, default=7)
    st.add_argument("-o", "--output", default=None, help="write final grid (.npy)")
    st.set_defaults(func=cmd_app_stencil)
    ge = app_sub.add_parser("gesummv", help="two-rank y = aAx + bBx")
    ge.add_argument("--config", default=None)
    ge.add_argument("--tables", default=None)
    ge.add_argument("--n", type=int, default=16)
    ge.add_argument("--alpha", type=float, default=1.5)
    ge.add_argument("--beta", type=float, default=-0.5)
    ge.add_argument("--seed", type=int, default=1)
    ge.add_argument("-o", "--output", default=None)
    ge.set_defaults(func=cmd_app_gesummv)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SmiError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
