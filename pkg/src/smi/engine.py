"""Simulation driver: cycle-accurate and free-running thread execution.

A simulation owns one fabric plus a set of rank programs.  Programs are
generator functions taking a RankApi; every ``yield`` parks the program
for the rest of the current cycle.  In cycle mode the driver advances a
global clock, stepping every transport unit and then every live program
once per cycle.  In concurrent mode the clock is absent: programs run on
real threads serialized by the fabric lock while a driver thread sweeps
the units, so channel semantics can be cross-checked against the timed
run.
"""

from __future__ import annotations

import csv
import threading
import time

from .channel import RankApi
from .config import RunConfig
from .errors import DeadlockError
from .routing import RoutingTables, assign_ports, generate_routes
from .topology import TopologySpec


class _Program:
    __slots__ = ("label", "rank", "fn", "gen")

    def __init__(self, label, rank, fn):
        self.label = label
        self.rank = rank
        self.fn = fn
        self.gen = None


class SimResult:
    """Outcome of one run: per-program return values and the final fabric."""

    __slots__ = ("cycles", "returns", "fabric", "apis")

    def __init__(self, cycles, returns, fabric, apis):
        self.cycles = cycles
        self.returns = returns
        self.fabric = fabric
        self.apis = apis

    def __repr__(self):
        return f"SimResult(cycles={self.cycles}, programs={sorted(self.returns)})"


class Simulation:
    """One deployment: topology, routing tables, fabric, rank programs."""

    def __init__(self, topo: TopologySpec, decls, config: RunConfig | None = None,
                 tables: RoutingTables | None = None):
        self.topo = topo
        self.decls = tuple(decls)
        self.config = config if config is not None else RunConfig()
        if tables is None:
            ports = assign_ports({d.port: list(d.ranks) for d in self.decls},
                                 topo.ifaces_per_rank)
            tables = generate_routes(topo, ports)
        self.tables = tables
        from .transport import build_fabric

        self.fabric = build_fabric(topo, tables, self.decls, self.config)
        if self.config.collect_packet_log:
            self.fabric.packet_log = []
        if self.config.trace_csv is not None:
            self.fabric.trace = []
        self._apis: dict[int, RankApi] = {}
        self._programs: list[_Program] = []

    def api(self, rank: int) -> RankApi:
        """The rank's runtime handle; all its programs share one instance."""
        if rank not in self._apis:
            self._apis[rank] = RankApi(self.fabric, rank, self.config, self.decls)
        return self._apis[rank]

    def add_program(self, rank: int, fn, label: str | None = None) -> str:
        if not 0 <= rank < self.topo.num_ranks:
            raise ValueError(f"rank {rank} outside the deployment")
        if label is None:
            label = f"r{rank}.prog{sum(1 for p in self._programs if p.rank == rank)}"
        if any(p.label == label for p in self._programs):
            raise ValueError(f"duplicate program label {label!r}")
        self._programs.append(_Program(label, rank, fn))
        return label

    def run(self) -> SimResult:
        for prog in self._programs:
            prog.gen = prog.fn(self.api(prog.rank))
        if self.config.mode == "cycle":
            result = self._run_cycle()
        else:
            result = self._run_concurrent()
        if self.config.trace_csv is not None:
            self._write_trace()
        return result

    # -- cycle-accurate mode ------------------------------------------------

    def _run_cycle(self) -> SimResult:
        fab = self.fabric
        cfg = self.config
        live = list(self._programs)
        returns = {}
        t = 0
        last_progress = fab.progress
        idle = 0
        while True:
            fab.now = t
            fab.step_units()
            if live:
                still = []
                for prog in live:
                    try:
                        next(prog.gen)
                    except StopIteration as stop:
                        returns[prog.label] = stop.value
                    else:
                        still.append(prog)
                live = still
            t += 1
            if not live and fab.drained():
                break
            if fab.progress == last_progress:
                idle += 1
                if idle > cfg.watchdog_idle_cycles:
                    self._deadlock(live, cycles=t)
            else:
                last_progress = fab.progress
                idle = 0
        return SimResult(t, returns, fab, dict(self._apis))

    # -- free-running thread mode ------------------------------------------

    def _run_concurrent(self) -> SimResult:
        fab = self.fabric
        cfg = self.config
        fab.now = None
        returns = {}
        errors = []
        stop = threading.Event()

        def run_program(prog):
            try:
                while not stop.is_set():
                    with fab.lock:
                        try:
                            next(prog.gen)
                        except StopIteration as fin:
                            returns[prog.label] = fin.value
                            return
                    time.sleep(0)
            except BaseException as exc:  # propagated to the caller below
                errors.append(exc)
                stop.set()

        def run_driver():
            while not stop.is_set():
                with fab.lock:
                    fab.step_units()
                time.sleep(0)

        threads = [
            threading.Thread(target=run_program, args=(p,), name=p.label, daemon=True)
            for p in self._programs
        ]
        driver = threading.Thread(target=run_driver, name="fabric-driver", daemon=True)
        for th in threads:
            th.start()
        driver.start()

        last_progress = fab.progress
        last_change = time.monotonic()
        try:
            while True:
                with fab.lock:
                    progress = fab.progress
                    done = all(not th.is_alive() for th in threads)
                    drained = fab.drained()
                if errors:
                    raise errors[0]
                if done and drained:
                    break
                if progress != last_progress:
                    last_progress = progress
                    last_change = time.monotonic()
                elif time.monotonic() - last_change > cfg.watchdog_idle_seconds:
                    self._deadlock([p for p, th in zip(self._programs, threads)
                                    if th.is_alive()], cycles=None)
                time.sleep(0.0005)
        finally:
            stop.set()
            driver.join(timeout=5.0)
        return SimResult(None, returns, fab, dict(self._apis))

    # -- shared plumbing ----------------------------------------------------

    def _deadlock(self, live, cycles):
        fab = self.fabric
        where = ", ".join(p.label for p in live) if live else "none (undrained fabric)"
        at = f"cycle {cycles}" if cycles is not None else "wall clock limit"
        raise DeadlockError(
            f"no progress at {at}; blocked programs: {where}",
            fab.occupancy_dump(),
        )

    def _write_trace(self) -> None:
        with open(self.config.trace_csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["cycle", "unit", "event"])
            for cycle, unit, event in self.fabric.trace:
                w.writerow(["" if cycle is None else cycle, unit, event])


def run_programs(topo, decls, programs, config=None, tables=None) -> SimResult:
    """One-shot convenience: ``programs`` is a list of (rank, fn) pairs."""
    sim = Simulation(topo, decls, config=config, tables=tables)
    for rank, fn in programs:
        sim.add_program(rank, fn)
    return sim.run()
