"""Run configuration and port declaration files.

Both are JSON.  A port declaration names every application endpoint the
fabric must wire up; reduce ports also carry their operator:

    {"ports": [{"port": 0, "type": "p2p", "dtype": "INT", "ranks": [0, 1]},
               {"port": 5, "type": "reduce", "dtype": "FLOAT", "op": "ADD",
                "ranks": [0, 1, 2, 3]}]}

The run configuration selects the execution mode and the tunables that a
deployment would fix at build time:

    {"mode": "cycle", "R": 8, "fifo_capacity": 16, "link_latency": 1,
     "k_default_packets": 2, "k_elements": {"1": 32}, "reduce_tile": 16,
     "topology": "topo.json", "tables": "tables/", "ports": "ports.json"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .packet import DataType

PORT_KINDS = ("p2p", "bcast", "reduce", "scatter", "gather")
REDUCE_OPS = ("ADD", "MAX", "MIN")


@dataclass(frozen=True)
class PortDecl:
    port: int
    kind: str
    dtype: DataType
    ranks: tuple[int, ...]
    op: str | None = None

    def __post_init__(self):
        if not 0 <= self.port <= 255:
            raise ConfigError(f"port {self.port} outside [0, 255]")
        if self.kind not in PORT_KINDS:
            raise ConfigError(f"port {self.port}: unknown type {self.kind!r}")
        if len(self.ranks) != len(set(self.ranks)):
            raise ConfigError(f"port {self.port}: duplicate ranks")
        if len(self.ranks) < 1:
            raise ConfigError(f"port {self.port} needs at least 1 endpoint rank")
        if self.kind == "reduce":
            if self.op not in REDUCE_OPS:
                raise ConfigError(f"reduce port {self.port} needs op in {REDUCE_OPS}")
        elif self.op is not None:
            raise ConfigError(f"port {self.port}: op only applies to reduce ports")


def parse_ports(text: str) -> tuple[PortDecl, ...]:
    try:
        doc = json.loads(text)
        items = doc["ports"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid port declaration file: {exc}") from None
    decls = []
    for item in items:
        try:
            decls.append(
                PortDecl(
                    int(item["port"]),
                    str(item["type"]),
                    DataType.parse(item["dtype"]),
                    tuple(int(r) for r in item["ranks"]),
                    str(item["op"]) if "op" in item else None,
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad port entry {item!r}: {exc}") from None
    ports = [d.port for d in decls]
    if len(ports) != len(set(ports)):
        raise ConfigError("duplicate port numbers in declaration file")
    return tuple(sorted(decls, key=lambda d: d.port))


def load_ports(path) -> tuple[PortDecl, ...]:
    return parse_ports(Path(path).read_text())


def dump_ports(decls) -> str:
    items = []
    for d in sorted(decls, key=lambda d: d.port):
        item = {"port": d.port, "type": d.kind, "dtype": d.dtype.name, "ranks": list(d.ranks)}
        if d.op is not None:
            item["op"] = d.op
        items.append(item)
    return json.dumps({"ports": items}, indent=2) + "\n"


@dataclass(frozen=True)
class RunConfig:
    mode: str = "cycle"
    R: int = 8
    fifo_capacity: int = 16
    link_latency: int = 1
    k_default_packets: int = 2
    k_elements: dict[int, int] = field(default_factory=dict)
    reduce_tile: int = 16
    watchdog_idle_cycles: int = 100_000
    watchdog_idle_seconds: float = 5.0
    collect_packet_log: bool = False
    trace_csv: str | None = None
    topology: str | None = None
    tables: str | None = None
    ports: str | None = None

    def __post_init__(self):
        if self.mode not in ("cycle", "concurrent"):
            raise ConfigError(f"mode must be 'cycle' or 'concurrent', got {self.mode!r}")
        if self.R < 1:
            raise ConfigError("R must be >= 1")
        if self.fifo_capacity < 1:
            raise ConfigError("fifo_capacity must be >= 1")
        if self.link_latency < 1:
            raise ConfigError("link_latency must be >= 1")
        if self.k_default_packets < 1:
            raise ConfigError("k_default_packets must be >= 1")
        if self.reduce_tile < 1:
            raise ConfigError("reduce_tile must be >= 1")

    def k_for(self, port: int, dtype: DataType) -> int:
        """Asynchronicity degree (elements) for a port: override or default."""
        k = self.k_elements.get(port)
        if k is None:
            k = self.k_default_packets * dtype.max_elems
        if k < 1:
            raise ConfigError(f"k for port {port} must be >= 1")
        return k

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)


def parse_run_config(text: str, base_dir: Path | None = None) -> RunConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid run configuration: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("run configuration must be a JSON object")
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown run configuration keys: {sorted(unknown)}")
    if "k_elements" in doc:
        try:
            doc["k_elements"] = {int(p): int(k) for p, k in doc["k_elements"].items()}
        except (ValueError, AttributeError) as exc:
            raise ConfigError(f"bad k_elements map: {exc}") from None
    cfg = RunConfig(**doc)
    if base_dir is not None:
        resolved = {}
        for name in ("topology", "tables", "ports", "trace_csv"):
            value = getattr(cfg, name)
            if value is not None and not Path(value).is_absolute():
                resolved[name] = str(base_dir / value)
        if resolved:
            cfg = replace(cfg, **resolved)
    return cfg


def load_run_config(path) -> RunConfig:
    path = Path(path)
    return parse_run_config(path.read_text(), base_dir=path.parent)
