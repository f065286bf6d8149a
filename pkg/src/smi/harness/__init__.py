"""Benchmark and application harness over the simulated fabric."""

from .bench import (
    BANDWIDTH_HEADER,
    COLLECTIVE_HEADER,
    INJECTION_HEADER,
    LATENCY_HEADER,
    BandwidthRow,
    BenchConfig,
    CollectiveRow,
    InjectionRow,
    LatencyRow,
    bench_bandwidth,
    bench_collectives,
    bench_injection,
    bench_latency,
    latency_fit,
    write_csv,
)
from .gesummv import app_gesummv, gesummv_reference
from .stencil import (
    StencilConfig,
    app_stencil,
    hiding_check_config,
    stencil_hiding_check,
    stencil_ports,
    stencil_reference,
    stencil_run_config,
)

__all__ = [
    "BANDWIDTH_HEADER",
    "COLLECTIVE_HEADER",
    "INJECTION_HEADER",
    "LATENCY_HEADER",
    "BandwidthRow",
    "BenchConfig",
    "CollectiveRow",
    "InjectionRow",
    "LatencyRow",
    "StencilConfig",
    "app_gesummv",
    "app_stencil",
    "bench_bandwidth",
    "bench_collectives",
    "bench_injection",
    "bench_latency",
    "gesummv_reference",
    "hiding_check_config",
    "latency_fit",
    "stencil_hiding_check",
    "stencil_ports",
    "stencil_reference",
    "stencil_run_config",
    "write_csv",
]
