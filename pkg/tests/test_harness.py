"""Benchmark and application harness: exact figures, oracle equivalence."""

import csv
from fractions import Fraction

import numpy as np
import pytest

from smi import ConfigError, DataType, RunConfig, Simulation, make_bus, make_torus
from smi.harness import (
    BANDWIDTH_HEADER,
    BenchConfig,
    LatencyRow,
    StencilConfig,
    app_gesummv,
    app_stencil,
    bench_bandwidth,
    bench_collectives,
    bench_injection,
    bench_latency,
    gesummv_reference,
    hiding_check_config,
    latency_fit,
    stencil_hiding_check,
    stencil_ports,
    stencil_reference,
    stencil_run_config,
    write_csv,
)

import reference


class TestBandwidth:
    def test_full_packet_efficiency_is_seven_eighths(self):
        (row,) = bench_bandwidth(sizes=(70,), hops=(1,))
        assert row.efficiency == Fraction(7, 8)
        assert row.packets == 10  # 70 floats, 7 per packet

    def test_single_element_efficiency_is_one_eighth(self):
        (row,) = bench_bandwidth(sizes=(1,), hops=(1,))
        assert row.efficiency == Fraction(1, 8)
        assert row.packets == 1

    def test_throughput_is_hop_independent(self):
        rows = bench_bandwidth(sizes=(2100,), hops=(1, 4, 7))
        rates = {r.bytes_per_cycle for r in rows}
        assert len(rates) == 1

    def test_steady_rate_matches_polling_period(self):
        # R packets per R+4 cycle period, 28 payload bytes per packet.
        (row,) = bench_bandwidth(sizes=(2100,), hops=(4,))
        R = RunConfig().R
        per_packet = reference.injection_cycles_per_packet(R)
        assert row.bytes_per_cycle == 28 / per_packet
        assert row.bytes_per_cycle == Fraction(28 * R, R + 4)

    def test_window_is_a_whole_number_of_periods(self):
        (row,) = bench_bandwidth(sizes=(2100,), hops=(7,))
        assert row.window_packets < row.packets
        assert row.window_packets == 5 * RunConfig().R  # 5 periods, R each

    def test_rejects_out_of_range_hops(self):
        with pytest.raises(ConfigError, match="outside"):
            bench_bandwidth(sizes=(7,), hops=(8,))
        with pytest.raises(ConfigError, match="at least 8"):
            bench_bandwidth(sizes=(7,), hops=(1,), num_ranks=4)


@pytest.fixture(scope="module")
def latency_rows():
    return bench_latency()


@pytest.fixture(scope="module")
def collective_rows():
    return bench_collectives(sizes=(10, 100))


class TestLatency:
    @pytest.fixture
    def rows(self, latency_rows):
        return latency_rows

    def test_loopback_latency(self, rows):
        assert rows[0].hops == 0
        assert rows[0].latency_cycles == 3

    def test_latency_by_hop_count(self, rows):
        for row in rows[1:]:
            assert row.latency_cycles == 7 * row.hops - 3
            assert row.round_cycles == 2 * row.latency_cycles

    def test_affine_fit_has_zero_residuals(self, rows):
        slope, intercept, residuals = latency_fit(rows)
        assert slope == 7
        assert intercept == -3
        assert set(residuals) == set(range(1, 8))
        assert all(r == 0 for r in residuals.values())

    def test_fit_excludes_the_loopback_point(self, rows):
        # h=0 is off the affine law; the fit must not be polluted by it.
        _, _, residuals = latency_fit(rows)
        assert 0 not in residuals


class TestInjection:
    def test_exact_cycles_per_packet(self):
        rows = bench_injection()
        assert [r.R for r in rows] == [1, 4, 8, 16]
        for row in rows:
            assert row.cycles_per_packet == reference.injection_cycles_per_packet(row.R)
            assert row.cycles_per_packet == Fraction(row.R + 4, row.R)
            assert row.window_accepts == 6 * row.R

    def test_rate_improves_with_budget(self):
        rows = bench_injection(R_values=(1, 2, 8))
        rates = [r.cycles_per_packet for r in rows]
        assert rates == sorted(rates, reverse=True)
        assert rates[0] == 5


class TestCollectivesBench:
    @pytest.fixture
    def rows(self, collective_rows):
        return collective_rows

    def test_row_inventory(self, rows):
        combos = {(r.kind, r.topology, r.comm_size, r.size) for r in rows}
        assert len(combos) == len(rows) == 16
        assert {r.kind for r in rows} == {"BCAST", "REDUCE"}
        assert all(r.cycles > 0 for r in rows)

    def test_reduce_prefers_the_torus_at_scale(self, rows):
        by_key = {(r.kind, r.topology, r.comm_size, r.size): r.cycles for r in rows}
        assert by_key["REDUCE", "bus", 8, 100] > by_key["REDUCE", "torus", 8, 100]

    def test_single_cell_smoke(self):
        rows = bench_collectives(kinds=("bcast",), comm_sizes=(4,), sizes=(12,))
        assert [r.topology for r in rows] == ["bus", "torus"]


class TestStencilConfig:
    def test_indivisible_grid_rejected(self):
        with pytest.raises(ConfigError, match="does not divide"):
            StencilConfig(nx=10, ny=10, rx=3, ry=1)

    @pytest.mark.parametrize("kw", [
        dict(nx=0, ny=4),
        dict(nx=4, ny=4, hx=-1),
        dict(nx=4, ny=4, rx=0),
        dict(nx=4, ny=4, timesteps=-1),
        dict(nx=4, ny=4, b_mem=Fraction(0)),
    ])
    def test_bad_geometry_rejected(self, kw):
        with pytest.raises(ConfigError):
            StencilConfig(**kw)

    def test_block_shape(self):
        cfg = StencilConfig(nx=12, ny=8, rx=3, ry=2)
        assert (cfg.num_ranks, cfg.block_nx, cfg.block_ny) == (6, 4, 4)

    def test_ports_cover_every_direction(self):
        decls = stencil_ports(StencilConfig(nx=8, ny=8, rx=2, ry=2))
        assert [d.port for d in decls] == [1, 2, 3, 4, 5]
        assert all(d.kind == "p2p" and d.dtype is DataType.FLOAT for d in decls)
        assert all(d.ranks == (0, 1, 2, 3) for d in decls)

    def test_run_config_sizes_ports_to_the_halo_lines(self):
        cfg = StencilConfig(nx=12, ny=8, rx=3, ry=2)
        run = stencil_run_config(cfg, RunConfig(k_elements={1: 50}))
        f = DataType.FLOAT
        assert run.k_for(1, f) == 50  # explicit setting wins
        assert run.k_for(2, f) == cfg.block_nx
        assert run.k_for(3, f) == cfg.block_ny
        assert run.k_for(4, f) == cfg.block_ny
        assert run.k_for(5, f) == 14


class TestHiding:
    def test_large_grid_hides_unit_halo(self):
        hidden, lhs, rhs = stencil_hiding_check(4096, 4096, 1, 1, 1, 1)
        assert hidden
        assert lhs == Fraction(4094 * 4094)
        assert rhs == Fraction(32768)

    def test_tiny_grid_cannot_hide(self):
        hidden, lhs, rhs = stencil_hiding_check(4, 4, 1, 1, 1, 1)
        assert not hidden
        assert (lhs, rhs) == (4, 32)

    def test_zero_halo_always_hides(self):
        hidden, lhs, rhs = stencil_hiding_check(16, 16, 0, 0, 1, 1)
        assert hidden
        assert rhs == 0

    def test_matches_the_reference_over_a_sweep(self):
        for nx in (4, 32, 100):
            for hx in (0, 1, 3):
                for b_comm in (Fraction(1), Fraction(1, 4), Fraction(3)):
                    got = stencil_hiding_check(nx, nx, hx, hx, 1, b_comm)
                    assert got == reference.hiding(nx, nx, hx, hx, 1, b_comm)

    def test_config_wrapper(self):
        cfg = StencilConfig(nx=64, ny=64, b_mem=Fraction(2), b_comm=Fraction(1, 2))
        assert hiding_check_config(cfg) == stencil_hiding_check(
            64, 64, 1, 1, Fraction(2), Fraction(1, 2))

    def test_bad_bandwidths_rejected(self):
        with pytest.raises(ConfigError):
            stencil_hiding_check(8, 8, 1, 1, 0, 1)


class TestStencilApp:
    def test_matches_reference_bit_for_bit(self):
        cfg = StencilConfig(nx=8, ny=8, rx=2, ry=2, timesteps=3)
        final, res = app_stencil(cfg)
        rng = np.random.default_rng(7)
        grid = rng.uniform(-1.0, 1.0, size=(8, 8)).astype(np.float32)
        assert np.array_equal(final, stencil_reference(grid, 3))
        assert np.array_equal(final, reference.stencil_run(grid, 3))
        assert res.cycles > 0

    def test_single_rank_decomposition(self):
        cfg = StencilConfig(nx=6, ny=6, timesteps=2)
        final, _ = app_stencil(cfg, seed=11)
        rng = np.random.default_rng(11)
        grid = rng.uniform(-1.0, 1.0, size=(6, 6)).astype(np.float32)
        assert np.array_equal(final, stencil_reference(grid, 2))

    def test_zero_timesteps_returns_the_input(self):
        grid = np.arange(16, dtype=np.float32).reshape(4, 4)
        cfg = StencilConfig(nx=4, ny=4, rx=2, ry=2, timesteps=0)
        final, _ = app_stencil(cfg, grid=grid)
        assert np.array_equal(final, grid)

    def test_result_is_topology_independent(self):
        grid = np.linspace(-2.0, 2.0, 64, dtype=np.float32).reshape(8, 8)
        cfg = StencilConfig(nx=8, ny=8, rx=2, ry=2, timesteps=4)
        on_torus, _ = app_stencil(cfg, grid=grid)
        on_bus, _ = app_stencil(cfg, grid=grid, topo=make_bus(4))
        assert np.array_equal(on_torus, on_bus)

    def test_one_program_object_for_all_ranks(self, monkeypatch):
        added = []
        original = Simulation.add_program

        def spy(self, rank, fn, label=None):
            added.append(fn)
            return original(self, rank, fn, label)

        monkeypatch.setattr(Simulation, "add_program", spy)
        cfg = StencilConfig(nx=4, ny=4, rx=2, ry=2, timesteps=1)
        app_stencil(cfg)
        assert len(added) == 4
        assert len(set(added)) == 1

    def test_geometry_validation(self):
        cfg = StencilConfig(nx=4, ny=4, rx=2, ry=2)
        with pytest.raises(ConfigError, match="shape"):
            app_stencil(cfg, grid=np.zeros((3, 4), dtype=np.float32))
        with pytest.raises(ConfigError, match="ranks"):
            app_stencil(cfg, topo=make_bus(2))
        with pytest.raises(ConfigError, match="hx = hy = 1"):
            app_stencil(StencilConfig(nx=4, ny=4, hx=2))


class TestGesummv:
    def test_identity_matrices(self):
        n = 8
        eye = [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]
        x = [float(i) - 3.5 for i in range(n)]
        y, _ = app_gesummv(1.0, 0.0, eye, eye, x)
        assert y == x

    def test_matches_both_references_exactly(self):
        n = 16
        rng = np.random.default_rng(5)
        A = rng.uniform(-1, 1, (n, n)).tolist()
        B = rng.uniform(-1, 1, (n, n)).tolist()
        x = rng.uniform(-1, 1, n).tolist()
        y, _ = app_gesummv(1.5, -0.25, A, B, x)
        assert y == gesummv_reference(1.5, -0.25, A, B, x)
        assert y == reference.gesummv(1.5, -0.25, A, B, x)

    def test_channel_moves_exactly_n_elements(self):
        n = 6
        rng = np.random.default_rng(9)
        A = rng.uniform(-1, 1, (n, n)).tolist()
        B = rng.uniform(-1, 1, (n, n)).tolist()
        x = rng.uniform(-1, 1, n).tolist()
        _, res = app_gesummv(2.0, 3.0, A, B, x)
        from smi import OpType
        moved = sum(hd.valid_count for (_, name, hd) in res.fabric.packet_log
                    if name == "deliver:r1p0" and hd.op is OpType.DATA)
        assert moved == n

    def test_concurrent_mode_is_bit_identical(self):
        n = 5
        rng = np.random.default_rng(3)
        A = rng.uniform(-1, 1, (n, n)).tolist()
        B = rng.uniform(-1, 1, (n, n)).tolist()
        x = rng.uniform(-1, 1, n).tolist()
        y_cycle, _ = app_gesummv(0.5, 0.5, A, B, x)
        y_thread, _ = app_gesummv(0.5, 0.5, A, B, x,
                                  run=RunConfig(mode="concurrent"))
        assert y_cycle == y_thread

    def test_input_validation(self):
        with pytest.raises(ConfigError, match="empty"):
            app_gesummv(1.0, 1.0, [], [], [])
        with pytest.raises(ConfigError, match="not 2x2"):
            app_gesummv(1.0, 1.0, [[1.0]], [[1.0, 0.0], [0.0, 1.0]], [1.0, 2.0])
        with pytest.raises(ConfigError, match="two ranks"):
            app_gesummv(1.0, 1.0, [[1.0]], [[1.0]], [1.0], topo=make_bus(1))

    def test_runs_over_a_longer_route(self):
        n = 4
        A = [[float(i == j) for j in range(n)] for i in range(n)]
        x = [1.0, -2.0, 3.0, -4.0]
        y, _ = app_gesummv(2.0, 1.0, A, A, x, topo=make_bus(5))
        assert y == [3.0 * v for v in x]


class TestCsvOutput:
    def test_integral_cells_stay_integers(self):
        row = LatencyRow(1, Fraction(8, 2), 8)
        cells = row.csv()
        assert cells == [1, 4]
        assert all(isinstance(c, int) for c in cells)

    def test_fractional_cells_become_floats(self, tmp_path):
        rows = bench_bandwidth(sizes=(70,), hops=(1,))
        path = tmp_path / "bw.csv"
        write_csv(path, BANDWIDTH_HEADER, [r.csv() for r in rows])
        got = list(csv.reader(path.open()))
        assert got[0] == BANDWIDTH_HEADER
        assert got[1][3] == "0.875"

    def test_reruns_are_byte_identical(self, tmp_path):
        paths = []
        for name in ("a.csv", "b.csv"):
            rows = bench_latency(hops=(0, 1, 2), rounds=8)
            p = tmp_path / name
            write_csv(p, ["hops", "cycles"], [r.csv() for r in rows])
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_bench_config_validation(self):
        with pytest.raises(ConfigError, match="positive"):
            BenchConfig("bandwidth", sizes=(0,))
        with pytest.raises(ConfigError, match="repetitions"):
            BenchConfig("bandwidth", repetitions=0)
        cfg = BenchConfig("latency", sizes=(1, 2), repetitions=3)
        assert cfg.benchmark == "latency"
