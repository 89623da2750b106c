import dataclasses
import zipfile

import numpy as np
import pytest
from scipy import stats

from leakhunt.hydraulics import SolverSettings
from leakhunt.network import MeterConfig
from leakhunt.scenariodb import (
    BuildAborted,
    DatabaseFormatError,
    FingerprintMismatch,
    build_random_db,
    build_scenario_db,
    export_csv,
    file_hash,
    leak_pipes,
    load_db,
    persist_db,
    sample_events,
    solve_scenario,
)


class TestGridDatabase:
    def test_cardinality(self, dma3, dma3_sdb):
        assert len(dma3_sdb) == 30 * 10 * 10
        assert dma3_sdb.n_failed == 0
        counts = np.bincount(dma3_sdb.pipe_index)
        assert np.all(counts == 100)
        assert len(np.unique(dma3_sdb.orifice)) == 10 and len(np.unique(dma3_sdb.multiplier)) == 10

    def test_own_dma_amsi_rises(self, dma3_sdb):
        own = np.array([dma3_sdb.dma_ids.index(dma3_sdb.dma_of(i)) for i in range(len(dma3_sdb))])
        assert np.all(dma3_sdb.amsi_deltas[np.arange(len(own)), own] > 0)

    def test_outflow_positive_and_orifice_monotone(self, dma3_sdb):
        db = dma3_sdb
        assert np.all(db.leak_outflow > 0)
        for k in range(len(db.pipe_ids)):
            for m in np.unique(db.multiplier):
                rows = np.flatnonzero((db.pipe_index == k) & (db.multiplier == m))
                rows = rows[np.argsort(db.orifice[rows])]
                q = db.leak_outflow[rows]
                norm = np.linalg.norm(db.meter_deltas[rows], axis=1)
                assert np.all(np.diff(q) > 0)
                assert np.all(np.diff(norm) >= -1e-9)

    def test_smallest_outflow_location(self, dma3, dma3_sdb):
        from leakhunt.hydraulics import HydraulicModel
        from leakhunt.network import insert_midpoint_leak

        db = dma3_sdb
        i_min = int(np.argmin(db.leak_outflow))
        # highest demand gives the lowest pressures
        assert db.orifice[i_min] == db.orifice.min()
        assert db.multiplier[i_min] == db.multiplier.max()
        pressures = {}
        for pid in db.pipe_ids:
            split = insert_midpoint_leak(dma3, pid, 0.0)
            st_ = HydraulicModel(split).solve(float(db.multiplier.max()))
            pressures[pid] = st_.pressure[st_.junction_ids.index(split.leaks[pid].node)]
        assert db.pipe_of(i_min) == min(pressures, key=pressures.get)

    def test_cell_reproduces_in_isolation(self, dma3, dma3_sdb):
        db = dma3_sdb
        for i in (0, 517, 1999, 2999):
            sc = solve_scenario(dma3, db.pipe_of(i), db.orifice[i], db.multiplier[i], db.reference_multipliers)
            assert sc.leak_outflow == db.leak_outflow[i]
            assert sc.meter_deltas.tobytes() == db.meter_deltas[i].tobytes()
            assert sc.dma_amsi_deltas.tobytes() == db.amsi_deltas[i].tobytes()

    def test_tiny_orifice_barely_moves_meters(self, dma3):
        pipes = leak_pipes(dma3)[::11]
        # a thousandth of the smallest default orifice leaks a few 1e-9 m3/s
        tight = SolverSettings(head_tolerance=1e-10, flow_tolerance=1e-11)
        db = build_scenario_db(dma3, orifice_range=(5e-6, 5e-6), n_orifices=5, n_demands=2, pipes=pipes, settings=tight)
        assert np.max(np.abs(db.meter_deltas)) < 1e-6

    def test_parallel_matches_serial(self, dma3):
        pipes = leak_pipes(dma3)[:4]
        kw = dict(n_orifices=5, n_demands=2, pipes=pipes)
        a = build_scenario_db(dma3, workers=1, **kw)
        b = build_scenario_db(dma3, workers=2, **kw)
        assert a.equals(b)

    @pytest.mark.parametrize(
        "kw",
        [dict(n_orifices=4), dict(orifice_range=(0.0, 0.01)), dict(orifice_range=(0.02, 0.01)), dict(n_demands=0)],
    )
    def test_bad_grid(self, dma3, kw):
        with pytest.raises(ValueError):
            build_scenario_db(dma3, pipes=[], **kw)

    def test_too_many_failures_abort(self, dma3):
        with pytest.raises(BuildAborted):
            build_scenario_db(dma3, settings=SolverSettings(max_iterations=1), n_demands=1, pipes=leak_pipes(dma3)[:2])

    def test_no_meters(self, dma3):
        with pytest.raises(ValueError, match="meter"):
            build_scenario_db(dma3, MeterConfig())


class TestRandomDatabase:
    def test_same_seed_same_events(self, dma3):
        a = build_random_db(dma3, n_events=40, seed=5)
        b = build_random_db(dma3, n_events=40, seed=5)
        assert a.equals(b)
        c = build_random_db(dma3, n_events=40, seed=6)
        assert not np.array_equal(a.orifice, c.orifice)

    def test_prefix_stability(self, dma3):
        # event i depends only on (seed, i)
        a = build_random_db(dma3, n_events=20, seed=3)
        b = build_random_db(dma3, n_events=35, seed=3)
        for name in ("pipe_index", "orifice", "multiplier", "leak_outflow", "meter_deltas"):
            assert getattr(a, name).tobytes() == getattr(b, name)[:20].tobytes()

    def test_ranges(self, dma3_rdb):
        db = dma3_rdb
        assert np.all((db.orifice >= 0.005) & (db.orifice <= 0.02))
        assert np.all((db.multiplier >= 0.5) & (db.multiplier <= 1.5))
        assert len(db) == db.n_events == 300

    def test_pipe_frequencies_are_uniform(self, dma3):
        n = len(leak_pipes(dma3))
        pipe, d, m = sample_events(n, (0.005, 0.02), (0.5, 1.5), 10_000, seed=0)
        counts = np.bincount(pipe, minlength=n)
        assert stats.chisquare(counts).pvalue > 0.01
        assert stats.kstest(d, stats.uniform(0.005, 0.015).cdf).pvalue > 0.01
        assert stats.kstest(m, stats.uniform(0.5, 1.0).cdf).pvalue > 0.01

    def test_database_uses_sampled_events(self, dma3_rdb):
        pipe, d, m = sample_events(30, (0.005, 0.02), (0.5, 1.5), 300, seed=11)
        assert np.array_equal(pipe, dma3_rdb.pipe_index)
        assert np.array_equal(d, dma3_rdb.orifice)

    def test_empty(self, dma3):
        db = build_random_db(dma3, n_events=0)
        assert len(db) == 0

    def test_event_reproduces(self, dma3, dma3_rdb):
        db = dma3_rdb
        i = 123
        sc = solve_scenario(dma3, db.pipe_of(i), db.orifice[i], db.multiplier[i], db.reference_multipliers)
        assert sc.meter_deltas.tobytes() == db.meter_deltas[i].tobytes()


class TestPersistence:
    def test_round_trip(self, dma3, dma3_rdb, tmp_path):
        persist_db(dma3_rdb, tmp_path / "r.db")
        back = load_db(tmp_path / "r.db", dma3)
        assert back.equals(dma3_rdb)
        assert type(back) is type(dma3_rdb)
        assert back.content_hash() == dma3_rdb.content_hash()

    def test_bytes_are_deterministic(self, dma3_rdb, tmp_path):
        persist_db(dma3_rdb, tmp_path / "a.db")
        persist_db(dma3_rdb, tmp_path / "b.db")
        assert file_hash(tmp_path / "a.db") == file_hash(tmp_path / "b.db")

    def test_edited_network_is_rejected(self, dma3, dma3_rdb, tmp_path):
        persist_db(dma3_rdb, tmp_path / "r.db")
        pid = next(iter(dma3.pipes))
        edited = dataclasses.replace(dma3, pipes={**dma3.pipes, pid: dataclasses.replace(dma3.pipes[pid], length=123.0)})
        with pytest.raises(FingerprintMismatch):
            load_db(tmp_path / "r.db", edited)

    def test_other_meter_layout_is_rejected(self, dma3, dma3_rdb, tmp_path):
        persist_db(dma3_rdb, tmp_path / "r.db")
        with pytest.raises(FingerprintMismatch, match="meter"):
            load_db(tmp_path / "r.db", dma3, MeterConfig(dma3.meters.pressure_nodes[:3]))

    def test_truncated_file(self, dma3_rdb, tmp_path):
        persist_db(dma3_rdb, tmp_path / "r.db")
        data = (tmp_path / "r.db").read_bytes()
        (tmp_path / "t.db").write_bytes(data[: len(data) // 2])
        with pytest.raises(DatabaseFormatError):
            load_db(tmp_path / "t.db")

    def test_foreign_format_version(self, dma3_rdb, tmp_path):
        persist_db(dma3_rdb, tmp_path / "r.db")
        src = zipfile.ZipFile(tmp_path / "r.db")
        with zipfile.ZipFile(tmp_path / "v.db", "w") as out:
            for info in src.infolist():
                data = src.read(info)
                if info.filename == "meta.json":
                    data = data.replace(b'"format": 1', b'"format": 99')
                out.writestr(info, data)
        with pytest.raises(DatabaseFormatError, match="format"):
            load_db(tmp_path / "v.db")

    def test_csv_export(self, dma3_rdb, tmp_path):
        export_csv(dma3_rdb, tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert len(lines) == 301
        assert lines[0].split(",")[:3] == ["row", "pipe", "dma"]
