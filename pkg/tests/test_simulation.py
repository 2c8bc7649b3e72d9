import io
import json
import math

import numpy as np
import pytest

from thzray.config import ArraySpec, LimitsSpec, SimulationConfig
from thzray.propagation import SPEED_OF_LIGHT
from thzray.simulation import run_simulation, sweep_array, sweep_gas

from conftest import RX_POS, TX_POS
from oracles import image_method_paths


def empty_cfg(empty_scene_path, d=10.0, f=2.4, **kw):
    return SimulationConfig(
        scene_path=empty_scene_path, frequency_ghz=f,
        tx_array=ArraySpec(center=(0.0, 0.0, 0.0)),
        rx_array=ArraySpec(center=(d, 0.0, 0.0)),
        tessellation=1, workers=1, **kw)


def friis_db(f_ghz, d):
    lam = SPEED_OF_LIGHT / (f_ghz * 1e9)
    return 20 * math.log10(4 * math.pi * d / lam)


class TestRun:
    def test_empty_scene_friis_report(self, empty_scene_path):
        res = run_simulation(empty_cfg(empty_scene_path))
        assert res.report.path_count == 1
        assert res.report.path_loss_db == pytest.approx(friis_db(2.4, 10.0), abs=1e-9)
        assert res.report.rms_delay_spread_s == 0.0
        assert res.report.mean_aod_deg == pytest.approx((0.0, 0.0))

    def test_output_files_present(self, empty_scene_path):
        res = run_simulation(empty_cfg(empty_scene_path, dump_paths=True))
        assert {"channel_report.json", "pdp.csv", "capacity.csv",
                "paths.jsonl"} <= set(res.files)
        report = json.loads(res.files["channel_report.json"])
        assert report["path_count"] == 1
        assert not report["blocked"]

    def test_h_matrix_written_for_mimo(self, empty_scene_path):
        cfg = empty_cfg(empty_scene_path).model_copy(update={
            "rx_array": ArraySpec(center=(10.0, 0.0, 0.0), counts=(2, 1))})
        res = run_simulation(cfg)
        assert "h_matrix.csv" in res.files
        lines = res.files["h_matrix.csv"].strip().splitlines()
        assert lines[0] == "rx,tx0_re,tx0_im"
        assert len(lines) == 3

    def test_free_space_pairs_match_friis(self, empty_scene_path):
        # 2x2 far-apart arrays: every entry of H obeys the distance law
        cfg = SimulationConfig(
            scene_path=empty_scene_path, frequency_ghz=10.0,
            tx_array=ArraySpec(center=(0.0, 0.0, 0.0), counts=(2, 1), spacing_m=0.3),
            rx_array=ArraySpec(center=(40.0, 0.0, 0.0), counts=(2, 1), spacing_m=0.3),
            tessellation=1, workers=1)
        res = run_simulation(cfg)
        from thzray.channel import received_power

        tx_pos = [(-0.15, 0, 0), (0.15, 0, 0)]  # default ULA axis is x
        rx_pos = [(39.85, 0, 0), (40.15, 0, 0)]
        lam = SPEED_OF_LIGHT / 10e9
        reference = received_power(1.0, lam)
        for q in range(2):
            for p in range(2):
                d = math.dist(tx_pos[p], rx_pos[q])
                loss = -10 * math.log10(abs(res.matrix.entries[q, p]) ** 2 / reference)
                assert loss == pytest.approx(friis_db(10.0, d), abs=0.01)

    def test_box_room_path_count_matches_image_method(self, box_scene_path,
                                                      box_scene):
        cfg = SimulationConfig(
            scene_path=box_scene_path, frequency_ghz=2.4,
            tx_array=ArraySpec(center=TX_POS), rx_array=ArraySpec(center=RX_POS),
            limits=LimitsSpec(max_reflections=3), tessellation=32, workers=1)
        res = run_simulation(cfg)
        tri = box_scene.vertices[box_scene.tri_indices]
        guard = 1e-6 * box_scene.bounds.diagonal
        oracle = image_method_paths(tri, TX_POS, RX_POS, 3, guard)
        assert res.report.path_count == len(oracle) + 1  # + line of sight

    def test_cir_taps_match_deduped_path_count(self, box_scene_path):
        from thzray.channel import cir

        cfg = SimulationConfig(
            scene_path=box_scene_path, frequency_ghz=2.4,
            tx_array=ArraySpec(center=TX_POS), rx_array=ArraySpec(center=RX_POS),
            limits=LimitsSpec(max_reflections=3), tessellation=16, workers=1)
        res = run_simulation(cfg)
        taps = cir(res.reference_mpcs)
        assert len(taps) == res.report.path_count == len(res.records)

    def test_workers_do_not_change_output_bytes(self, box_scene_path):
        cfg = SimulationConfig(
            scene_path=box_scene_path, frequency_ghz=6.0,
            tx_array=ArraySpec(center=TX_POS, counts=(2, 1)),
            rx_array=ArraySpec(center=RX_POS, counts=(3, 1)),
            limits=LimitsSpec(max_reflections=2), tessellation=8,
            dump_paths=True)
        files = [run_simulation(cfg, workers=w).files for w in (1, 2)]
        assert files[0] == files[1]

    def test_blocked_pair_reported(self, tmp_path):
        from conftest import box_doc, quad, write_scene

        doc = box_doc(extra_surfaces=[
            quad([[3, 0, 0], [3, 7.2, 0], [3, 7.2, 3], [3, 0, 3]])])
        path = write_scene(tmp_path, doc)
        cfg = SimulationConfig(
            scene_path=path, frequency_ghz=5.0,
            tx_array=ArraySpec(center=(1.0, 3.6, 1.5)),
            rx_array=ArraySpec(center=(5.0, 3.6, 1.5)),
            limits=LimitsSpec(max_reflections=0), tessellation=1, workers=1)
        res = run_simulation(cfg)
        assert res.report.path_loss_db is None
        report = json.loads(res.files["channel_report.json"])
        assert report["blocked"] is True

    def test_config_validation_names_field(self, empty_scene_path):
        import pydantic

        with pytest.raises(pydantic.ValidationError, match="frequency"):
            SimulationConfig(
                scene_path=empty_scene_path, frequency_ghz=0.0,
                tx_array=ArraySpec(center=(0, 0, 0)),
                rx_array=ArraySpec(center=(1, 0, 0)))


def subdivided_box_doc(per_wall=30):
    """Box room with every wall split into a per_wall x per_wall quad grid."""
    w, d, h = 7.2, 7.2, 3.0
    walls = [
        ((0, 0, 0), (w, 0, 0), (0, d, 0)),
        ((0, 0, h), (w, 0, 0), (0, d, 0)),
        ((0, 0, 0), (w, 0, 0), (0, 0, h)),
        ((0, d, 0), (w, 0, 0), (0, 0, h)),
        ((0, 0, 0), (0, d, 0), (0, 0, h)),
        ((w, 0, 0), (0, d, 0), (0, 0, h)),
    ]
    surfaces = []
    for origin, u_vec, v_vec in walls:
        origin = np.asarray(origin, dtype=float)
        du = np.asarray(u_vec, dtype=float) / per_wall
        dv = np.asarray(v_vec, dtype=float) / per_wall
        for i in range(per_wall):
            for j in range(per_wall):
                p = origin + i * du + j * dv
                surfaces.append({
                    "vertices": [p.tolist(), (p + du).tolist(),
                                 (p + du + dv).tolist(), (p + dv).tolist()],
                    "material": "plaster",
                })
    from conftest import DEFAULT_MATERIALS

    return {"materials": DEFAULT_MATERIALS, "surfaces": surfaces}


@pytest.fixture(scope="module")
def big_scene_path(tmp_path_factory):
    from conftest import write_scene

    tmp = tmp_path_factory.mktemp("big")
    return write_scene(tmp, subdivided_box_doc(30))  # 10,800 triangles


class TestLargeScene:

    def test_pipeline_and_determinism(self, big_scene_path):
        cfg = SimulationConfig(
            scene_path=big_scene_path, frequency_ghz=28.0,
            tx_array=ArraySpec(center=TX_POS, counts=(4, 1)),
            rx_array=ArraySpec(center=RX_POS, counts=(2, 1)),
            limits=LimitsSpec(max_reflections=1), tessellation=4)
        runs = [run_simulation(cfg, workers=w) for w in (1, 2)]
        assert runs[0].files == runs[1].files
        assert runs[0].report.path_count >= 7  # LoS + one bounce per facet

    def test_eight_worker_scaling(self, big_scene_path):
        import os
        import time

        n_cpu = os.cpu_count() or 1
        if n_cpu < 4:
            pytest.skip(f"needs >= 4 logical CPUs for a meaningful 8-worker "
                        f"speedup measurement (found {n_cpu})")
        cfg = SimulationConfig(
            scene_path=big_scene_path, frequency_ghz=28.0,
            tx_array=ArraySpec(center=TX_POS, counts=(64, 1)),
            rx_array=ArraySpec(center=RX_POS, counts=(8, 1)),
            limits=LimitsSpec(max_reflections=2), tessellation=12)
        start = time.perf_counter()
        run_simulation(cfg, workers=1)
        t1 = time.perf_counter() - start
        start = time.perf_counter()
        run_simulation(cfg, workers=8)
        t8 = time.perf_counter() - start
        assert t8 <= 0.4 * t1, f"8-worker time {t8:.1f}s vs single {t1:.1f}s"


class TestGasSweep:
    def _cfg(self, empty_scene_path, **sweep):
        cfg = empty_cfg(empty_scene_path)
        return cfg.model_copy(update={"gas_sweep": cfg.gas_sweep.model_copy(update=sweep)})

    def test_full_band_curves(self, empty_scene_path):
        cfg = self._cfg(empty_scene_path, f_start_ghz=1.0, f_stop_ghz=1000.0,
                        f_step_ghz=1.0)
        csv_text = sweep_gas(cfg)["gas_sweep.csv"]
        rows = [line.split(",") for line in csv_text.strip().splitlines()[1:]]
        assert len(rows) == 2 * 1000
        by_density = {}
        for f, dens, gamma, phi in rows:
            by_density.setdefault(float(dens), []).append(float(gamma))
        assert np.all(np.asarray(by_density[8.0]) >= np.asarray(by_density[0.0]))

    def test_step_equals_width_gives_endpoints(self, empty_scene_path):
        cfg = self._cfg(empty_scene_path, f_start_ghz=10.0, f_stop_ghz=20.0,
                        f_step_ghz=10.0, water_vapor_densities_g_m3=[0.0])
        rows = sweep_gas(cfg)["gas_sweep.csv"].strip().splitlines()[1:]
        assert len(rows) == 2
        assert [r.split(",")[0] for r in rows] == ["10", "20"]

    def test_roundtrip_re_read(self, empty_scene_path):
        cfg = self._cfg(empty_scene_path, f_start_ghz=50.0, f_stop_ghz=70.0,
                        f_step_ghz=2.5, water_vapor_densities_g_m3=[8.0])
        text = sweep_gas(cfg)["gas_sweep.csv"]
        parsed = [[float(x) for x in line.split(",")]
                  for line in text.strip().splitlines()[1:]]
        again = "\n".join(
            ",".join(format(v, ".9g") for v in row) for row in parsed) + "\n"
        assert again == "".join(text.splitlines(keepends=True)[1:])

    def test_range_validation(self, empty_scene_path):
        from thzray.errors import FrequencyRangeError

        cfg = self._cfg(empty_scene_path, f_start_ghz=0.2, f_stop_ghz=10.0)
        with pytest.raises(FrequencyRangeError):
            sweep_gas(cfg)


class TestArraySweep:
    def test_siso_size_gives_log2(self, empty_scene_path):
        cfg = empty_cfg(empty_scene_path, snr_db=[10.0])
        cfg = cfg.model_copy(update={
            "array_sweep": cfg.array_sweep.model_copy(update={"sizes": [1]})})
        files = sweep_array(cfg, workers=1)
        rows = files["capacity_sweep.csv"].strip().splitlines()[1:]
        n, snr_db, cap = rows[0].split(",")
        assert (int(n), float(snr_db)) == (1, 10.0)
        assert float(cap) == pytest.approx(math.log2(1 + 10.0), rel=1e-9)
        assert "rx_port_power.csv" in files

    def test_capacity_grows_with_size(self, box_scene_path):
        cfg = SimulationConfig(
            scene_path=box_scene_path, frequency_ghz=28.0,
            tx_array=ArraySpec(center=TX_POS), rx_array=ArraySpec(center=RX_POS),
            limits=LimitsSpec(max_reflections=1), tessellation=8,
            snr_db=[10.0], workers=2)
        cfg = cfg.model_copy(update={
            "array_sweep": cfg.array_sweep.model_copy(update={"sizes": [2, 8]})})
        rows = sweep_array(cfg)["capacity_sweep.csv"].strip().splitlines()[1:]
        caps = {int(r.split(",")[0]): float(r.split(",")[2]) for r in rows}
        assert caps[8] > caps[2]
