"""End-to-end simulation runs and sweeps.

``run_simulation`` loads the scene, traces all paths, evaluates per-pair
fields, and renders the output files in memory (the caller decides where
to write them).  All worker parallelism lives behind the tracer and the
per-transmitter field evaluation; results are merged in canonical order,
so output bytes are identical for any worker count.

Output files use 9 significant digits for every float so that re-reading
a file reproduces the written values exactly.

Path-loss convention: the reference power is the received power a unit
launch field would deliver (``received_power(1.0)``), which makes the
line-of-sight loss in an empty scene equal the textbook free-space value.
"""

from __future__ import annotations

import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .accel import AccelStructure, build_accel
from .atmosphere import AtmosphereState, default_line_table
from .config import ArraySpec, SimulationConfig
from .geometry import Scene, load_scene
from .launch import ArrayGeometry, geodesic_directions, make_array
from .propagation import SPEED_OF_LIGHT, PolarizedField, path_field
from .tracer import PathRecord, trace


def fmt(x: float) -> str:
    return format(float(x), ".9g")


def _round9(obj):
    if isinstance(obj, float):
        return float(fmt(obj)) if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _round9(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round9(v) for v in obj]
    return obj


def render_json(payload: dict) -> str:
    return json.dumps(_round9(payload), indent=1, sort_keys=True) + "\n"


@dataclass
class SimulationResult:
    report: ch.ChannelReport
    matrix: ch.ChannelMatrix
    records: list[PathRecord]
    reference_mpcs: list[ch.MPC]
    files: dict[str, str] = field(default_factory=dict)


def build_arrays(cfg: SimulationConfig) -> tuple[ArrayGeometry, ArrayGeometry]:
    wavelength = SPEED_OF_LIGHT / (cfg.frequency_ghz * 1e9)

    def build(spec: ArraySpec) -> ArrayGeometry:
        spacing = spec.spacing_m if spec.spacing_m is not None else wavelength / 2.0
        return make_array(spec.kind, spec.counts, spacing, spec.center,
                          orientation=np.array([spec.axis_primary, spec.axis_secondary]))

    return build(cfg.tx_array), build(cfg.rx_array)


def mpc_from_path(rec: PathRecord, fld: PolarizedField) -> ch.MPC:
    scalar = fld.e_theta
    if abs(scalar) < 1e-12 * abs(fld.e_phi):
        scalar = fld.e_phi
    return ch.MPC(
        amplitude=fld.magnitude,
        delay=rec.unfolded_length / SPEED_OF_LIGHT,
        phase=-math.atan2(scalar.imag, scalar.real),
        aod=ch.direction_angles(rec.departure_dir),
        aoa=ch.direction_angles([-c for c in rec.arrival_dir]),
        tx_index=rec.tx_index, rx_index=rec.rx_index)


_FIELD_STATE: dict = {}


def _eval_tx_column(args):
    """Per-pair powers/phases for one transmit element (worker task)."""
    ti, want_mpcs = args
    st = _FIELD_STATE
    n_rx = st["n_rx"]
    fields_by_rx: list[list[PolarizedField]] = [[] for _ in range(n_rx)]
    mpcs: list[ch.MPC] = []
    for rec in st["records"]:
        if rec.tx_index != ti:
            continue
        fld = path_field(rec, st["frequency_hz"], st["materials"],
                         atmosphere=st["atmosphere"], line_table=st["table"])
        fields_by_rx[rec.rx_index].append(fld)
        if want_mpcs and rec.rx_index == 0:
            mpcs.append(mpc_from_path(rec, fld))
    powers = np.zeros(n_rx)
    phases = np.zeros(n_rx)
    for r in range(n_rx):
        er = ch.coherent_sum(fields_by_rx[r])
        powers[r] = ch.received_power(er, st["wavelength"], st["beta"])
        scalar = ch.coherent_sum_complex(fields_by_rx[r])
        phases[r] = math.atan2(scalar.imag, scalar.real) if scalar != 0 else 0.0
    return ti, powers, phases, mpcs


def evaluate_pairs(records: list[PathRecord], cfg: SimulationConfig,
                   materials, n_tx: int, n_rx: int, workers: int):
    """Power/phase grids plus the reference-pair MPC list."""
    frequency_hz = cfg.frequency_ghz * 1e9
    _FIELD_STATE.clear()
    _FIELD_STATE.update({
        "records": records, "materials": materials, "n_rx": n_rx,
        "frequency_hz": frequency_hz,
        "wavelength": SPEED_OF_LIGHT / frequency_hz,
        "beta": cfg.beta,
        "atmosphere": cfg.atmosphere.to_state() if cfg.atmosphere else None,
        "table": default_line_table() if cfg.atmosphere else None,
    })
    tasks = [(ti, ti == 0) for ti in range(n_tx)]
    if workers > 1 and n_tx > 1 and hasattr(os, "fork"):
        import multiprocessing as mp

        ctx = mp.get_context("fork")
        with ctx.Pool(processes=workers) as pool:
            results = pool.map(_eval_tx_column, tasks, chunksize=1)
    else:
        results = [_eval_tx_column(t) for t in tasks]
    _FIELD_STATE.clear()

    powers = np.zeros((n_rx, n_tx))
    phases = np.zeros((n_rx, n_tx))
    reference_mpcs: list[ch.MPC] = []
    for ti, p_col, ph_col, mpcs in results:
        powers[:, ti] = p_col
        phases[:, ti] = ph_col
        if ti == 0:
            reference_mpcs = mpcs
    return powers, phases, reference_mpcs


def _render_report(report: ch.ChannelReport) -> str:
    payload = {
        "frequency_ghz": report.frequency_ghz,
        "path_count": report.path_count,
        "path_loss_db": report.path_loss_db,
        "blocked": report.path_loss_db is None,
        "rms_delay_spread_s": report.rms_delay_spread_s,
        "mean_aod_deg": report.mean_aod_deg,
        "mean_aoa_deg": report.mean_aoa_deg,
        "capacity_bits_per_s_per_hz": {fmt(k): v for k, v in
                                       report.capacity_bits_per_s_per_hz.items()},
        "pdp": report.pdp,
    }
    return render_json(payload)


def _render_pdp_csv(pdp) -> str:
    out = io.StringIO()
    out.write("delay_s,power\n")
    for delay, power in pdp:
        out.write(f"{fmt(delay)},{fmt(power)}\n")
    return out.getvalue()


def _render_h_csv(matrix: ch.ChannelMatrix) -> str:
    n_rx, n_tx = matrix.shape
    out = io.StringIO()
    header = ["rx"]
    for p in range(n_tx):
        header += [f"tx{p}_re", f"tx{p}_im"]
    out.write(",".join(header) + "\n")
    for q in range(n_rx):
        row = [str(q)]
        for p in range(n_tx):
            h = matrix.entries[q, p]
            row += [fmt(h.real), fmt(h.imag)]
        out.write(",".join(row) + "\n")
    return out.getvalue()


def _render_capacity_csv(capacities: dict[float, float]) -> str:
    out = io.StringIO()
    out.write("snr_db,capacity_bits_per_s_per_hz\n")
    for snr_db, cap in capacities.items():
        out.write(f"{fmt(snr_db)},{fmt(cap)}\n")
    return out.getvalue()


def _render_paths_jsonl(records: list[PathRecord]) -> str:
    lines = []
    for rec in records:
        doc = {
            "tx_index": rec.tx_index,
            "rx_index": rec.rx_index,
            "signature": [[k, i] for k, i in rec.signature],
            "interactions": [
                {
                    "kind": i.kind,
                    "point": list(i.point),
                    "surface_normal": list(i.surface_normal),
                    "material_id": i.material_id,
                    "triangle_id": i.triangle_id,
                    "incidence_angle": i.incidence_angle,
                }
                for i in rec.interactions
            ],
            "segment_lengths": list(rec.segment_lengths),
            "unfolded_length": rec.unfolded_length,
            "departure_dir": list(rec.departure_dir),
            "arrival_dir": list(rec.arrival_dir),
            "capture_distance": rec.capture_distance,
        }
        lines.append(json.dumps(_round9(doc), sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")


def run_simulation(cfg: SimulationConfig, *, workers: int | None = None,
                   scene: Scene | None = None,
                   accel: AccelStructure | None = None) -> SimulationResult:
    """Execute one configured run and render its output files in memory."""
    if scene is None:
        scene = load_scene(cfg.scene_path, cfg.scene_format, cfg.sidecar_path)
    if accel is None:
        accel = build_accel(scene)
    n_workers = cfg.workers if workers is None else workers
    if n_workers == 0:
        n_workers = os.cpu_count() or 1

    tx_array, rx_array = build_arrays(cfg)
    fan = geodesic_directions(cfg.tessellation)
    diag = scene.bounds.diagonal
    max_len = cfg.max_path_length_factor * diag if diag > 0 else None
    records = trace(scene, accel, tx_array.element_positions,
                    rx_array.element_positions, fan, cfg.limits.to_limits(),
                    max_path_length=max_len, workers=n_workers)

    n_tx = tx_array.element_count
    n_rx = rx_array.element_count
    powers, phases, reference_mpcs = evaluate_pairs(
        records, cfg, scene.materials, n_tx, n_rx, n_workers)

    frequency_hz = cfg.frequency_ghz * 1e9
    wavelength = SPEED_OF_LIGHT / frequency_hz
    matrix = ch.channel_matrix(powers, phases, frequency_hz)
    capacities = {}
    if np.abs(matrix.entries).sum() > 0:
        for snr_db in cfg.snr_db:
            capacities[snr_db] = ch.capacity(matrix, 10.0 ** (snr_db / 10.0))

    reference_power = ch.received_power(1.0, wavelength, cfg.beta)
    p00 = powers[0, 0]
    loss = ch.path_loss(reference_power, p00) if p00 > 0 else None
    if loss is not None and not math.isfinite(loss):
        loss = None
    pdp = ch.power_delay_profile(reference_mpcs, cfg.pdp_bin_ns * 1e-9)
    spread = None
    aod = aoa = None
    if reference_mpcs:
        spread = ch.rms_delay_spread(reference_mpcs)
        aod, aoa = ch.mean_angles(reference_mpcs)
    report = ch.ChannelReport(
        frequency_ghz=cfg.frequency_ghz,
        path_count=len(reference_mpcs),
        path_loss_db=loss,
        rms_delay_spread_s=spread,
        mean_aod_deg=aod,
        mean_aoa_deg=aoa,
        pdp=pdp,
        capacity_bits_per_s_per_hz=capacities)

    files = {
        "channel_report.json": _render_report(report),
        "pdp.csv": _render_pdp_csv(pdp),
        "capacity.csv": _render_capacity_csv(capacities),
    }
    if n_tx * n_rx > 1:
        files["h_matrix.csv"] = _render_h_csv(matrix)
    if cfg.dump_paths:
        files["paths.jsonl"] = _render_paths_jsonl(records)
    return SimulationResult(report=report, matrix=matrix, records=records,
                            reference_mpcs=reference_mpcs, files=files)


def sweep_gas(cfg: SimulationConfig) -> dict[str, str]:
    """Attenuation/dispersion curves per configured water-vapour density."""
    from .atmosphere import specific_attenuation, specific_dispersion

    sweep = cfg.gas_sweep
    base = cfg.atmosphere.to_state() if cfg.atmosphere else AtmosphereState()
    start, stop, step = sweep.f_start_ghz, sweep.f_stop_ghz, sweep.f_step_ghz
    if stop < start:
        raise ValueError("gas sweep range must satisfy f_start <= f_stop")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    freqs = start + step * np.arange(n)
    out = io.StringIO()
    out.write("f_ghz,water_vapor_density_g_m3,gamma_db_per_km,phi_deg_per_km\n")
    for density in sweep.water_vapor_densities_g_m3:
        atm = AtmosphereState(pressure=base.pressure, temperature=base.temperature,
                              water_vapor_density=density)
        gammas = specific_attenuation(freqs, atm)
        phis = specific_dispersion(freqs, atm)
        for f, g, p in zip(freqs, gammas, phis):
            out.write(f"{fmt(f)},{fmt(density)},{fmt(g)},{fmt(p)}\n")
    return {"gas_sweep.csv": out.getvalue()}


def sweep_array(cfg: SimulationConfig, *, workers: int | None = None) -> dict[str, str]:
    """Capacity and per-port power as the MIMO arrays grow."""
    scene = load_scene(cfg.scene_path, cfg.scene_format, cfg.sidecar_path)
    accel = build_accel(scene)
    cap_rows = ["n,snr_db,capacity_bits_per_s_per_hz"]
    port_rows = ["n,rx_port,power_db_rel"]
    for n in cfg.array_sweep.sizes:
        sized = cfg.model_copy(update={
            "tx_array": cfg.tx_array.model_copy(update={"counts": (n, 1)}),
            "rx_array": cfg.rx_array.model_copy(update={"counts": (n, 1)}),
        })
        result = run_simulation(sized, workers=workers, scene=scene, accel=accel)
        for snr_db in cfg.snr_db:
            cap = result.report.capacity_bits_per_s_per_hz.get(snr_db)
            cap_rows.append(f"{n},{fmt(snr_db)},{fmt(cap) if cap is not None else ''}")
        port_power = np.abs(result.matrix.entries[:, 0]) ** 2
        peak = port_power.max()
        for q in range(n):
            rel = (10.0 * math.log10(port_power[q] / peak)
                   if peak > 0 and port_power[q] > 0 else -math.inf)
            port_rows.append(f"{n},{q},{fmt(rel) if math.isfinite(rel) else '-inf'}")
    return {
        "capacity_sweep.csv": "\n".join(cap_rows) + "\n",
        "rx_port_power.csv": "\n".join(port_rows) + "\n",
    }


def write_outputs(files: dict[str, str], out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, content in files.items():
        dest = os.path.join(out_dir, name)
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(content)
        written.append(dest)
    return written
