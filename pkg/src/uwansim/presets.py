"""Experiment presets: canned sweeps emitting CSV files.

Each preset writes one CSV with a leading provenance comment line
(`# preset=<name> config=<hash> seeds=<...>`), a header row, and one row
per grid point -- never fewer, never more.  Network sweeps dispatch runs
to a process pool; rows are assembled in grid order regardless of
completion order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .channel import ChannelModelConfig, Environment, NodePosition, generate_cir, norm, normalized_cross_correlation
from .scenario import scenario_from_dict, scenario_to_dict
from .sim import run_scenario
from .tr_phy import (
    PhyConfig,
    crosscorr_sampled_stats,
    ili_power_from_parts,
    p_isi,
    p_sig,
    sinr_atrsts,
    sinr_sdt,
)

PRESET_NAMES = ("sinr_vs_snr", "sinr_vs_eta", "correlation_heatmap", "load_sweep", "timeseries")

# two-link reference geometry used by the SINR presets: (depth m, range m)
REFERENCE_GEOMETRY = {"a": (20.0, 0.0), "b": (20.0, 1000.0), "i": (50.0, 0.0), "j": (70.0, 1000.0)}


@dataclass
class ExperimentPreset:
    name: str
    params: dict = field(default_factory=dict)
    seeds: tuple[int, ...] = (1,)
    output_dir: str = "."

    def __post_init__(self):
        if self.name not in PRESET_NAMES:
            raise ValueError(f"unknown preset {self.name!r}; expected one of {PRESET_NAMES}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if len(self.seeds) < 1:
            raise ValueError("ExperimentPreset.seeds must contain at least one seed")


def _params_hash(name: str, params: dict, seeds) -> str:
    blob = json.dumps({"name": name, "params": params, "seeds": list(seeds)}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _write_csv(path: str, provenance: str, header: list[str], rows: list[list]) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(provenance + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _position(spot: tuple[float, float]) -> NodePosition:
    depth, rng = spot
    return NodePosition(depth=depth, x=rng, y=0.0)


def _reference_links(seed: int, tap_count: int):
    env = Environment()
    cfg = ChannelModelConfig(tap_count=tap_count, rng_seed=seed)
    g = {k: _position(v) for k, v in REFERENCE_GEOMETRY.items()}
    h_ab = generate_cir(g["a"], g["b"], env, cfg)
    h_ib = generate_cir(g["i"], g["b"], env, cfg)
    h_ij = generate_cir(g["i"], g["j"], env, cfg)
    return h_ab, h_ib, h_ij


def _db(x: float) -> float:
    return 10.0 * math.log10(x) if x > 0 else math.nan


def preset_sinr_vs_snr(preset: ExperimentPreset) -> str:
    """Effective SINR of the reference link versus acoustic SNR, for the
    TR-based simultaneous transmissions (one interfering link active) and
    the single direct transmission, at several up/down-sampling factors."""
    params = preset.params
    d_factors = tuple(params.get("d_factors", (1, 2, 4, 8)))
    snr_grid = params.get("snr_db_grid")
    if snr_grid is None:
        snr_grid = [40.0 + 2.0 * k for k in range(21)]  # 40..80 dB, artifact-chosen
    tap_count = int(params.get("tap_count", 129))
    seed = preset.seeds[0]
    h_ab, h_ib, h_ij = _reference_links(seed, tap_count)

    rows = []
    for d in d_factors:
        for snr_db in snr_grid:
            sigma2 = 1.0 / 10.0 ** (snr_db / 10.0)
            phy = PhyConfig(avg_transmit_power=1.0, noise_variance=sigma2,
                            updown_factor=d, min_required_sinr=0.5)
            atrsts = sinr_atrsts(h_ab, [(h_ib, h_ij)], phy)
            sdt = sinr_sdt(h_ab, phy)
            rows.append([d, snr_db, _db(atrsts), _db(sdt)])
    path = os.path.join(preset.output_dir, "sinr_vs_snr.csv")
    prov = f"# preset=sinr_vs_snr config={_params_hash(preset.name, params, preset.seeds)} seeds={seed}"
    return _write_csv(path, prov, ["d_factor", "snr_db", "sinr_atrsts_db", "sinr_sdt_db"], rows)


def preset_sinr_vs_eta(preset: ExperimentPreset) -> str:
    """Effective SINR of the reference link versus the peak normalized
    cross-correlation between the interfering link and the victim-bound
    channel, with the measured off-peak structure held fixed."""
    params = preset.params
    d_factors = tuple(params.get("d_factors", (1, 2, 4, 8)))
    eta_grid = params.get("eta_grid")
    if eta_grid is None:
        eta_grid = [round(0.05 * k, 2) for k in range(19)]  # 0 .. 0.9
    if any(not (0.0 <= e < 1.0) for e in eta_grid):
        raise ValueError("sinr_vs_eta: eta grid must lie in [0, 1)")
    snr_db = float(params.get("snr_db", 65.0))
    tap_count = int(params.get("tap_count", 129))
    seed = preset.seeds[0]
    h_ab, h_ib, h_ij = _reference_links(seed, tap_count)
    sigma2 = 1.0 / 10.0 ** (snr_db / 10.0)

    rows = []
    for d in d_factors:
        phy = PhyConfig(avg_transmit_power=1.0, noise_variance=sigma2,
                        updown_factor=d, min_required_sinr=0.5)
        sig = p_sig(h_ab, phy)
        isi = p_isi(h_ab, phy)
        _, offpeak = crosscorr_sampled_stats(h_ib, h_ij, d)
        for eta in eta_grid:
            ili = ili_power_from_parts(norm(h_ib), float(eta), offpeak, phy)
            rows.append([d, eta, _db(sig / (isi + ili + sigma2))])
    path = os.path.join(preset.output_dir, "sinr_vs_eta.csv")
    prov = (f"# preset=sinr_vs_eta config={_params_hash(preset.name, params, preset.seeds)} "
            f"seeds={seed} snr_db={snr_db}")
    return _write_csv(path, prov, ["d_factor", "eta", "sinr_db"], rows)


def preset_correlation_heatmap(preset: ExperimentPreset) -> str:
    """|eta| between the reference link and the link from the reference
    transmitter to a probe node swept over (depth, range) cells."""
    params = preset.params
    depth_step = float(params.get("depth_step", 5.0))
    range_step = float(params.get("range_step", 50.0))
    tap_count = int(params.get("tap_count", 129))
    water_depth = float(params.get("water_depth", 80.0))
    max_range = float(params.get("max_range", 4000.0))
    tx_spot = tuple(params.get("reference_tx", REFERENCE_GEOMETRY["i"]))
    rx_spot = tuple(params.get("reference_rx", REFERENCE_GEOMETRY["j"]))
    seed = preset.seeds[0]

    env = Environment(water_depth=water_depth)
    cfg = ChannelModelConfig(tap_count=tap_count, rng_seed=seed)
    ref_tx = _position(tx_spot)
    ref_rx = _position(rx_spot)
    h_ref = generate_cir(ref_tx, ref_rx, env, cfg)

    depths = [round(k * depth_step, 9) for k in range(int(water_depth / depth_step) + 1)]
    ranges = [round(k * range_step, 9) for k in range(int(max_range / range_step) + 1)]
    rows = []
    for depth in depths:
        for rng in ranges:
            probe = NodePosition(depth=depth, x=rng, y=0.0)
            if probe.same_place(ref_tx):
                rows.append([depth, rng, math.nan])  # undefined link to itself
                continue
            h_probe = generate_cir(ref_tx, probe, env, cfg)
            eta = abs(normalized_cross_correlation(h_probe, h_ref, 0))
            rows.append([depth, rng, eta])
    path = os.path.join(preset.output_dir, "correlation_heatmap.csv")
    prov = (f"# preset=correlation_heatmap config={_params_hash(preset.name, params, preset.seeds)} "
            f"seeds={seed} reference_tx={tx_spot} reference_rx={rx_spot}")
    return _write_csv(path, prov, ["depth_m", "range_m", "eta_abs"], rows)


def _network_scenario_dict(seed: int, protocol: str, duration: float, params: dict) -> dict:
    data = dict(params.get("scenario", {}))
    data["seed"] = seed
    data["duration_s"] = duration
    mac = dict(data.get("mac", {}))
    mac["protocol"] = protocol
    data["mac"] = mac
    return data


def _nested_load_scenarios(seed: int, duration: float, loads, protocols, params) -> list[dict]:
    """One resolved topology per seed; lighter loads reuse its first routes."""
    max_links = max(loads)
    base_dict = _network_scenario_dict(seed, protocols[0], duration, params)
    base_dict.setdefault("network", {})["link_count"] = max_links
    base = scenario_from_dict(base_dict)
    jobs = []
    for links in loads:
        for protocol in protocols:
            d = scenario_to_dict(base)
            d["network"]["routes"] = [list(r) for r in base.routes[:links]]
            d["mac"]["protocol"] = protocol
            jobs.append({"links": links, "protocol": protocol, "seed": seed, "scenario": d})
    return jobs


def _run_network_job(job: dict) -> dict:
    scenario = scenario_from_dict(job["scenario"])
    metrics = run_scenario(scenario).metrics
    return {
        "links": job["links"],
        "protocol": job["protocol"],
        "seed": job["seed"],
        "generated": metrics.generated,
        "delivered": metrics.delivered,
        "dropped": metrics.dropped,
        "mean_delay_s": metrics.mean_delay,
        "drop_ratio": metrics.drop_ratio,
        "throughput_bps": metrics.throughput,
    }


def run_network_jobs(jobs: list[dict], workers: int | None = None) -> list[dict]:
    """Run scenario jobs, in parallel when workers allows; results keep job order."""
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(jobs) <= 1:
        return [_run_network_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_network_job, jobs))


def preset_load_sweep(preset: ExperimentPreset) -> str:
    """Delay / drop ratio / throughput for each protocol across network loads."""
    params = preset.params
    loads = tuple(params.get("loads", (4, 6, 8, 10)))
    protocols = tuple(params.get("protocols", ("trmac", "csma_ca", "s_csma_ca")))
    duration = float(params.get("duration", 2000.0))
    workers = params.get("workers")
    if not loads:
        raise ValueError("load_sweep: loads grid must be nonempty")

    jobs = []
    for seed in preset.seeds:
        jobs.extend(_nested_load_scenarios(seed, duration, loads, protocols, params))
    results = run_network_jobs(jobs, workers)
    order = {(j["links"], j["protocol"], j["seed"]): k for k, j in enumerate(jobs)}
    results.sort(key=lambda r: order[(r["links"], r["protocol"], r["seed"])])
    rows = [
        [r["links"], r["protocol"], r["seed"], r["generated"], r["delivered"], r["dropped"],
         r["mean_delay_s"], r["drop_ratio"], r["throughput_bps"]]
        for r in results
    ]
    path = os.path.join(preset.output_dir, "load_sweep.csv")
    prov = (f"# preset=load_sweep config={_params_hash(preset.name, params, preset.seeds)} "
            f"seeds={','.join(str(s) for s in preset.seeds)}")
    header = ["links", "protocol", "seed", "generated", "delivered", "dropped",
              "mean_delay_s", "drop_ratio", "throughput_bps"]
    return _write_csv(path, prov, header, rows)


def preset_timeseries(preset: ExperimentPreset) -> str:
    """Cumulative metric-versus-time curves for each protocol at one load."""
    params = preset.params
    protocols = tuple(params.get("protocols", ("trmac", "csma_ca", "s_csma_ca")))
    duration = float(params.get("duration", 2000.0))
    sample_every = float(params.get("sample_every", 100.0))
    links = int(params.get("links", 10))
    seed = preset.seeds[0]

    rows = []
    for protocol in protocols:
        data = _network_scenario_dict(seed, protocol, duration, params)
        data.setdefault("network", {})["link_count"] = links
        scenario = scenario_from_dict(data)
        result = run_scenario(scenario, sample_every=sample_every)
        for row in result.metrics.series:
            rows.append([protocol, row["time"], row["mean_delay"], row["drop_ratio"], row["throughput"]])
    path = os.path.join(preset.output_dir, "timeseries.csv")
    prov = (f"# preset=timeseries config={_params_hash(preset.name, params, preset.seeds)} "
            f"seeds={seed} links={links}")
    header = ["protocol", "time_s", "mean_delay_s", "drop_ratio", "throughput_bps"]
    return _write_csv(path, prov, header, rows)


_RUNNERS = {
    "sinr_vs_snr": preset_sinr_vs_snr,
    "sinr_vs_eta": preset_sinr_vs_eta,
    "correlation_heatmap": preset_correlation_heatmap,
    "load_sweep": preset_load_sweep,
    "timeseries": preset_timeseries,
}


def run_preset(preset: ExperimentPreset) -> str:
    """Execute one preset; returns the written CSV path."""
    return _RUNNERS[preset.name](preset)
