"""Scenario definition: validated simulation inputs with network defaults.

A scenario wires together the environment, channel model, physical layer,
MAC protocol and timers, traffic, and the static route set.  Every field
has a default matching the reference multi-hop deployment (80 m water,
4 km x 4 km region, 20 nodes at 0-50 m depth, 1 km hop range, 512 bps,
D = 4, 4 kHz bandwidth, 8 s mean packet interval, 256-bit packets,
T = 30 s, delta = 0.25 s, N_max = 3, 2 s S-CSMA/CA backoff cap), so an
empty config file is a runnable scenario.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
import yaml

from .channel import ChannelModelConfig, Environment, NodePosition
from .mac import PROTOCOLS, TRMAC
from .tr_phy import PhyConfig


class ScenarioError(ValueError):
    """A config field or invariant is violated; the message names it."""


@dataclass
class TrafficConfig:
    mean_interarrival: float | None = 8.0
    packet_bits: int = 256


@dataclass
class MacConfig:
    protocol: str = TRMAC
    guard_time: float = 0.25
    coherence_time: float = 30.0
    n_max: int = 3
    control_bits: int = 32
    s_csma_max_backoff: float = 2.0
    # carrier-sense energy threshold for the baselines; None means the
    # receiver sensitivity (min_required_sinr * noise_variance)
    sense_threshold_w: float | None = None


@dataclass
class NetworkConfig:
    region_size: float = 4000.0
    node_depth_max: float = 50.0
    one_hop_range: float = 1000.0
    data_rate: float = 512.0
    max_hops: int = 6
    node_count: int = 20
    link_count: int = 10
    nodes: list[tuple[float, float, float]] | None = None
    routes: list[tuple[int, ...]] | None = None


@dataclass
class Scenario:
    seed: int = 1
    duration: float = 2000.0
    warmup: float = 0.0
    environment: Environment = field(default_factory=Environment)
    channel: ChannelModelConfig = field(default_factory=lambda: ChannelModelConfig(tap_count=129))
    phy: PhyConfig = field(
        default_factory=lambda: PhyConfig(
            avg_transmit_power=1.0,
            noise_variance=1.0e-7,
            updown_factor=4,
            min_required_sinr=0.5,
        )
    )
    mac: MacConfig = field(default_factory=MacConfig)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    positions: list[NodePosition] = field(default_factory=list)
    routes: list[tuple[int, ...]] = field(default_factory=list)
    per_link_busy_accounting: bool = False

    def resolved(self) -> "Scenario":
        """Fill in positions/routes (generating a topology if needed) and validate."""
        out = copy.deepcopy(self)
        if out.network.nodes is not None:
            out.positions = [
                NodePosition(depth=d, x=x, y=y, node_id=str(i))
                for i, (d, x, y) in enumerate(out.network.nodes)
            ]
        if out.network.routes is not None:
            out.routes = [tuple(r) for r in out.network.routes]
        if not out.positions and not out.routes:
            out.positions, out.routes = _generate_topology(out)
        elif not out.positions:
            out.positions, _ = _generate_topology(out)
        elif not out.routes:
            rng = np.random.default_rng(np.random.SeedSequence((out.seed & (2**64 - 1), 0x7090)))
            pairs = _pair_nodes(out.positions, out.network.link_count, out.network.one_hop_range, rng)
            if pairs is None:
                raise ScenarioError(
                    "network.nodes: provided placement does not admit the requested disjoint links"
                )
            out.routes = [tuple(p) for p in pairs]
        validate_scenario(out)
        return out


def _generate_topology(scenario: Scenario) -> tuple[list[NodePosition], list[tuple[int, ...]]]:
    """Random placement plus disjoint single-hop link set, deterministically
    retried until the requested link count is feasible."""
    net = scenario.network
    rng = np.random.default_rng(np.random.SeedSequence((scenario.seed & (2**64 - 1), 0x7090)))
    for _ in range(200):
        positions = [
            NodePosition(
                depth=float(rng.uniform(0.0, net.node_depth_max)),
                x=float(rng.uniform(0.0, net.region_size)),
                y=float(rng.uniform(0.0, net.region_size)),
                node_id=str(i),
            )
            for i in range(net.node_count)
        ]
        pairs = _pair_nodes(positions, net.link_count, net.one_hop_range, rng)
        if pairs is not None:
            return positions, [tuple(p) for p in pairs]
    raise ScenarioError(
        "network: could not place nodes admitting the requested disjoint link count"
    )


def _pair_nodes(positions, link_count, hop_range, rng) -> list[tuple[int, int]] | None:
    """Disjoint single-hop link set via maximum-cardinality matching on the
    within-range graph.  Returns None when the placement cannot host
    link_count links; link directions are drawn from the given stream."""
    graph = nx.Graph()
    graph.add_nodes_from(range(len(positions)))
    for i in range(len(positions)):
        for j in range(i + 1, len(positions)):
            if positions[i].distance_to(positions[j]) <= hop_range:
                graph.add_edge(i, j)
    matching = nx.max_weight_matching(graph, maxcardinality=True)
    if len(matching) < link_count:
        return None
    pairs = sorted(tuple(sorted(p)) for p in matching)[:link_count]
    return [(a, b) if rng.random() < 0.5 else (b, a) for a, b in pairs]


def validate_scenario(scenario: Scenario) -> None:
    net = scenario.network
    if scenario.duration < 0:
        raise ScenarioError(f"duration: must be >= 0, got {scenario.duration}")
    if scenario.warmup < 0:
        raise ScenarioError(f"warmup: must be >= 0, got {scenario.warmup}")
    if scenario.mac.protocol not in PROTOCOLS:
        raise ScenarioError(f"mac.protocol: unknown protocol {scenario.mac.protocol!r}")
    if scenario.mac.guard_time <= 0:
        raise ScenarioError("mac.guard_time: must be > 0")
    if scenario.mac.coherence_time <= 0:
        raise ScenarioError("mac.coherence_time: must be > 0")
    if scenario.mac.n_max < 1:
        raise ScenarioError("mac.n_max: must be >= 1")
    if scenario.mac.control_bits < 1:
        raise ScenarioError("mac.control_bits: must be >= 1")
    if scenario.traffic.packet_bits < 1:
        raise ScenarioError("traffic.packet_bits: must be >= 1")
    if scenario.traffic.mean_interarrival is not None and scenario.traffic.mean_interarrival <= 0:
        raise ScenarioError("traffic.mean_interarrival: must be > 0 (or null to disable)")
    if net.data_rate <= 0:
        raise ScenarioError("network.data_rate: must be > 0")
    if net.one_hop_range <= 0:
        raise ScenarioError("network.one_hop_range: must be > 0")
    if net.max_hops < 1:
        raise ScenarioError("network.max_hops: must be >= 1")
    if (scenario.channel.tap_count - 1) % scenario.phy.updown_factor != 0:
        raise ScenarioError(
            "phy.updown_factor: (channel.tap_count - 1) must be divisible by it "
            f"({scenario.channel.tap_count - 1} % {scenario.phy.updown_factor} != 0)"
        )
    if net.node_depth_max > scenario.environment.water_depth:
        raise ScenarioError("network.node_depth_max: exceeds environment.water_depth")

    for i, pos in enumerate(scenario.positions):
        if not (0.0 <= pos.depth <= net.node_depth_max):
            raise ScenarioError(
                f"network.nodes[{i}]: depth {pos.depth} outside [0, {net.node_depth_max}]"
            )
        if not (0.0 <= pos.x <= net.region_size and 0.0 <= pos.y <= net.region_size):
            raise ScenarioError(f"network.nodes[{i}]: position outside the region")

    n = len(scenario.positions)
    for r, route in enumerate(scenario.routes):
        if len(route) < 2:
            raise ScenarioError(f"network.routes[{r}]: needs at least two nodes")
        if len(route) - 1 > net.max_hops:
            raise ScenarioError(
                f"network.routes[{r}]: {len(route) - 1} hops exceeds max_hops {net.max_hops}"
            )
        if len(set(route)) != len(route):
            raise ScenarioError(f"network.routes[{r}]: repeated node")
        for node in route:
            if not (0 <= node < n):
                raise ScenarioError(f"network.routes[{r}]: node index {node} out of range")
        for a, b in zip(route, route[1:]):
            hop = scenario.positions[a].distance_to(scenario.positions[b])
            if hop > net.one_hop_range * (1 + 1e-9):
                raise ScenarioError(
                    f"network.routes[{r}]: hop {a}->{b} length {hop:.1f} m exceeds "
                    f"one_hop_range {net.one_hop_range} m"
                )


# ----------------------------------------------------------- serialization


def scenario_to_dict(scenario: Scenario) -> dict:
    env = scenario.environment
    ch = scenario.channel
    phy = scenario.phy
    out: dict = {
        "seed": scenario.seed,
        "duration_s": scenario.duration,
        "warmup_s": scenario.warmup,
        "environment": {
            "water_depth_m": env.water_depth,
            "carrier_frequency_hz": env.carrier_frequency,
            "bandwidth_hz": env.bandwidth,
            "nominal_sound_speed_mps": env.nominal_sound_speed,
            "svp": [[d, c] for d, c in env.svp],
        },
        "channel": {
            "model": ch.model_kind,
            "tap_count": ch.tap_count,
            "pdp_decay_s": ch.pdp_decay_constant,
            "rng_seed": ch.rng_seed,
            "arrival_file": ch.arrival_file_path,
            "depth_quantum_m": ch.depth_quantum,
            "range_quantum_m": ch.range_quantum,
        },
        "phy": {
            "transmit_power_w": phy.avg_transmit_power,
            "noise_variance_w": phy.noise_variance,
            "updown_factor": phy.updown_factor,
            "min_required_sinr": phy.min_required_sinr,
            "acoustic_conversion": phy.acoustic_conversion,
        },
        "mac": {
            "protocol": scenario.mac.protocol,
            "guard_time_s": scenario.mac.guard_time,
            "coherence_time_s": scenario.mac.coherence_time,
            "max_retransmissions": scenario.mac.n_max,
            "control_bits": scenario.mac.control_bits,
            "s_csma_max_backoff_s": scenario.mac.s_csma_max_backoff,
            "sense_threshold_w": scenario.mac.sense_threshold_w,
        },
        "traffic": {
            "mean_interarrival_s": scenario.traffic.mean_interarrival,
            "packet_bits": scenario.traffic.packet_bits,
        },
        "network": {
            "region_size_m": scenario.network.region_size,
            "node_depth_max_m": scenario.network.node_depth_max,
            "one_hop_range_m": scenario.network.one_hop_range,
            "data_rate_bps": scenario.network.data_rate,
            "max_hops": scenario.network.max_hops,
            "node_count": scenario.network.node_count,
            "link_count": scenario.network.link_count,
        },
        "per_link_busy_accounting": scenario.per_link_busy_accounting,
    }
    if scenario.network.nodes is not None:
        out["network"]["nodes"] = [list(n) for n in scenario.network.nodes]
    elif scenario.positions:
        out["network"]["nodes"] = [[p.depth, p.x, p.y] for p in scenario.positions]
    if scenario.network.routes is not None:
        out["network"]["routes"] = [list(r) for r in scenario.network.routes]
    elif scenario.routes:
        out["network"]["routes"] = [list(r) for r in scenario.routes]
    return out


def _expect_mapping(value, context: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ScenarioError(f"{context}: expected a mapping, got {type(value).__name__}")
    return value


def _take(section: dict, key: str, default, context: str):
    value = section.pop(key, None)
    return default if value is None else value


def scenario_from_dict(data: dict | None) -> Scenario:
    data = dict(_expect_mapping(data, "config"))
    base = Scenario()

    seed = int(_take(data, "seed", base.seed, "seed"))
    duration = float(_take(data, "duration_s", base.duration, "duration_s"))
    warmup = float(_take(data, "warmup_s", base.warmup, "warmup_s"))
    per_link = bool(_take(data, "per_link_busy_accounting", False, "per_link_busy_accounting"))

    env_d = _expect_mapping(data.pop("environment", None), "environment")
    try:
        environment = Environment(
            water_depth=float(_take(env_d, "water_depth_m", 80.0, "environment")),
            carrier_frequency=float(_take(env_d, "carrier_frequency_hz", 25e3, "environment")),
            bandwidth=float(_take(env_d, "bandwidth_hz", 4e3, "environment")),
            nominal_sound_speed=float(_take(env_d, "nominal_sound_speed_mps", 1500.0, "environment")),
            svp=tuple((float(d), float(c)) for d, c in _take(env_d, "svp", (), "environment")),
        )
    except ValueError as exc:
        raise ScenarioError(f"environment: {exc}") from None
    _reject_unknown(env_d, "environment")

    ch_d = _expect_mapping(data.pop("channel", None), "channel")
    try:
        channel = ChannelModelConfig(
            model_kind=str(_take(ch_d, "model", "statistical_pdp", "channel")),
            tap_count=int(_take(ch_d, "tap_count", 129, "channel")),
            pdp_decay_constant=float(_take(ch_d, "pdp_decay_s", 1.0e-3, "channel")),
            rng_seed=int(_take(ch_d, "rng_seed", seed, "channel")),
            arrival_file_path=ch_d.pop("arrival_file", None),
            depth_quantum=float(_take(ch_d, "depth_quantum_m", 5.0, "channel")),
            range_quantum=float(_take(ch_d, "range_quantum_m", 50.0, "channel")),
        )
    except ValueError as exc:
        raise ScenarioError(f"channel: {exc}") from None
    _reject_unknown(ch_d, "channel")

    phy_d = _expect_mapping(data.pop("phy", None), "phy")
    try:
        phy = PhyConfig(
            avg_transmit_power=float(_take(phy_d, "transmit_power_w", 1.0, "phy")),
            noise_variance=float(_take(phy_d, "noise_variance_w", 1.0e-7, "phy")),
            updown_factor=int(_take(phy_d, "updown_factor", 4, "phy")),
            min_required_sinr=float(_take(phy_d, "min_required_sinr", 0.5, "phy")),
            acoustic_conversion=float(_take(phy_d, "acoustic_conversion", 1.0, "phy")),
        )
    except ValueError as exc:
        raise ScenarioError(f"phy: {exc}") from None
    _reject_unknown(phy_d, "phy")

    mac_d = _expect_mapping(data.pop("mac", None), "mac")
    mac = MacConfig(
        protocol=str(_take(mac_d, "protocol", TRMAC, "mac")),
        guard_time=float(_take(mac_d, "guard_time_s", 0.25, "mac")),
        coherence_time=float(_take(mac_d, "coherence_time_s", 30.0, "mac")),
        n_max=int(_take(mac_d, "max_retransmissions", 3, "mac")),
        control_bits=int(_take(mac_d, "control_bits", 32, "mac")),
        s_csma_max_backoff=float(_take(mac_d, "s_csma_max_backoff_s", 2.0, "mac")),
        sense_threshold_w=(lambda v: None if v is None else float(v))(mac_d.pop("sense_threshold_w", None)),
    )
    _reject_unknown(mac_d, "mac")

    tr_d = _expect_mapping(data.pop("traffic", None), "traffic")
    mean = tr_d.pop("mean_interarrival_s", 8.0)
    traffic = TrafficConfig(
        mean_interarrival=None if mean is None else float(mean),
        packet_bits=int(_take(tr_d, "packet_bits", 256, "traffic")),
    )
    _reject_unknown(tr_d, "traffic")

    net_d = _expect_mapping(data.pop("network", None), "network")
    nodes = net_d.pop("nodes", None)
    routes = net_d.pop("routes", None)
    network = NetworkConfig(
        region_size=float(_take(net_d, "region_size_m", 4000.0, "network")),
        node_depth_max=float(_take(net_d, "node_depth_max_m", 50.0, "network")),
        one_hop_range=float(_take(net_d, "one_hop_range_m", 1000.0, "network")),
        data_rate=float(_take(net_d, "data_rate_bps", 512.0, "network")),
        max_hops=int(_take(net_d, "max_hops", 6, "network")),
        node_count=int(_take(net_d, "node_count", 20, "network")),
        link_count=int(_take(net_d, "link_count", 10, "network")),
        nodes=None if nodes is None else [tuple(float(v) for v in n) for n in nodes],
        routes=None if routes is None else [tuple(int(v) for v in r) for r in routes],
    )
    _reject_unknown(net_d, "network")
    _reject_unknown(data, "config")

    scenario = Scenario(
        seed=seed,
        duration=duration,
        warmup=warmup,
        environment=environment,
        channel=channel,
        phy=phy,
        mac=mac,
        traffic=traffic,
        network=network,
        per_link_busy_accounting=per_link,
    )
    return scenario.resolved()


def _reject_unknown(section: dict, context: str) -> None:
    if section:
        key = sorted(section)[0]
        raise ScenarioError(f"{context}.{key}: unknown field")


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    return scenario_from_dict(data)


def emit_scenario(scenario: Scenario, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(scenario_to_dict(scenario), fh, sort_keys=True)


def config_hash(scenario: Scenario) -> str:
    """Short stable digest of the full scenario for output provenance."""
    blob = json.dumps(scenario_to_dict(scenario), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]
