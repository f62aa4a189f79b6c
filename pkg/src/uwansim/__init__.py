"""Discrete-event simulator for multi-hop underwater acoustic networks
with a time-reversal physical layer and MAC protocols."""

from .channel import (
    ChannelModel,
    ChannelModelConfig,
    Cir,
    Environment,
    NodePosition,
    cross_correlation,
    generate_cir,
    load_arrivals,
    norm,
    normalized_cross_correlation,
)
from .mac import Frame, FrameKind, MacTimers, Packet
from .presets import ExperimentPreset, run_preset
from .scenario import Scenario, ScenarioError, load_scenario, scenario_from_dict
from .sim import MetricsRecord, RunResult, Simulator, collect_metrics, run_scenario
from .tr_phy import (
    PhyConfig,
    TrWaveform,
    composite_response,
    eta_threshold,
    p_ili,
    p_isi,
    p_sig,
    sinr_atrsts,
    sinr_sdt,
    tr_waveform,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelModel",
    "ChannelModelConfig",
    "Cir",
    "Environment",
    "ExperimentPreset",
    "Frame",
    "FrameKind",
    "MacTimers",
    "MetricsRecord",
    "NodePosition",
    "Packet",
    "PhyConfig",
    "RunResult",
    "Scenario",
    "ScenarioError",
    "Simulator",
    "TrWaveform",
    "collect_metrics",
    "composite_response",
    "cross_correlation",
    "eta_threshold",
    "generate_cir",
    "load_arrivals",
    "load_scenario",
    "norm",
    "normalized_cross_correlation",
    "p_ili",
    "p_isi",
    "p_sig",
    "run_preset",
    "run_scenario",
    "scenario_from_dict",
    "sinr_atrsts",
    "sinr_sdt",
    "tr_waveform",
]
