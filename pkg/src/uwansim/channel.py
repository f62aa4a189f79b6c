"""Channel impulse responses and correlation math for underwater acoustic links.

The statistical model draws complex circular-Gaussian taps under an
exponential power-delay profile with 1/d^2 spherical spreading.  Tap
streams are seeded from quantized link geometry (sorted endpoint depth
cells plus a link-length cell), so links with similar geometry produce
highly correlated responses while dissimilar links stay essentially
uncorrelated -- the spatial-variability behaviour that the MAC layer
exploits.  Quantizing a symmetric geometry signature also makes the
model reciprocal and seed-deterministic by construction.

An arrival-file path ingests precomputed ray arrivals for users who
have ray-traced data instead.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

STATISTICAL_PDP = "statistical_pdp"
ARRIVAL_FILE = "arrival_file"

_SEED_MASK = (1 << 64) - 1


class ArrivalFileError(ValueError):
    """Malformed arrival file, or a requested pair that is not present."""


@dataclass(frozen=True)
class NodePosition:
    """Node location: depth in meters (positive down), x/y horizontal meters.

    ``node_id`` is only needed when CIRs come from an arrival file, where
    pairs are keyed by id rather than by geometry.
    """

    depth: float
    x: float
    y: float
    node_id: str | None = None

    def __post_init__(self):
        for name in ("depth", "x", "y"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"NodePosition.{name} must be finite, got {value!r}")
        if self.depth < 0:
            raise ValueError(f"NodePosition.depth must be >= 0, got {self.depth}")

    def distance_to(self, other: "NodePosition") -> float:
        return math.dist((self.depth, self.x, self.y), (other.depth, other.x, other.y))

    def same_place(self, other: "NodePosition") -> bool:
        return self.depth == other.depth and self.x == other.x and self.y == other.y


@dataclass(frozen=True)
class Environment:
    """Acoustic environment shared by all links of a scenario.

    ``svp`` is a depth-ordered (depth m, sound speed m/s) table.  The
    statistical channel model does not consume it; it is carried for
    arrival-file provenance and experiment metadata.
    """

    water_depth: float = 80.0
    carrier_frequency: float = 25e3
    bandwidth: float = 4e3
    nominal_sound_speed: float = 1500.0
    svp: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.water_depth <= 0:
            raise ValueError(f"Environment.water_depth must be > 0, got {self.water_depth}")
        if self.bandwidth <= 0:
            raise ValueError(f"Environment.bandwidth must be > 0, got {self.bandwidth}")
        if self.carrier_frequency <= 0:
            raise ValueError("Environment.carrier_frequency must be > 0")
        if not 1400.0 <= self.nominal_sound_speed <= 1600.0:
            raise ValueError(
                f"Environment.nominal_sound_speed must lie in [1400, 1600] m/s, got {self.nominal_sound_speed}"
            )
        object.__setattr__(self, "svp", tuple((float(d), float(c)) for d, c in self.svp))
        depths = [d for d, _ in self.svp]
        if any(b <= a for a, b in zip(depths, depths[1:])):
            raise ValueError("Environment.svp depths must be strictly increasing")
        for _, speed in self.svp:
            if not 1400.0 <= speed <= 1600.0:
                raise ValueError(f"Environment.svp speeds must lie in [1400, 1600] m/s, got {speed}")

    @property
    def sample_interval(self) -> float:
        """Seconds per CIR tap: one tap per symbol-rate sample (1/bandwidth)."""
        return 1.0 / self.bandwidth


@dataclass(frozen=True)
class ChannelModelConfig:
    """How CIRs are produced for node pairs."""

    model_kind: str = STATISTICAL_PDP
    tap_count: int = 129
    pdp_decay_constant: float = 1.0e-3
    rng_seed: int = 0
    arrival_file_path: str | None = None
    depth_quantum: float = 5.0
    range_quantum: float = 50.0

    def __post_init__(self):
        if self.model_kind not in (STATISTICAL_PDP, ARRIVAL_FILE):
            raise ValueError(f"ChannelModelConfig.model_kind unknown: {self.model_kind!r}")
        if self.tap_count < 1:
            raise ValueError(f"ChannelModelConfig.tap_count must be >= 1, got {self.tap_count}")
        if self.pdp_decay_constant <= 0:
            raise ValueError("ChannelModelConfig.pdp_decay_constant must be > 0")
        if self.depth_quantum <= 0 or self.range_quantum <= 0:
            raise ValueError("ChannelModelConfig quanta must be > 0")
        if self.model_kind == ARRIVAL_FILE and not self.arrival_file_path:
            raise ValueError("ChannelModelConfig.arrival_file_path required for arrival_file model")


@dataclass(eq=False)
class Cir:
    """Complex tap vector of a directed link, one tap per sample_interval."""

    taps: np.ndarray
    sample_interval: float

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.complex128).reshape(-1)
        if taps.size < 1:
            raise ValueError("Cir requires at least one tap")
        if not np.all(np.isfinite(taps.real)) or not np.all(np.isfinite(taps.imag)):
            raise ValueError("Cir taps must be finite")
        if self.sample_interval <= 0:
            raise ValueError("Cir.sample_interval must be > 0")
        self.taps = taps

    def __len__(self) -> int:
        return self.taps.size


def norm(c: Cir) -> float:
    """Euclidean norm of the complex tap vector."""
    return float(np.linalg.norm(c.taps))


def cross_correlation(a: Cir, b: Cir, lag: int) -> complex:
    """r_{a,b}[lag] = sum_l a[l] * conj(b[l + lag]); out-of-range taps are zero."""
    at, bt = a.taps, b.taps
    lo = max(0, -lag)
    hi = min(at.size, bt.size - lag)
    if hi <= lo:
        return 0j
    return complex(np.dot(at[lo:hi], np.conj(bt[lo + lag : hi + lag])))


def correlation_sequence(a: Cir, b: Cir) -> np.ndarray:
    """All r_{a,b}[lag] for lag = -(len(a)-1) .. len(b)-1, ascending.

    Computed as a full convolution with the reversed conjugate of b;
    element m holds the lag m - (len(a) - 1).
    """
    conv = np.convolve(a.taps, np.conj(b.taps[::-1]))
    return conv[::-1]


def normalized_cross_correlation(a: Cir, b: Cir, lag: int) -> complex:
    """eta[lag] = r[lag] / (||a|| * ||b||); magnitude bounded by 1."""
    na, nb = norm(a), norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("normalized_cross_correlation requires nonzero-norm CIRs")
    return cross_correlation(a, b, lag) / (na * nb)


def peak_eta(a: Cir, b: Cir) -> float:
    """|eta[0]| between two links, the quantity the MAC compares to its threshold."""
    return abs(normalized_cross_correlation(a, b, 0))


def direct_path_delay(tx: NodePosition, rx: NodePosition, env: Environment) -> float:
    """Straight-line propagation delay: distance / nominal sound speed."""
    return tx.distance_to(rx) / env.nominal_sound_speed


def _link_signature(tx: NodePosition, rx: NodePosition, cfg: ChannelModelConfig) -> tuple[int, int, int]:
    """Quantized symmetric geometry signature used to seed the tap stream.

    Links whose endpoint depths fall in the same depth cells and whose
    lengths fall in the same range cell share a signature, hence a tap
    stream; sorting the depth cells makes the signature (and thus the
    CIR) reciprocal.
    """
    dq_tx = int(math.floor(tx.depth / cfg.depth_quantum))
    dq_rx = int(math.floor(rx.depth / cfg.depth_quantum))
    lq = int(math.floor(tx.distance_to(rx) / cfg.range_quantum))
    return (min(dq_tx, dq_rx), max(dq_tx, dq_rx), lq)


def generate_cir(
    tx: NodePosition, rx: NodePosition, env: Environment, cfg: ChannelModelConfig
) -> Cir:
    """Produce the CIR of the directed link tx->rx.

    Statistical model: tap l has expected power exp(-l*dt/tau) / d^2 with
    complex circular-Gaussian amplitude, seeded from the quantized link
    geometry so that the result is deterministic, reciprocal, and highly
    correlated across geometrically similar links.
    """
    if tx.same_place(rx):
        raise ValueError("generate_cir: tx and rx positions coincide")
    if cfg.model_kind == ARRIVAL_FILE:
        if tx.node_id is None or rx.node_id is None:
            raise ValueError("arrival_file channel model requires NodePosition.node_id on both ends")
        table = _arrival_table(cfg.arrival_file_path)
        return table.cir((tx.node_id, rx.node_id), env.sample_interval)

    distance = tx.distance_to(rx)
    seed = np.random.SeedSequence(
        (cfg.rng_seed & _SEED_MASK, *(q & _SEED_MASK for q in _link_signature(tx, rx, cfg)))
    )
    rng = np.random.default_rng(seed)
    lags = np.arange(cfg.tap_count)
    pdp = np.exp(-lags * env.sample_interval / cfg.pdp_decay_constant) / distance**2
    scale = np.sqrt(pdp / 2.0)
    taps = scale * (rng.standard_normal(cfg.tap_count) + 1j * rng.standard_normal(cfg.tap_count))
    return Cir(taps, env.sample_interval)


class ArrivalTable:
    """Parsed arrival file: ray arrivals per directed node pair.

    Format: header line ``ARRIVALS v1``, then whitespace-separated records
    ``tx_id rx_id delay_s amplitude phase_rad``, ``#`` starting a comment.
    """

    def __init__(self, records: dict[tuple[str, str], list[tuple[float, float, float]]], path: str = "<memory>"):
        self.records = records
        self.path = path

    @classmethod
    def from_file(cls, path: str) -> "ArrivalTable":
        records: dict[tuple[str, str], list[tuple[float, float, float]]] = {}
        header_seen = False
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if not header_seen:
                    if line != "ARRIVALS v1":
                        raise ArrivalFileError(f"{path}:{lineno}: expected header 'ARRIVALS v1', got {line!r}")
                    header_seen = True
                    continue
                fields = line.split()
                if len(fields) != 5:
                    raise ArrivalFileError(f"{path}:{lineno}: expected 5 fields, got {len(fields)}")
                tx_id, rx_id = fields[0], fields[1]
                try:
                    delay, amplitude, phase = (float(v) for v in fields[2:])
                except ValueError as exc:
                    raise ArrivalFileError(f"{path}:{lineno}: non-numeric arrival record: {exc}") from None
                if not math.isfinite(delay) or delay < 0:
                    raise ArrivalFileError(f"{path}:{lineno}: delay must be finite and >= 0, got {delay}")
                if not math.isfinite(amplitude) or amplitude < 0:
                    raise ArrivalFileError(f"{path}:{lineno}: amplitude must be finite and >= 0, got {amplitude}")
                if not math.isfinite(phase):
                    raise ArrivalFileError(f"{path}:{lineno}: phase must be finite, got {phase}")
                records.setdefault((tx_id, rx_id), []).append((delay, amplitude, phase))
        if not header_seen:
            raise ArrivalFileError(f"{path}: missing 'ARRIVALS v1' header")
        return cls(records, path)

    def _arrivals(self, pair: tuple[str, str]) -> list[tuple[float, float, float]]:
        found = self.records.get(pair)
        if found is None:
            # channel reciprocity: accept the reversed direction
            found = self.records.get((pair[1], pair[0]))
        if not found:
            raise ArrivalFileError(f"{self.path}: no arrivals for pair {pair[0]}->{pair[1]}")
        return found

    def cir(self, pair: tuple[str, str], sample_interval: float) -> Cir:
        """Bin arrivals into taps at round(delay/sample_interval) past the earliest one."""
        arrivals = self._arrivals(pair)
        earliest = min(delay for delay, _, _ in arrivals)
        indices = [round((delay - earliest) / sample_interval) for delay, _, _ in arrivals]
        taps = np.zeros(max(indices) + 1, dtype=np.complex128)
        for idx, (_, amplitude, phase) in zip(indices, arrivals):
            taps[idx] += amplitude * cmath.exp(1j * phase)
        return Cir(taps, sample_interval)

    def direct_delay(self, pair: tuple[str, str]) -> float:
        return min(delay for delay, _, _ in self._arrivals(pair))


@lru_cache(maxsize=8)
def _arrival_table(path: str) -> ArrivalTable:
    return ArrivalTable.from_file(path)


def load_arrivals(path: str, pair_index: tuple[str, str], sample_interval: float = 1.0 / 4e3) -> Cir:
    """Load the CIR of one pair from an arrival file."""
    return ArrivalTable.from_file(path).cir(pair_index, sample_interval)


class ChannelModel:
    """Resolves and caches per-pair CIRs and propagation delays for a run."""

    def __init__(self, env: Environment, cfg: ChannelModelConfig):
        self.env = env
        self.cfg = cfg
        self._cirs: dict[tuple[NodePosition, NodePosition], Cir] = {}
        self._table = _arrival_table(cfg.arrival_file_path) if cfg.model_kind == ARRIVAL_FILE else None

    def cir(self, tx: NodePosition, rx: NodePosition) -> Cir:
        key = (tx, rx)
        cached = self._cirs.get(key)
        if cached is None:
            cached = generate_cir(tx, rx, self.env, self.cfg)
            self._cirs[key] = cached
            self._cirs[(rx, tx)] = cached
        return cached

    def propagation_delay(self, tx: NodePosition, rx: NodePosition) -> float:
        if self._table is not None:
            return self._table.direct_delay((tx.node_id, rx.node_id))
        return direct_path_delay(tx, rx, self.env)
