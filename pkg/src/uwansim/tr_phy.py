"""Time-reversal transmission math: waveforms, ISI/ILI powers, SINRs, threshold.

Everything here is downstream of a single construction: transmitting the
normalized time-reversed conjugate of a link's CIR turns the physical
channel into a matched filter, so the received (down-sampled) composite
response is the link autocorrelation scaled by the link norm.  Signal,
ISI, and inter-link interference powers then measure the peak and
off-peak values of normalized (auto/cross) correlations sampled on the
lag grid D*l - (L-1), l = 0 .. 2(L-1)/D.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import Cir, norm


@dataclass(frozen=True)
class PhyConfig:
    """Physical-layer parameters shared by all nodes.

    avg_transmit_power is electric; acoustic_conversion maps it to acoustic
    power for reporting.  SINRs are power ratios, so the conversion factor
    cancels whenever it is applied to both signal and noise.
    """

    avg_transmit_power: float = 1.0
    noise_variance: float = 1.0
    updown_factor: int = 1
    min_required_sinr: float = 1.0
    acoustic_conversion: float = 1.0

    def __post_init__(self):
        if self.avg_transmit_power <= 0:
            raise ValueError("PhyConfig.avg_transmit_power must be > 0")
        if self.noise_variance <= 0:
            raise ValueError("PhyConfig.noise_variance must be > 0")
        if self.updown_factor < 1 or int(self.updown_factor) != self.updown_factor:
            raise ValueError("PhyConfig.updown_factor must be a positive integer")
        if self.min_required_sinr <= 0:
            raise ValueError("PhyConfig.min_required_sinr must be > 0")
        if self.acoustic_conversion <= 0:
            raise ValueError("PhyConfig.acoustic_conversion must be > 0")


@dataclass(eq=False)
class TrWaveform:
    """Unit-norm time-reversed conjugate of a link CIR."""

    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.complex128).reshape(-1)
        if abs(np.linalg.norm(taps) - 1.0) > 1e-12:
            raise ValueError("TrWaveform must have unit Euclidean norm")
        self.taps = taps


def _check_divisible(tap_count: int, d_factor: int) -> None:
    if (tap_count - 1) % d_factor != 0:
        raise ValueError(
            f"(L-1) must be divisible by the up/down-sampling factor: L={tap_count}, D={d_factor}"
        )


def tr_waveform(c: Cir) -> TrWaveform:
    """g[k] = conj(c[L-1-k]) / ||c||."""
    n = norm(c)
    if n == 0.0:
        raise ValueError("tr_waveform requires a nonzero CIR")
    return TrWaveform(np.conj(c.taps[::-1]) / n)


def composite_response(c: Cir, d_factor: int) -> np.ndarray:
    """Down-sampled channel-plus-waveform response (c conv g)[D*l].

    Length 2(L-1)/D + 1; the center entry equals ||c|| (autocorrelation
    peak), everything else is residual ISI structure.
    """
    _check_divisible(len(c), d_factor)
    g = tr_waveform(c).taps
    return np.convolve(c.taps, g)[::d_factor]


def _sampled_correlation(a_taps: np.ndarray, b_taps: np.ndarray, d_factor: int) -> np.ndarray:
    """Cross-correlation values on the lag grid D*l - (L-1), via full convolution.

    The returned vector's center entry is r[0]; the off-center entries
    enumerate the same symmetric lag set the power sums run over.
    """
    if a_taps.size != b_taps.size:
        raise ValueError(f"CIR lengths must match: {a_taps.size} vs {b_taps.size}")
    _check_divisible(a_taps.size, d_factor)
    return np.convolve(a_taps, np.conj(b_taps[::-1]))[::d_factor]


def autocorr_offpeak_sum(c: Cir, d_factor: int) -> float:
    """sum_{l != (L-1)/D} |eta_{c,c}[D*l-(L-1)]|^2 -- the normalized ISI energy."""
    n2 = float(np.dot(c.taps, np.conj(c.taps)).real)
    if n2 == 0.0:
        raise ValueError("autocorr_offpeak_sum requires a nonzero CIR")
    sampled = _sampled_correlation(c.taps, c.taps, d_factor)
    mags = np.abs(sampled) ** 2 / n2**2
    center = (len(c) - 1) // d_factor
    return float(mags.sum() - mags[center])


def crosscorr_sampled_stats(a: Cir, b: Cir, d_factor: int) -> tuple[float, float]:
    """(|eta_{a,b}[0]|, sum over the off-center sampled lags of |eta|^2)."""
    na, nb = norm(a), norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("crosscorr_sampled_stats requires nonzero CIRs")
    sampled = _sampled_correlation(a.taps, b.taps, d_factor)
    mags = np.abs(sampled) ** 2 / (na * nb) ** 2
    center = (len(a) - 1) // d_factor
    return float(math.sqrt(mags[center])), float(mags.sum() - mags[center])


def p_sig(c: Cir, phy: PhyConfig) -> float:
    """Received signal power of a TR transmission: D * P * ||c||^2."""
    return phy.updown_factor * phy.avg_transmit_power * norm(c) ** 2


def p_isi(c: Cir, phy: PhyConfig) -> float:
    """Residual self-interference power after TR and down-sampling."""
    n2 = norm(c) ** 2
    return phy.updown_factor * phy.avg_transmit_power * n2 * autocorr_offpeak_sum(c, phy.updown_factor)


def p_ili(interferer_to_victim: Cir, interferer_link: Cir, phy: PhyConfig) -> float:
    """Inter-link interference power at a victim from one concurrent TR link.

    D * P * ||h_iv||^2 * sum over all sampled lags of |eta_{iv,il}|^2,
    i.e. the peak term plus the off-peak terms.
    """
    peak, offpeak = crosscorr_sampled_stats(interferer_to_victim, interferer_link, phy.updown_factor)
    n2 = norm(interferer_to_victim) ** 2
    return phy.updown_factor * phy.avg_transmit_power * n2 * (peak**2 + offpeak)


def ili_power_from_parts(
    interferer_to_victim_norm: float, peak_eta: float, offpeak_eta_sq_sum: float, phy: PhyConfig
) -> float:
    """ILI power with the peak |eta| supplied explicitly.

    Lets sweeps and the admission check vary the peak cross-correlation
    while holding the measured off-peak structure fixed.
    """
    return (
        phy.updown_factor
        * phy.avg_transmit_power
        * interferer_to_victim_norm**2
        * (peak_eta**2 + offpeak_eta_sq_sum)
    )


def sinr_atrsts(
    signal_link: Cir,
    interferers: list[tuple[Cir, Cir]],
    phy: PhyConfig,
) -> float:
    """Effective SINR of active TR-based simultaneous transmissions.

    Each interferer is (channel interferer->victim, interferer's own link).
    """
    denom = p_isi(signal_link, phy) + phy.noise_variance
    for to_victim, own_link in interferers:
        denom += p_ili(to_victim, own_link, phy)
    return p_sig(signal_link, phy) / denom


def sdt_signal_and_isi(c: Cir, d_factor: int) -> tuple[float, float]:
    """(|h_lbar|^2, sum of |h[.]|^2 over the other sampled taps) for SDT.

    The down-sampling phase is chosen so the strongest tap is always
    retained, even when its index is not a multiple of D.
    """
    _check_divisible(len(c), d_factor)
    mags = np.abs(c.taps) ** 2
    l_bar = int(np.argmax(mags))
    sampled = mags[l_bar % d_factor :: d_factor]
    return float(mags[l_bar]), float(sampled.sum() - mags[l_bar])


def sinr_sdt(c: Cir, phy: PhyConfig) -> float:
    """Effective SINR of a single direct (non-TR) transmission."""
    if norm(c) == 0.0:
        raise ValueError("sinr_sdt requires a nonzero CIR")
    peak_power, isi_sum = sdt_signal_and_isi(c, phy.updown_factor)
    dp = phy.updown_factor * phy.avg_transmit_power
    return dp * peak_power / (dp * isi_sum + phy.noise_variance)


def eta_threshold(
    victim_link_norm: float,
    victim_autocorr_offpeak_sum: float,
    interferer_to_victim: Cir,
    interferer_link: Cir,
    phy: PhyConfig,
) -> float | None:
    """Largest peak |eta| between interfering and victim-bound channels that
    still leaves the victim at or above its minimum required SINR.

    Returns None when no value admits a simultaneous transmission (the
    radicand is negative, e.g. in near-far geometries); otherwise the
    square root clamped into [0, 1].
    """
    if victim_link_norm <= 0:
        raise ValueError("eta_threshold requires a positive victim link norm")
    gamma = phy.min_required_sinr
    nv2 = victim_link_norm**2
    ni2 = norm(interferer_to_victim) ** 2
    _, interferer_offpeak = crosscorr_sampled_stats(interferer_to_victim, interferer_link, phy.updown_factor)
    radicand = (
        nv2 / gamma
        - nv2 * victim_autocorr_offpeak_sum
        - ni2 * interferer_offpeak
        - phy.noise_variance / (phy.updown_factor * phy.avg_transmit_power)
    ) / ni2
    if radicand < 0:
        return None
    return min(1.0, math.sqrt(radicand))
