"""Link- and run-level performance metrics.

All power arithmetic is done in linear milliwatts and converted back to
dB(m) only at the edges, so quantities compose exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence


def dbm_to_mw(value_dbm: float) -> float:
    return 10.0 ** (value_dbm / 10.0)


def mw_to_dbm(value_mw: float) -> float:
    if value_mw <= 0.0:
        raise ValueError(f"power must be positive, got {value_mw} mW")
    return 10.0 * math.log10(value_mw)


@dataclass(frozen=True)
class DbmPower:
    """A power level carried in dBm with its linear-milliwatt view."""

    value_dbm: float

    @property
    def mw(self) -> float:
        return dbm_to_mw(self.value_dbm)

    @classmethod
    def from_mw(cls, value_mw: float) -> "DbmPower":
        return cls(mw_to_dbm(value_mw))


@dataclass(frozen=True)
class SinrSample:
    """One measured SINR value for a signal link at a point in time."""

    time_ms: int
    sinr_db: float
    signal_link: object = None
    interferer_count: int = 0


def sinr_db(signal_gain_db: float,
            interferer_gains_db: Sequence[float],
            p_tx_dbm: float = 0.0,
            noise_dbm: float = -100.0) -> float:
    """Signal-to-interference-plus-noise ratio in dB.

    Signal and every interferer are transmitted at ``p_tx_dbm``; the noise
    floor keeps the denominator finite even with no interferers.
    """
    signal_mw = dbm_to_mw(p_tx_dbm + signal_gain_db)
    interference_mw = sum(dbm_to_mw(p_tx_dbm + g) for g in interferer_gains_db)
    noise_mw = dbm_to_mw(noise_dbm)
    return 10.0 * math.log10(signal_mw / (interference_mw + noise_mw))


def outage_probability(sinr_series_db: Sequence[float], gamma_th_db: float) -> float:
    """Fraction of SINR samples strictly below the threshold ``gamma_th_db``."""
    if len(sinr_series_db) == 0:
        raise ValueError("outage probability is undefined for an empty series")
    below = sum(1 for s in sinr_series_db if s < gamma_th_db)
    return below / len(sinr_series_db)


class Throughput(NamedTuple):
    pkts_per_s: float
    bits_per_s: float


def throughput(successful_packets: int, packet_bits: int, total_time_s: float) -> Throughput:
    """Delivered-packet rate and the corresponding bit rate."""
    if total_time_s <= 0:
        raise ValueError(f"total_time_s must be positive, got {total_time_s}")
    pkts = successful_packets / total_time_s
    return Throughput(pkts, pkts * packet_bits)


def spectral_efficiency(throughput_bps: float,
                        n_active_channels: int,
                        bandwidth_hz: float) -> float:
    """Aggregate spectral efficiency in bit/s/Hz.

    ``throughput_bps`` is the single-channel bit rate; the aggregate is the
    single-channel rate scaled by the number of actively routed channels.
    """
    if bandwidth_hz <= 0:
        raise ValueError(f"bandwidth_hz must be positive, got {bandwidth_hz}")
    if n_active_channels < 0:
        raise ValueError(f"n_active_channels must be >= 0, got {n_active_channels}")
    return throughput_bps * n_active_channels / bandwidth_hz


def pdr(delivered: int, sent: int) -> float:
    """Packet delivery ratio; defined as 1 when nothing was sent."""
    if delivered < 0 or sent < 0 or delivered > sent:
        raise ValueError(f"inconsistent counts: delivered={delivered} sent={sent}")
    if sent == 0:
        return 1.0
    return delivered / sent


@dataclass
class BackoffHistogram:
    """Histogram of continuous back-off run durations.

    ``counts[i]`` covers ``[bin_edges_ms[i], bin_edges_ms[i+1])``; the final
    entry is an overflow bin for runs at or beyond the last edge.  Both a
    per-run normalization and a share-of-backed-off-time normalization are
    kept, since either reading of "percentage" is plausible for reporting.
    """

    bin_edges_ms: list[float]
    counts: list[int]
    pct_runs: list[float]
    pct_time: list[float]
    mean_ms: float
    n_runs: int
    total_time_ms: float = 0.0

    def bins(self) -> list[tuple[float, float]]:
        edges = self.bin_edges_ms
        spans = [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]
        spans.append((edges[-1], math.inf))
        return spans


@dataclass
class MetricsReport:
    """Aggregated results of one simulation run.

    Curve fields are (x, y) pair lists in sweep order.  The two spectral
    efficiency aggregations coincide when the single-channel rate is the
    mean over active channels; both are kept because either aggregation is
    a defensible reading of the headline formula.
    """

    policy: str
    routing: str
    arrival_rate_pps: float
    seed: int
    num_bans: int
    num_windows: int
    duration_s: float
    backoff_hist: BackoffHistogram
    mean_backoff_ms: float
    backoff_durations_ms: dict[int, list[float]]
    throughput_pkts_per_s: float
    throughput_bits_per_s: float
    outage_curve: list[tuple[float, float]]
    pdr: float
    pdr_vs_sensitivity: list[tuple[float, float]]
    spectral_efficiency_bps_per_hz: float
    spectral_efficiency_sum_bps_per_hz: float
    speff_vs_sensitivity: list[tuple[float, float]]
    n_active_channels: int
    sent_transmissions: int
    delivered_transmissions: int
    mac_totals: object
    sinr_samples_db: list[float] = field(default_factory=list, repr=False)
    window_log: list = field(default_factory=list, repr=False)


def backoff_histogram(durations_ms: Sequence[float],
                      bin_edges_ms: Sequence[float]) -> BackoffHistogram:
    """Bin continuous back-off durations and compute their mean.

    The mean is NaN when there are no runs at all.
    """
    edges = list(bin_edges_ms)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bin edges must be strictly increasing with >= 2 entries")
    n_bins = len(edges) - 1
    counts = [0] * (n_bins + 1)
    time_in_bin = [0.0] * (n_bins + 1)
    for d in durations_ms:
        if d >= edges[-1]:
            idx = n_bins
        else:
            idx = n_bins - 1
            for i in range(n_bins):
                if edges[i] <= d < edges[i + 1]:
                    idx = i
                    break
        counts[idx] += 1
        time_in_bin[idx] += d
    n_runs = len(durations_ms)
    total_time = float(sum(durations_ms))
    pct_runs = [c / n_runs if n_runs else 0.0 for c in counts]
    pct_time = [t / total_time if total_time else 0.0 for t in time_in_bin]
    mean = total_time / n_runs if n_runs else math.nan
    return BackoffHistogram(edges, counts, pct_runs, pct_time, mean, n_runs, total_time)
