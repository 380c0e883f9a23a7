"""Full-run orchestration: the window loop and report assembly.

Each 600 ms window is processed with state handed forward one window at a
time: routing graphs and adaptive thresholds for window i+1 derive only
from what was observed in window i.  Within a window the MAC engine
resolves slot-level contention; every actual transmission is then scored
end-to-end over its planned route, including the diversity branches of
each receiving BAN.

Delivery under a swept receive sensitivity is re-scored from recorded
per-transmission data rather than re-simulated, mirroring how a measured
dataset would be post-processed: for every transmission we keep the
highest sensitivity at which it would still have been delivered.
"""

from __future__ import annotations

import math
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import mac as mac_mod
from . import metrics as metrics_mod
from . import routing as routing_mod
from .channel import (ChannelTrace, RadioId, SynthConfig, ban_radios, hub,
                      ingest_trace, synthesize_trace, windows)
from .errors import BbnSimError, ConfigError
from .mac import (MacConfig, MacWindowStats, SlotKind, TdmaSchedule,
                  ThresholdController, adapt_threshold, run_csma_window,
                  run_tdma_window)
from .metrics import BackoffHistogram, backoff_histogram, pdr as pdr_fn, sinr_db
from .routing import NetworkGraph, RoutePlan, SprMetric, cmr, spr

NEG_INF = float("-inf")
DEFAULT_GAMMA_SWEEP = (5.0, 10.0, 15.0, 20.0)
DEFAULT_SENSITIVITY_SWEEP = (-100.0, -96.0, -92.0, -88.0, -84.0)
DEFAULT_BACKOFF_EDGES = tuple(float(e) for e in range(0, 3100, 100))

POLICY_ADAPTIVE = "adaptive"
POLICY_STATIC = "static"
POLICY_TDMA = "tdma"

STRATEGY_METRICS = {
    "spr_etx": SprMetric.ETX_ONLY,
    "spr_etx2": SprMetric.ETX_PLUS_HOP_MAX2,
    "cmr": None,
}


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run bit-for-bit."""

    # trace source: a CSV path, or a synthetic generator spec
    trace_path: str | None = None
    synth: SynthConfig | None = None
    trace_seed: int | None = None

    # MAC policy
    mac_policy: str = POLICY_ADAPTIVE
    static_threshold_dbm: float = -86.0
    initial_threshold_dbm: float = mac_mod.INITIAL_THRESHOLD_DBM
    threshold_step_db: float = 1.0
    shared_controller: bool = False
    tdma_duty: float = 1.0 / 12.0
    tdma_coordinated: tuple[int, ...] = (0, 1, 2, 3)
    noncoordinated_mac: str = "aloha"

    # radio constants
    p_tx_dbm: float = 0.0
    noise_dbm: float = -100.0
    rx_sensitivity_dbm: float = -90.0
    decode_sinr_db: float = 0.0
    bandwidth_hz: float = 1e6
    packet_bits: int = 273

    # routing
    routing_strategy: str = "spr_etx2"
    routing_gamma_db: float | None = None
    init_etx_bound: float = routing_mod.DEFAULT_INIT_ETX_BOUND

    # traffic
    arrival_rate_pps: float = 1.0
    flows: str | tuple[tuple[int, int], ...] = "ring"

    # evaluation sweeps and reporting
    gamma_sweep_db: tuple[float, ...] = DEFAULT_GAMMA_SWEEP
    sensitivity_sweep_dbm: tuple[float, ...] = DEFAULT_SENSITIVITY_SWEEP
    backoff_bin_edges_ms: tuple[float, ...] = DEFAULT_BACKOFF_EDGES

    window_ms: int = 600
    seed: int = 0

    def validate(self) -> None:
        if (self.trace_path is None) == (self.synth is None):
            raise ConfigError("exactly one of trace_path and synth must be set")
        if self.mac_policy not in (POLICY_ADAPTIVE, POLICY_STATIC, POLICY_TDMA):
            raise ConfigError(f"unknown MAC policy {self.mac_policy!r}")
        if self.routing_strategy not in STRATEGY_METRICS:
            raise ConfigError(f"unknown routing strategy {self.routing_strategy!r}")
        if self.arrival_rate_pps < 0:
            raise ConfigError("arrival rate must be >= 0")
        if not self.gamma_sweep_db:
            raise ConfigError("gamma_sweep_db must be non-empty")
        if not self.sensitivity_sweep_dbm:
            raise ConfigError("sensitivity_sweep_dbm must be non-empty")
        if self.window_ms <= 0:
            raise ConfigError("window_ms must be positive")

    @property
    def policy_label(self) -> str:
        if self.mac_policy == POLICY_STATIC:
            return f"static@{self.static_threshold_dbm:g}"
        if self.mac_policy == POLICY_TDMA:
            return f"tdma@{self.tdma_duty:.4g}"
        return POLICY_ADAPTIVE

    def mac_config(self, slot_ms: int) -> MacConfig:
        return MacConfig(p_tx_dbm=self.p_tx_dbm,
                         noise_dbm=self.noise_dbm,
                         rx_sensitivity_dbm=self.rx_sensitivity_dbm,
                         decode_sinr_db=self.decode_sinr_db,
                         packet_bits=self.packet_bits,
                         slot_ms=slot_ms)


@dataclass
class WindowRecord:
    """Per-window decision trail kept for inspection and testing."""

    index: int
    thresholds: dict[int, float]
    plans: dict[int, RoutePlan]
    stats: dict[int, MacWindowStats]


_KIND_CODE = {SlotKind.IDLE: 0, SlotKind.BACKOFF: 1,
              SlotKind.SUCCESS: 2, SlotKind.DECODE_FAILURE: 3}
_BACKOFF_CODE = 1


@dataclass
class RunState:
    """Mutable cross-window state; window i+1 sees only window-i facts."""

    window_index: int = 0
    controllers: dict[int, ThresholdController] = field(default_factory=dict)
    shared_controller: ThresholdController | None = None
    queues: dict[int, deque] = field(default_factory=dict)
    prev_outage: dict[tuple[int, int], float] | None = None
    prev_branch_sinr: dict[tuple[int, int], tuple[float, float, float]] | None = None
    # per-source slot outcome codes, one array per processed window
    code_log: dict[int, list[np.ndarray]] = field(default_factory=dict)


def _backoff_runs_ms(codes: np.ndarray, slot_ms: int) -> list[float]:
    """Vectorized equivalent of mac.continuous_backoff_durations."""
    mask = (codes == _BACKOFF_CODE).astype(np.int8)
    edges = np.flatnonzero(np.diff(np.concatenate(([0], mask, [0]))))
    spans = edges.reshape(-1, 2)
    return [float((b - a) * slot_ms) for a, b in spans]


def resolve_flows(flows, num_bans: int) -> dict[int, int]:
    """Source-to-destination BAN map; each BAN sources at most one flow."""
    if flows == "ring":
        if num_bans < 2:
            raise ConfigError("ring traffic needs at least 2 BANs")
        return {i: (i + 1) % num_bans for i in range(num_bans)}
    result: dict[int, int] = {}
    for s, d in flows:
        if not (0 <= s < num_bans and 0 <= d < num_bans):
            raise ConfigError(f"flow {s}->{d} outside {num_bans} BANs")
        if s == d:
            raise ConfigError(f"flow {s}->{d} has equal endpoints")
        if s in result:
            raise ConfigError(f"BAN {s} sources more than one flow")
        result[s] = d
    if not result:
        raise ConfigError("no traffic flows configured")
    return result


def resolve_trace(config: ExperimentConfig, seed_seq: np.random.SeedSequence) -> ChannelTrace:
    if config.trace_path is not None:
        return ingest_trace(config.trace_path)
    seed = config.trace_seed if config.trace_seed is not None else seed_seq
    return synthesize_trace(config.synth, seed)


def _estimate_link_state(window, num_bans: int, cfg: ExperimentConfig,
                         gamma_db: float, want_branches: bool):
    """Window-i per-link outage (and branch SNR means) for window i+1.

    Estimates are interference-free by construction: at estimation time the
    next window's transmission pattern is unknown, so the noise floor is
    the only impairment applied.  Every hub pair is estimated, since any
    BAN may serve as a relay.
    """
    outage: dict[tuple[int, int], float] = {}
    branch: dict[tuple[int, int], tuple[float, float, float]] = {}
    for u in range(num_bans):
        for v in range(u + 1, num_bans):
            series = window.series(hub(u), hub(v))
            snrs = [sinr_db(g, (), cfg.p_tx_dbm, cfg.noise_dbm) for g in series]
            outage[(u, v)] = metrics_mod.outage_probability(snrs, gamma_db)
    if want_branches:
        for u in range(num_bans):
            for v in range(num_bans):
                if u == v:
                    continue
                vals = []
                for radio in ban_radios(v):
                    series = window.series(hub(u), radio)
                    mean_gain = float(np.mean(series))
                    vals.append(sinr_db(mean_gain, (), cfg.p_tx_dbm, cfg.noise_dbm))
                branch[(u, v)] = tuple(vals)
    return outage, branch


def _plan_routes(graph: NetworkGraph, flows: Mapping[int, int], strategy: str,
                 branch_sinr) -> dict[int, RoutePlan]:
    plans: dict[int, RoutePlan] = {}
    for s in sorted(flows):
        d = flows[s]
        if strategy == "cmr":
            plans[s] = cmr(graph, s, d, branch_sinr or {})
        else:
            path = spr(graph, s, d, STRATEGY_METRICS[strategy])
            plans[s] = RoutePlan(strategy, path)
    return plans


@dataclass(frozen=True)
class _Transmission:
    """One actual transmission, reduced to what re-scoring needs."""

    slot: int
    source: int
    sinr_sample_db: float
    critical_power_dbm: float  # delivered iff this exceeds the sensitivity


def _score_transmission(trace: ChannelTrace, sample: int, src: int,
                        plan: RoutePlan, transmitters: Sequence[int],
                        cfg: ExperimentConfig) -> _Transmission:
    """End-to-end scoring of one transmission over its planned route(s).

    Per hop, each branch radio of the receiving BAN gets a received power
    and an SINR against all other slot-concurrent transmitters.  The
    recorded critical power is the highest receive sensitivity that still
    leaves a fully decodable branch chain on some route; the SINR sample is
    the bottleneck hop's best-branch SINR on the better route, ungated by
    sensitivity.
    """
    paths = [plan.primary] if plan.secondary is None else [plan.primary, plan.secondary]
    use_branches = plan.strategy == "cmr"
    best_critical = NEG_INF
    best_sample = NEG_INF
    for path in paths:
        path_critical = math.inf
        path_sample = math.inf
        for u, v in path.hops():
            tx_idx = hub(u).index
            radios = ban_radios(v) if use_branches else (hub(v),)
            hop_critical = NEG_INF
            hop_best_sinr = NEG_INF
            for radio in radios:
                r_idx = radio.index
                gain = float(trace.series(tx_idx, r_idx)[sample])
                interferers = [float(trace.series(hub(j).index, r_idx)[sample])
                               for j in transmitters
                               if j != src and j != u and hub(j).index != r_idx]
                power = cfg.p_tx_dbm + gain
                gamma = sinr_db(gain, interferers, cfg.p_tx_dbm, cfg.noise_dbm)
                hop_best_sinr = max(hop_best_sinr, gamma)
                if gamma >= cfg.decode_sinr_db:
                    hop_critical = max(hop_critical, power)
            path_critical = min(path_critical, hop_critical)
            path_sample = min(path_sample, hop_best_sinr)
        best_critical = max(best_critical, path_critical)
        best_sample = max(best_sample, path_sample)
    return _Transmission(sample, src, best_sample, best_critical)


def run(config: ExperimentConfig, trace: ChannelTrace | None = None) -> "metrics_mod.MetricsReport":
    """Execute one experiment and assemble its report.

    ``trace`` can be injected to reuse an already-built trace; it must
    match what the config would resolve for the run to stay reproducible.
    """
    config.validate()
    master = np.random.SeedSequence(config.seed)
    arrivals_ss, graph_ss, synth_ss = master.spawn(3)
    if trace is None:
        trace = resolve_trace(config, synth_ss)
    wins = windows(trace, config.window_ms)
    if not wins:
        raise ConfigError(
            f"trace of {trace.duration_ms} ms is shorter than one "
            f"{config.window_ms} ms window")
    slot_ms = trace.sample_period_ms
    slots_per_window = config.window_ms // slot_ms
    mac_cfg = config.mac_config(slot_ms)
    flows = resolve_flows(config.flows, trace.num_bans)
    sources = sorted(flows)
    gamma_route = (config.routing_gamma_db if config.routing_gamma_db is not None
                   else config.decode_sinr_db)

    total_slots = len(wins) * slots_per_window
    rng = np.random.default_rng(arrivals_ss)
    rate_per_slot = config.arrival_rate_pps * slot_ms / 1000.0
    arrivals = rng.poisson(rate_per_slot, size=(len(sources), total_slots))

    state = RunState()
    state.queues = {s: deque() for s in sources}
    if config.shared_controller:
        state.shared_controller = ThresholdController(
            config.initial_threshold_dbm, config.threshold_step_db)
    else:
        state.controllers = {
            s: ThresholdController(config.initial_threshold_dbm, config.threshold_step_db)
            for s in sources}

    schedule = None
    if config.mac_policy == POLICY_TDMA:
        schedule = TdmaSchedule.build(config.tdma_duty, config.tdma_coordinated)

    want_branches = config.routing_strategy == "cmr"
    transmissions: list[_Transmission] = []
    window_log: list[WindowRecord] = []

    for win in wins:
        # routes for this window come from the previous window's state
        if state.prev_outage is None:
            graph = routing_mod.init_graph(trace.num_bans, graph_ss, config.init_etx_bound)
            branch_est = {}
        else:
            graph = routing_mod.build_graph(state.prev_outage, trace.num_bans)
            branch_est = state.prev_branch_sinr or {}
        plans = _plan_routes(graph, flows, config.routing_strategy, branch_est)
        active_routes: dict[int, RadioId] = {}
        for s, plan in plans.items():
            if plan.routable:
                first_hop = plan.primary.vertices[1]
                active_routes[s] = hub(first_hop)

        for idx, s in enumerate(sources):
            q = state.queues[s]
            for rel in range(slots_per_window):
                slot = win.start_sample + rel
                for _ in range(int(arrivals[idx, slot])):
                    q.append(slot)

        if config.mac_policy == POLICY_TDMA:
            thresholds = {}
            outcomes, stats = run_tdma_window(
                win, schedule, state.queues, trace, active_routes, mac_cfg,
                config.noncoordinated_mac, config.initial_threshold_dbm)
        else:
            if config.mac_policy == POLICY_STATIC:
                thresholds = {s: config.static_threshold_dbm for s in sources}
            elif config.shared_controller:
                thresholds = {s: state.shared_controller.cs_th_dbm for s in sources}
            else:
                thresholds = {s: state.controllers[s].cs_th_dbm for s in sources}
            outcomes, stats = run_csma_window(
                win, thresholds, state.queues, trace, active_routes, mac_cfg)

        win.mac_stats = stats
        window_log.append(WindowRecord(win.index, dict(thresholds),
                                       plans, stats))

        codes = {s: np.zeros(slots_per_window, dtype=np.int8) for s in sources}
        by_slot: dict[int, list[int]] = {}
        for o in outcomes:
            codes[o.source.ban][o.slot_index - win.start_sample] = _KIND_CODE[o.kind]
            if o.kind in (SlotKind.SUCCESS, SlotKind.DECODE_FAILURE):
                by_slot.setdefault(o.slot_index, []).append(o.source.ban)
        for s in sources:
            state.code_log.setdefault(s, []).append(codes[s])
        for slot in sorted(by_slot):
            txs = sorted(by_slot[slot])
            for src in txs:
                transmissions.append(_score_transmission(
                    trace, slot, src, plans[src], txs, config))

        if config.mac_policy == POLICY_ADAPTIVE:
            if config.shared_controller:
                pooled = MacWindowStats()
                for st in stats.values():
                    pooled.attempts += st.attempts
                    pooled.backoffs += st.backoffs
                    pooled.transmissions += st.transmissions
                    pooled.successes += st.successes
                    pooled.failures += st.failures
                adapt_threshold(state.shared_controller, pooled)
            else:
                for s in sources:
                    adapt_threshold(state.controllers[s], stats[s])

        state.prev_outage, state.prev_branch_sinr = _estimate_link_state(
            win, trace.num_bans, config, gamma_route, want_branches)
        state.window_index = win.index + 1

    return _assemble_report(config, trace, wins, sources, transmissions,
                            state.code_log, window_log, slot_ms)


def _assemble_report(config, trace, wins, sources, transmissions,
                     code_log, window_log, slot_ms):
    duration_s = len(wins) * config.window_ms / 1000.0
    sent = len(transmissions)
    headline = config.rx_sensitivity_dbm

    durations_by_source = {
        s: _backoff_runs_ms(np.concatenate(code_log[s]), slot_ms)
        for s in sources}
    all_durations = [d for s in sources for d in durations_by_source[s]]
    hist = backoff_histogram(all_durations, config.backoff_bin_edges_ms)

    def delivered_count(sens):
        return sum(1 for t in transmissions if t.critical_power_dbm > sens)

    def active_channels(sens):
        return len({t.source for t in transmissions if t.critical_power_dbm > sens})

    delivered = delivered_count(headline)
    n_active = active_channels(headline)
    thr = metrics_mod.throughput(delivered, config.packet_bits, duration_s)

    def speff_at(sens):
        det = delivered_count(sens)
        act = active_channels(sens)
        if act == 0:
            return 0.0
        bits_per_s = metrics_mod.throughput(det, config.packet_bits, duration_s).bits_per_s
        per_channel = bits_per_s / act
        return metrics_mod.spectral_efficiency(per_channel, act, config.bandwidth_hz)

    sinr_samples = [t.sinr_sample_db for t in transmissions]
    outage_curve = []
    for g in config.gamma_sweep_db:
        if sinr_samples:
            outage_curve.append((g, metrics_mod.outage_probability(sinr_samples, g)))
        else:
            outage_curve.append((g, math.nan))

    pdr_curve = [(s, pdr_fn(delivered_count(s), sent)) for s in config.sensitivity_sweep_dbm]
    speff_curve = [(s, speff_at(s)) for s in config.sensitivity_sweep_dbm]

    per_channel_bits = []
    for s in sources:
        det_s = sum(1 for t in transmissions
                    if t.source == s and t.critical_power_dbm > headline)
        if det_s:
            per_channel_bits.append(det_s * config.packet_bits / duration_s)
    speff_sum = sum(per_channel_bits) / config.bandwidth_hz

    totals = MacWindowStats()
    for rec in window_log:
        for st in rec.stats.values():
            totals.attempts += st.attempts
            totals.backoffs += st.backoffs
            totals.transmissions += st.transmissions
            totals.successes += st.successes
            totals.failures += st.failures

    return metrics_mod.MetricsReport(
        policy=config.policy_label,
        routing=config.routing_strategy,
        arrival_rate_pps=config.arrival_rate_pps,
        seed=config.seed,
        num_bans=trace.num_bans,
        num_windows=len(wins),
        duration_s=duration_s,
        backoff_hist=hist,
        mean_backoff_ms=hist.mean_ms,
        backoff_durations_ms=durations_by_source,
        throughput_pkts_per_s=thr.pkts_per_s,
        throughput_bits_per_s=thr.bits_per_s,
        outage_curve=outage_curve,
        pdr=pdr_fn(delivered, sent),
        pdr_vs_sensitivity=pdr_curve,
        spectral_efficiency_bps_per_hz=speff_at(headline),
        spectral_efficiency_sum_bps_per_hz=speff_sum,
        speff_vs_sensitivity=speff_curve,
        n_active_channels=n_active,
        sent_transmissions=sent,
        delivered_transmissions=delivered,
        mac_totals=totals,
        sinr_samples_db=sinr_samples,
        window_log=window_log,
    )


def sweep(configs: Sequence[ExperimentConfig],
          trace: ChannelTrace | None = None) -> list:
    """Run several configs; failures come back in-place as exceptions.

    Entries keep input order.  ``BBN_SIM_THREADS`` caps worker threads;
    unset or 1 runs sequentially.
    """
    if not configs:
        raise ConfigError("sweep needs at least one config")

    def one(cfg):
        try:
            return run(cfg, trace)
        except Exception as exc:  # reported per-entry, siblings continue
            return exc

    workers = int(os.environ.get("BBN_SIM_THREADS", "1") or "1")
    if workers <= 1 or len(configs) == 1:
        return [one(c) for c in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, configs))
