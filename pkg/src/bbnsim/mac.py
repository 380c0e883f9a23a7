"""Slot-level medium access: carrier-sensed CSMA/CA and duty-cycled TDMA.

One slot equals one trace sample (50 ms by default).  A packet exchange
(data + inter-frame space + acknowledgement, well under 1 ms) always fits
inside a slot, so each source gets at most one transmission opportunity
per slot.  Sources are BAN hubs; a pending source senses the channel at
the destination radio of its current route hop and defers while the
strongest co-pending source would be received above its threshold.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .channel import ChannelTrace, RadioId, TimestampWindow, hub, pair_key
from .errors import ConfigError, TopologyError
from .metrics import sinr_db

INITIAL_THRESHOLD_DBM = -90.0


@dataclass
class MacConfig:
    """Radio and framing parameters for the slot engine."""

    t_sifs_us: float = 50.0
    t_packet_ms: float = 0.6
    t_ack_ms: float = 0.2
    data_rate_kbps: float = 486.0
    packet_bits: int = 273
    p_tx_dbm: float = 0.0
    noise_dbm: float = -100.0
    rx_sensitivity_dbm: float = -90.0
    decode_sinr_db: float = 0.0
    slot_ms: int = 50

    def __post_init__(self):
        attempt_ms = self.t_packet_ms + self.t_ack_ms + self.t_sifs_us / 1000.0
        if attempt_ms >= self.slot_ms:
            raise ConfigError(
                f"one attempt takes {attempt_ms} ms and must fit in a "
                f"{self.slot_ms} ms slot")


@dataclass
class ThresholdController:
    """Per-source adaptive carrier-sense threshold state."""

    cs_th_dbm: float = INITIAL_THRESHOLD_DBM
    step_db: float = 1.0


@dataclass
class MacWindowStats:
    """Per-source counters over one timestamp window.

    ``attempts`` counts slots where the source had pending, routable
    traffic and sensed the channel (or held for its TDMA slot), so
    attempts == backoffs + transmissions and
    transmissions == successes + failures.
    """

    attempts: int = 0
    backoffs: int = 0
    transmissions: int = 0
    successes: int = 0
    failures: int = 0

    @property
    def bop(self) -> float:
        """Back-off share of slots with pending traffic (0 when none)."""
        return self.backoffs / self.attempts if self.attempts else 0.0

    @property
    def icp(self) -> float:
        """Share of transmissions decoded incorrectly (0 when none)."""
        return self.failures / self.transmissions if self.transmissions else 0.0


class SlotKind(Enum):
    IDLE = "idle"
    BACKOFF = "backoff"
    SUCCESS = "success"
    DECODE_FAILURE = "decode_failure"


@dataclass(frozen=True)
class SlotOutcome:
    source: RadioId
    slot_index: int
    kind: SlotKind


def mpcs_permits(p_tx_dbm: float,
                 interferer_gains_db: Sequence[float],
                 cs_th_dbm: float) -> bool:
    """True when the strongest would-be interferer stays below threshold.

    An empty contender list vacuously permits.
    """
    if not interferer_gains_db:
        return True
    return p_tx_dbm + max(interferer_gains_db) < cs_th_dbm


def adapt_threshold(ctrl: ThresholdController, stats: MacWindowStats) -> float:
    """Advance the controller by one window of observed statistics.

    A majority-backed-off window relaxes the threshold to admit more
    traffic; otherwise a majority of bad decodes tightens it.  The back-off
    branch wins at exactly 50%, and the decode branch requires strictly
    more than 50%.
    """
    if stats.bop >= 0.5:
        ctrl.cs_th_dbm += ctrl.step_db
    elif stats.icp > 0.5:
        ctrl.cs_th_dbm -= ctrl.step_db
    return ctrl.cs_th_dbm


@dataclass
class TdmaSchedule:
    """Fixed slot ownership for coordinated BANs.

    The superframe is sized so one slot per coordinated BAN matches the
    requested duty cycle; unlisted slots belong to nobody.
    """

    duty_cycle: float = 1.0 / 12.0
    coordinated: tuple[int, ...] = (0, 1, 2, 3)
    superframe_slots: int = 12
    owners: dict[int, int] = field(default_factory=dict)

    @classmethod
    def build(cls, duty_cycle: float = 1.0 / 12.0,
              coordinated: Iterable[int] = (0, 1, 2, 3)) -> "TdmaSchedule":
        if not 0.0 < duty_cycle <= 1.0:
            raise ConfigError(f"duty cycle must lie in (0, 1], got {duty_cycle}")
        coord = tuple(sorted(set(coordinated)))
        superframe = max(1, round(1.0 / duty_cycle))
        if len(coord) > superframe:
            raise ConfigError(
                f"{len(coord)} coordinated BANs cannot each own a slot in a "
                f"{superframe}-slot superframe")
        owners = {i: ban for i, ban in enumerate(coord)}
        return cls(duty_cycle, coord, superframe, owners)

    def owner(self, slot_index: int) -> int | None:
        return self.owners.get(slot_index % self.superframe_slots)


class _PairGains:
    """Slot-indexed gain lookup keyed by radio-index pairs."""

    def __init__(self, trace: ChannelTrace):
        self._trace = trace
        self._cache: dict[tuple[int, int], object] = {}

    def at(self, a: int, b: int, sample: int) -> float:
        key = (a, b) if a < b else (b, a)
        arr = self._cache.get(key)
        if arr is None:
            arr = self._trace.series(a, b)
            self._cache[key] = arr
        return float(arr[sample])


def _check_routes(trace: ChannelTrace, active_routes: Mapping[int, RadioId]) -> None:
    for src, dest in active_routes.items():
        if dest.index not in trace.radio_indices:
            raise TopologyError(f"route {src}->{dest} names a radio absent from the trace")
        if hub(src).index not in trace.radio_indices:
            raise TopologyError(f"source hub {src} is absent from the trace")


def _pending(queue: deque, slot: int) -> bool:
    return bool(queue) and queue[0] <= slot


def run_csma_window(window: TimestampWindow,
                    thresholds: Mapping[int, float],
                    pending: Mapping[int, deque],
                    trace: ChannelTrace,
                    active_routes: Mapping[int, RadioId],
                    cfg: MacConfig) -> tuple[list[SlotOutcome], dict[int, MacWindowStats]]:
    """Run carrier-sensed access for one window.

    ``pending`` maps each source BAN to a FIFO of packet arrival slots; a
    packet is pending once its arrival slot has been reached.  Sources
    without a route this window stay idle and are invisible to everyone
    else.  A transmission leaves the queue only on a correct decode at the
    sensing destination; failures are retried with the same procedure.
    """
    _check_routes(trace, active_routes)
    gains = _PairGains(trace)
    sources = sorted(pending)
    outcomes: list[SlotOutcome] = []
    stats = {src: MacWindowStats() for src in sources}
    for sample in range(window.start_sample, window.end_sample):
        slot = sample
        pending_now = [s for s in sources if _pending(pending[s], slot)]
        contenders = [s for s in pending_now if s in active_routes]
        transmitters: list[int] = []
        for src in sources:
            if src not in pending_now:
                outcomes.append(SlotOutcome(hub(src), slot, SlotKind.IDLE))
                continue
            if src not in active_routes:
                outcomes.append(SlotOutcome(hub(src), slot, SlotKind.IDLE))
                continue
            dest = active_routes[src].index
            sensed = [gains.at(hub(other).index, dest, sample)
                      for other in contenders
                      if other != src and hub(other).index != dest]
            stats[src].attempts += 1
            if mpcs_permits(cfg.p_tx_dbm, sensed, thresholds[src]):
                transmitters.append(src)
            else:
                stats[src].backoffs += 1
                outcomes.append(SlotOutcome(hub(src), slot, SlotKind.BACKOFF))
        _decode_slot(transmitters, slot, sample, gains, active_routes,
                     pending, stats, outcomes, cfg)
    return outcomes, stats


def run_tdma_window(window: TimestampWindow,
                    schedule: TdmaSchedule,
                    pending: Mapping[int, deque],
                    trace: ChannelTrace,
                    active_routes: Mapping[int, RadioId],
                    cfg: MacConfig,
                    noncoordinated_mac: str = "aloha",
                    noncoordinated_threshold_dbm: float = INITIAL_THRESHOLD_DBM,
                    ) -> tuple[list[SlotOutcome], dict[int, MacWindowStats]]:
    """Run one window under slot-owned TDMA.

    Coordinated BANs transmit only in their owned slot of each superframe,
    without sensing.  Everyone else either transmits on arrival ("aloha")
    or carrier-senses at a fixed threshold ("csma").  The decode rule is
    shared with the CSMA engine.
    """
    if noncoordinated_mac not in ("aloha", "csma"):
        raise ConfigError(f"unknown non-coordinated MAC {noncoordinated_mac!r}")
    _check_routes(trace, active_routes)
    gains = _PairGains(trace)
    sources = sorted(pending)
    coordinated = set(schedule.coordinated)
    outcomes: list[SlotOutcome] = []
    stats = {src: MacWindowStats() for src in sources}
    for sample in range(window.start_sample, window.end_sample):
        slot = sample
        rel = slot - window.start_sample
        owner = schedule.owner(rel)
        pending_now = [s for s in sources if _pending(pending[s], slot)]
        contenders = [s for s in pending_now
                      if s in active_routes and s not in coordinated]
        transmitters: list[int] = []
        for src in sources:
            if src not in pending_now or src not in active_routes:
                outcomes.append(SlotOutcome(hub(src), slot, SlotKind.IDLE))
                continue
            stats[src].attempts += 1
            if src in coordinated:
                if owner == src:
                    transmitters.append(src)
                else:
                    stats[src].backoffs += 1
                    outcomes.append(SlotOutcome(hub(src), slot, SlotKind.BACKOFF))
                continue
            if noncoordinated_mac == "csma":
                dest = active_routes[src].index
                sensed = [gains.at(hub(other).index, dest, sample)
                          for other in contenders
                          if other != src and hub(other).index != dest]
                if not mpcs_permits(cfg.p_tx_dbm, sensed, noncoordinated_threshold_dbm):
                    stats[src].backoffs += 1
                    outcomes.append(SlotOutcome(hub(src), slot, SlotKind.BACKOFF))
                    continue
            transmitters.append(src)
        _decode_slot(transmitters, slot, sample, gains, active_routes,
                     pending, stats, outcomes, cfg)
    return outcomes, stats


def _decode_slot(transmitters: list[int],
                 slot: int,
                 sample: int,
                 gains: _PairGains,
                 active_routes: Mapping[int, RadioId],
                 pending: Mapping[int, deque],
                 stats: dict[int, MacWindowStats],
                 outcomes: list[SlotOutcome],
                 cfg: MacConfig) -> None:
    """Resolve all concurrent transmissions of a slot against each other."""
    for src in transmitters:
        dest = active_routes[src].index
        src_hub = hub(src).index
        signal = gains.at(src_hub, dest, sample)
        interferers = [gains.at(hub(other).index, dest, sample)
                       for other in transmitters
                       if other != src and hub(other).index != dest]
        power = cfg.p_tx_dbm + signal
        gamma = sinr_db(signal, interferers, cfg.p_tx_dbm, cfg.noise_dbm)
        ok = power > cfg.rx_sensitivity_dbm and gamma >= cfg.decode_sinr_db
        stats[src].transmissions += 1
        if ok:
            stats[src].successes += 1
            pending[src].popleft()
            outcomes.append(SlotOutcome(hub(src), slot, SlotKind.SUCCESS))
        else:
            stats[src].failures += 1
            outcomes.append(SlotOutcome(hub(src), slot, SlotKind.DECODE_FAILURE))


def continuous_backoff_durations(outcomes: Iterable[SlotOutcome],
                                 source: RadioId,
                                 slot_ms: int = 50) -> list[float]:
    """Durations of maximal consecutive-slot back-off runs for one source.

    Any non-back-off outcome (including idle slots where the queue was
    empty) breaks a run, as does a gap in the slot sequence.
    """
    slots = sorted(o.slot_index for o in outcomes
                   if o.source == source and o.kind == SlotKind.BACKOFF)
    durations: list[float] = []
    run = 0
    prev = None
    for s in slots:
        if prev is not None and s == prev + 1:
            run += 1
        else:
            if run:
                durations.append(run * slot_ms)
            run = 1
        prev = s
    if run:
        durations.append(run * slot_ms)
    return durations
