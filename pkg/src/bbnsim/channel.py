"""Channel-gain traces: ingest, synthesis, windowing, and lookup.

A trace holds one gain series per undirected radio pair on a uniform
sampling grid.  Reciprocity is structural: looking up a link and its
reverse always returns the same series.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError, DataError, TopologyError, TraceParseError

RSSI_CLAMP_BELOW_DBM = -100.0
DEFAULT_CLAMP_FLOOR_DBM = -101.0
DEFAULT_SAMPLE_PERIOD_MS = 50
DEFAULT_WINDOW_MS = 600

TRACE_CSV_HEADER = ["time_ms", "tx_ban", "tx_device", "rx_ban", "rx_device", "rssi_dbm"]


class Device(str, Enum):
    HUB = "hub"
    SENSOR_A = "sensor_a"
    SENSOR_B = "sensor_b"


DEVICE_ORDER = (Device.HUB, Device.SENSOR_A, Device.SENSOR_B)
_DEVICE_IDX = {dev: i for i, dev in enumerate(DEVICE_ORDER)}
RADIOS_PER_BAN = len(DEVICE_ORDER)


@dataclass(frozen=True, order=True)
class RadioId:
    """One worn radio: BAN index plus its on-body role."""

    ban: int
    device: Device

    def __post_init__(self):
        if self.ban < 0:
            raise ValueError(f"ban index must be >= 0, got {self.ban}")

    @property
    def index(self) -> int:
        """Dense integer encoding used as the fast lookup key."""
        return self.ban * RADIOS_PER_BAN + _DEVICE_IDX[self.device]

    @classmethod
    def from_index(cls, idx: int) -> "RadioId":
        return cls(idx // RADIOS_PER_BAN, DEVICE_ORDER[idx % RADIOS_PER_BAN])

    def __str__(self) -> str:
        return f"{self.ban}/{self.device.value}"


def hub(ban: int) -> RadioId:
    return RadioId(ban, Device.HUB)


def ban_radios(ban: int) -> tuple[RadioId, RadioId, RadioId]:
    return tuple(RadioId(ban, dev) for dev in DEVICE_ORDER)


@dataclass(frozen=True)
class LinkId:
    """A directed radio pair; reciprocity makes direction cosmetic."""

    tx: RadioId
    rx: RadioId

    def __post_init__(self):
        if self.tx == self.rx:
            raise ValueError(f"link endpoints must differ, got {self.tx}")

    @property
    def reverse(self) -> "LinkId":
        return LinkId(self.rx, self.tx)

    @property
    def is_intra_ban(self) -> bool:
        return self.tx.ban == self.rx.ban

    @property
    def pair_key(self) -> tuple[int, int]:
        a, b = self.tx.index, self.rx.index
        return (a, b) if a < b else (b, a)

    def __str__(self) -> str:
        return f"{self.tx}->{self.rx}"


def pair_key(a: RadioId | int, b: RadioId | int) -> tuple[int, int]:
    ia = a if isinstance(a, int) else a.index
    ib = b if isinstance(b, int) else b.index
    if ia == ib:
        raise ValueError("link endpoints must differ")
    return (ia, ib) if ia < ib else (ib, ia)


@dataclass(frozen=True)
class ChannelSample:
    time_ms: int
    gain_db: float


class ChannelTrace:
    """Immutable time-indexed channel gains for every covered link.

    ``gains`` maps the canonical (low, high) radio-index pair to a float
    array with one entry per grid point.  Construction validates that all
    series share the grid; after that the trace is safe to share across
    concurrent readers.
    """

    def __init__(self, sample_period_ms: int, gains: Mapping[tuple[int, int], np.ndarray]):
        if sample_period_ms <= 0:
            raise ConfigError(f"sample period must be positive, got {sample_period_ms}")
        if not gains:
            raise DataError("trace holds no links")
        lengths = {len(v) for v in gains.values()}
        if len(lengths) != 1:
            raise DataError(f"link series lengths differ: {sorted(lengths)}")
        self.sample_period_ms = int(sample_period_ms)
        self.num_samples = lengths.pop()
        if self.num_samples == 0:
            raise DataError("trace holds no samples")
        self._gains = {k: np.asarray(v, dtype=np.float64) for k, v in sorted(gains.items())}
        for arr in self._gains.values():
            arr.setflags(write=False)
        radios = sorted({i for k in self._gains for i in k})
        self.radio_indices = radios
        self.num_bans = max(r // RADIOS_PER_BAN for r in radios) + 1

    @property
    def duration_ms(self) -> int:
        return self.num_samples * self.sample_period_ms

    def links(self) -> list[LinkId]:
        return [LinkId(RadioId.from_index(a), RadioId.from_index(b)) for a, b in self._gains]

    def has_link(self, a: RadioId | int, b: RadioId | int) -> bool:
        return pair_key(a, b) in self._gains

    def series(self, a: RadioId | int, b: RadioId | int) -> np.ndarray:
        key = pair_key(a, b)
        try:
            return self._gains[key]
        except KeyError:
            ra, rb = (RadioId.from_index(i) for i in key)
            raise TopologyError(f"trace has no link between {ra} and {rb}") from None

    def gain_at(self, link: LinkId, t_ms: int) -> float:
        """Gain at the greatest grid time <= ``t_ms`` (zero-order hold)."""
        if not 0 <= t_ms < self.duration_ms:
            raise ValueError(f"time {t_ms} ms outside trace span [0, {self.duration_ms})")
        return float(self.series(link.tx, link.rx)[t_ms // self.sample_period_ms])

    def to_csv(self, path) -> None:
        """Write one row per sample for the canonical direction of each pair."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_CSV_HEADER)
            period = self.sample_period_ms
            for (a, b), series in self._gains.items():
                ra, rb = RadioId.from_index(a), RadioId.from_index(b)
                for i, g in enumerate(series):
                    writer.writerow([i * period, ra.ban, ra.device.value,
                                     rb.ban, rb.device.value, f"{g:.3f}"])


@dataclass
class TimestampWindow:
    """One estimation epoch: a contiguous run of whole samples."""

    index: int
    start_ms: int
    end_ms: int
    trace: ChannelTrace
    mac_stats: dict = field(default_factory=dict, repr=False)

    @property
    def start_sample(self) -> int:
        return self.start_ms // self.trace.sample_period_ms

    @property
    def end_sample(self) -> int:
        return self.end_ms // self.trace.sample_period_ms

    @property
    def num_samples(self) -> int:
        return self.end_sample - self.start_sample

    def series(self, a: RadioId | int, b: RadioId | int) -> np.ndarray:
        return self.trace.series(a, b)[self.start_sample:self.end_sample]


def windows(trace: ChannelTrace, window_ms: int = DEFAULT_WINDOW_MS) -> list[TimestampWindow]:
    """Tile the trace into contiguous windows, dropping any partial tail."""
    if window_ms <= 0 or window_ms % trace.sample_period_ms != 0:
        raise ConfigError(
            f"window of {window_ms} ms is not a positive multiple of the "
            f"{trace.sample_period_ms} ms sampling grid")
    count = trace.duration_ms // window_ms
    return [TimestampWindow(i, i * window_ms, (i + 1) * window_ms, trace)
            for i in range(count)]


# ---------------------------------------------------------------------------
# Ingest
# ---------------------------------------------------------------------------

_DEVICE_TOKENS = {d.value: d for d in Device}


def _parse_row(row: list[str], line_no: int) -> tuple[int, RadioId, RadioId, float]:
    if len(row) != 6:
        raise TraceParseError(f"expected 6 fields, got {len(row)}", line_no)
    try:
        t = int(row[0])
    except ValueError:
        raise TraceParseError(f"bad time_ms {row[0]!r}", line_no)
    if t < 0:
        raise TraceParseError(f"negative time_ms {t}", line_no)
    try:
        tx_ban, rx_ban = int(row[1]), int(row[3])
    except ValueError:
        raise TraceParseError(f"bad ban index in {row[1]!r}/{row[3]!r}", line_no)
    try:
        tx_dev = _DEVICE_TOKENS[row[2].strip()]
        rx_dev = _DEVICE_TOKENS[row[4].strip()]
    except KeyError:
        raise TraceParseError(
            f"device must be one of {sorted(_DEVICE_TOKENS)}, got {row[2]!r}/{row[4]!r}",
            line_no)
    try:
        rssi = float(row[5])
    except ValueError:
        raise TraceParseError(f"bad rssi_dbm {row[5]!r}", line_no)
    try:
        tx, rx = RadioId(tx_ban, tx_dev), RadioId(rx_ban, rx_dev)
        if tx == rx:
            raise ValueError
    except ValueError:
        raise TraceParseError(f"bad link endpoints {row[1:5]}", line_no)
    return t, tx, rx, rssi


def ingest_trace(path, clamp_floor_dbm: float = DEFAULT_CLAMP_FLOOR_DBM) -> ChannelTrace:
    """Load a trace CSV, clamping weak gains and filling missing cells.

    Gains below -100 dBm are replaced by ``clamp_floor_dbm`` on the way in.
    A cell missing for one direction is taken from the reverse direction;
    remaining gaps are filled by holding the previous sample (leading gaps
    take the first available sample).  Conflicting duplicate or reciprocal
    values are data errors, reported at first occurrence in file order.
    """
    cells: dict[tuple[int, int], dict[int, tuple[float, int]]] = {}
    times: set[int] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceParseError("empty file", 1)
        if [h.strip() for h in header] != TRACE_CSV_HEADER:
            raise TraceParseError(
                f"header must be {','.join(TRACE_CSV_HEADER)}", 1)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            t, tx, rx, rssi = _parse_row(row, line_no)
            gain = clamp_floor_dbm if rssi < RSSI_CLAMP_BELOW_DBM else rssi
            key = pair_key(tx, rx)
            slot = cells.setdefault(key, {})
            if t in slot and slot[t][0] != gain:
                prev_gain, prev_tx = slot[t]
                link = LinkId(tx, rx)
                if prev_tx == tx.index:
                    raise DataError(
                        f"irreconcilable samples for link {link} at t={t} ms: "
                        f"{prev_gain} dB vs {gain} dB (line {line_no})")
                raise DataError(
                    f"reciprocity violated for link {link} at t={t} ms: "
                    f"reverse direction has {prev_gain} dB, got {gain} dB "
                    f"(line {line_no})")
            slot[t] = (gain, tx.index)
            times.add(t)
    if not cells:
        raise DataError("trace file holds no samples")
    sorted_times = sorted(times)
    if len(sorted_times) > 1:
        period = min(b - a for a, b in zip(sorted_times, sorted_times[1:]))
    else:
        period = DEFAULT_SAMPLE_PERIOD_MS
    for t in sorted_times:
        if t % period != 0:
            raise DataError(f"sample time {t} ms is off the {period} ms grid")
    n = sorted_times[-1] // period + 1
    gains: dict[tuple[int, int], np.ndarray] = {}
    for key, slot in sorted(cells.items()):
        arr = np.full(n, np.nan)
        for t, (g, _) in slot.items():
            arr[t // period] = g
        # forward-fill, then backfill any leading gap
        mask = np.isnan(arr)
        idx = np.where(~mask, np.arange(n), 0)
        np.maximum.accumulate(idx, out=idx)
        arr = arr[idx]
        first_valid = np.flatnonzero(~mask)[0]
        arr[:first_valid] = arr[first_valid]
        gains[key] = arr
    return ChannelTrace(period, gains)


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    """Calibration of the synthetic gain generator.

    Each undirected pair gets an independent stationary AR(1) process in dB
    around its class mean.  ``shadow_std_db`` is the pooled per-class
    standard deviation; ``link_spread_frac`` moves that fraction of it into
    a per-link constant offset (frozen fading geometry), the rest staying
    temporal.  The step coefficient is chosen so the autocorrelation at lag
    ``coherence_ms`` equals ``coherence_rho``.
    """

    num_bans: int = 10
    duration_ms: int = 600_000
    sample_period_ms: int = DEFAULT_SAMPLE_PERIOD_MS
    intra_mean_db: float = -60.0
    inter_mean_db: float = -89.0
    shadow_std_db: float = 6.0
    link_spread_frac: float = 0.8
    coherence_ms: int = 900
    coherence_rho: float = 0.7

    def validate(self) -> None:
        if self.num_bans < 2:
            raise ConfigError(f"num_bans must be >= 2, got {self.num_bans}")
        if self.duration_ms <= 0:
            raise ConfigError(f"duration_ms must be positive, got {self.duration_ms}")
        if self.sample_period_ms <= 0:
            raise ConfigError("sample_period_ms must be positive")
        if self.shadow_std_db < 0:
            raise ConfigError("shadow_std_db must be >= 0")
        if not 0.0 <= self.link_spread_frac <= 1.0:
            raise ConfigError("link_spread_frac must lie in [0, 1]")
        if not 0.0 < self.coherence_rho < 1.0:
            raise ConfigError("coherence_rho must lie in (0, 1)")
        if self.coherence_ms <= 0:
            raise ConfigError("coherence_ms must be positive")

    @property
    def step_rho(self) -> float:
        return self.coherence_rho ** (self.sample_period_ms / self.coherence_ms)


def synthesize_trace(cfg: SynthConfig, seed) -> ChannelTrace:
    """Generate a reciprocal trace; identical (cfg, seed) is bit-identical.

    Pairs are drawn in canonical sorted order from a single seeded stream,
    one series per undirected pair, so reciprocity holds by construction.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    n = cfg.duration_ms // cfg.sample_period_ms
    if n == 0:
        raise ConfigError("duration shorter than one sample period")
    radios = range(cfg.num_bans * RADIOS_PER_BAN)
    pairs = [(a, b) for a in radios for b in radios if a < b]
    phi = cfg.step_rho
    static_std = cfg.shadow_std_db * cfg.link_spread_frac
    temporal_std = cfg.shadow_std_db * float(np.sqrt(1.0 - cfg.link_spread_frac ** 2))
    p = len(pairs)
    offsets = rng.normal(0.0, static_std, size=p) if static_std > 0 else np.zeros(p)
    x0 = rng.normal(0.0, temporal_std, size=p)
    innov_std = temporal_std * float(np.sqrt(1.0 - phi * phi))
    innovations = rng.normal(0.0, innov_std, size=(p, n - 1)) if n > 1 else np.zeros((p, 0))
    if n > 1:
        rest, _ = lfilter([1.0], [1.0, -phi], innovations, axis=1,
                          zi=(phi * x0)[:, None])
        series = np.concatenate([x0[:, None], rest], axis=1)
    else:
        series = x0[:, None]
    gains: dict[tuple[int, int], np.ndarray] = {}
    for i, (a, b) in enumerate(pairs):
        same_ban = (a // RADIOS_PER_BAN) == (b // RADIOS_PER_BAN)
        mean = cfg.intra_mean_db if same_ban else cfg.inter_mean_db
        gains[(a, b)] = mean + offsets[i] + series[i]
    return ChannelTrace(cfg.sample_period_ms, gains)


def constant_trace(num_bans: int,
                   duration_ms: int,
                   intra_db: float = -60.0,
                   inter_db: float = -85.0,
                   overrides: Mapping[tuple[RadioId, RadioId], float] | None = None,
                   sample_period_ms: int = DEFAULT_SAMPLE_PERIOD_MS) -> ChannelTrace:
    """Flat-gain trace for hand-built scenarios; overrides are per pair."""
    n = duration_ms // sample_period_ms
    radios = range(num_bans * RADIOS_PER_BAN)
    gains = {}
    for a in radios:
        for b in radios:
            if a < b:
                same = (a // RADIOS_PER_BAN) == (b // RADIOS_PER_BAN)
                gains[(a, b)] = np.full(n, intra_db if same else inter_db)
    if overrides:
        for (ra, rb), db in overrides.items():
            gains[pair_key(ra, rb)] = np.full(n, float(db))
    return ChannelTrace(sample_period_ms, gains)
