"""bbnsim: slot-level coexistence simulator for co-located body-area networks."""

__version__ = "0.1.0"

from .channel import (ChannelTrace, Device, LinkId, RadioId, SynthConfig,
                      TimestampWindow, constant_trace, hub, ingest_trace,
                      synthesize_trace, windows)
from .errors import (BbnSimError, ConfigError, DataError, TopologyError,
                     TraceParseError)
from .mac import (MacConfig, MacWindowStats, SlotKind, SlotOutcome,
                  TdmaSchedule, ThresholdController, adapt_threshold,
                  continuous_backoff_durations, mpcs_permits,
                  run_csma_window, run_tdma_window)
from .metrics import (BackoffHistogram, DbmPower, MetricsReport, SinrSample,
                      backoff_histogram, dbm_to_mw, mw_to_dbm,
                      outage_probability, pdr, sinr_db, spectral_efficiency,
                      throughput)
from .routing import (NetworkGraph, Path, RoutePlan, SprMetric, build_graph,
                      cmr, etx, init_graph, select_combine, spr)
from .sim import ExperimentConfig, RunState, WindowRecord, run, sweep

__all__ = [name for name in dir() if not name.startswith("_")]
