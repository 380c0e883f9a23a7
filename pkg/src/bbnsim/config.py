"""Flat key=value config files for experiments and synthetic traces.

Sections are dotted prefixes (mac.*, routing.*, traffic.*, sweep.*,
trace.*, report.*).  Lines are `key = value`; blank lines and lines
starting with `#` are ignored.  Unknown keys are rejected so typos fail
loudly.
"""

from __future__ import annotations

from dataclasses import fields

from .channel import SynthConfig
from .errors import ConfigError
from .sim import (DEFAULT_BACKOFF_EDGES, DEFAULT_GAMMA_SWEEP,
                  DEFAULT_SENSITIVITY_SWEEP, ExperimentConfig)


def parse_kv_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key = value, got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise ConfigError(f"{path}:{line_no}: empty key")
            if key in values:
                raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
            values[key] = value.strip()
    return values


def _to_bool(raw: str, key: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _to_float(raw: str, key: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}")


def _to_int(raw: str, key: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}")


def _to_float_list(raw: str, key: str) -> tuple[float, ...]:
    items = [p.strip() for p in raw.split(",") if p.strip()]
    if not items:
        raise ConfigError(f"{key}: expected a comma-separated list, got {raw!r}")
    return tuple(_to_float(p, key) for p in items)


def _to_int_list(raw: str, key: str) -> tuple[int, ...]:
    items = [p.strip() for p in raw.split(",") if p.strip()]
    return tuple(_to_int(p, key) for p in items)


def parse_policy_token(token: str) -> tuple[str, float | None]:
    """"adaptive", "static@-86", or "tdma@0.0833" -> (policy, parameter)."""
    token = token.strip()
    if token == "adaptive":
        return "adaptive", None
    for prefix in ("static", "tdma"):
        if token == prefix:
            return prefix, None
        if token.startswith(prefix + "@"):
            return prefix, _to_float(token[len(prefix) + 1:], "mac.policy")
    raise ConfigError(
        f"mac.policy must be adaptive, static@<dbm> or tdma@<duty>, got {token!r}")


def _to_flows(raw: str):
    if raw.strip() == "ring":
        return "ring"
    flows = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        if ">" not in part:
            raise ConfigError(f"traffic.flows: expected s>d entries, got {part!r}")
        s, _, d = part.partition(">")
        flows.append((_to_int(s, "traffic.flows"), _to_int(d, "traffic.flows")))
    if not flows:
        raise ConfigError("traffic.flows is empty")
    return tuple(flows)


_SYNTH_KEYS = {
    "num_bans": ("num_bans", _to_int),
    "duration_ms": ("duration_ms", _to_int),
    "sample_period_ms": ("sample_period_ms", _to_int),
    "intra_mean_db": ("intra_mean_db", _to_float),
    "inter_mean_db": ("inter_mean_db", _to_float),
    "shadow_std_db": ("shadow_std_db", _to_float),
    "link_spread_frac": ("link_spread_frac", _to_float),
    "coherence_ms": ("coherence_ms", _to_int),
    "coherence_rho": ("coherence_rho", _to_float),
}


def build_synth_config(kv: dict[str, str], prefix: str = "") -> SynthConfig:
    cfg = SynthConfig()
    for key, raw in kv.items():
        if prefix and not key.startswith(prefix):
            continue
        short = key[len(prefix):]
        if short == "seed":
            continue
        if short not in _SYNTH_KEYS:
            raise ConfigError(f"unknown synthetic-trace key {key!r}")
        attr, conv = _SYNTH_KEYS[short]
        setattr(cfg, attr, conv(raw, key))
    cfg.validate()
    return cfg


def build_experiment_config(kv: dict[str, str]) -> ExperimentConfig:
    """Assemble a run config from flat keys, validating every key."""
    cfg = ExperimentConfig()
    synth_keys = {k for k in kv if k.startswith("trace.synth.")}
    if "trace.path" in kv and synth_keys:
        raise ConfigError("config sets both trace.path and trace.synth.*")
    if "trace.path" in kv:
        cfg.trace_path = kv["trace.path"]
    elif synth_keys:
        cfg.synth = build_synth_config(kv, "trace.synth.")
        if "trace.synth.seed" in kv:
            cfg.trace_seed = _to_int(kv["trace.synth.seed"], "trace.synth.seed")
    handlers = {
        "trace.path": lambda r: None,
        "mac.policy": lambda r: _apply_policy(cfg, r),
        "mac.rx_sensitivity_dbm": lambda r: setattr(cfg, "rx_sensitivity_dbm", _to_float(r, "mac.rx_sensitivity_dbm")),
        "mac.decode_sinr_db": lambda r: setattr(cfg, "decode_sinr_db", _to_float(r, "mac.decode_sinr_db")),
        "mac.p_tx_dbm": lambda r: setattr(cfg, "p_tx_dbm", _to_float(r, "mac.p_tx_dbm")),
        "mac.noise_dbm": lambda r: setattr(cfg, "noise_dbm", _to_float(r, "mac.noise_dbm")),
        "mac.initial_threshold_dbm": lambda r: setattr(cfg, "initial_threshold_dbm", _to_float(r, "mac.initial_threshold_dbm")),
        "mac.shared_controller": lambda r: setattr(cfg, "shared_controller", _to_bool(r, "mac.shared_controller")),
        "mac.tdma_coordinated": lambda r: setattr(cfg, "tdma_coordinated", _to_int_list(r, "mac.tdma_coordinated")),
        "mac.noncoordinated_mac": lambda r: setattr(cfg, "noncoordinated_mac", r),
        "mac.bandwidth_hz": lambda r: setattr(cfg, "bandwidth_hz", _to_float(r, "mac.bandwidth_hz")),
        "mac.packet_bits": lambda r: setattr(cfg, "packet_bits", _to_int(r, "mac.packet_bits")),
        "routing.strategy": lambda r: setattr(cfg, "routing_strategy", r),
        "routing.gamma_db": lambda r: setattr(cfg, "routing_gamma_db", _to_float(r, "routing.gamma_db")),
        "routing.init_etx_bound": lambda r: setattr(cfg, "init_etx_bound", _to_float(r, "routing.init_etx_bound")),
        "traffic.arrival_rate_pps": lambda r: setattr(cfg, "arrival_rate_pps", _to_float(r, "traffic.arrival_rate_pps")),
        "traffic.flows": lambda r: setattr(cfg, "flows", _to_flows(r)),
        "sweep.gamma_th_db": lambda r: setattr(cfg, "gamma_sweep_db", _to_float_list(r, "sweep.gamma_th_db")),
        "sweep.rx_sensitivity_dbm": lambda r: setattr(cfg, "sensitivity_sweep_dbm", _to_float_list(r, "sweep.rx_sensitivity_dbm")),
        "report.backoff_bin_edges_ms": lambda r: setattr(cfg, "backoff_bin_edges_ms", _to_float_list(r, "report.backoff_bin_edges_ms")),
        "window_ms": lambda r: setattr(cfg, "window_ms", _to_int(r, "window_ms")),
        "seed": lambda r: setattr(cfg, "seed", _to_int(r, "seed")),
    }
    sweep_axes = {"sweep.arrival_rate_pps", "sweep.mac_policy",
                  "sweep.routing_strategy", "sweep.seed"}
    for key, raw in kv.items():
        if key in synth_keys or key == "trace.synth.seed":
            continue
        if key in sweep_axes:
            continue
        if key not in handlers:
            raise ConfigError(f"unknown config key {key!r}")
        handlers[key](raw)
    cfg.validate()
    return cfg


def _apply_policy(cfg: ExperimentConfig, raw: str) -> None:
    policy, param = parse_policy_token(raw)
    cfg.mac_policy = policy
    if policy == "static" and param is not None:
        cfg.static_threshold_dbm = param
    if policy == "tdma" and param is not None:
        cfg.tdma_duty = param


def expand_sweep(kv: dict[str, str]) -> list[ExperimentConfig]:
    """Cartesian product of the sweep.* axes over the base config.

    Axis order is fixed (rate, policy, routing, seed) so output order is
    stable regardless of key order in the file.
    """
    base = build_experiment_config(kv)
    rates = (_to_float_list(kv["sweep.arrival_rate_pps"], "sweep.arrival_rate_pps")
             if "sweep.arrival_rate_pps" in kv else (base.arrival_rate_pps,))
    policies = ([p.strip() for p in kv["sweep.mac_policy"].split(",") if p.strip()]
                if "sweep.mac_policy" in kv else (base.policy_label,))
    routings = ([p.strip() for p in kv["sweep.routing_strategy"].split(",") if p.strip()]
                if "sweep.routing_strategy" in kv else (base.routing_strategy,))
    seeds = (_to_int_list(kv["sweep.seed"], "sweep.seed")
             if "sweep.seed" in kv else (base.seed,))
    configs = []
    from dataclasses import replace
    for rate in rates:
        for pol in policies:
            for strat in routings:
                for seed in seeds:
                    c = replace(base, arrival_rate_pps=rate,
                                routing_strategy=strat, seed=seed)
                    _apply_policy(c, pol)
                    c.validate()
                    configs.append(c)
    return configs


def config_lines(cfg: ExperimentConfig) -> list[str]:
    """Canonical key=value rendering of a resolved config, for manifests."""
    lines = []
    for f in sorted(fields(cfg), key=lambda f: f.name):
        value = getattr(cfg, f.name)
        if f.name == "synth" and value is not None:
            for sf in sorted(fields(value), key=lambda s: s.name):
                lines.append(f"synth.{sf.name} = {getattr(value, sf.name)}")
            continue
        lines.append(f"{f.name} = {value}")
    return lines
