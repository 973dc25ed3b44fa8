"""Run configuration: a versioned YAML tree with every default pre-filled."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

SCHEMA_VERSION = 1
MODES = ("VDC-like", "SOFTWARE-COORD", "RACKBLOX", "COORD-IO-ONLY")


class ConfigError(ValueError):
    pass


@dataclass
class Topology:
    servers: int = 4
    ssds_per_server: int = 4
    vssds_per_ssd: int = 4
    isolation: str = "hardware"
    # explicit [[vssd, replica], ...]; empty means pair server s with s + servers/2
    placement: list = field(default_factory=list)


@dataclass
class Device:
    profile: str = "P-SSD"
    channels: int = 4
    chips_per_channel: int = 2
    blocks_per_chip: int = 64
    pages_per_block: int = 64
    page_size: int = 4096
    logical_fraction: float = 0.5
    prefill: bool = True
    cache_mb: float = 64.0
    reserve_blocks: int = 2
    borrow_unit_blocks: int = 8
    read_us: float | None = None
    program_us: float | None = None
    erase_us: float | None = None


@dataclass
class Gc:
    check_period_ms: float = 100.0
    soft_threshold: float = 0.35
    gc_threshold: float = 0.25
    retries: int = 3
    retry_timeout_ms: float = 10.0
    bg_idle_threshold_ms: float = 30.0
    alpha: float = 0.5
    restore_margin: float = 0.10
    soft_enabled: bool = True
    bg_enabled: bool = True


@dataclass
class Scheduler:
    variant: str = "KYBER"
    coordinated: str | bool = "auto"
    read_target_ms: float | None = None
    write_target_ms: float | None = None
    kyber_epoch: int = 1000


@dataclass
class Network:
    # FAST | MEDIUM | SLOW, or a trace path
    net_class: str = "MEDIUM"
    median_us: float | None = None
    sigma: float | None = None
    trace: str | None = None
    congestion: list = field(default_factory=list)
    pipeline_ns: int = 800
    link_gbps: float = 100.0
    hop_ns: int = 500
    host_overhead_us: float = 20.0


@dataclass
class Switch:
    policy: str = "auto"
    capacity: int = 65536
    tb_rate_factor: float = 2.0
    tb_burst: int = 4
    trace_file: str | None = None


@dataclass
class Workload:
    preset: str | None = None
    write_ratio: float = 0.5
    request_size: int = 4096
    distribution: str = "zipfian"
    theta: float = 0.99
    arrival: str = "open"
    rate: float = 18000.0
    clients_per_vssd: int = 32
    think_us: float = 0.0
    pattern: str = "mixed"
    phase_len: int = 1000


@dataclass
class Wear:
    gamma: float = 0.1
    local_period_days: float = 12.0
    global_period_days: float = 56.0
    years: float = 5.0
    servers: int = 32
    ssds_per_server: int = 16
    vssds_per_ssd: int = 4
    mix: list = field(default_factory=lambda: ["tpch", "seats", "auctionmark", "tpcc", "twitter"])
    mean_erases_per_day: float = 16.0
    initial_wear: float = 0.0
    swap: bool = True
    global_swap: bool = True
    step_days: float = 1.0


@dataclass
class Faults:
    drop_fanout_every: int = 0


@dataclass
class RackConfig:
    schema_version: int = SCHEMA_VERSION
    name: str = "rack"
    seed: int = 1
    mode: str = "RACKBLOX"
    duration_s: float = 60.0
    topology: Topology = field(default_factory=Topology)
    device: Device = field(default_factory=Device)
    gc: Gc = field(default_factory=Gc)
    scheduler: Scheduler = field(default_factory=Scheduler)
    network: Network = field(default_factory=Network)
    switch: Switch = field(default_factory=Switch)
    workload: Workload = field(default_factory=Workload)
    wear: Wear = field(default_factory=Wear)
    faults: Faults = field(default_factory=Faults)

    def to_dict(self) -> dict:
        return _to_dict(self)

    def replace(self, path: str, value) -> "RackConfig":
        """Copy with one dotted field replaced and the result re-validated."""
        d = self.to_dict()
        set_path(d, path, value)
        return from_dict(d)


def _to_dict(obj):
    if is_dataclass(obj):
        return {f.name: _to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, list):
        return [_to_dict(x) for x in obj]
    return copy.deepcopy(obj)


# YAML spelling for keys that clash with Python keywords
_ALIASES = {"class": "net_class"}
_REVERSE = {v: k for k, v in _ALIASES.items()}


def _build(cls, data, where: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, val in data.items():
        name = _ALIASES.get(key, key)
        if name not in known:
            raise ConfigError(f"{where + '.' if where else ''}{key}: unknown field")
        f = known[name]
        sub = f.default_factory if f.default_factory is not None and is_dataclass(f.default_factory) else None
        if sub is not None:
            kwargs[name] = _build(sub, val, f"{where + '.' if where else ''}{key}")
        else:
            kwargs[name] = val
    return cls(**kwargs)


def set_path(d: dict, path: str, value) -> None:
    parts = path.split(".")
    node = d
    for p in parts[:-1]:
        p = _ALIASES.get(p, p)
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"unknown config path {path!r}")
        node = node[p]
    last = _ALIASES.get(parts[-1], parts[-1])
    if not isinstance(node, dict) or last not in node:
        raise ConfigError(f"unknown config path {path!r}")
    node[last] = value


def from_dict(d: dict) -> RackConfig:
    d = dict(d)
    ver = d.get("schema_version", SCHEMA_VERSION)
    if ver != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {ver} is not supported (expected {SCHEMA_VERSION})")
    # nested dicts may carry the reverse alias
    net = d.get("network")
    if isinstance(net, dict) and "net_class" in net:
        net = dict(net)
        net["class"] = net.pop("net_class")
        d["network"] = net
    cfg = _build(RackConfig, d, "")
    validate(cfg)
    return cfg


def load(path) -> RackConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from None
    return from_dict(data or {})


def dump(cfg: RackConfig) -> str:
    d = cfg.to_dict()
    d["network"] = {_REVERSE.get(k, k): v for k, v in d["network"].items()}
    return yaml.safe_dump(d, sort_keys=False)


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate(cfg: RackConfig) -> None:
    t = cfg.topology
    _need(cfg.mode in MODES, f"mode must be one of {MODES}, got {cfg.mode!r}")
    _need(cfg.duration_s > 0, "duration_s must be positive")
    _need(isinstance(cfg.seed, int), "seed must be an integer")
    _need(1 <= t.servers <= 64, "topology.servers must lie in [1, 64]")
    _need(1 <= t.ssds_per_server <= 16, "topology.ssds_per_server must lie in [1, 16]")
    _need(1 <= t.vssds_per_ssd <= 128, "topology.vssds_per_ssd must lie in [1, 128]")
    _need(t.isolation in ("hardware", "software"), "topology.isolation must be hardware or software")
    n_total = t.servers * t.ssds_per_server * t.vssds_per_ssd
    if t.placement:
        seen = {}
        for pair in t.placement:
            _need(isinstance(pair, (list, tuple)) and len(pair) == 2, "placement entries are [vssd, replica]")
            a, b = pair
            _need(0 <= a < n_total and 0 <= b < n_total, f"placement pair {pair} out of range")
            per_server = t.ssds_per_server * t.vssds_per_ssd
            _need(a // per_server != b // per_server, f"replica must be on a different server: {pair}")
            for x, y in ((a, b), (b, a)):
                _need(seen.get(x, y) == y, f"vSSD {x} paired twice")
                seen[x] = y
        _need(len(seen) == n_total, "placement must pair every vSSD")
    else:
        _need(
            t.servers >= 2 and t.servers % 2 == 0,
            "replica must be on a different server: automatic pairing needs an even number of servers >= 2",
        )
    d = cfg.device
    _need(d.profile in ("P-SSD", "Intel-DC", "Optane"), f"unknown device profile {d.profile!r}")
    for name in ("channels", "chips_per_channel", "blocks_per_chip", "pages_per_block", "page_size"):
        _need(getattr(d, name) >= 1, f"device.{name} must be >= 1")
    if t.isolation == "hardware":
        _need(
            d.channels % t.vssds_per_ssd == 0,
            "hardware isolation needs device.channels divisible by vssds_per_ssd",
        )
    else:
        _need(d.chips_per_channel >= t.vssds_per_ssd, "software isolation needs one chip per vSSD per channel")
    _need(0.0 < d.logical_fraction < 1.0, "device.logical_fraction must lie in (0, 1)")
    _need(d.cache_mb > 0, "device.cache_mb must be positive")
    g = cfg.gc
    _need(0 <= g.gc_threshold < g.soft_threshold <= 1, "need 0 <= gc.gc_threshold < gc.soft_threshold <= 1")
    _need(0 <= g.alpha <= 1, "gc.alpha must lie in [0, 1]")
    _need(g.check_period_ms > 0, "gc.check_period_ms must be positive")
    s = cfg.scheduler
    _need(str(s.variant).upper() in ("FIFO", "DEADLINE", "KYBER"), f"unknown scheduler variant {s.variant!r}")
    _need(s.coordinated in ("auto", True, False), "scheduler.coordinated must be auto, true or false")
    n = cfg.network
    if n.trace is None:
        _need(str(n.net_class).upper() in ("FAST", "MEDIUM", "SLOW"), f"unknown network class {n.net_class!r}")
    for c in n.congestion:
        _need(isinstance(c, dict) and {"start_s", "duration_s", "add_us"} <= set(c), "congestion entries need start_s, duration_s, add_us")
    sw = cfg.switch
    _need(sw.policy in ("auto", "FIFO", "TOKEN_BUCKET", "FAIR_QUEUE", "PRIORITY"), f"unknown switch policy {sw.policy!r}")
    _need(1 <= sw.capacity <= 65536, "switch.capacity must lie in [1, 65536]")
    _need(n_total <= sw.capacity, "more vSSDs than switch table entries")
    w = cfg.workload
    _need(0 <= w.write_ratio <= 1, "workload.write_ratio must lie in [0, 1]")
    _need(w.arrival in ("open", "closed"), "workload.arrival must be open or closed")
    _need(w.rate > 0, "workload.rate must be positive")
    _need(w.distribution in ("zipfian", "uniform", "sequential"), "unknown workload.distribution")
    _need(w.pattern in ("mixed", "phased"), "unknown workload.pattern")
    if w.preset is not None:
        from .traffic import PRESETS

        _need(w.preset.lower() in PRESETS, f"unknown workload preset {w.preset!r}")
    we = cfg.wear
    _need(we.gamma > 0, "wear.gamma must be positive")
    _need(we.local_period_days > 0 and we.global_period_days > 0, "wear periods must be positive")
    from .traffic import PRESETS

    for m in we.mix:
        _need(str(m).lower() in PRESETS, f"unknown wear mix workload {m!r}")
