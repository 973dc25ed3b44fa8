"""Rack-scale wear leveling.

Wear (phi) of an SSD is the average erase count of its blocks; its rate is
the phi increment over the last balancing period. Within a server the
local balancer periodically swaps the data of the most-worn SSD with the
SSD whose wear grows slowest; across servers the global balancer does the
same at server granularity, moving one SSD pair. Both act only when the
imbalance lambda = max(phi) / avg(phi) would exceed 1 + gamma.

`WearSim` fast-forwards wear analytically between balancing events, which
is exact for stationary per-vSSD write rates. `cross_validate` checks that
fast-forward against a page-by-page FTL run.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .flash import BLOCK_ENDURANCE, GB
from .kernels import FtlCore
from .traffic import PRESETS

DAY = 1.0


class SwapConflict(RuntimeError):
    pass


def imbalance(wear) -> float:
    """max/avg of the wear values; 1.0 when everything is still unworn."""
    wear = list(wear)
    if not wear:
        raise ValueError("no wear values")
    avg = sum(wear) / len(wear)
    if avg <= 0:
        return 1.0
    return max(wear) / avg


def _argmax(vals) -> int:
    best = 0
    for i, v in enumerate(vals):
        if v > vals[best]:
            best = i
    return best


def _argmin(vals) -> int:
    best = 0
    for i, v in enumerate(vals):
        if v < vals[best]:
            best = i
    return best


@dataclass(frozen=True)
class BalancerConfig:
    gamma: float = 0.1
    local_period: float = 12.0  # days
    global_period: float = 56.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.local_period <= 0 or self.global_period <= 0:
            raise ValueError("periods must be positive")


def local_balance(phi, rate, gamma: float = 0.1) -> tuple[int, int] | None:
    """(most-worn SSD, slowest-wearing SSD) if the bound is at risk, else None.

    The check uses the larger of the current imbalance and the imbalance
    projected one period ahead at the current rates.
    """
    if len(phi) != len(rate) or not phi:
        raise ValueError("phi and rate must be non-empty and equally long")
    proj = [p + r for p, r in zip(phi, rate)]
    if max(imbalance(phi), imbalance(proj)) <= 1.0 + gamma:
        return None
    a = _argmax(phi)
    b = _argmin(rate)
    if a == b:
        return None
    return a, b


def global_balance(server_phi, server_rate, ssd_phi, ssd_rate, gamma: float = 0.1):
    """Cross-server swap: ((server, ssd), (server, ssd)) or None.

    `ssd_phi[s]` / `ssd_rate[s]` hold the per-SSD values of server s.
    """
    choice = local_balance(server_phi, server_rate, gamma)
    if choice is None:
        return None
    hi, lo = choice
    return (hi, _argmax(ssd_phi[hi])), (lo, _argmin(ssd_rate[lo]))


# -- swaps --------------------------------------------------------------------


@dataclass
class Placement:
    """A vSSD's data on one SSD slot: byte size and logical contents."""

    vid: int
    server: int
    ssd: int
    nbytes: int
    content: dict = field(default_factory=dict)
    swapping: bool = False


@dataclass(frozen=True)
class SwapRecord:
    a: int
    b: int
    duration: float  # seconds
    bytes_moved: int
    wear_added: dict  # (server, ssd) -> phi increment on the destination
    cross_server: bool
    network_bytes: int


def execute_swap(
    a: Placement,
    b: Placement,
    device_bytes: int,
    ssd_bw: float = 2.0 * GB,
    net_bw: float = 100e9 / 8,
) -> SwapRecord:
    """Exchange two placements: read both into memory, write each to the other slot.

    Writing `n` bytes onto a device of `device_bytes` adds n/device_bytes
    erase cycles to its blocks on average. Cross-server swaps also move
    every byte over the network.
    """
    if a is b:
        raise ValueError("cannot swap a placement with itself")
    if a.swapping or b.swapping:
        raise SwapConflict(f"vSSD {a.vid if a.swapping else b.vid} is already swapping")
    a.swapping = b.swapping = True
    try:
        moved = a.nbytes + b.nbytes
        cross = a.server != b.server
        slot_a = (a.server, a.ssd)
        slot_b = (b.server, b.ssd)
        wear = {slot_b: a.nbytes / device_bytes, slot_a: b.nbytes / device_bytes}
        # both directions stream in parallel; the larger side bounds the time
        t = max(a.nbytes, b.nbytes) / ssd_bw
        if cross:
            t = max(t, moved / net_bw)
        a.server, a.ssd, b.server, b.ssd = b.server, b.ssd, a.server, a.ssd
        return SwapRecord(a.vid, b.vid, t, moved, wear, cross, moved if cross else 0)
    finally:
        a.swapping = b.swapping = False


class LiveSwap:
    """A swap running inside an event loop with requests to the two vSSDs paused.

    Requests that arrive while the swap is in progress wait and are served
    after the mapping update, in arrival order. Regular I/O outside the two
    vSSDs is untouched.
    """

    def __init__(self, engine, a: Placement, b: Placement, device_bytes: int, **kw):
        self.engine = engine
        self.a = a
        self.b = b
        self.device_bytes = device_bytes
        self.kw = kw
        self.paused: list = []
        self.active = False
        self.record: SwapRecord | None = None
        self.served: list = []

    def start(self) -> None:
        if self.active or self.a.swapping or self.b.swapping:
            raise SwapConflict("swap already in progress")
        self.active = True
        self.a.swapping = self.b.swapping = True
        moved = self.a.nbytes + self.b.nbytes
        dur = max(self.a.nbytes, self.b.nbytes) / self.kw.get("ssd_bw", 2.0 * GB)
        self.engine.schedule(int(dur * 1e9), fn=self._finish, arg=moved)

    def _finish(self, _moved) -> None:
        self.a.swapping = self.b.swapping = False
        self.record = execute_swap(self.a, self.b, self.device_bytes, **self.kw)
        self.active = False
        paused, self.paused = self.paused, []
        for req in paused:
            self._serve(req)

    def request(self, placement: Placement, op: str, page: int, value=None, cb=None) -> None:
        req = (placement, op, page, value, cb)
        if self.active and placement in (self.a, self.b):
            self.paused.append(req)
        else:
            self._serve(req)

    def _serve(self, req) -> None:
        placement, op, page, value, cb = req
        if op == "write":
            placement.content[page] = value
            out = value
        else:
            out = placement.content.get(page)
        self.served.append((self.engine.now, placement.vid, op, page, out))
        if cb is not None:
            cb(out)


# -- FTL cross-validation ---------------------------------------------------------


def erases_per_page(
    n_blocks: int = 256, ppb: int = 64, fill: float = 0.8, warm_writes: int | None = None,
    measure_writes: int | None = None, seed: int = 0,
) -> float:
    """Steady-state erases per host page write for uniform random overwrites."""
    n_logical = int(n_blocks * ppb * fill)
    ftl = FtlCore(n_blocks, ppb, n_logical, 2, 0)
    ftl.prefill(n_logical)
    rng = random.Random(seed)
    warm = warm_writes if warm_writes is not None else 8 * n_logical
    meas = measure_writes if measure_writes is not None else 40 * n_logical
    _drive(ftl, rng, n_logical, warm)
    e0 = ftl.total_erases
    _drive(ftl, rng, n_logical, meas)
    return (ftl.total_erases - e0) / meas


def _drive(ftl, rng, n_logical: int, writes: int) -> None:
    randrange = rng.randrange
    for _ in range(writes):
        lpn = randrange(n_logical)
        while ftl.write(lpn) < 0:
            if ftl.gc_step() < 0:
                raise RuntimeError("FTL cannot reclaim space")


def cross_validate(
    pages_per_day: int, n_blocks: int = 256, ppb: int = 64, fill: float = 0.8, seed: int = 0,
    calibration_writes: int | None = None,
) -> dict:
    """Compare analytic fast-forward with a page-by-page FTL run over one day.

    The analytic side predicts erases = writes x erases_per_page, where the
    per-page factor comes from an independent calibration run (different
    random stream). The event side drives a warmed-up FTL write by write.
    """
    n_logical = int(n_blocks * ppb * fill)
    factor = erases_per_page(
        n_blocks, ppb, fill, measure_writes=calibration_writes, seed=seed + 1_000_003
    )
    ftl = FtlCore(n_blocks, ppb, n_logical, 2, 0)
    ftl.prefill(n_logical)
    rng = random.Random(seed)
    _drive(ftl, rng, n_logical, 8 * n_logical)
    e0 = ftl.total_erases
    _drive(ftl, rng, n_logical, pages_per_day)
    event = ftl.total_erases - e0
    analytic = pages_per_day * factor
    return {
        "event_erases": event,
        "analytic_erases": analytic,
        "relative_error": abs(analytic - event) / event if event else 0.0,
        "erases_per_page": factor,
    }


# -- accelerated rack wear simulation ------------------------------------------------


@dataclass
class WearSimConfig:
    servers: int = 32
    ssds_per_server: int = 16
    vssds_per_ssd: int = 4
    mix: tuple = ("tpch", "seats", "auctionmark", "tpcc", "twitter")
    mean_erases_per_day: float = 16.0
    years: float = 5.0
    initial_wear: float = 0.0
    swap: bool = True
    global_swap: bool = True
    balancer: BalancerConfig = field(default_factory=BalancerConfig)
    device_bytes: int = 64 * GB
    fill: float = 1.0  # fraction of each device holding vSSD data
    seed: int = 0


class WearSim:
    """Rack of SSDs whose vSSDs wear them at stationary, heterogeneous rates.

    Each vSSD draws a workload from the mix; its wear contribution is
    proportional to the workload's write ratio, scaled so the average SSD
    wears `mean_erases_per_day` per day. Between balancing events wear grows
    linearly, so the simulation jumps from event to event.
    """

    def __init__(self, cfg: WearSimConfig):
        self.cfg = cfg
        rng = random.Random(cfg.seed)
        S, D, V = cfg.servers, cfg.ssds_per_server, cfg.vssds_per_ssd
        self.S, self.D = S, D
        ratios = []
        self.workload: list[list[list[str]]] = []
        for s in range(S):
            row = []
            for d in range(D):
                names = [rng.choice(cfg.mix) for _ in range(V)]
                row.append(names)
                ratios.extend(PRESETS[n].write_ratio for n in names)
            self.workload.append(row)
        mean_ratio = sum(ratios) / len(ratios)
        # phi per day contributed by one vSSD with write ratio 1
        self.unit = cfg.mean_erases_per_day / (V * mean_ratio) if mean_ratio > 0 else 0.0
        self.load = [[self._ssd_load(s, d) for d in range(D)] for s in range(S)]
        self.phi = [[float(cfg.initial_wear)] * D for _ in range(S)]
        self.mark_phi = [row[:] for row in self.phi]
        self.mark_t = [[0.0] * D for _ in range(S)]
        self.rate = [row[:] for row in self.load]
        self.t = 0.0
        self.swaps: list[dict] = []
        self.rows: list[dict] = []
        self.balance_wear = 0.0
        self.placement_bytes = int(cfg.device_bytes * cfg.fill)
        self._vid = 0

    def _ssd_load(self, s: int, d: int) -> float:
        return self.unit * sum(PRESETS[n].write_ratio for n in self.workload[s][d])

    def _advance(self, dt: float) -> None:
        for s in range(self.S):
            ph = self.phi[s]
            ld = self.load[s]
            for d in range(self.D):
                ph[d] += ld[d] * dt
        self.t += dt

    def _rates(self, s: int) -> list[float]:
        p = self.cfg.balancer.local_period
        out = []
        for d in range(self.D):
            span = self.t - self.mark_t[s][d]
            out.append((self.phi[s][d] - self.mark_phi[s][d]) / span * p if span > 0 else 0.0)
        return out

    def _mark(self, s: int, d: int) -> None:
        self.mark_phi[s][d] = self.phi[s][d]
        self.mark_t[s][d] = self.t

    def _swap(self, sa: int, da: int, sb: int, db: int) -> dict:
        pa = Placement(self._vid, sa, da, self.placement_bytes)
        pb = Placement(self._vid + 1, sb, db, self.placement_bytes)
        self._vid += 2
        rec = execute_swap(pa, pb, self.cfg.device_bytes)
        for (s, d), w in rec.wear_added.items():
            self.phi[s][d] += w
            self.balance_wear += w
        self.workload[sa][da], self.workload[sb][db] = self.workload[sb][db], self.workload[sa][da]
        self.load[sa][da] = self._ssd_load(sa, da)
        self.load[sb][db] = self._ssd_load(sb, db)
        info = {
            "time_days": round(self.t, 6), "a": [sa, da], "b": [sb, db],
            "bytes_moved": rec.bytes_moved, "cross_server": rec.cross_server,
            "network_bytes": rec.network_bytes, "duration_s": rec.duration,
        }
        self.swaps.append(info)
        return info

    def local_step(self) -> None:
        g = self.cfg.balancer.gamma
        for s in range(self.S):
            rates = self._rates(s)
            self.rate[s] = rates
            if self.cfg.swap:
                pick = local_balance(self.phi[s], rates, g)
                if pick is not None:
                    a, b = pick
                    self._swap(s, a, s, b)
            for d in range(self.D):
                self._mark(s, d)

    def global_step(self) -> None:
        if not (self.cfg.swap and self.cfg.global_swap) or self.S < 2:
            return
        g = self.cfg.balancer.gamma
        sphi = [sum(r) / self.D for r in self.phi]
        rates = [self._rates(s) for s in range(self.S)]
        srate = [sum(r) / self.D for r in rates]
        pick = global_balance(sphi, srate, self.phi, rates, g)
        if pick is None:
            return
        (sa, da), (sb, db) = pick
        self._swap(sa, da, sb, db)
        # rate statistics restart for the two SSDs that changed hands
        self._mark(sa, da)
        self._mark(sb, db)

    def lambdas(self) -> tuple[list[float], float]:
        local = [imbalance(r) for r in self.phi]
        rack = imbalance([sum(r) / self.D for r in self.phi])
        return local, rack

    def _record(self) -> None:
        local, rack = self.lambdas()
        for s in range(self.S):
            for d in range(self.D):
                self.rows.append({
                    "time_days": round(self.t, 6), "server": s, "ssd": d,
                    "phi": round(self.phi[s][d], 6), "rate": round(self.rate[s][d], 6),
                    "lambda_local": round(local[s], 6), "lambda_rack": round(rack, 6),
                })

    def run(self) -> dict:
        b = self.cfg.balancer
        horizon = self.cfg.years * 365.0
        next_local = b.local_period
        next_global = b.global_period
        boundaries: list[tuple[float, list[float], float]] = []
        eps = 1e-9
        while True:
            t_next = min(next_local, next_global)
            if t_next > horizon + eps:
                break
            self._advance(t_next - self.t)
            if abs(t_next - next_global) < eps:
                self.global_step()
                next_global += b.global_period
            if abs(t_next - next_local) < eps:
                self.local_step()
                next_local += b.local_period
                local, rack = self.lambdas()
                boundaries.append((self.t, local, rack))
                self._record()
        if horizon > self.t:
            self._advance(horizon - self.t)
        warm = boundaries[2:]
        max_local = max((max(l) for _t, l, _r in warm), default=1.0)
        max_rack = max((r for _t, _l, r in warm), default=1.0)
        years = max(self.cfg.years, 1e-12)
        per_ssd_balance = self.balance_wear / (self.S * self.D)
        return {
            "periods": len(boundaries),
            "max_lambda_local_after_warmup": round(max_local, 6),
            "max_lambda_rack_after_warmup": round(max_rack, 6),
            "final_lambda_local": round(max(boundaries[-1][1]), 6) if boundaries else 1.0,
            "swaps": len(self.swaps),
            "cross_server_swaps": sum(1 for x in self.swaps if x["cross_server"]),
            "bytes_moved": sum(x["bytes_moved"] for x in self.swaps),
            "balance_wear_per_ssd_per_year": per_ssd_balance / years,
            "balance_wear_fraction_of_endurance_per_year": per_ssd_balance / years / BLOCK_ENDURANCE,
        }


def sim_config_from(cfg, seed: int | None = None, swap: bool | None = None) -> WearSimConfig:
    """WearSimConfig from a RackConfig's `wear` section."""
    w = cfg.wear
    return WearSimConfig(
        servers=w.servers,
        ssds_per_server=w.ssds_per_server,
        vssds_per_ssd=w.vssds_per_ssd,
        mix=tuple(str(m).lower() for m in w.mix),
        mean_erases_per_day=w.mean_erases_per_day,
        years=w.years,
        initial_wear=w.initial_wear,
        swap=w.swap if swap is None else swap,
        global_swap=w.global_swap,
        balancer=BalancerConfig(w.gamma, w.local_period_days, w.global_period_days),
        seed=cfg.seed if seed is None else seed,
    )
