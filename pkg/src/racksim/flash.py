"""SSD and vSSD models: geometry, device latency profiles, out-of-place
writes through the FTL kernel, greedy GC, DRAM write cache, and channel
groups whose software-isolated members lend each other free blocks.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum

from .engine import MS, US
from .kernels import FtlCore

KB = 1024
MB = 1024 * KB
GB = 1024 * MB

MAX_VSSDS_PER_SSD = 128
BLOCK_ENDURANCE = 30_000


class FlashError(Exception):
    pass


class ResourceConflict(FlashError):
    pass


class CapacityError(FlashError):
    pass


class OutOfSpace(FlashError):
    pass


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    read_ns: int
    program_ns: int
    erase_ns: int | None  # None: device never needs GC
    cache_ns: int = 5 * US

    @property
    def gc_free(self) -> bool:
        return self.erase_ns is None

    def validate(self) -> None:
        if self.read_ns <= 0 or self.program_ns <= 0:
            raise ValueError(f"{self.name}: latencies must be positive")
        if self.erase_ns is not None and self.erase_ns < max(self.read_ns, self.program_ns):
            raise ValueError(f"{self.name}: erase must be the slowest flash operation")


PROFILES = {
    "P-SSD": DeviceProfile("P-SSD", 70 * US, 600 * US, 4 * MS),
    "Intel-DC": DeviceProfile("Intel-DC", 90 * US, 70 * US, 3 * MS),
    "Optane": DeviceProfile("Optane", 10 * US, 10 * US, None),
}


def profile(name: str) -> DeviceProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown device profile {name!r}; choose from {sorted(PROFILES)}") from None


@dataclass(frozen=True)
class SsdGeometry:
    channels: int = 4
    chips_per_channel: int = 2
    blocks_per_chip: int = 64
    pages_per_block: int = 64
    page_size: int = 4 * KB
    profile: DeviceProfile = PROFILES["P-SSD"]

    def __post_init__(self):
        for name in ("channels", "chips_per_channel", "blocks_per_chip", "pages_per_block", "page_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        self.profile.validate()

    @property
    def block_bytes(self) -> int:
        return self.pages_per_block * self.page_size

    @property
    def blocks(self) -> int:
        return self.channels * self.chips_per_channel * self.blocks_per_chip


class Isolation(str, Enum):
    HARDWARE = "hardware"
    SOFTWARE = "software"


class WriteCache:
    """DRAM buffer absorbing writes while the flash is busy with GC."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("cache capacity must be positive")
        self.capacity = capacity
        self.occupancy = 0
        self.pending: deque[tuple[int, int]] = deque()
        self.absorbed = 0
        self.peak = 0

    def has_room(self, nbytes: int) -> bool:
        return self.occupancy + nbytes <= self.capacity

    def absorb(self, lba: int, nbytes: int) -> bool:
        if self.occupancy + nbytes > self.capacity:
            return False
        self.pending.append((lba, nbytes))
        self.occupancy += nbytes
        self.absorbed += 1
        if self.occupancy > self.peak:
            self.peak = self.occupancy
        return True

    def pop(self) -> tuple[int, int]:
        lba, nbytes = self.pending.popleft()
        self.occupancy -= nbytes
        return lba, nbytes

    def fill(self) -> float:
        return self.occupancy / self.capacity

    def __len__(self) -> int:
        return len(self.pending)


@dataclass
class GcEpisode:
    start: int
    end: int = -1
    blocks: int = 0
    migrated: int = 0
    kind: str = ""


class Vssd:
    """A virtual SSD carved out of channels (hardware) or chips (software).

    The FTL kernel owns mapping and block state. Timing helpers return
    durations; `read`/`write`/`run_gc` additionally keep a per-channel
    clock so the vSSD can be driven standalone.
    """

    def __init__(
        self,
        vid: int,
        geometry: SsdGeometry,
        isolation: Isolation,
        units: list,
        capacity: int,
        reserve_blocks: int = 2,
        spare_blocks: int = 0,
        cache_bytes: int = 64 * MB,
        ssd=None,
    ):
        self.id = vid
        self.geometry = geometry
        self.profile = geometry.profile
        self.isolation = isolation
        self.units = list(units)
        self.ssd = ssd
        if isolation is Isolation.HARDWARE:
            self.channels = sorted(units)
            n_blocks = len(units) * geometry.chips_per_channel * geometry.blocks_per_chip
        else:
            self.channels = sorted({ch for ch, _chip in units})
            n_blocks = len(units) * geometry.blocks_per_chip
        self.n_blocks = n_blocks
        ppb = geometry.pages_per_block
        n_logical = capacity // geometry.page_size
        limit = (n_blocks - reserve_blocks - 1) * ppb
        if capacity <= 0 or n_logical > limit:
            raise CapacityError(
                f"capacity {capacity} B exceeds usable slice of {limit * geometry.page_size} B"
            )
        self.capacity = capacity
        self.n_logical = n_logical
        self.ftl = FtlCore(n_blocks, ppb, n_logical, reserve_blocks, spare_blocks)
        self.cache = WriteCache(cache_bytes)
        self.parallelism = max(1, len(self.channels))
        self.chan_free = [0] * self.parallelism
        self.in_gc = False
        self.group: ChannelGroup | None = None
        self.episodes: list[GcEpisode] = []
        self.borrowed_from: list[tuple[int, int]] = []
        self.content: dict[int, int] = {}
        self.gc_blocked_writes = 0

    # -- geometry helpers ----------------------------------------------------

    def pages(self, nbytes: int) -> int:
        ps = self.geometry.page_size
        return max(1, -(-nbytes // ps))

    def lpn(self, lba: int) -> int:
        # lba counts bytes; pages wrap into the logical space
        return (lba // self.geometry.page_size) % self.n_logical

    def _check_range(self, lba: int, nbytes: int) -> None:
        if lba < 0 or nbytes <= 0 or lba + nbytes > self.capacity:
            raise CapacityError(f"range [{lba}, {lba + nbytes}) outside capacity {self.capacity}")

    # -- raw device work (durations only) ------------------------------------

    def read_cost(self, nbytes: int) -> int:
        return self.pages(nbytes) * self.profile.read_ns

    def program(self, lba: int, nbytes: int) -> int:
        """Program pages out-of-place; returns the flash time spent."""
        n = self.pages(nbytes)
        if self.profile.gc_free:
            # in-place media: no erase-before-write, nothing for the FTL to track
            return n * self.profile.program_ns
        first = lba // self.geometry.page_size
        ftl = self.ftl
        nl = self.n_logical
        for i in range(n):
            if ftl.write((first + i) % nl) < 0:
                raise OutOfSpace(f"vSSD {self.id}: no free page for host write")
        return n * self.profile.program_ns

    def host_room(self) -> int:
        """Pages the host can still write before hitting the GC reserve."""
        if self.profile.gc_free:
            return self.n_logical
        return self.ftl.host_room()

    def gc_step(self) -> tuple[int, int] | None:
        """Reclaim one victim block: (duration, pages migrated) or None."""
        if self.profile.gc_free:
            return None
        moved = self.ftl.gc_step()
        if moved < 0:
            return None
        p = self.profile
        return moved * (p.read_ns + p.program_ns) + p.erase_ns, moved

    def gc_step_cost(self) -> int:
        v = self.ftl.victim_valid()
        if v < 0 or self.profile.gc_free:
            return 0
        p = self.profile
        return v * (p.read_ns + p.program_ns) + p.erase_ns

    def free_block_ratio(self) -> float:
        return self.ftl.free_ratio()

    # -- standalone timed operations -----------------------------------------

    def _channel(self, now: int) -> int:
        best = min(range(self.parallelism), key=lambda i: (max(self.chan_free[i], now), i))
        return best

    def read(self, lba: int, nbytes: int, now: int) -> int:
        """Completion time of a read issued at `now`."""
        self._check_range(lba, nbytes)
        ch = self._channel(now)
        start = max(now, self.chan_free[ch])
        done = start + self.read_cost(nbytes)
        self.chan_free[ch] = done
        return done

    def write(self, lba: int, nbytes: int, now: int) -> tuple[int, int]:
        """(completion time, pages programmed) of a write issued at `now`.

        While GC runs the cache absorbs the write; with the cache full the
        write waits for the GC to end, then for the flush ahead of it.
        """
        self._check_range(lba, nbytes)
        if self.in_gc:
            if self.cache.absorb(lba, nbytes):
                return now + self.profile.cache_ns, 0
            self.gc_blocked_writes += 1
            gc_end = max(self.chan_free)
            done = self.flush(gc_end)
            return self.write(lba, nbytes, max(now, done))
        ch = self._channel(now)
        start = max(now, self.chan_free[ch])
        dur = self.program(lba, nbytes)
        self.chan_free[ch] = start + dur
        return start + dur, self.pages(nbytes)

    def flush(self, now: int) -> int:
        """Program everything in the cache starting at `now`; returns finish time."""
        t = now
        while self.cache.pending:
            lba, nbytes = self.cache.pop()
            ch = self._channel(t)
            start = max(t, self.chan_free[ch])
            self.chan_free[ch] = start + self.program(lba, nbytes)
            t = start
        return max([now] + self.chan_free)

    def run_gc(self, now: int, kind: str = "regular", target: float | None = None) -> dict:
        """Greedy GC until the free ratio reaches `target`; every channel is busy."""
        if self.profile.gc_free:
            return {"duration": 0, "blocks_freed": 0, "pages_migrated": 0, "wear_delta": 0}
        if target is None:
            target = 0.45
        start = max([now] + self.chan_free)
        ep = GcEpisode(start, kind=kind)
        self.in_gc = True
        t = start
        while self.ftl.free_ratio() < target:
            step = self.gc_step()
            if step is None:
                if ep.blocks == 0:
                    self.in_gc = False
                    raise OutOfSpace(f"vSSD {self.id}: no erasable block")
                break
            dur, moved = step
            t += dur
            ep.blocks += 1
            ep.migrated += moved
        ep.end = t
        self.episodes.append(ep)
        self.chan_free = [t] * self.parallelism
        self.in_gc = False
        return {
            "duration": t - start,
            "blocks_freed": ep.blocks,
            "pages_migrated": ep.migrated,
            "wear_delta": ep.blocks,
        }

    # -- content bookkeeping ---------------------------------------------------

    def apply_write(self, lba: int, nbytes: int, version: int) -> None:
        first = lba // self.geometry.page_size
        nl = self.n_logical
        content = self.content
        for i in range(self.pages(nbytes)):
            k = (first + i) % nl
            if content.get(k, -1) < version:
                content[k] = version

    def content_digest(self) -> int:
        return hash(tuple(sorted(self.content.items())))

    def snapshot(self) -> dict:
        counts = self.ftl.erase_counts()
        hist: dict[int, int] = {}
        for c in counts:
            hist[c] = hist.get(c, 0) + 1
        return {
            "id": self.id,
            "isolation": self.isolation.value,
            "free_ratio": round(self.free_block_ratio(), 6),
            "erase_histogram": {str(k): v for k, v in sorted(hist.items())},
            "cache_occupancy": self.cache.occupancy,
            "gc_episodes": [
                {"start": e.start, "end": e.end, "blocks": e.blocks, "migrated": e.migrated, "kind": e.kind}
                for e in self.episodes
            ],
        }


class Ssd:
    """One physical SSD split into vSSDs."""

    def __init__(self, sid: int, geometry: SsdGeometry):
        self.id = sid
        self.geometry = geometry
        self.vssds: list[Vssd] = []
        self._hw_channels: set[int] = set()
        self._chips: set[tuple[int, int]] = set()
        self.groups: dict[tuple[int, ...], ChannelGroup] = {}

    def create_vssd(
        self,
        vid: int,
        isolation: Isolation,
        units: list,
        capacity: int,
        **kw,
    ) -> Vssd:
        g = self.geometry
        if len(self.vssds) >= MAX_VSSDS_PER_SSD:
            raise CapacityError(f"SSD {self.id} already hosts {MAX_VSSDS_PER_SSD} vSSDs")
        if not units:
            raise ResourceConflict("a vSSD needs at least one channel or chip")
        if isolation is Isolation.HARDWARE:
            chans = set(units)
            if len(chans) != len(units) or any(not 0 <= c < g.channels for c in chans):
                raise ResourceConflict(f"bad channel list {units}")
            taken = {ch for ch, _ in self._chips}
            if chans & (self._hw_channels | taken):
                raise ResourceConflict(f"channels {sorted(chans & (self._hw_channels | taken))} already allocated")
            v = Vssd(vid, g, isolation, units, capacity, ssd=self, **kw)
            self._hw_channels |= chans
        else:
            chips = [tuple(u) for u in units]
            if len(set(chips)) != len(chips):
                raise ResourceConflict("duplicate chip")
            for ch, chip in chips:
                if not (0 <= ch < g.channels and 0 <= chip < g.chips_per_channel):
                    raise ResourceConflict(f"chip {(ch, chip)} outside geometry")
                if ch in self._hw_channels or (ch, chip) in self._chips:
                    raise ResourceConflict(f"chip {(ch, chip)} already allocated")
            v = Vssd(vid, g, isolation, chips, capacity, ssd=self, **kw)
            self._chips |= set(chips)
            key = tuple(v.channels)
            grp = self.groups.get(key)
            if grp is None:
                grp = ChannelGroup(len(self.groups), key)
                self.groups[key] = grp
            grp.add(v)
        self.vssds.append(v)
        return v

    def wear(self) -> float:
        """Average erase count over every block of the device."""
        total = 0
        n = 0
        for v in self.vssds:
            c = v.ftl.erase_counts()
            total += sum(c)
            n += len(c)
        return total / n if n else 0.0


class ChannelGroup:
    """Software-isolated vSSDs spanning the same channels; they GC together."""

    def __init__(self, gid: int, channels: tuple[int, ...], unit_blocks: int = 8):
        self.id = gid
        self.channels = channels
        self.members: list[Vssd] = []
        self.unit_blocks = unit_blocks
        self.in_gc = False
        # (borrower, lender, block count)
        self.loans: list[tuple[Vssd, Vssd, int]] = []

    def add(self, v: Vssd) -> None:
        if self.members and tuple(v.channels) != self.channels:
            raise ResourceConflict("channel group members must span the same channels")
        self.members.append(v)
        v.group = self

    def free_ratio(self) -> float:
        free = sum(m.ftl.free_blocks() for m in self.members)
        owned = sum(m.ftl.owned_blocks() for m in self.members)
        return free / owned if owned else 0.0

    def borrow_blocks(self, borrower: Vssd) -> int:
        """Move one unit of free blocks to `borrower`; 0 if nobody can spare it."""
        if borrower not in self.members:
            raise ValueError("borrower is not in this group")
        need = self.unit_blocks
        spare_slots = borrower.ftl.spare - borrower.ftl.borrowed()
        if spare_slots < need:
            return 0
        lenders = sorted(
            (m for m in self.members if m is not borrower),
            key=lambda m: (-m.ftl.free_blocks(), m.id),
        )
        for lender in lenders:
            if lender.ftl.free_blocks() - lender.ftl.reserve >= 2 * need:
                counts = lender.ftl.lend(need)
                if counts is None:
                    continue
                borrower.ftl.attach(counts)
                self.loans.append((borrower, lender, need))
                borrower.borrowed_from.append((lender.id, need))
                return need
        return 0

    def return_borrowed(self) -> int:
        """Erase borrowed blocks and hand them back to their lenders."""
        returned = 0
        by_borrower: dict[int, list] = {}
        for borrower, lender, n in self.loans:
            by_borrower.setdefault(borrower.id, [borrower, []])[1].append((lender, n))
        kept = []
        for borrower, loans in by_borrower.values():
            counts = borrower.ftl.release()
            if counts is None:
                kept.extend((borrower, lender, n) for lender, n in loans)
                continue
            i = 0
            for lender, n in loans:
                lender.ftl.take_back(counts[i : i + n])
                i += n
                returned += n
            borrower.borrowed_from.clear()
        self.loans = kept
        return returned
