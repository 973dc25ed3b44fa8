import pytest

from racksim.engine import MS, US
from racksim.flash import (
    KB,
    MAX_VSSDS_PER_SSD,
    PROFILES,
    CapacityError,
    ChannelGroup,
    Isolation,
    ResourceConflict,
    Ssd,
    SsdGeometry,
    Vssd,
    WriteCache,
    profile,
)

PAGE = 4 * KB


def small_vssd(blocks=16, ppb=8, logical_pages=32, reserve=2, cache_bytes=64 * KB, prof="P-SSD"):
    geo = SsdGeometry(channels=1, chips_per_channel=1, blocks_per_chip=blocks, pages_per_block=ppb,
                      profile=PROFILES[prof])
    return Vssd(1, geo, Isolation.HARDWARE, [0], logical_pages * PAGE, reserve_blocks=reserve, cache_bytes=cache_bytes)


def test_profiles():
    p = profile("P-SSD")
    assert p.read_ns < 100 * US and p.erase_ns >= 1 * MS
    assert profile("Optane").gc_free
    with pytest.raises(ValueError):
        profile("HDD")


def test_hardware_channels_must_be_disjoint():
    ssd = Ssd(0, SsdGeometry())
    ssd.create_vssd(0, Isolation.HARDWARE, [0, 1], 1024 * PAGE)
    with pytest.raises(ResourceConflict):
        ssd.create_vssd(1, Isolation.HARDWARE, [1, 2], 1024 * PAGE)
    with pytest.raises(ResourceConflict):
        ssd.create_vssd(2, Isolation.SOFTWARE, [(0, 1)], 64 * PAGE)


def test_fresh_vssd_state():
    v = small_vssd()
    assert v.free_block_ratio() == 1.0
    assert set(v.ftl.erase_counts()) == {0}


def test_128_vssds_per_ssd_and_2048_per_server():
    geo = SsdGeometry(channels=8, chips_per_channel=16, blocks_per_chip=4, pages_per_block=4)
    total = 0
    for s in range(16):
        ssd = Ssd(s, geo)
        for i in range(MAX_VSSDS_PER_SSD):
            ssd.create_vssd(i, Isolation.SOFTWARE, [(i % 8, i // 8)], 4 * PAGE)
        total += len(ssd.vssds)
    assert total == 2048
    with pytest.raises(CapacityError):
        Ssd(99, geo).create_vssd(0, Isolation.SOFTWARE, [(0, 0)], 1000 * PAGE)
    # the 129th vSSD is refused even if media were available
    assert MAX_VSSDS_PER_SSD == 128


def test_overwrite_is_out_of_place():
    v = small_vssd()
    v.program(0, PAGE)
    first = v.ftl.read(0)
    v.program(0, PAGE)
    second = v.ftl.read(0)
    assert first != second
    assert v.ftl.valid_pages(first // 8) == 1  # only the new copy in block 0 is live
    assert v.ftl.mapped_pages() == 1


def test_write_during_gc_goes_to_cache():
    v = small_vssd(cache_bytes=2 * PAGE)
    v.in_gc = True
    v.chan_free = [5 * MS]
    done, pages = v.write(0, PAGE, 0)
    assert (done, pages) == (v.profile.cache_ns, 0)
    v.write(PAGE, PAGE, 0)
    # cache full: waits for GC end, then for the two flushed writes
    flushed = 5 * MS + 2 * v.profile.program_ns
    done, _pages = v.write(2 * PAGE, PAGE, 0)
    assert v.gc_blocked_writes == 1
    assert done >= flushed


def test_read_latency_and_erase_interference():
    v = small_vssd()
    assert v.read(0, PAGE, 0) - 0 < 100 * US
    # never written: the mapping is empty and the latency nominal
    assert v.ftl.read(3) == -1
    assert v.read(3 * PAGE, PAGE, 10 * MS) == 10 * MS + v.profile.read_ns
    v.chan_free = [20 * MS + 3 * MS]  # an erase in progress until 23 ms
    assert v.read(0, PAGE, 20 * MS) == 23 * MS + v.profile.read_ns


def test_gc_duration_hand_computed_toy():
    # 4 blocks x 4 pages, 4 logical pages, 1 reserve block
    geo = SsdGeometry(channels=1, chips_per_channel=1, blocks_per_chip=4, pages_per_block=4)
    v = Vssd(1, geo, Isolation.HARDWARE, [0], 4 * PAGE, reserve_blocks=1)
    for lpn in (0, 1, 2, 3, 0, 1, 0, 1):
        v.program(lpn * PAGE, PAGE)
    # block 0 holds live {2,3}; block 1 holds live {0,1}
    assert [v.ftl.valid_pages(b) for b in range(4)] == [2, 2, 0, 0]
    assert v.free_block_ratio() == 0.5
    res = v.run_gc(0, target=0.75)
    p = geo.profile
    assert res["blocks_freed"] == 2 and res["pages_migrated"] == 4
    assert res["duration"] == 4 * (p.read_ns + p.program_ns) + 2 * p.erase_ns
    assert v.free_block_ratio() == 0.75


def test_greedy_victim_choice():
    from racksim.kernels import FtlCore

    f = FtlCore(8, 10, 30, reserve=1)
    for lpn in range(30):
        f.write(lpn)  # blocks 0,1,2 full
    for lpn in range(10, 17):
        f.write(lpn)  # block 1 drops to 3 valid
    assert f.victim() == 1 and f.victim_valid() == 3
    for lpn in range(10):
        f.write(lpn)  # block 0 drops to 0 valid
    assert f.victim() == 0 and f.victim_valid() == 0
    assert f.gc_step() == 0
    assert f.erase_count(0) == 1


def test_free_ratio_boundaries():
    from racksim.kernels import FtlCore

    f = FtlCore(100, 1, 90, reserve=2)
    for lpn in range(75):
        f.write(lpn)
    assert f.free_ratio() == 0.25
    g = FtlCore(4, 2, 6, reserve=0)
    for i in range(8):
        g.write(i % 6)
    assert g.free_ratio() == 0.0


def test_write_cache_accounting():
    c = WriteCache(3 * PAGE)
    assert c.absorb(0, PAGE) and c.absorb(1, 2 * PAGE)
    assert not c.absorb(2, PAGE)
    assert c.fill() == 1.0
    assert c.pop() == (0, PAGE) and c.occupancy == 2 * PAGE
    with pytest.raises(ValueError):
        WriteCache(0)


def _group(spare=8):
    geo = SsdGeometry(channels=2, chips_per_channel=2, blocks_per_chip=32, pages_per_block=8)
    ssd = Ssd(0, geo)
    a = ssd.create_vssd(0, Isolation.SOFTWARE, [(0, 0), (1, 0)], 200 * PAGE, spare_blocks=spare)
    b = ssd.create_vssd(1, Isolation.SOFTWARE, [(0, 1), (1, 1)], 200 * PAGE, spare_blocks=spare)
    grp = a.group
    grp.unit_blocks = 8
    return grp, a, b


def test_borrow_and_return_blocks():
    grp, a, b = _group()
    assert grp is b.group and len(grp.members) == 2
    before = b.free_block_ratio()
    assert grp.borrow_blocks(a) == 8
    assert a.ftl.owned_blocks() == 72 and b.ftl.owned_blocks() == 56
    assert before == 1.0
    assert b.free_block_ratio() == 56 / 64
    # write through the borrowed blocks, then collect the group
    for i in range(64 * 8 + 20):
        a.program((i % 200) * PAGE, PAGE)
    a.run_gc(0, target=0.5)
    lender_free = b.ftl.free_blocks()
    lender_erases = sum(b.ftl.erase_counts())
    on_loan = a.ftl.erase_counts()[64:]
    # open or full blocks hold data and are erased on the way back
    full = sum(1 for blk in range(64, 72) if a.ftl.block_state(blk) in (1, 2))
    assert sum(on_loan) + full > 0
    returned = grp.return_borrowed()
    assert returned == 8
    assert b.ftl.free_blocks() == lender_free + 8
    assert a.ftl.borrowed() == 0
    # the lender gets back every erase performed while the blocks were away
    assert sum(b.ftl.erase_counts()) == lender_erases + sum(on_loan) + full


def test_borrow_fails_without_spare():
    grp, a, _b = _group(spare=0)
    assert grp.borrow_blocks(a) == 0
    with pytest.raises(ValueError):
        ChannelGroup(5, (0, 1)).borrow_blocks(a)
