import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from racksim.engine import MS, US
from racksim.sched import (
    READ,
    WRITE,
    Request,
    ReturnPredictor,
    SlidingWindow,
    Variant,
    configure_policy,
    make_scheduler,
    priority,
)


def test_sliding_window_bit_exact_against_recompute():
    rng = random.Random(3)
    w = SlidingWindow(100)
    history = []
    for _ in range(20_000):
        s = rng.randrange(0, 5 * MS)
        history.append(s)
        got = w.push(s)
        tail = history[-100:]
        assert got == sum(tail) / len(tail)
        # exact rational agreement, not just float closeness
        assert Fraction(w.total, len(w)) == Fraction(sum(tail), len(tail))


@given(st.lists(st.integers(0, 10**9), min_size=1, max_size=400), st.integers(1, 150))
def test_sliding_window_property(samples, size):
    w = SlidingWindow(size)
    for i, s in enumerate(samples):
        got = w.push(s)
        tail = samples[max(0, i + 1 - size): i + 1]
        assert got == sum(tail) / len(tail)


def test_return_predictor_prior_and_keys():
    p = ReturnPredictor(size=3, prior_ns=100 * US)
    assert p.predict(1, READ) == 100 * US
    for s in (10, 20, 30, 40):
        p.window_update(1, READ, s)
    assert p.predict(1, READ) == 30
    assert p.predict(1, WRITE) == 100 * US
    with pytest.raises(ValueError):
        p.window_update(1, READ, -1)


def test_priority_sum():
    r = Request(1, READ, 0, net_ns=300, enqueue=1000, predict=50)
    assert priority(r, 1500) == 300 + 500 + 50


def _reqs(rng, n, op=None):
    out = []
    for i in range(n):
        out.append(Request(i, op if op is not None else rng.choice([READ, WRITE]), 0,
                           net_ns=rng.randrange(0, 2 * MS), enqueue=rng.randrange(0, 1 * MS),
                           predict=rng.randrange(0, 500 * US)))
    return out


@given(st.integers(0, 10**6))
def test_coordinated_fifo_pops_highest_prio_sched(seed):
    rng = random.Random(seed)
    sch = make_scheduler(configure_policy("FIFO", True))
    reqs = _reqs(rng, 30)
    for r in reqs:
        sch.push(r)
    now = 2 * MS
    left = list(reqs)
    while left:
        r = sch.pop(now)
        best = max(priority(x, now) for x in left)
        assert priority(r, now) == best
        left.remove(r)
        sch.complete(r, now)
        now += rng.randrange(0, 100 * US)
    assert sch.pop(now) is None


def test_baseline_fifo_is_arrival_order():
    rng = random.Random(1)
    sch = make_scheduler(configure_policy("FIFO", False))
    reqs = _reqs(rng, 20)
    for r in reqs:
        sch.push(r)
    assert [sch.pop(0).rid for _ in reqs] == [r.rid for r in reqs]


def test_deadline_serves_expired_writes():
    pol = configure_policy("DEADLINE", False)
    assert pol.read_target == int(0.5 * MS)
    sch = make_scheduler(pol)
    w = Request(1, WRITE, 0, enqueue=0)
    r = Request(2, READ, 0, enqueue=3 * MS)
    sch.push(w)
    sch.push(r)
    assert sch.choose_direction(3 * MS) == WRITE
    assert sch.pop(3 * MS) is w
    assert sch.pop(3 * MS) is r


def test_deadline_prefers_reads_otherwise():
    sch = make_scheduler(configure_policy("DEADLINE", True))
    sch.push(Request(1, WRITE, 0, enqueue=0))
    sch.push(Request(2, READ, 0, enqueue=0))
    assert sch.pop(100 * US).op == READ


def test_kyber_throttles_writes_when_reads_are_slow():
    pol = configure_policy("KYBER", False, epoch=10, max_depth=8)
    sch = make_scheduler(pol)
    for i in range(10):
        r = Request(i, READ, 0, enqueue=0)
        sch.push(r)
        sch.complete(sch.pop(0), 10 * MS)
    assert sch.budget[WRITE] == 4
    for i in range(10):
        r = Request(i, READ, 0, enqueue=0)
        sch.push(r)
        sch.complete(sch.pop(0), 1)
    assert sch.budget[WRITE] == 8


def test_kyber_holds_back_at_budget():
    sch = make_scheduler(configure_policy("KYBER", False, max_depth=1))
    sch.push(Request(1, READ, 0))
    sch.push(Request(2, READ, 0))
    assert sch.pop(0) is not None
    assert sch.pop(0) is None
    assert sch.held_back == 1


def test_pop_reads_and_writes_keep_order():
    for variant in Variant:
        sch = make_scheduler(configure_policy(variant, True))
        reqs = [Request(i, READ if i % 3 else WRITE, 0, enqueue=i) for i in range(12)]
        for r in reqs:
            sch.push(r)
        assert sch.reads_queued()
        reads = sch.pop_reads()
        assert [r.rid for r in reads] == [r.rid for r in reqs if r.op == READ]
        assert not sch.reads_queued()
        writes = sch.pop_writes()
        assert [r.rid for r in writes] == [r.rid for r in reqs if r.op == WRITE]
        assert len(sch) == 0


def test_coordinated_targets_are_looser():
    for v in ("DEADLINE", "KYBER"):
        assert configure_policy(v, True).read_target > configure_policy(v, False).read_target
    with pytest.raises(ValueError):
        configure_policy("CFQ", True)
