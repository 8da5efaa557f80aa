import asyncio
import random

import pytest

from vrsm.apps.bank import Bank
from vrsm.apps.cachekv import CacheKv, decode_value, encode_value
from vrsm.apps.lockservice import LockService
from vrsm.clock import MS, TimeRange
from vrsm.codec import read_u64, u64
from vrsm.sim.scenario import Scenario
from vrsm.sim.workloads import run_scenario


class MemKv:
    def __init__(self):
        self.values = {}

    async def put(self, k, v):
        self.values[k] = v

    async def get(self, k):
        return self.values.get(k, b"")

    async def cond_put(self, k, expect, v):
        if self.values.get(k, b"") != expect:
            return False
        self.values[k] = v
        return True


class FakeNode:
    def __init__(self):
        self.rng = random.Random(1)
        self.now = 1_000 * MS
        self.traces = []
        self.slept = 0

    async def sleep(self, ns):
        self.slept += ns
        self.now += ns
        await asyncio.sleep(0)

    def time_range(self):
        return TimeRange(self.now, self.now)

    def trace(self, kind, **f):
        self.traces.append((kind, f))


def _bank(initial):
    node = FakeNode()
    bank = Bank(MemKv(), LockService(node, MemKv()), list(initial))
    asyncio.run(bank.create(initial))
    return bank


def _balances(bank):
    return {k: read_u64(v) for k, v in bank.balances.values.items()}


def test_transfer_moves_money():
    bank = _bank({b"a": 10, b"b": 0})
    assert asyncio.run(bank.transfer(b"a", b"b", 4))
    assert _balances(bank) == {b"a": 6, b"b": 4}


def test_overdraft_is_a_no_op():
    bank = _bank({b"a": 10, b"b": 0})
    assert not asyncio.run(bank.transfer(b"a", b"b", 100))
    assert _balances(bank) == {b"a": 10, b"b": 0}


def test_audit_sums_balances():
    assert asyncio.run(_bank({b"a": 10, b"b": 0, b"c": 5}).audit()) == 15


def test_empty_bank_audits_to_zero():
    assert asyncio.run(_bank({}).audit()) == 0


def test_transfer_releases_both_locks():
    bank = _bank({b"a": 10, b"b": 0})
    asyncio.run(bank.transfer(b"a", b"b", 1))
    assert all(v == b"" for v in bank.locks.kv.values.values())


def test_free_lock_is_acquired_first_try():
    node = FakeNode()
    ls = LockService(node, MemKv())
    h = asyncio.run(ls.acquire(b"L"))
    assert node.slept == 0 and ls.kv.values[b"L"] == u64(h.owner)


def test_held_lock_spins_until_release():
    async def go():
        node = FakeNode()
        ls = LockService(node, MemKv())
        h = await ls.acquire(b"L")

        async def release_later():
            for _ in range(3):
                await asyncio.sleep(0)
            await ls.release(h)
        t = asyncio.ensure_future(release_later())
        h2 = await ls.acquire(b"L")
        await t
        return node.slept, h2.owner != h.owner
    slept, fresh = asyncio.run(go())
    assert slept > 0 and fresh


def test_stale_handle_cannot_release():
    async def go():
        ls = LockService(FakeNode(), MemKv())
        h = await ls.acquire(b"L")
        await ls.release(h)
        h2 = await ls.acquire(b"L")
        with pytest.raises(RuntimeError):
            await ls.release(h)
        return ls.kv.values[b"L"] == u64(h2.owner)
    assert asyncio.run(go())


def test_cache_value_encoding():
    assert decode_value(encode_value(77, b"v")) == (77, b"v")
    assert decode_value(b"") == (0, b"")


def test_cached_read_uses_no_backend_call():
    async def go():
        node = FakeNode()
        mem = MemKv()
        c = CacheKv(node, mem)
        await mem.put(b"k", encode_value(0, b"v"))
        assert await c.get_and_cache(b"k", 500 * MS) == b"v"
        mem.values.clear()  # any backend read would now miss
        return await c.get(b"k"), c.cache_hits
    assert asyncio.run(go()) == (b"v", 1)


def test_expired_cache_reads_backend():
    async def go():
        node = FakeNode()
        mem = MemKv()
        c = CacheKv(node, mem)
        await c.get_and_cache(b"k", 100 * MS)
        node.now += 200 * MS
        await mem.put(b"k", encode_value(0, b"new"))
        return await c.get(b"k")
    assert asyncio.run(go()) == b"new"


def test_lease_never_shrinks():
    async def go():
        node = FakeNode()
        mem = MemKv()
        c = CacheKv(node, mem)
        await c.get_and_cache(b"k", 900 * MS)
        first = decode_value(mem.values[b"k"])[0]
        await c.get_and_cache(b"k", 10 * MS)
        return first, decode_value(mem.values[b"k"])[0]
    first, second = asyncio.run(go())
    assert second == first


def test_put_waits_out_an_outstanding_lease():
    async def go():
        node = FakeNode()
        mem = MemKv()
        c = CacheKv(node, mem)
        await c.get_and_cache(b"k", 300 * MS)
        lease = decode_value(mem.values[b"k"])[0]
        await c.put(b"k", b"w")
        return lease, node.now, decode_value(mem.values[b"k"])[1]
    lease, now, val = asyncio.run(go())
    assert now > lease and val == b"w"


def test_expired_lease_allows_immediate_put():
    node = FakeNode()
    c = CacheKv(node, MemKv())
    asyncio.run(c.put(b"k", b"v"))
    assert node.slept == 0


@pytest.mark.parametrize("workload,seed", [("bank", 1), ("cachekv", 1), ("cachekv", 2)])
def test_simulated_app_runs(workload, seed):
    sc = Scenario(workload=workload, seed=seed, clients=3, ops_per_client=10, drop_prob=0.05, dup_prob=0.05,
                  max_delay_ms=20, key_space=2)
    res = run_scenario(sc)
    assert res.ok, res.error
    if workload == "bank":
        assert res.report["lock_handoffs"] > 0
