import pytest

from vrsm import kv
from vrsm.codec import Reader, Writer
from vrsm.errors import Err, RetryError
from vrsm.kv import KvStateMachine
from vrsm.replica import (RPC_APPLY_AS_BACKUP, RPC_BECOME_PRIMARY, RPC_GET_STATE_AND_SEAL,
                          RPC_INCREASE_COMMIT_INDEX, RPC_SET_NEW_EPOCH_STATE, Replica)
from vrsm.sim.scenario import Scenario
from vrsm.sim.workloads import run_scenario

from conftest import simulate, start


class Handle:
    def __init__(self, replica):
        self.r = replica
        self.h = replica.handlers()

    async def call(self, rpc_id, w: Writer) -> Reader:
        return Reader(await self.h[rpc_id](w.getvalue()))

    async def code(self, rpc_id, w: Writer) -> int:
        return (await self.call(rpc_id, w)).u64()

    async def enter(self, epoch, next_index=0, snap=None):
        snap = KvStateMachine().get_state() if snap is None else snap
        return await self.code(RPC_SET_NEW_EPOCH_STATE, Writer().u64(epoch).u64(next_index).blob(snap))

    async def backup(self, epoch, idx, op):
        return await self.code(RPC_APPLY_AS_BACKUP, Writer().u64(epoch).u64(idx).blob(op))

    async def commit(self, epoch, c):
        return await self.code(RPC_INCREASE_COMMIT_INDEX, Writer().u64(epoch).u64(c))

    async def seal(self, epoch) -> bytes:
        return await self.h[RPC_GET_STATE_AND_SEAL](Writer().u64(epoch).getvalue())


def _run(body):
    async def director(world):
        n = start(world, "r")
        r = await Replica.start(n, 7, KvStateMachine())
        return await body(world, Handle(r))
    return simulate(director)


def test_backup_accepts_matching_index():
    async def body(world, h):
        await h.enter(1)
        codes = [await h.backup(1, i, kv.put(b"k", b"%d" % i)) for i in range(3)]
        return codes, h.r.next_index, h.r.logger.records
    codes, nxt, recs = _run(body)
    assert codes == [Err.OK] * 3 and nxt == 3 and len(recs) == 3


def test_backup_rejects_older_epoch():
    async def body(world, h):
        await h.enter(2)
        return await h.backup(1, 0, kv.put(b"k", b"v"))
    assert _run(body) == Err.STALE_EPOCH


def test_duplicate_backup_delivery_changes_nothing():
    async def body(world, h):
        await h.enter(1)
        op = kv.put(b"k", b"v")
        await h.backup(1, 0, op)
        code = await h.backup(1, 0, op)
        return code, h.r.next_index
    code, nxt = _run(body)
    assert nxt == 1
    assert code == Err.OK  # acknowledged again, never applied twice


def test_commit_index_is_capped_and_monotone():
    async def body(world, h):
        await h.enter(1)
        for i in range(5):
            await h.backup(1, i, kv.put(b"k", b"%d" % i))
        await h.commit(1, 3)
        a = h.r.committed
        await h.commit(1, 2)
        b = h.r.committed
        await h.commit(1, 99)
        c = h.r.committed
        stale = await h.commit(0, 4)
        return a, b, c, stale
    assert _run(body) == (3, 3, 5, Err.STALE_EPOCH)


def test_seal_is_repeatable():
    async def body(world, h):
        await h.enter(1)
        await h.backup(1, 0, kv.put(b"k", b"v"))
        first = await h.seal(2)
        second = await h.seal(2)
        refused = Reader(await h.seal(0)).u64()
        late = await h.backup(1, 1, kv.put(b"k", b"w"))
        return first, second, refused, late, h.r.sealed
    first, second, refused, late, sealed = _run(body)
    assert first == second and Reader(first).u64() == Err.OK
    assert refused == Err.STALE_EPOCH
    assert late == Err.SEALED and sealed


def test_seal_reports_next_index_and_state():
    async def body(world, h):
        await h.enter(1, next_index=4)
        await h.backup(1, 4, kv.put(b"k", b"v"))
        r = Reader(await h.seal(2))
        code, epoch, nxt, snap = r.u64(), r.u64(), r.u64(), r.blob()
        sm = KvStateMachine()
        sm.set_state(snap, nxt)
        return code, epoch, nxt, sm.values
    assert _run(body) == (Err.OK, 1, 5, {b"k": b"v"})


def test_new_epoch_state_is_accepted_once():
    async def body(world, h):
        a = await h.enter(2)
        b = await h.enter(2)
        await h.enter(3)
        c = await h.enter(1)
        return a, b, c, h.r.epoch
    assert _run(body) == (Err.OK, Err.STALE_EPOCH, Err.STALE_EPOCH, 3)


def test_become_primary_needs_current_epoch():
    async def body(world, h):
        await h.enter(2)
        stale = await h.code(RPC_BECOME_PRIMARY, Writer().u64(1).u64_list([7]))
        ok = await h.code(RPC_BECOME_PRIMARY, Writer().u64(2).u64_list([7, 8]))
        return stale, ok, h.r.is_primary, h.r.backups
    assert _run(body) == (Err.WRONG_EPOCH, Err.OK, True, [8])


def test_read_without_lease_is_retried():
    async def body(world, h):
        await h.enter(1)
        with pytest.raises(RetryError):
            await h.r.apply_readonly(kv.get(b"k"))
        return True
    assert _run(body)


def test_recovery_replays_the_log():
    async def director(world):
        n = start(world, "r")
        h = Handle(await Replica.start(n, 7, KvStateMachine()))
        await h.enter(1)
        for i in range(3):
            await h.backup(1, i, kv.put(b"k%d" % i, b"v"))
        await h.r.logger.flush()
        world.crash(n)
        world.start(n)
        r2 = await Replica.start(n, 7, KvStateMachine())
        return r2.epoch, r2.next_index, r2.vsm.values
    assert simulate(director) == (1, 3, {b"k0": b"v", b"k1": b"v", b"k2": b"v"})


def test_replicated_cluster_keeps_one_committed_log():
    res = run_scenario(Scenario(workload="kv", seed=4, clients=3, ops_per_client=20, read_fraction=0.3))
    assert res.ok, res.error
    assert res.report["violations"] == [] and res.report["committed_ops"]["main"] > 0


def test_backup_crash_and_reconfiguration_keep_committed_ops():
    res = run_scenario(Scenario(workload="kv", seed=9, clients=3, ops_per_client=20, backup_crashes=1,
                                reconfigurations=1))
    assert res.ok, res.error
    assert res.report["live_transitions"] >= 1
