import asyncio

import pytest

from vrsm.errors import NodeCrashed
from vrsm.sim.oracle import Oracle
from vrsm.sim.scenario import Scenario, parse_scenario
from vrsm.sim.sweep import crash_point_sweep
from vrsm.sim.world import SimulationFailure, World
from vrsm.storage import StateLogger

from conftest import simulate, start

SMALL = Scenario(workload="kv", clients=3, ops_per_client=10, drop_prob=0.1, dup_prob=0.1, max_delay_ms=50,
                 backup_crashes=1, reconfigurations=1)


def test_same_seed_gives_identical_event_log():
    from vrsm.sim.workloads import run_scenario
    a = run_scenario(SMALL.with_seed(7), keep_events=True)
    b = run_scenario(SMALL.with_seed(7), keep_events=True)
    assert a.ok and b.ok
    assert a.fingerprint == b.fingerprint and a.events == b.events


def test_different_seeds_diverge_and_pass():
    from vrsm.sim.workloads import run_scenario
    runs = [run_scenario(SMALL.with_seed(s)) for s in (1, 2, 3)]
    assert all(r.ok for r in runs), [r.error for r in runs]
    assert len({r.fingerprint for r in runs}) == 3


def test_backup_crash_mid_run_completes_after_reconfiguration():
    from vrsm.sim.workloads import run_scenario
    r = run_scenario(SMALL.with_seed(11))
    assert r.ok, r.error
    assert r.report["crashes"] == 1 and r.report["live_transitions"] >= 1


def test_crash_during_recovery_then_recover_again():
    async def director(world):
        n = start(world, "n")
        lg = await StateLogger.recover(n, "wal")
        await lg.install_header(1, False, b"s")
        for i in range(4):
            lg.append_op(b"r%d" % i)
        await lg.wait_durable(4)
        # a torn tail makes the next recovery rewrite the file; crash right there
        n.files["wal"] += b"\x00\x01"
        world.crash(n)

        def hook(node, kind, name, data):
            world.mutation_hook = None
            node.crash_now()
        world.mutation_hook = hook
        world.start(n)
        with pytest.raises(NodeCrashed):
            await StateLogger.recover(n, "wal")
        world.start(n)
        lg2 = await StateLogger.recover(n, "wal")
        return lg2.epoch, lg2.records
    assert simulate(director) == (1, [b"r0", b"r1", b"r2", b"r3"])


def test_unhandled_node_exception_fails_the_run():
    async def bad(node):
        raise RuntimeError("boom")

    async def director(world):
        start(world, "bad", bad)
        await asyncio.sleep(1)
    with pytest.raises(SimulationFailure, match="boom"):
        simulate(director)


def test_virtual_time_limit():
    async def director(world):
        await asyncio.sleep(1000)
    with pytest.raises(TimeoutError):
        simulate(director, limit_s=5)


def test_logger_crash_sweep_is_clean():
    rep = crash_point_sweep(Scenario(workload="logger", seed=1), "log")
    assert rep.ok, rep.summary()
    assert rep.points > rep.mutations > 0


def test_logger_mutant_is_caught():
    rep = crash_point_sweep(Scenario(workload="logger", seed=1, mutants=("logger_ack_before_sync",)), "log")
    assert not rep.ok


class _N:
    def __init__(self, name, group="g"):
        self.name, self.group = name, group


def _oracle():
    w = World(1, clock_offsets=False)
    o = Oracle(w)
    o.paxos_sizes["g"] = 3
    return w, o


def test_oracle_flags_paxos_disagreement():
    w, o = _oracle()
    o.observe(_N("a"), "paxos_committed", {"epoch": 1, "index": 1, "digest": "x"})
    o.observe(_N("b"), "paxos_committed", {"epoch": 2, "index": 1, "digest": "y"})
    assert o.violations and w.failures


def test_oracle_flags_overlapping_lock_holders():
    w, o = _oracle()
    o.observe(_N("a"), "lock_acquired", {"key": b"L", "owner": 1})
    o.observe(_N("b"), "lock_acquired", {"key": b"L", "owner": 2})
    assert o.violations


def test_oracle_flags_config_change_inside_lease():
    w, o = _oracle()
    w.loop._now_ns = 100
    o.observe(_N("a"), "lease_granted", {"epoch": 1, "expiration": 500})
    o.observe(_N("a"), "config_propose", {"old_live": 1, "new_live": 2, "old_reserved": 2, "new_reserved": 2,
                                          "old_lease": 500, "new_lease": 0, "config": (1,)})
    assert o.violations


def test_scenario_file_parsing():
    sc = parse_scenario("[scenario]\nworkload = bank\n[faults]\ndrop_prob = 0.2\n[mutants]\nenable = a, b\n")
    assert (sc.workload, sc.drop_prob, sc.mutants) == ("bank", 0.2, ("a", "b"))
    with pytest.raises(ValueError):
        parse_scenario("[faults]\nbogus = 1\n")
    with pytest.raises(ValueError):
        parse_scenario("[nope]\n")
    with pytest.raises(ValueError):
        parse_scenario("[scenario]\nworkload = unknown\n")
