import asyncio

import pytest

from vrsm.errors import NotLeaderError, PaxosError
from vrsm.paxos import PaxosNode, next_owned_epoch
from vrsm.rpc import serve
from vrsm.sim.oracle import Oracle
from vrsm.transport import FaultProfile
from vrsm.clock import MS

from conftest import simulate, start

INIT = b"init"


def _servers(world, n=3):
    peers = [10 + i for i in range(n)]

    def main_for(i):
        async def main(node):
            px = await PaxosNode.recover(node, i, peers, INIT)
            await serve(node, peers[i], px.handlers())
            node.app = px
        return main
    nodes = [start(world, f"px{i}", main_for(i), group="px") for i in range(n)]
    if world.oracle is not None:
        world.oracle.paxos_sizes["px"] = n
    return nodes


async def _ready(nodes):
    while any(n.alive and n.app is None for n in nodes):
        await asyncio.sleep(0.001)


def test_next_owned_epoch():
    assert next_owned_epoch(0, 1, 3) == 1
    assert next_owned_epoch(1, 1, 3) == 4
    assert next_owned_epoch(5, 0, 3) == 6
    assert next_owned_epoch(5, 2, 3) == 8


def test_fresh_cluster_reads_initial_blob():
    async def director(world):
        nodes = _servers(world)
        await _ready(nodes)
        return [n.app.weak_read() for n in nodes]
    assert simulate(director, oracle=Oracle) == [INIT] * 3


@pytest.mark.parametrize("crashed,ok", [(0, True), (1, True), (2, False)])
def test_commit_needs_a_majority(crashed, ok):
    async def director(world):
        nodes = _servers(world)
        await _ready(nodes)
        leader = nodes[0].app
        assert await leader.try_become_leader()
        for n in nodes[1:1 + crashed]:
            world.crash(n)
        _, commit = leader.begin()
        try:
            await commit(b"v1")
        except PaxosError:
            return False
        await asyncio.sleep(0.1)
        return leader.weak_read() == b"v1"
    assert simulate(director, oracle=Oracle) is ok


def test_commit_on_follower_is_refused():
    async def director(world):
        nodes = _servers(world)
        await _ready(nodes)
        _, commit = nodes[1].app.begin()
        with pytest.raises(NotLeaderError):
            await commit(b"nope")
        return nodes[1].app.weak_read()
    assert simulate(director, oracle=Oracle) == INIT


def test_commit_after_index_moved_is_refused():
    async def director(world):
        nodes = _servers(world)
        await _ready(nodes)
        px = nodes[0].app
        assert await px.try_become_leader()
        _, late = px.begin()
        _, first = px.begin()
        await first(b"first")
        with pytest.raises(PaxosError):
            await late(b"late")
        return px.weak_read()
    assert simulate(director, oracle=Oracle) == b"first"


def test_repeat_election_uses_larger_epoch():
    async def director(world):
        nodes = _servers(world)
        await _ready(nodes)
        px = nodes[2].app
        assert await px.try_become_leader()
        e1 = px.leader_epoch
        assert await px.try_become_leader()
        return e1, px.leader_epoch
    e1, e2 = simulate(director, oracle=Oracle)
    assert e2 > e1 and e1 % 3 == 2 and e2 % 3 == 2


def test_committed_blob_reaches_followers():
    async def director(world):
        nodes = _servers(world)
        await _ready(nodes)
        px = nodes[0].app
        assert await px.try_become_leader()
        _, commit = px.begin()
        await commit(b"v")
        await asyncio.sleep(0.1)
        return [n.app.weak_read() for n in nodes]
    out = simulate(director, oracle=Oracle)
    assert out.count(b"v") >= 2 and set(out) <= {b"v", INIT}


@pytest.mark.parametrize("seed", range(20))
def test_concurrent_leaders_agree(seed):
    async def director(world):
        nodes = _servers(world)
        await _ready(nodes)

        async def campaign(px, tag):
            for k in range(5):
                if px.is_leader or await px.try_become_leader():
                    _, commit = px.begin()
                    try:
                        await commit(b"%s%d" % (tag, k))
                    except (PaxosError, NotLeaderError):
                        pass
                await asyncio.sleep(world.rng.randint(0, 20) / 1000)
        await asyncio.gather(campaign(nodes[0].app, b"a"), campaign(nodes[1].app, b"b"))
        px = nodes[2].app
        while not await px.try_become_leader():
            pass
        _, commit = px.begin()
        await commit(b"final")
        return world.oracle.report()
    rep = simulate(director, seed=seed, oracle=Oracle,
                   profile=FaultProfile(drop_prob=0.1, dup_prob=0.1, min_delay=MS, max_delay=10 * MS))
    assert rep["violations"] == [] and rep["paxos_commits"]
