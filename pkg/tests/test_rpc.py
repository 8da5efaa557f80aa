import asyncio

import pytest

from vrsm.clock import MS, SECOND
from vrsm.rpc import RpcClient, RpcTimeout, serve, encode_request, decode_frame
from vrsm.transport import FaultProfile

from conftest import simulate, start

ECHO, COUNT = 1, 2


def _run(profile, rpc_id, payload=b"x", timeout=2 * SECOND, seed=1):
    runs = []

    async def echo(args):
        runs.append(args)
        return args

    async def director(world):
        srv, cli = start(world, "srv"), start(world, "cli")
        await serve(srv, 7, {ECHO: echo})
        c = RpcClient(cli, 7)
        try:
            return await c.call(rpc_id, payload, timeout)
        except RpcTimeout as e:
            return e
        finally:
            await asyncio.sleep(1)
    return simulate(director, profile=profile, seed=seed), runs


def test_echo_runs_once_on_reliable_network():
    reply, runs = _run(FaultProfile(), ECHO)
    assert reply == b"x" and runs == [b"x"]


def test_drop_all_times_out_without_execution():
    reply, runs = _run(FaultProfile(drop_prob=1.0), ECHO)
    assert isinstance(reply, TimeoutError) and runs == []


def test_unknown_rpc_id_times_out():
    reply, runs = _run(FaultProfile(), 99)
    assert isinstance(reply, TimeoutError) and runs == []


@pytest.mark.parametrize("seed", range(10))
def test_lossy_network_eventually_replies(seed):
    reply, runs = _run(FaultProfile(drop_prob=0.5, min_delay=MS, max_delay=20 * MS), ECHO,
                       payload=b"p%d" % seed, timeout=60 * SECOND, seed=seed)
    assert reply == b"p%d" % seed and len(runs) >= 1


def test_duplicated_request_frame_runs_handler_twice():
    runs = []

    async def count(args):
        runs.append(args)
        return b"%d" % len(runs)

    async def director(world):
        srv, cli = start(world, "srv"), start(world, "cli")
        await serve(srv, 7, {COUNT: count})
        conn = cli.connect(7)
        world.net.profile = FaultProfile(dup_prob=1.0)
        conn.send(encode_request(1, COUNT, b"a"))
        replies = [decode_frame(await conn.receive())[3] for _ in range(4)]
        return sorted(set(replies))
    assert simulate(director) == [b"1", b"2"]
    assert len(runs) == 2


def test_one_reply_per_call_under_duplication():
    async def echo(args):
        return args

    async def director(world):
        srv, cli = start(world, "srv"), start(world, "cli")
        await serve(srv, 7, {ECHO: echo})
        c = RpcClient(cli, 7)
        return [await c.call(ECHO, b"%d" % i, 5 * SECOND) for i in range(30)]
    out = simulate(director, profile=FaultProfile(drop_prob=0.2, dup_prob=0.5, min_delay=MS, max_delay=30 * MS))
    assert out == [b"%d" % i for i in range(30)]
