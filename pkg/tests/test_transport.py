import asyncio
import socket

from hypothesis import given, settings, strategies as st

from vrsm.clock import MS
from vrsm.transport import FaultProfile, TcpConnection, TcpListener, pack_addr, parse_addr, format_addr

from conftest import simulate, start


def _deliveries(profile, sends=5, addr=7, listen=True):
    async def director(world):
        a, b = start(world, "a"), start(world, "b")
        if listen:
            await b.listen(7)
        c = a.connect(addr)
        for i in range(sends):
            c.send(b"m%d" % i)
        await asyncio.sleep(1)
        return world.net.delivered
    return simulate(director, profile=profile)


def test_reliable_delivery():
    assert _deliveries(FaultProfile(), sends=3) == 3


def test_drop_all_never_delivers():
    assert _deliveries(FaultProfile(drop_prob=1.0), sends=20) == 0


def test_dup_all_delivers_twice():
    assert _deliveries(FaultProfile(dup_prob=1.0), sends=1) == 2


def test_unused_address_is_a_black_hole():
    assert _deliveries(FaultProfile(), sends=5, addr=99) == 0


def test_fixed_delay_is_fifo():
    async def director(world):
        a, b = start(world, "a"), start(world, "b")
        lst = await b.listen(7)
        c = a.connect(7)
        for i in range(20):
            c.send(b"%d" % i)
        s = await lst.accept()
        return [await s.receive() for _ in range(20)]
    got = simulate(director, profile=FaultProfile(min_delay=3 * MS, max_delay=3 * MS))
    assert got == [b"%d" % i for i in range(20)]


def test_longer_delay_is_overtaken():
    async def director(world):
        a, b = start(world, "a"), start(world, "b")
        lst = await b.listen(7)
        c = a.connect(7)
        world.net.profile = FaultProfile(min_delay=10 * MS, max_delay=10 * MS)
        c.send(b"A")
        world.net.profile = FaultProfile(min_delay=1 * MS, max_delay=1 * MS)
        c.send(b"B")
        s = await lst.accept()
        return [await s.receive(), await s.receive()]
    assert simulate(director) == [b"B", b"A"]


def test_connections_are_not_cross_delivered():
    async def director(world):
        a, b = start(world, "a"), start(world, "b")
        lst = await b.listen(7)
        c1, c2 = a.connect(7), a.connect(7)
        for i in range(5):
            c1.send(b"one")
            c2.send(b"two")
        s1, s2 = await lst.accept(), await lst.accept()
        return {await s1.receive() for _ in range(5)}, {await s2.receive() for _ in range(5)}
    x, y = simulate(director, profile=FaultProfile(min_delay=1 * MS, max_delay=5 * MS))
    assert len(x) == 1 and len(y) == 1 and x != y


def test_crash_discards_blocked_receiver_and_restart_receives_fresh():
    got = []

    async def server(node):
        lst = await node.listen(7)
        conn = await lst.accept()
        got.append((node.incarnation, await conn.receive()))

    async def director(world):
        a = start(world, "a")
        b = start(world, "b", server)
        await asyncio.sleep(0.01)
        world.crash(b)  # b is parked in accept()
        world.start(b)
        await asyncio.sleep(0.01)
        a.connect(7).send(b"fresh")
        await asyncio.sleep(0.1)
    simulate(director)
    assert got == [(1, b"fresh")]


def test_payloads_are_never_fabricated():
    async def director(world):
        world.net.audit = []
        a, b = start(world, "a"), start(world, "b")
        await b.listen(7)
        c = a.connect(7)
        for i in range(200):
            c.send(b"p%d" % i)
        await asyncio.sleep(2)
        return world.net.audit
    audit = simulate(director, profile=FaultProfile(drop_prob=0.3, dup_prob=0.3, min_delay=MS, max_delay=50 * MS))
    sent = {(cid, m) for kind, cid, m in audit if kind == "send"}
    delivered = [(cid, m) for kind, cid, m in audit if kind == "deliver"]
    assert delivered and all(d in sent for d in delivered)


def test_address_packing_round_trips():
    a = pack_addr("127.0.0.1", 8080)
    assert parse_addr("127.0.0.1:8080") == a
    assert format_addr(a) == "127.0.0.1:8080"


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@settings(max_examples=20, deadline=None)
@given(st.lists(st.binary(max_size=4096), min_size=1, max_size=8))
def test_tcp_frames_round_trip(msgs):
    async def go():
        addr = pack_addr("127.0.0.1", _free_port())
        lst = await TcpListener().start(addr)
        c = TcpConnection(addr)
        try:
            for m in msgs:
                c.send(m)
            s = await asyncio.wait_for(lst.accept(), 5)
            out = [await asyncio.wait_for(s.receive(), 5) for _ in msgs]
            s.close()
            return out
        finally:
            c.close()
            lst.close()
    assert asyncio.run(go()) == msgs
