"""Unreliable connections: a seeded simulated network and a TCP backend.

Both backends expose the same two objects. A ``Connection`` has ``send(msg)``
(fire-and-forget, may drop, duplicate or reorder) and ``await receive()``
(returns one whole message). A ``Listener`` has ``await accept()`` which
yields the server side of each new peer connection.

Addresses are unsigned 64-bit integers in both modes. Real-mode addresses pack
an IPv4 host and a TCP port as ``(ipv4 << 16) | port``.
"""

import asyncio
import collections
import ipaddress
import logging
import struct
import zlib
from dataclasses import dataclass, field

from .clock import MS

log = logging.getLogger(__name__)

_LEN = struct.Struct("<Q")


@dataclass
class FaultProfile:
    drop_prob: float = 0.0
    dup_prob: float = 0.0
    min_delay: int = 1 * MS
    max_delay: int = 1 * MS
    # directional (src node id, dst node id) pairs currently severed
    partitions: set = field(default_factory=set)

    def __post_init__(self):
        if not (0.0 <= self.drop_prob <= 1.0 and 0.0 <= self.dup_prob <= 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        if not (0 <= self.min_delay <= self.max_delay):
            raise ValueError("need 0 <= min_delay <= max_delay")

    def severed(self, src: int, dst: int) -> bool:
        return (src, dst) in self.partitions

    def partition(self, a: int, b: int, both_ways: bool = True):
        self.partitions.add((a, b))
        if both_ways:
            self.partitions.add((b, a))

    def heal(self):
        self.partitions.clear()


class ConnectionClosed(Exception):
    pass


# --------------------------------------------------------------------------
# simulated backend


class _Inbox:
    __slots__ = ("items", "waiter", "closed")

    def __init__(self):
        self.items = collections.deque()
        self.waiter = None
        self.closed = False

    def push(self, item):
        self.items.append(item)
        w = self.waiter
        if w is not None and not w.done():
            w.set_result(None)

    async def pop(self, loop):
        while not self.items:
            if self.closed:
                raise ConnectionClosed()
            self.waiter = loop.create_future()
            try:
                await self.waiter
            finally:
                self.waiter = None
        return self.items.popleft()

    def close(self):
        self.closed = True
        w = self.waiter
        if w is not None and not w.done():
            w.set_result(None)


class SimConnection:
    """One end of a simulated connection, bound to one node incarnation."""

    __slots__ = ("net", "node", "incarnation", "id", "peer_addr", "peer", "inbox", "server_side")

    def __init__(self, net, node, peer_addr, server_side=False):
        self.net = net
        self.node = node
        self.incarnation = node.incarnation
        self.id = net._next_id()
        self.peer_addr = peer_addr
        self.peer = None  # server side: the client endpoint
        self.inbox = _Inbox()
        self.server_side = server_side

    @property
    def live(self) -> bool:
        return self.node.alive and self.node.incarnation == self.incarnation

    def send(self, msg: bytes):
        self.net._send(self, bytes(msg))

    async def receive(self) -> bytes:
        return await self.inbox.pop(self.net.loop)

    def close(self):
        self.inbox.close()


class SimListener:
    __slots__ = ("net", "node", "incarnation", "addr", "accepted", "conns")

    def __init__(self, net, node, addr):
        self.net = net
        self.node = node
        self.incarnation = node.incarnation
        self.addr = addr
        self.accepted = _Inbox()
        self.conns = {}

    @property
    def live(self) -> bool:
        return self.node.alive and self.node.incarnation == self.incarnation

    async def accept(self) -> SimConnection:
        return await self.accepted.pop(self.net.loop)

    def close(self):
        self.accepted.close()
        if self.net.listeners.get(self.addr) is self:
            del self.net.listeners[self.addr]


class SimNetwork:
    """Message delivery for the simulator, driven by one seeded RNG.

    ``world`` supplies ``loop`` (a SimLoop), ``rng`` and ``log(event)``.
    """

    def __init__(self, world, profile: FaultProfile = None):
        self.world = world
        self.loop = world.loop
        self.rng = world.rng
        self.profile = profile or FaultProfile()
        self.listeners = {}
        self._ids = 0
        self.sent = 0
        self.delivered = 0
        self.audit = None  # optional list of ("send"|"deliver", conn id, payload)

    def _next_id(self) -> int:
        self._ids += 1
        return self._ids

    def listen(self, node, addr: int) -> SimListener:
        cur = self.listeners.get(addr)
        if cur is not None and cur.live:
            raise RuntimeError(f"address {addr} already bound")
        lst = SimListener(self, node, addr)
        self.listeners[addr] = lst
        return lst

    def connect(self, node, addr: int) -> SimConnection:
        return SimConnection(self, node, addr)

    def _dst_node_id(self, conn):
        if conn.server_side:
            return conn.peer.node.id
        lst = self.listeners.get(conn.peer_addr)
        return lst.node.id if lst is not None else None

    def _send(self, conn: SimConnection, msg: bytes):
        if not conn.live:
            return
        world = self.world
        p = self.profile
        dst = self._dst_node_id(conn)
        crc = zlib.crc32(msg)
        self.sent += 1
        if self.audit is not None:
            self.audit.append(("send", conn.id, msg))
        if dst is None:
            world.log(("send", conn.id, crc, 0))
            return
        if p.severed(conn.node.id, dst):
            world.log(("send", conn.id, crc, -1))
            return
        rng = self.rng
        copies = 0
        if p.drop_prob == 0.0 or rng.random() >= p.drop_prob:
            copies = 1
            if p.dup_prob > 0.0 and rng.random() < p.dup_prob:
                copies = 2
        world.log(("send", conn.id, crc, copies))
        now = self.loop.now_ns()
        for _ in range(copies):
            delay = p.min_delay if p.min_delay == p.max_delay else rng.randint(p.min_delay, p.max_delay)
            self.loop.call_at_ns(now + delay, self._deliver, conn, msg)

    def _deliver(self, src: SimConnection, msg: bytes):
        if src.server_side:
            dst = src.peer
            if not dst.live or self.profile.severed(src.node.id, dst.node.id):
                return
        else:
            lst = self.listeners.get(src.peer_addr)
            if lst is None or not lst.live or self.profile.severed(src.node.id, lst.node.id):
                return
            dst = lst.conns.get(src.id)
            if dst is None:
                dst = SimConnection(self, lst.node, src.node.id, server_side=True)
                dst.peer = src
                lst.conns[src.id] = dst
                lst.accepted.push(dst)
        self.delivered += 1
        if self.audit is not None:
            self.audit.append(("deliver", src.id, msg))
        self.world.log(("dlv", src.id, dst.id, zlib.crc32(msg)))
        dst.inbox.push(msg)


# --------------------------------------------------------------------------
# TCP backend


def pack_addr(host: str, port: int) -> int:
    return (int(ipaddress.IPv4Address(host)) << 16) | port


def unpack_addr(addr: int):
    return str(ipaddress.IPv4Address(addr >> 16)), addr & 0xFFFF


def parse_addr(s: str) -> int:
    host, _, port = s.rpartition(":")
    return pack_addr(host or "127.0.0.1", int(port))


def format_addr(addr: int) -> str:
    host, port = unpack_addr(addr)
    return f"{host}:{port}"


def frame(msg: bytes) -> bytes:
    return _LEN.pack(len(msg)) + msg


async def read_frame(reader: asyncio.StreamReader) -> bytes:
    hdr = await reader.readexactly(8)
    (n,) = _LEN.unpack(hdr)
    return await reader.readexactly(n)


class TcpConnection:
    """Stream-socket connection with length-prefixed frames.

    A broken stream is reported as silent loss; the client side reconnects on
    the next send.
    """

    def __init__(self, addr: int = None, reader=None, writer=None):
        self.peer_addr = addr
        self.server_side = reader is not None
        self.inbox = _Inbox()
        self._writer = writer
        self._pending = []
        self._connecting = False
        self._tasks = set()
        if reader is not None:
            self._start_reader(reader)

    def _spawn(self, coro):
        t = asyncio.get_running_loop().create_task(coro)
        self._tasks.add(t)
        t.add_done_callback(self._tasks.discard)

    def _start_reader(self, reader):
        self._spawn(self._read_loop(reader))

    async def _read_loop(self, reader):
        try:
            while True:
                self.inbox.push(await read_frame(reader))
        except (asyncio.IncompleteReadError, ConnectionError, OSError):
            pass
        finally:
            self._writer = None
            if self.server_side:
                self.inbox.close()

    async def _connect(self):
        host, port = unpack_addr(self.peer_addr)
        try:
            reader, writer = await asyncio.open_connection(host, port)
        except OSError:
            self._pending.clear()
            return
        finally:
            self._connecting = False
        self._writer = writer
        self._start_reader(reader)
        for f in self._pending:
            writer.write(f)
        self._pending.clear()

    def send(self, msg: bytes):
        data = frame(bytes(msg))
        w = self._writer
        if w is not None and not w.is_closing():
            try:
                w.write(data)
            except (ConnectionError, OSError):
                self._writer = None
            return
        if self.server_side:
            return
        self._pending.append(data)
        if not self._connecting:
            self._connecting = True
            self._spawn(self._connect())

    async def receive(self) -> bytes:
        return await self.inbox.pop(asyncio.get_running_loop())

    def close(self):
        w = self._writer
        self._writer = None
        if w is not None:
            w.close()
        for t in list(self._tasks):
            t.cancel()
        self.inbox.close()


class TcpListener:
    def __init__(self):
        self.accepted = _Inbox()
        self.server = None

    async def start(self, addr: int):
        host, port = unpack_addr(addr)
        self.server = await asyncio.start_server(self._on_conn, host, port)
        return self

    async def _on_conn(self, reader, writer):
        self.accepted.push(TcpConnection(reader=reader, writer=writer))

    async def accept(self) -> TcpConnection:
        return await self.accepted.pop(asyncio.get_running_loop())

    def close(self):
        if self.server is not None:
            self.server.close()
        self.accepted.close()
