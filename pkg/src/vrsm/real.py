"""Running the protocol stack on real sockets, files and the wall clock.

``RealNode`` offers the same runtime surface as the simulator's nodes, so
every protocol module runs unchanged. The ``run_*`` coroutines are what the
``vrsm real`` subcommands execute.
"""

import asyncio
import logging
import os
import random
import statistics
import time
from dataclasses import dataclass, field

from .clerk import Clerk
from .clock import DEFAULT_EPSILON, WallClock
from .configservice import ConfigClerk, ConfigServer
from .errors import ProtocolError
from .exactlyonce import ExactlyOnceClerk, ExactlyOnceStateMachine
from .history import History
from .kv import KvClerk, KvStateMachine
from .reconfig import Reconfigurer
from .replica import Replica
from .storage import FileStore
from .transport import TcpConnection, TcpListener, format_addr

log = logging.getLogger(__name__)


class RealNode:
    alive = True
    incarnation = 0

    def __init__(self, name: str, data_dir: str = None, epsilon: int = DEFAULT_EPSILON, seed=None):
        self.name = name
        self.id = 0
        self.store = FileStore(data_dir) if data_dir else None
        self.clock = WallClock(epsilon)
        self.rng = random.Random(seed if seed is not None else os.urandom(16))
        self.tasks = set()
        self.app = None
        self._listeners = []

    def time_range(self):
        return self.clock.get_time_range()

    def spawn(self, coro):
        t = asyncio.get_running_loop().create_task(coro)
        self.tasks.add(t)
        t.add_done_callback(self._reap)
        return t

    def _reap(self, t):
        self.tasks.discard(t)
        if not t.cancelled() and t.exception() is not None:
            log.error("%s: task failed", self.name, exc_info=t.exception())

    async def sleep(self, ns: int):
        await asyncio.sleep(ns / 1e9)

    def connect(self, addr: int):
        return TcpConnection(addr)

    async def listen(self, addr: int):
        lst = await TcpListener().start(addr)
        self._listeners.append(lst)
        return lst

    def trace(self, kind: str, **fields):
        if log.isEnabledFor(logging.DEBUG):
            log.debug("%s %s %s", self.name, kind, fields)

    def check_alive(self):
        pass

    def crash_now(self):
        os._exit(70)

    def close(self):
        for lst in self._listeners:
            lst.close()
        for t in list(self.tasks):
            t.cancel()


async def _forever():
    await asyncio.Event().wait()


async def run_config_server(me: int, peers: list, initial_config: list, data_dir: str, epsilon: int = DEFAULT_EPSILON):
    node = RealNode(f"cfg{me}", data_dir, epsilon)
    node.app = await ConfigServer.start(node, me, peers, initial_config)
    log.info("config server %d listening on %s", me, format_addr(peers[me]))
    await _forever()


async def run_replica(addr: int, config_addrs: list, initial_config: list, data_dir: str,
                      precise_deps: bool = True, epsilon: int = DEFAULT_EPSILON):
    node = RealNode(f"replica-{format_addr(addr)}", data_dir, epsilon)
    vsm = ExactlyOnceStateMachine(KvStateMachine(precise_deps))
    node.app = await Replica.start(node, addr, vsm, config_addrs, initial_config)
    log.info("replica listening on %s (epoch %d)", format_addr(addr), node.app.epoch)
    await _forever()


async def run_reconfigure(config_addrs: list, new_servers: list, attempts: int = 5) -> int:
    node = RealNode("reconfigure")
    rc = Reconfigurer(node, ConfigClerk(node, config_addrs))
    last = None
    for _ in range(attempts):
        try:
            return await rc.reconfigure(new_servers)
        except ProtocolError as e:
            last = e
            log.warning("reconfiguration attempt failed: %s", e)
            await asyncio.sleep(0.2)
    raise last


@dataclass
class BenchResult:
    ops: int = 0
    errors: int = 0
    elapsed_s: float = 0.0
    read_latencies_ns: list = field(default_factory=list)
    write_latencies_ns: list = field(default_factory=list)
    reconfig_epoch: int = None
    history: list = field(default_factory=list)

    @property
    def throughput(self) -> float:
        return self.ops / self.elapsed_s if self.elapsed_s > 0 else 0.0

    def report(self) -> str:
        lines = [f"ops={self.ops} errors={self.errors} elapsed={self.elapsed_s:.2f}s "
                 f"throughput={self.throughput:.0f} req/s"]
        for name, xs in (("read", self.read_latencies_ns), ("write", self.write_latencies_ns)):
            if xs:
                q = statistics.quantiles(xs, n=100, method="inclusive") if len(xs) > 1 else [xs[0]] * 99
                lines.append(f"{name}: n={len(xs)} mean={statistics.fmean(xs) / 1e6:.2f}ms "
                             f"p50={q[49] / 1e6:.2f}ms p95={q[94] / 1e6:.2f}ms p99={q[98] / 1e6:.2f}ms")
        if self.reconfig_epoch is not None:
            lines.append(f"live reconfiguration reached epoch {self.reconfig_epoch}")
        return "\n".join(lines)


async def run_bench(config_addrs: list, ops: int, read_fraction: float = 0.95, clients: int = 4, keys: int = 100,
                    reconfigure_to: list = None, reconfigure_after: int = None, seed=None) -> BenchResult:
    """Drive ``ops`` key-value operations from ``clients`` concurrent clerks."""
    res = BenchResult()
    if ops <= 0:
        return res
    rng = random.Random(seed)
    hist = History(time.monotonic_ns)
    done = [0]
    reconfig_started = asyncio.Event()
    quota = [ops // clients + (1 if i < ops % clients else 0) for i in range(clients)]

    async def client(i):
        node = RealNode(f"bench{i}", seed=rng.getrandbits(64))
        kv = KvClerk(ExactlyOnceClerk(Clerk(node, config_addrs), node.rng.getrandbits(63) + 1))
        crng = node.rng
        try:
            for n in range(quota[i]):
                key = f"k{crng.randrange(keys)}"
                t0 = time.monotonic_ns()
                try:
                    if crng.random() < read_fraction:
                        o = hist.invoke(i, "get", key)
                        v = (await kv.get(key.encode())).decode()
                        hist.complete(o, v)
                        res.read_latencies_ns.append(time.monotonic_ns() - t0)
                    else:
                        val = f"{i}-{n}"
                        o = hist.invoke(i, "put", key, val)
                        await kv.put(key.encode(), val.encode())
                        hist.complete(o, "")
                        res.write_latencies_ns.append(time.monotonic_ns() - t0)
                except (ProtocolError, OSError) as e:
                    res.errors += 1
                    log.warning("client %d: %s", i, e)
                done[0] += 1
                if reconfigure_to and done[0] >= (reconfigure_after or ops // 2):
                    reconfig_started.set()
        finally:
            node.close()

    async def reconfig():
        await reconfig_started.wait()
        res.reconfig_epoch = await run_reconfigure(config_addrs, reconfigure_to)

    async def all_clients():
        await asyncio.gather(*(client(i) for i in range(clients)))
        reconfig_started.set()  # a threshold beyond the op count still reconfigures once

    start = time.monotonic()
    jobs = [all_clients()]
    if reconfigure_to:
        jobs.append(reconfig())
    await asyncio.gather(*jobs)
    res.elapsed_s = time.monotonic() - start
    res.ops = ops
    res.history = hist.ops
    return res
