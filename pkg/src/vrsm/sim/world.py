"""The simulated universe: nodes with crash/restart, the network, and run control."""

import asyncio
import hashlib
import logging
import random

from ..clock import ClockConfig, DEFAULT_EPSILON, SimClock
from ..errors import NodeCrashed
from ..storage import SimStore
from ..transport import FaultProfile, SimNetwork
from .loop import SimLoop

log = logging.getLogger(__name__)


class SimulationFailure(Exception):
    """A node task raised unexpectedly or an oracle reported a violation."""

    def __init__(self, msg, event_index=None):
        super().__init__(msg)
        self.event_index = event_index


class SimNode:
    """Runtime handle passed to protocol code.

    Heap state lives in objects created by ``main``; only ``files`` (the
    durable store) survives ``World.crash``.
    """

    def __init__(self, world, node_id: int, name: str, main, clock_config: ClockConfig):
        self.world = world
        self.id = node_id
        self.name = name
        self.main = main
        self.alive = False
        self.incarnation = 0
        self.files = {}
        self.store = SimStore(self, self.files, world._on_mutation)
        self.clock = SimClock(world.now_ns, clock_config)
        self.rng = None
        self.tasks = set()
        self.app = None  # whatever main() chose to expose, for tests and oracles
        self.group = "main"  # replication group tag used by the oracle
        self.mutations = 0

    def time_range(self):
        return self.clock.get_time_range()

    def spawn(self, coro):
        if not self.alive:
            coro.close()
            raise NodeCrashed(self.name)
        t = self.world.loop.create_task(self._guard(coro))
        self.tasks.add(t)
        t.add_done_callback(self.tasks.discard)
        # a task cancelled before its first step never runs coro; close it quietly
        t.add_done_callback(lambda _t, c=coro: c.close())
        return t

    async def _guard(self, coro):
        try:
            return await coro
        except NodeCrashed:
            return None
        except asyncio.CancelledError:
            raise
        except Exception as e:  # noqa: BLE001 - any escape is a bug worth failing the run on
            if self.alive:
                self.world.fail(f"{self.name}: unhandled {type(e).__name__}: {e}", exc=e)
            return None

    async def sleep(self, ns: int):
        await asyncio.sleep(ns / 1e9)
        self.check_alive()

    def connect(self, addr: int):
        return self.world.net.connect(self, addr)

    async def listen(self, addr: int):
        return self.world.net.listen(self, addr)

    def trace(self, kind: str, **fields):
        self.world.trace(self, kind, fields)

    def check_alive(self):
        if not self.alive:
            raise NodeCrashed(self.name)

    def crash_now(self):
        self.world.crash(self)
        raise NodeCrashed(self.name)


class World:
    def __init__(self, seed: int, profile: FaultProfile = None, epsilon: int = DEFAULT_EPSILON,
                 clock_offsets: bool = True, keep_events: bool = True):
        self.seed = seed
        self.loop = SimLoop()
        self.rng = random.Random(f"net:{seed}")
        self.sched_rng = random.Random(f"sched:{seed}")
        self._clock_rng = random.Random(f"clock:{seed}")
        self.epsilon = epsilon
        self.clock_offsets = clock_offsets
        self._hash = hashlib.sha256()
        self.events = [] if keep_events else None
        self.event_count = 0
        self.net = SimNetwork(self, profile)
        self.nodes = []
        self.by_name = {}
        self.oracle = None
        self.history = None
        self.failures = []
        self.mutation_hook = None
        self._director = None

    # -- bookkeeping

    def now_ns(self) -> int:
        return self.loop._now_ns

    def log(self, ev: tuple):
        ev = (self.loop._now_ns,) + ev
        self.event_count += 1
        self._hash.update(repr(ev).encode())
        if self.events is not None:
            self.events.append(ev)

    def fingerprint(self) -> str:
        return self._hash.hexdigest()

    def fail(self, msg: str, exc: BaseException = None):
        if exc is not None:
            log.debug("simulation failure", exc_info=exc)
        self.failures.append(SimulationFailure(msg, self.event_count))
        self.log(("fail", msg))
        d = self._director
        if d is not None and not d.done():
            d.cancel()

    def trace(self, node, kind, fields):
        self.log(("trace", node.name, kind, tuple(sorted(fields.items()))))
        if self.oracle is not None:
            self.oracle.observe(node, kind, fields)

    # -- nodes

    def add_node(self, name: str, main, offset: int = None, group: str = "main") -> SimNode:
        if name in self.by_name:
            raise ValueError(f"duplicate node {name}")
        if offset is None:
            offset = self._clock_rng.randint(-self.epsilon, self.epsilon) if self.clock_offsets else 0
        node = SimNode(self, len(self.nodes), name, main, ClockConfig(self.epsilon, offset))
        node.group = group
        self.nodes.append(node)
        self.by_name[name] = node
        return node

    def start(self, node: SimNode):
        if node.alive:
            return
        node.alive = True
        node.rng = random.Random(f"node:{self.seed}:{node.name}:{node.incarnation}")
        self.log(("start", node.name, node.incarnation))
        node.spawn(node.main(node))

    def crash(self, node: SimNode):
        if not node.alive:
            return
        self.log(("crash", node.name, node.incarnation))
        node.alive = False
        node.incarnation += 1
        node.app = None
        for t in list(node.tasks):
            t.cancel()
        if self.oracle is not None:
            self.oracle.on_crash(node)

    def restart(self, node: SimNode):
        self.crash(node)
        self.start(node)

    def schedule(self, at_ns: int, fn, *args):
        return self.loop.call_at_ns(at_ns, fn, *args)

    def schedule_crash(self, node: SimNode, at_ns: int, downtime: int = None):
        """Crash ``node`` at ``at_ns``; restart it ``downtime`` later when given (minimum 1 ns)."""
        self.loop.call_at_ns(at_ns, self.crash, node)
        if downtime is not None:
            self.loop.call_at_ns(at_ns + max(1, downtime), self.start, node)

    def _on_mutation(self, node, kind, name, data):
        node.mutations += 1
        self.log(("disk", node.name, kind, name, len(data)))
        if self.mutation_hook is not None:
            return self.mutation_hook(node, kind, name, data)
        return None

    # -- running

    def run(self, director, limit_ns: int = None):
        """Run ``director`` (a coroutine) to completion on virtual time.

        Raises SimulationFailure on the first node bug or oracle violation,
        and TimeoutError if virtual time reaches ``limit_ns`` first.
        """
        loop = self.loop
        asyncio.set_event_loop(loop)
        task = loop.create_task(director)
        self._director = task
        timed_out = []
        if limit_ns is not None:
            def expire():
                timed_out.append(True)
                task.cancel()
            loop.call_at_ns(limit_ns, expire)
        try:
            return loop.run_until_complete(task)
        except asyncio.CancelledError:
            if self.failures:
                raise self.failures[0] from None
            if timed_out:
                raise TimeoutError(f"virtual time limit {limit_ns}ns reached") from None
            raise
        finally:
            self._director = None

    def check(self):
        if self.failures:
            raise self.failures[0]

    def close(self):
        loop = self.loop
        tasks = [t for n in self.nodes for t in n.tasks]
        for n in self.nodes:
            n.alive = False
        for t in tasks:
            t.cancel()
        if tasks:
            loop.run_until_complete(asyncio.gather(*tasks, return_exceptions=True))
        leftovers = [t for t in asyncio.all_tasks(loop) if not t.done()]
        for t in leftovers:
            t.cancel()
        if leftovers:
            loop.run_until_complete(asyncio.gather(*leftovers, return_exceptions=True))
        loop.close()
        asyncio.set_event_loop(None)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
