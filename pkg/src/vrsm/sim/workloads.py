"""Cluster builders and workload drivers for simulated runs.

``run_scenario`` builds a world for a Scenario, runs the workload's director
to completion, and (optionally) checks the recorded client history for
linearizability. Every random choice is drawn from seed-derived generators,
so a Scenario fully determines the event log.
"""

import asyncio
import logging
import random
from dataclasses import dataclass, field

from .. import lincheck, mutants
from ..apps.bank import Bank
from ..apps.cachekv import CacheKv
from ..apps.counter import CounterStateMachine
from ..apps.lockservice import LockService
from ..clerk import Clerk
from ..clock import MS, SECOND
from ..codec import read_u64
from ..configservice import ConfigClerk, ConfigServer
from ..errors import ProtocolError
from ..exactlyonce import ExactlyOnceClerk, ExactlyOnceStateMachine
from ..history import History
from ..kv import KvClerk, KvStateMachine
from ..paxos import PaxosNode
from ..reconfig import Reconfigurer
from ..replica import Replica
from ..rpc import serve
from ..storage import StateLogger
from .oracle import Oracle
from .scenario import Scenario
from .world import SimulationFailure, World

log = logging.getLogger(__name__)

RECONFIG_ATTEMPTS = 30


@dataclass
class RunResult:
    scenario: Scenario
    ok: bool
    error: str = None
    fingerprint: str = ""
    event_count: int = 0
    virtual_ns: int = 0
    events: list = None
    history: list = field(default_factory=list)
    spec: str = None
    lincheck: object = None
    report: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.scenario.seed

    def summary(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        line = (f"seed={self.seed} {status} workload={self.scenario.workload} ops={len(self.history)} "
                f"events={self.event_count} vtime={self.virtual_ns / SECOND:.2f}s")
        return line if self.ok else f"{line} error={self.error}"


async def _idle(node):
    pass


async def _capture(coro):
    """Run ``coro`` inside a node task and hand protocol errors back instead of failing the run."""
    try:
        return await coro, None
    except ProtocolError as e:
        return None, e


def _text(b: bytes) -> str:
    return b.decode("utf-8", "backslashreplace")


class Cluster:
    """One replicated state machine: its config service group plus replica servers."""

    def __init__(self, world: World, sc: Scenario, vsm_factory, group: str = "main",
                 cfg_base: int = 100, rep_base: int = 200, read_pause=None):
        self.world = world
        self.group = group
        self.cfg_addrs = [cfg_base + i for i in range(sc.config_servers)]
        self.rep_addrs = [rep_base + i for i in range(sc.replicas + sc.spares)]
        self.initial = self.rep_addrs[:sc.replicas]
        world.oracle.paxos_sizes[group] = len(self.cfg_addrs)
        self.cfg_nodes = [world.add_node(f"{group}-cfg{i}", self._cfg_main(i), group=group)
                          for i in range(len(self.cfg_addrs))]
        self.rep_nodes = {a: world.add_node(f"{group}-r{a}", self._rep_main(a, vsm_factory, read_pause), group=group)
                          for a in self.rep_addrs}
        for n in self.cfg_nodes + list(self.rep_nodes.values()):
            world.start(n)

    def _cfg_main(self, i):
        async def main(node):
            node.app = await ConfigServer.start(node, i, self.cfg_addrs, self.initial)
        return main

    def _rep_main(self, addr, vsm_factory, read_pause):
        async def main(node):
            r = await Replica.start(node, addr, vsm_factory(), self.cfg_addrs, self.initial)
            if read_pause is not None:
                r.read_pause = read_pause(node)
            node.app = r
        return main

    def current_config(self) -> list:
        """Director-side peek at the freshest config any live config server holds."""
        best = None
        for n in self.cfg_nodes:
            if n.app is not None:
                st = n.app.state()
                if best is None or st.live_epoch > best.live_epoch:
                    best = st
        return list(best.config) if best is not None else list(self.initial)

    def kv_clerk(self, node, client_id: int) -> KvClerk:
        return KvClerk(ExactlyOnceClerk(Clerk(node, self.cfg_addrs), client_id))


class Run:
    """Shared state for one simulated run."""

    def __init__(self, world: World, sc: Scenario):
        self.world = world
        self.sc = sc
        self.rng = random.Random(f"director:{sc.seed}")
        self.history = History(world.now_ns)
        world.history = self.history
        self.spec = None
        self.stats = {"crashes": 0, "restarts": 0, "reconfigs": 0, "reconfig_failures": 0}

    def client(self, name: str):
        n = self.world.add_node(name, _idle)
        self.world.start(n)
        return n

    # -- faults shared by the replicated workloads

    async def crash_backups(self, cluster: Cluster, count: int, window=(300 * MS, 2500 * MS)):
        w, sc = self.world, self.sc
        for _ in range(count):
            await asyncio.sleep(self.rng.randint(*window) / SECOND)
            cfg = cluster.current_config()
            backups = [a for a in cfg[1:] if cluster.rep_nodes[a].alive]
            if not backups:
                continue
            victim = cluster.rep_nodes[self.rng.choice(backups)]
            w.crash(victim)
            self.stats["crashes"] += 1
            await asyncio.sleep(self.rng.randint(1, max(1, int(sc.downtime_ms * MS))) / SECOND)
            w.start(victim)
            self.stats["restarts"] += 1

    def _target_config(self, cluster: Cluster) -> list:
        cfg = cluster.current_config()
        n = len(cfg)
        pool = list(cluster.rep_addrs)
        self.rng.shuffle(pool)
        spares = [a for a in pool if a not in cfg]
        keep = self.rng.sample(cfg, n - 1) if spares and n > 1 else list(cfg)
        new = keep + spares[:n - len(keep)]
        self.rng.shuffle(new)
        return new

    async def reconfigure(self, cluster: Cluster, ctl, delay: int):
        await asyncio.sleep(delay / SECOND)
        rc = Reconfigurer(ctl, ConfigClerk(ctl, cluster.cfg_addrs))
        for _ in range(RECONFIG_ATTEMPTS):
            target = self._target_config(cluster)
            epoch, e = await ctl.spawn(_capture(rc.reconfigure(target)))
            if e is not None:
                self.stats["reconfig_failures"] += 1
                log.debug("reconfiguration to %s failed: %s", target, e)
                await asyncio.sleep(self.rng.randint(50, 300) * MS / SECOND)
                continue
            self.stats["reconfigs"] += 1
            self.world.log(("reconfigured", ctl.name, epoch, tuple(target)))
            return epoch
        return None

    async def faults(self, cluster: Cluster):
        sc = self.sc
        jobs = [self.crash_backups(cluster, sc.backup_crashes)]
        for k in range(sc.reconfigurations):
            ctls = [self.client(f"ctl{k}-{j}") for j in range(sc.controllers)]
            start = self.rng.randint(500 * MS, 4 * SECOND)
            # racing controllers start together, each with its own target
            jobs += [self.reconfigure(cluster, c, start + self.rng.randint(0, 20 * MS)) for c in ctls]
        await asyncio.gather(*jobs)

    def require_faults(self):
        sc, st = self.sc, self.stats
        if st["restarts"] < sc.backup_crashes:
            raise SimulationFailure(f"planned {sc.backup_crashes} backup crashes, did {st['restarts']}")
        if st["reconfigs"] < sc.reconfigurations * sc.controllers:
            raise SimulationFailure(f"planned {sc.reconfigurations * sc.controllers} reconfigurations, "
                                    f"completed {st['reconfigs']}")

    def read_latencies(self, op_names=("get",)) -> list:
        return [o.ret - o.invoke for o in self.history.ops if o.completed and o.op in op_names]


# --------------------------------------------------------------------------
# workloads; each returns the director coroutine


def _kv_cluster(run: Run, read_pause=None) -> Cluster:
    precise = run.sc.precise_deps
    return Cluster(run.world, run.sc, lambda: ExactlyOnceStateMachine(KvStateMachine(precise)), read_pause=read_pause)


async def _kv_client(run: Run, node, i: int, kv: KvClerk):
    sc, h, rng = run.sc, run.history, node.rng
    seen = {}
    for k in range(sc.ops_per_client):
        key = f"k{rng.randrange(sc.key_space)}"
        r = rng.random()
        if r < sc.read_fraction:
            o = h.invoke(i, "get", key)
            v = _text(await kv.get(key.encode()))
            h.complete(o, v)
            seen[key] = v
        elif rng.random() < 0.25:
            expect, val = seen.get(key, ""), f"c{i}-{k}"
            o = h.invoke(i, "cond_put", key, expect, val)
            ok = await kv.cond_put(key.encode(), expect.encode(), val.encode())
            h.complete(o, ok)
        else:
            val = f"v{i}-{k}"
            o = h.invoke(i, "put", key, val)
            await kv.put(key.encode(), val.encode())
            h.complete(o, "")
            seen[key] = val


def kv_workload(run: Run, read_pause=None):
    run.spec = "kv"
    cluster = _kv_cluster(run, read_pause)
    clients = [run.client(f"cl{i}") for i in range(run.sc.clients)]

    async def director():
        tasks = [c.spawn(_kv_client(run, c, i, cluster.kv_clerk(c, i + 1))) for i, c in enumerate(clients)]
        await asyncio.gather(run.faults(cluster), *tasks)
        run.require_faults()

    return director()


def pause_workload(run: Run):
    sc = run.sc

    def make_pause(node):
        async def pause():
            if node.rng.random() < sc.pause_prob:
                await node.sleep(node.rng.randint(0, int(sc.pause_max_ms * MS)))
        return pause

    return kv_workload(run, read_pause=make_pause)


def racing_workload(run: Run):
    return kv_workload(run)


def counter_workload(run: Run):
    run.spec = "counter"
    sc, h = run.sc, run.history
    cluster = Cluster(run.world, sc, lambda: ExactlyOnceStateMachine(CounterStateMachine()))
    clients = [run.client(f"cl{i}") for i in range(sc.clients)]

    async def worker(node, i):
        eo = ExactlyOnceClerk(Clerk(node, cluster.cfg_addrs), i + 1)
        for _ in range(sc.ops_per_client):
            o = h.invoke(i, "inc")
            h.complete(o, read_u64(await eo.apply(b"inc")))
        return eo

    async def director():
        tasks = [c.spawn(worker(c, i)) for i, c in enumerate(clients)]
        results = await asyncio.gather(run.faults(cluster), *tasks)
        run.require_faults()
        eo = results[1]
        o = h.invoke(0, "read")
        final = read_u64(await clients[0].spawn(eo.read(b"")))
        h.complete(o, final)
        run.stats["final"] = final
        if final != sc.clients * sc.ops_per_client:
            raise SimulationFailure(f"counter ended at {final}, expected {sc.clients * sc.ops_per_client}")

    return director()


ACCOUNTS = [f"acct{i}".encode() for i in range(6)]
INITIAL_BALANCE = 100


def bank_workload(run: Run):
    sc = run.sc
    balances = Cluster(run.world, sc, lambda: ExactlyOnceStateMachine(KvStateMachine()), "bal", 100, 200)
    locks = Cluster(run.world, sc, lambda: ExactlyOnceStateMachine(KvStateMachine()), "lock", 300, 400)
    nodes = [run.client(f"cl{i}") for i in range(sc.clients + 1)]  # the last one audits
    total = INITIAL_BALANCE * len(ACCOUNTS)
    run.stats["audits"] = []
    run.stats["transfers"] = 0

    def bank_for(node, i):
        return Bank(balances.kv_clerk(node, i + 1), LockService(node, locks.kv_clerk(node, i + 1)), ACCOUNTS)

    async def transferer(node, bank):
        rng = node.rng
        for _ in range(sc.ops_per_client):
            src, dst = rng.sample(ACCOUNTS, 2)
            if await bank.transfer(src, dst, rng.randint(1, 60)):
                run.stats["transfers"] += 1

    async def auditor(node, bank, done):
        while True:
            finished = done.is_set()
            got = await bank.audit()
            run.stats["audits"].append(got)
            if got != total:
                raise SimulationFailure(f"audit saw {got}, expected {total}")
            if finished:
                return
            await node.sleep(node.rng.randint(50, 200) * MS)

    async def director():
        banks = [bank_for(n, i) for i, n in enumerate(nodes)]
        aud_node, aud_bank = nodes[-1], banks[-1]
        await aud_node.spawn(aud_bank.create({a: INITIAL_BALANCE for a in ACCOUNTS}))
        done = asyncio.Event()
        aud = aud_node.spawn(auditor(aud_node, aud_bank, done))
        tasks = [n.spawn(transferer(n, b)) for n, b in zip(nodes[:-1], banks[:-1])]
        await asyncio.gather(run.faults(balances), *tasks)
        done.set()
        await aud
        run.require_faults()

    return director()


def cachekv_workload(run: Run):
    run.spec = "cache"
    sc, h = run.sc, run.history
    cluster = _kv_cluster(run)
    clients = [run.client(f"cl{i}") for i in range(sc.clients)]
    run.stats["cache_hits"] = 0

    async def worker(node, i):
        ck = CacheKv(node, cluster.kv_clerk(node, i + 1))
        rng = node.rng
        for k in range(sc.ops_per_client):
            key = f"k{rng.randrange(sc.key_space)}"
            r = rng.random()
            if r < sc.read_fraction / 2:
                o = h.invoke(i, "get", key)
                h.complete(o, _text(await ck.get(key.encode())))
            elif r < sc.read_fraction:
                o = h.invoke(i, "get_and_cache", key)
                cachetime = rng.randint(200, 1000) * MS
                h.complete(o, _text(await ck.get_and_cache(key.encode(), cachetime)))
            else:
                val = f"v{i}-{k}"
                o = h.invoke(i, "put", key, val)
                await ck.put(key.encode(), val.encode())
                h.complete(o, "")
        run.stats["cache_hits"] += ck.cache_hits

    async def director():
        tasks = [c.spawn(worker(c, i)) for i, c in enumerate(clients)]
        await asyncio.gather(run.faults(cluster), *tasks)
        run.require_faults()

    return director()


def paxos_workload(run: Run):
    """Bare paxos servers with competing leaders, crashes and partitions, then a clean final commit."""
    sc, w = run.sc, run.world
    n = sc.config_servers
    addrs = [100 + i for i in range(n)]
    w.oracle.paxos_sizes["px"] = n
    stop = []

    def main_for(i):
        async def main(node):
            px = await PaxosNode.recover(node, i, addrs, b"")
            await serve(node, addrs[i], px.handlers())
            node.app = px
            node.spawn(proposer(node, px))
        return main

    async def proposer(node, px):
        rng = node.rng
        while not stop:
            await node.sleep(rng.randint(5, 150) * MS)
            if stop:
                return
            if not px.is_leader:
                if rng.random() < 0.5:
                    await px.try_become_leader()
                continue
            state, commit = px.begin()
            try:
                await commit(state + bytes([node.id]))
                run.stats["commits"] = run.stats.get("commits", 0) + 1
            except ProtocolError:
                pass

    nodes = [w.add_node(f"px{i}", main_for(i), group="px") for i in range(n)]
    for nd in nodes:
        w.start(nd)

    async def chaos():
        for _ in range(sc.backup_crashes):
            await asyncio.sleep(run.rng.randint(50, 1500) * MS / SECOND)
            victim = run.rng.choice(nodes)
            w.crash(victim)
            run.stats["crashes"] += 1
            await asyncio.sleep(run.rng.randint(1, max(1, int(sc.downtime_ms * MS))) / SECOND)
            w.start(victim)
            run.stats["restarts"] += 1

    async def partitions():
        prof = w.net.profile
        for _ in range(sc.partitions):
            await asyncio.sleep(run.rng.randint(50, 1000) * MS / SECOND)
            cut = run.rng.sample(nodes, run.rng.randint(1, n // 2))
            for a in cut:
                for b in nodes:
                    if b not in cut:
                        prof.partition(a.id, b.id)
            await asyncio.sleep(run.rng.randint(50, 800) * MS / SECOND)
            prof.heal()

    async def director():
        await asyncio.gather(chaos(), partitions(), asyncio.sleep(PAXOS_BUSY_S))
        w.net.profile.heal()
        for nd in nodes:
            w.start(nd)
        stop.append(True)
        # let in-flight rounds drain so exactly one leader remains
        await asyncio.sleep(3)
        leader = nodes[run.rng.randrange(n)]
        px = leader.app
        for _ in range(5):
            if await leader.spawn(px.try_become_leader()):
                break
        else:
            raise SimulationFailure(f"{leader.name} could not become leader with every server up")
        state, commit = px.begin()
        _, e = await leader.spawn(_capture(commit(state + b"!")))
        if e is not None:
            raise SimulationFailure(f"commit by sole leader {leader.name} failed: {e}")
        run.stats["final_commit"] = True

    return director()


PAXOS_BUSY_S = 2.0
LOGGER_RECORDS = 6


def logger_workload(run: Run):
    """One node driving a state logger through appends, a seal and a second install."""
    w = run.world
    done = []

    async def main(node):
        lg = await StateLogger.recover(node, "wal")
        node.trace("logger_recovered", epoch=lg.epoch, sealed=lg.sealed, snapshot=lg.snapshot,
                   records=tuple(lg.records))
        node.app = lg
        node.spawn(writer(node, lg))

    async def writer(node, lg):
        if lg.epoch == 0:
            await lg.install_header(1, False, b"snap1")
            node.trace("logger_acked", epoch=1, count=0, sealed=False)
        if lg.epoch == 1 and not lg.sealed:
            await fill(node, lg)
            await lg.set_sealed()
            node.trace("logger_acked", epoch=1, count=len(lg.records), sealed=True)
        if lg.epoch == 1:
            await lg.install_header(2, False, b"snap2")
            node.trace("logger_acked", epoch=2, count=0, sealed=False)
        await fill(node, lg)
        done.append(True)

    async def fill(node, lg):
        while len(lg.records) < LOGGER_RECORDS:
            i = lg.append_op(f"e{lg.epoch}-{len(lg.records)}".encode())
            if i % 2:
                await lg.wait_durable(i + 1)
                node.trace("logger_acked", epoch=lg.epoch, count=i + 1, sealed=False)
            else:
                await node.sleep(node.rng.randint(0, 3) * MS)

    node = w.add_node("log", main)
    w.start(node)

    async def director():
        while not done:
            await asyncio.sleep(0.01)

    return director()


WORKLOAD_FNS = {
    "logger": logger_workload,
    "kv": kv_workload,
    "counter": counter_workload,
    "bank": bank_workload,
    "cachekv": cachekv_workload,
    "paxos": paxos_workload,
    "racing": racing_workload,
    "pause": pause_workload,
}


def run_scenario(sc: Scenario, check: bool = True, keep_events: bool = False, setup=None) -> RunResult:
    """Execute one scenario; never raises for protocol or oracle failures.

    ``setup(world)`` runs after the world is built and before any node starts.
    """
    sc.validate()
    with mutants.enabled(*sc.mutants):
        world = World(sc.seed, sc.fault_profile(), epsilon=sc.epsilon_ns, keep_events=keep_events)
        world.oracle = Oracle(world)
        if setup is not None:
            setup(world)
        run = Run(world, sc)
        res = RunResult(sc, ok=True)
        try:
            director = WORKLOAD_FNS[sc.workload](run)
            world.run(director, int(sc.time_limit_s * SECOND))
        except SimulationFailure as e:
            res.ok, res.error = False, str(e)
        except TimeoutError as e:
            res.ok, res.error = False, f"timeout: {e}"
        finally:
            res.virtual_ns = world.now_ns()
            world.close()
        if res.ok and world.failures:
            res.ok, res.error = False, str(world.failures[0])
    res.fingerprint = world.fingerprint()
    res.event_count = world.event_count
    res.events = world.events
    res.history = list(run.history.ops)
    res.spec = run.spec
    res.report = dict(world.oracle.report(), **run.stats)
    if res.ok and check and run.spec is not None:
        r = lincheck.check(res.history, run.spec)
        res.lincheck = r
        if not r.ok:
            res.ok, res.error = False, f"history not linearizable on key {r.key!r}"
    return res
