"""Crash-point sweeps and multi-seed sweeps.

A crash-point sweep first runs a scenario once to count the durable-store
mutations made by one node, then re-runs it once per (mutation, mode) with a
crash injected there. Modes:

``before``  crash just before the write reaches the store
``after``   crash right after the write, before the writer can act on it
``torn``    appends only: a random prefix of the bytes lands, then the crash
``twice``   crash before the write, then again at the first write after restart

The oracle's durability checks run on every recovery, and the run must still
finish with a clean history afterwards.
"""

import logging
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from ..clock import MS
from .workloads import run_scenario

log = logging.getLogger(__name__)

MODES = ("before", "after", "torn", "twice")
RESTART_DELAY = 50 * MS


@dataclass
class SweepReport:
    node: str
    mutations: int = 0
    points: int = 0
    violations: list = field(default_factory=list)  # (mutation index, mode, error)

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        head = f"crash sweep on {self.node}: {self.points} crash points over {self.mutations} mutations"
        if self.ok:
            return head + ", 0 violations"
        lines = [f"{head}, {len(self.violations)} violations"]
        lines += [f"  mutation {k} ({mode}): {err}" for k, mode, err in self.violations[:10]]
        return "\n".join(lines)


class _Injector:
    def __init__(self, world, node_name: str, target: int, mode: str, seed: int):
        self.world = world
        self.node_name = node_name
        self.target = target
        self.mode = mode
        self.seen = 0
        self.fired = 0
        self.rng = random.Random(f"sweep:{seed}:{target}:{mode}")
        world.mutation_hook = self

    def __call__(self, node, kind, name, data):
        if node.name != self.node_name:
            return None
        k = self.seen
        self.seen += 1
        w = self.world
        if self.fired == 0 and k == self.target:
            self.fired = 1
            w.schedule(w.now_ns() + RESTART_DELAY, w.start, node)
            if self.mode == "after":
                w.loop.call_soon(w.crash, node)
                return None
            if self.mode == "torn":
                return self.rng.randrange(len(data)) if data else 0
            node.crash_now()
        if self.fired == 1 and self.mode == "twice" and node.incarnation > 0 and k > self.target:
            self.fired = 2
            w.schedule(w.now_ns() + RESTART_DELAY, w.start, node)
            node.crash_now()
        return None


def _count_mutations(sc, node_name: str) -> int:
    counter = {}

    def setup(world):
        def hook(node, kind, name, data):
            if node.name == node_name:
                counter["n"] = counter.get("n", 0) + 1
        world.mutation_hook = hook

    res = run_scenario(sc, setup=setup)
    if not res.ok:
        raise RuntimeError(f"baseline run failed before any crash was injected: {res.error}")
    return counter.get("n", 0)


def crash_point_sweep(sc, node_name: str, modes=MODES, stop_at_first: bool = False) -> SweepReport:
    """Crash ``node_name`` at every durable mutation of a baseline run, in each mode."""
    report = SweepReport(node_name)
    report.mutations = _count_mutations(sc, node_name)
    kinds = []

    def record_kinds(world):
        def hook(node, kind, name, data):
            if node.name == node_name:
                kinds.append(kind)
        world.mutation_hook = hook

    run_scenario(sc, setup=record_kinds)
    for k in range(report.mutations):
        for mode in modes:
            if mode == "torn" and (k >= len(kinds) or kinds[k] != "append"):
                continue
            inj = []

            def setup(world, k=k, mode=mode):
                inj.append(_Injector(world, node_name, k, mode, sc.seed))

            res = run_scenario(sc, setup=setup)
            report.points += 1
            if not inj[0].fired:
                continue  # the schedule diverged before reaching this mutation
            if not res.ok:
                report.violations.append((k, mode, res.error))
                if stop_at_first:
                    return report
    return report


# --------------------------------------------------------------------------
# seed sweeps


def run_with_sweep(sc, check: bool = True):
    """One run, plus a crash-point sweep when the scenario names a node; returns ``(result, sweep report)``."""
    r = run_scenario(sc, check=check)
    rep = None
    if r.ok and sc.sweep_node:
        rep = crash_point_sweep(sc, sc.sweep_node)
        if not rep.ok:
            r.ok, r.error = False, rep.summary()
    return r, rep


def _run_one(args):
    sc, seed, check = args
    r, _ = run_with_sweep(sc.with_seed(seed), check)
    return seed, r.ok, r.error, r.fingerprint, r.report


def seed_sweep(sc, seeds, parallel: int = 1, check: bool = True, on_result=None) -> list:
    """Run ``sc`` under every seed; returns ``(seed, ok, error, fingerprint, report)`` tuples in seed order."""
    jobs = [(sc, s, check) for s in seeds]
    out = []
    if parallel <= 1:
        for j in jobs:
            r = _run_one(j)
            out.append(r)
            if on_result:
                on_result(r)
        return out
    with ProcessPoolExecutor(parallel) as ex:
        for r in ex.map(_run_one, jobs):
            out.append(r)
            if on_result:
                on_result(r)
    return out
