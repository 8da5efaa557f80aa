"""Linearizability checking of recorded histories.

``check`` runs a depth-first search over linearization orders with
memoization on (set of linearized ops, model state). Map histories are split
per key first since operations on different keys commute. ``brute_force`` is
an independent all-orderings checker for small histories, used to validate
``check``.
"""

import itertools
from dataclasses import dataclass

from .history import Operation

INF = float("inf")
DEFAULT_LIMIT = 2_000_000


class ResourceLimitError(RuntimeError):
    pass


class Spec:
    """Sequential specification; states must be hashable."""

    name = "abstract"

    def init(self):
        raise NotImplementedError

    def step(self, state, op: str, args: tuple):
        """Return ``(new_state, expected_result)``."""
        raise NotImplementedError

    def partition(self, ops):
        return {None: list(ops)}


class KvSpec(Spec):
    """Map from string keys to string values; absent keys read as ""."""

    name = "kv"
    keyed = True

    def init(self):
        return ""

    def step(self, state, op, args):
        if op == "put":
            return args[1], ""
        if op == "get":
            return state, state
        if op == "cond_put":
            if state == args[1]:
                return args[2], True
            return state, False
        raise ValueError(f"kv spec has no op {op!r}")

    def partition(self, ops):
        parts = {}
        for o in ops:
            parts.setdefault(o.args[0], []).append(o)
        return parts


class CacheSpec(KvSpec):
    """Cache client API: every flavour of read observes the register, puts overwrite it."""

    name = "cache"

    def step(self, state, op, args):
        if op in ("get", "get_and_cache"):
            return state, state
        return super().step(state, op, args)


class CounterSpec(Spec):
    name = "counter"

    def init(self):
        return 0

    def step(self, state, op, args):
        if op == "inc":
            return state + 1, state + 1
        if op == "read":
            return state, state
        raise ValueError(f"counter spec has no op {op!r}")


class _WholeMap(Spec):
    """A keyed per-register spec lifted to the whole map, for undecomposed checking."""

    def __init__(self, inner: Spec):
        self.inner = inner
        self.name = inner.name

    def init(self):
        return ()

    def step(self, state, op, args):
        d = dict(state)
        st, res = self.inner.step(d.get(args[0], self.inner.init()), op, args)
        d[args[0]] = st
        return tuple(sorted(d.items())), res


def _whole(spec: Spec) -> Spec:
    return _WholeMap(spec) if getattr(spec, "keyed", False) else spec


SPECS = {s.name: s for s in (KvSpec(), CacheSpec(), CounterSpec())}


@dataclass
class Result:
    ok: bool
    key: object = None
    prefix: list = None  # shortest failing prefix, as operations
    explored: int = 0

    def __bool__(self):
        return self.ok


def _search(ops, spec: Spec, limit: int):
    """True iff ``ops`` (one partition) linearizes; also returns nodes explored."""
    n = len(ops)
    order = sorted(range(n), key=lambda i: ops[i].invoke)
    ops = [ops[i] for i in order]
    inv = [o.invoke for o in ops]
    ret = [o.ret if o.completed else INF for o in ops]
    required = 0
    for i, o in enumerate(ops):
        if o.completed:
            required |= 1 << i
    seen = set()
    explored = 0
    stack = [(0, spec.init())]
    while stack:
        mask, state = stack.pop()
        if mask & required == required:
            return True, explored
        if (mask, state) in seen:
            continue
        seen.add((mask, state))
        explored += 1
        if explored > limit:
            raise ResourceLimitError(f"explored more than {limit} states")
        min_ret = INF
        for i in range(n):
            if not (mask >> i) & 1 and ret[i] < min_ret:
                min_ret = ret[i]
        for i in range(n):
            if (mask >> i) & 1:
                continue
            if inv[i] > min_ret:
                break  # sorted by invoke: nothing later can go next either
            o = ops[i]
            new_state, expected = spec.step(state, o.op, o.args)
            if o.completed and expected != o.result:
                continue
            stack.append((mask | (1 << i), new_state))
    return False, explored


def _prefix(ops, cut: int):
    """The history truncated after its first ``cut`` invoke/return events."""
    events = sorted([(o.invoke, 0, k) for k, o in enumerate(ops)] +
                    [(o.ret, 1, k) for k, o in enumerate(ops) if o.completed])
    if cut >= len(events):
        return list(ops)
    t = events[cut - 1][0] if cut > 0 else -1
    out = []
    for o in ops:
        if o.invoke > t:
            continue
        done = o.completed and o.ret <= t
        out.append(Operation(o.client, o.op, o.args, o.invoke, o.ret if done else None,
                             o.result if done else None, done))
    return out


def _shortest_failing_prefix(ops, spec, limit):
    n_events = sum(2 if o.completed else 1 for o in ops)
    lo, hi = 0, n_events  # prefix(lo) linearizes, prefix(hi) does not
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _search(_prefix(ops, mid), spec, limit)[0]:
            lo = mid
        else:
            hi = mid
    return _prefix(ops, hi)


def check(history, spec, limit: int = DEFAULT_LIMIT, decompose: bool = True) -> Result:
    """Decide linearizability of ``history`` against ``spec`` (a Spec or its name)."""
    if isinstance(spec, str):
        spec = SPECS[spec]
    ops = list(history)
    if decompose:
        parts = spec.partition(ops)
    else:
        parts, spec = {None: ops}, _whole(spec)
    explored = 0
    for key in sorted(parts, key=repr):
        ok, n = _search(parts[key], spec, limit)
        explored += n
        if not ok:
            return Result(False, key, _shortest_failing_prefix(parts[key], spec, limit), explored)
    return Result(True, explored=explored)


def brute_force(history, spec) -> bool:
    """Try every subset of incomplete ops and every real-time-respecting order."""
    if isinstance(spec, str):
        spec = SPECS[spec]
    spec = _whole(spec)
    ops = list(history)
    done = [o for o in ops if o.completed]
    pending = [o for o in ops if not o.completed]
    for r in range(len(pending) + 1):
        for chosen in itertools.combinations(pending, r):
            if _any_order(done + list(chosen), spec):
                return True
    return False


def _any_order(ops, spec) -> bool:
    n = len(ops)

    def precedes(a, b):
        return a.completed and a.ret < b.invoke

    def rec(placed, used, state):
        if len(placed) == n:
            return True
        for i in range(n):
            if used >> i & 1:
                continue
            o = ops[i]
            # every op that must precede o has to be placed already
            if any(not (used >> j & 1) and precedes(ops[j], o) for j in range(n) if j != i):
                continue
            new_state, expected = spec.step(state, o.op, o.args)
            if o.completed and expected != o.result:
                continue
            placed.append(i)
            if rec(placed, used | (1 << i), new_state):
                return True
            placed.pop()
        return False

    return rec([], 0, spec.init())
