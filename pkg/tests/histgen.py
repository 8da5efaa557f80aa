"""Random small histories for cross-checking the linearizability checker."""

import random

from vrsm.history import Operation
from vrsm.lincheck import SPECS

KEYS = ("a", "b")
VALUES = ("1", "2", "3")


def _random_op(rng, spec_name, n):
    if spec_name == "counter":
        return ("inc", ()) if rng.random() < 0.6 else ("read", ())
    k = rng.choice(KEYS)
    r = rng.random()
    if r < 0.4:
        return "put", (k, rng.choice(VALUES))
    if r < 0.8:
        return ("get_and_cache" if spec_name == "cache" and rng.random() < 0.3 else "get"), (k,)
    return "cond_put", (k, rng.choice(("",) + VALUES), rng.choice(VALUES))


def _random_result(rng, spec_name, op, n):
    if op in ("put",):
        return ""
    if op in ("get", "get_and_cache"):
        return rng.choice(("",) + VALUES)
    if op == "cond_put":
        return rng.random() < 0.5
    return rng.randint(0 if op == "read" else 1, n)


def random_history(rng: random.Random, spec_name: str = "kv", max_ops: int = 8, pending_prob: float = 0.15):
    """Half the histories carry results from one real sequential run, half carry random results."""
    spec = SPECS[spec_name]
    n = rng.randint(1, max_ops)
    times = rng.sample(range(1, 20 * n), 2 * n)
    rng.shuffle(times)
    ops = []
    for i in range(n):
        a, b = sorted(times[2 * i:2 * i + 2])
        name, args = _random_op(rng, spec_name, n)
        o = Operation(client=i, op=name, args=args, invoke=a, ret=b, completed=True)
        ops.append(o)
    honest = rng.random() < 0.5
    if honest:
        # linearize each op at a random instant inside its interval
        points = sorted(ops, key=lambda o: rng.uniform(o.invoke, o.ret))
        states = {}
        for o in points:
            key = o.args[0] if spec_name != "counter" else None
            st = states.get(key, spec.init())
            st, res = spec.step(st, o.op, o.args)
            states[key] = st
            o.result = res
    else:
        for o in ops:
            o.result = _random_result(rng, spec_name, o.op, n)
    for o in ops:
        if rng.random() < pending_prob:
            o.completed, o.ret, o.result = False, None, None
    return ops
