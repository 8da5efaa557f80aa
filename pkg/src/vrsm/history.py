"""Client-visible operation histories and their JSON Lines file format.

One record per line::

    {"client": 3, "op": "put", "args": ["k1", "v7"], "result": "",
     "invoke": 1200, "return": 1900, "completed": true}

Times are integers on one global clock and strictly increase across all
invoke/return events of a history. ``return`` is null for incomplete ops.
"""

import json
from dataclasses import dataclass, field


@dataclass
class Operation:
    client: int
    op: str
    args: tuple
    invoke: int
    ret: int = None
    result: object = None
    completed: bool = False
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"client": self.client, "op": self.op, "args": list(self.args), "result": self.result,
                "invoke": self.invoke, "return": self.ret, "completed": self.completed}

    @classmethod
    def from_json(cls, d: dict) -> "Operation":
        return cls(client=d["client"], op=d["op"], args=tuple(d.get("args", ())), invoke=d["invoke"],
                   ret=d.get("return"), result=d.get("result"), completed=bool(d.get("completed")))


class History:
    """Records invocations and responses against a time source."""

    def __init__(self, now):
        self._now = now
        self._last = -1
        self.ops = []

    def _stamp(self) -> int:
        t = self._now()
        if t <= self._last:
            t = self._last + 1
        self._last = t
        return t

    def invoke(self, client: int, op: str, *args) -> Operation:
        o = Operation(client, op, tuple(args), self._stamp())
        self.ops.append(o)
        return o

    def complete(self, o: Operation, result=None):
        o.ret = self._stamp()
        o.result = result
        o.completed = True

    def dump(self, path: str):
        save(self.ops, path)


def save(ops, path: str):
    with open(path, "w") as f:
        for o in ops:
            f.write(json.dumps(o.to_json(), sort_keys=True) + "\n")


def load(path: str) -> list:
    with open(path) as f:
        return [Operation.from_json(json.loads(line)) for line in f if line.strip()]
