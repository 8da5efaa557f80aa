"""Versioned key-value state machine and its clerk.

A versioned state machine exposes ``apply(op, idx) -> reply``,
``read(op) -> (idx, reply)``, ``get_state() -> bytes`` and
``set_state(snap, idx)``. The index returned by ``read`` is a point after
which the reply no longer changes, so a replica only has to wait for the
log up to that index to be committed before answering.

Op encoding: ``[tag u8]`` followed by length-prefixed fields:
Put ``key, val``; Get ``key``; CondPut ``key, expect, val``.
"""

import logging
from dataclasses import dataclass

from .codec import DecodeError, Reader, Writer

log = logging.getLogger(__name__)

PUT = 0
GET = 1
COND_PUT = 2

OK_REPLY = b"ok"


@dataclass(frozen=True)
class KvOp:
    tag: int
    key: bytes
    val: bytes = b""
    expect: bytes = b""

    def encode(self) -> bytes:
        w = Writer().u8(self.tag).blob(self.key)
        if self.tag == PUT:
            w.blob(self.val)
        elif self.tag == COND_PUT:
            w.blob(self.expect).blob(self.val)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "KvOp":
        r = Reader(data)
        tag = r.u8()
        key = r.blob()
        if tag == PUT:
            op = cls(PUT, key, val=r.blob())
        elif tag == GET:
            op = cls(GET, key)
        elif tag == COND_PUT:
            expect = r.blob()
            op = cls(COND_PUT, key, val=r.blob(), expect=expect)
        else:
            raise DecodeError(f"unknown kv tag {tag}")
        r.expect_done()
        return op


def put(key: bytes, val: bytes) -> bytes:
    return KvOp(PUT, key, val=val).encode()


def get(key: bytes) -> bytes:
    return KvOp(GET, key).encode()


def cond_put(key: bytes, expect: bytes, val: bytes) -> bytes:
    return KvOp(COND_PUT, key, val=val, expect=expect).encode()


class KvStateMachine:
    def __init__(self, precise_deps: bool = True):
        # when False, reads depend on the whole log instead of the key's last write
        self.precise_deps = precise_deps
        self.values = {}
        self.last_modified = {}
        self.next_index = 0

    def apply(self, op: bytes, idx: int) -> bytes:
        self.next_index = idx + 1
        try:
            o = KvOp.decode(op)
        except DecodeError:
            return b""
        if o.tag == PUT:
            self.values[o.key] = o.val
            self.last_modified[o.key] = idx
            return b""
        if o.tag == COND_PUT:
            if self.values.get(o.key, b"") != o.expect:
                return b""
            self.values[o.key] = o.val
            self.last_modified[o.key] = idx
            return OK_REPLY
        return self.values.get(o.key, b"")

    def read(self, op: bytes):
        try:
            o = KvOp.decode(op)
        except DecodeError:
            return 0, b""
        val = self.values.get(o.key, b"")
        if not self.precise_deps:
            return self.next_index, val
        lm = self.last_modified.get(o.key)
        return (0 if lm is None else lm + 1), val

    def get_state(self) -> bytes:
        w = Writer().u64(len(self.values))
        for k in sorted(self.values):
            w.blob(k).blob(self.values[k]).u64(self.last_modified[k])
        return w.getvalue()

    def set_state(self, snap: bytes, idx: int):
        r = Reader(snap)
        values, lm = {}, {}
        for _ in range(r.u64()):
            k, v, m = r.blob(), r.blob(), r.u64()
            values[k] = v
            lm[k] = m
        r.expect_done()
        self.values, self.last_modified, self.next_index = values, lm, idx


class KvClerk:
    """Put/Get/CondPut over an exactly-once clerk; one outstanding op at a time."""

    def __init__(self, eo_clerk):
        self.eo = eo_clerk

    async def put(self, key: bytes, val: bytes):
        await self.eo.apply(put(key, val))

    async def get(self, key: bytes) -> bytes:
        return await self.eo.read(get(key))

    async def cond_put(self, key: bytes, expect: bytes, val: bytes) -> bool:
        return await self.eo.apply(cond_put(key, expect, val)) == OK_REPLY
